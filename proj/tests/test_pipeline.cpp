#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "fedbev/battery.hpp"
#include "fedbev/error.hpp"
#include "fedbev/pipeline.hpp"
#include "fedbev/trip.hpp"

using namespace fedbev;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "fedbev_pipeline_tests";
  fs::create_directories(dir);
  return dir / name;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

TripRecord toy_trip(std::size_t n) {
  TripRecord r;
  r.vehicle_id = "T";
  double d = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double v = 5.0 + std::sin(0.1 * t);
    d += t ? v : 0.0;
    r.time.push_back(static_cast<double>(t));
    r.speed.push_back(v);
    r.acceleration.push_back(t ? v - r.speed[t - 1] : 0.0);
    r.distance.push_back(d);
    r.energy.push_back(0.01 * v * v - 0.1);
  }
  return r;
}

std::string catch_message(auto&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("load_trip_csv reads a generated 1800-row trip back exactly") {
  const TripRecord trip = generate_fleet(FleetOptions{1, 3, 1800}).front();
  const fs::path p = scratch("V1.csv");
  write_trip_csv(trip, p);
  const TripRecord back = load_trip_csv(p);
  CHECK(back.size() == 1800);
  CHECK(back.vehicle_id == "V1");
  CHECK(back.speed == trip.speed);
  CHECK(back.energy == trip.energy);
  CHECK(back.distance == trip.distance);
  REQUIRE(back.extras.size() == trip.extras.size());
  CHECK(back.extras[0].second == trip.extras[0].second);
}

TEST_CASE("column map: remapped headers load the same record") {
  write_file(scratch("canon.csv"),
             "time_s,speed_mps,accel_mps2,distance_m,energy_wh\n0,1,0,0,0.5\n1,2,1,2,0.25\n2,2,0,4,-0.1\n");
  write_file(scratch("remap.csv"), "t,v,a,dist,e\n0,1,0,0,0.5\n1,2,1,2,0.25\n2,2,0,4,-0.1\n");
  const TripRecord a = load_trip_csv(scratch("canon.csv"), ColumnMap{}, "X");
  const TripRecord b = load_trip_csv(scratch("remap.csv"), ColumnMap{"t", "v", "a", "dist", "e"}, "X");
  CHECK(a.time == b.time);
  CHECK(a.speed == b.speed);
  CHECK(a.acceleration == b.acceleration);
  CHECK(a.distance == b.distance);
  CHECK(a.energy == b.energy);
}

TEST_CASE("load errors name the role, row or column") {
  write_file(scratch("noenergy.csv"), "time_s,speed_mps,accel_mps2,distance_m\n0,1,0,0\n");
  const auto missing = catch_message([&] { load_trip_csv(scratch("noenergy.csv")); });
  CHECK(missing.find("energy") != std::string::npos);
  CHECK_THROWS_AS(load_trip_csv(scratch("noenergy.csv")), LoadError);

  write_file(scratch("text.csv"), "time_s,speed_mps,accel_mps2,distance_m,energy_wh\n0,1,0,0,0\n1,fast,0,1,0\n");
  const auto text = catch_message([&] { load_trip_csv(scratch("text.csv")); });
  CHECK(text.find("row 2") != std::string::npos);
  CHECK(text.find("speed_mps") != std::string::npos);

  write_file(scratch("nan.csv"), "time_s,speed_mps,accel_mps2,distance_m,energy_wh\n0,1,0,0,nan\n");
  CHECK(catch_message([&] { load_trip_csv(scratch("nan.csv")); }).find("NaN") != std::string::npos);

  write_file(scratch("time.csv"), "time_s,speed_mps,accel_mps2,distance_m,energy_wh\n0,1,0,0,0\n2,1,0,1,0\n1,1,0,2,0\n");
  const auto order = catch_message([&] { load_trip_csv(scratch("time.csv")); });
  CHECK(order.find("time") != std::string::npos);
  CHECK(order.find("row 3") != std::string::npos);

  CHECK_THROWS_AS(load_trip_csv(scratch("does-not-exist.csv")), LoadError);
}

TEST_CASE("engineered features") {
  TripRecord r;
  r.vehicle_id = "F";
  r.time = {0, 1};
  r.speed = {3.0, 4.0};
  r.acceleration = {0.5, 1.0};
  r.distance = {10.0, 14.0};
  r.energy = {0, 0};
  const auto f = engineer_features(r);
  CHECK(f[1] == FeatureVector{1.0, 4.0, 2.0, 64.0, 2.0});
  // First second: distance step defined as 0.
  CHECK(f[0][4] == 0.0);

  r.speed = {0.0, 0.0};
  r.distance = {0.0, 0.0};
  CHECK(engineer_features(r)[1] == FeatureVector{1.0, 0.0, 0.0, 0.0, 0.0});

  r.speed = {0.0, -1.0};
  CHECK_THROWS_AS(engineer_features(r), FeatureError);
  r.speed = {0.0, 1.0};
  r.distance = {5.0, 4.0};
  CHECK_THROWS_AS(engineer_features(r), FeatureError);
}

TEST_CASE("window counts and labels") {
  const TripRecord trip = toy_trip(1800);
  const auto f = engineer_features(trip);
  CHECK(make_windows(f, trip.energy, 60).size() == 1741);
  for (std::size_t m : {90u, 120u, 150u, 180u}) CHECK(make_windows(f, trip.energy, m).size() == 1800 - m + 1);

  const auto whole = make_windows(f, trip.energy, 1800);
  REQUIRE(whole.size() == 1);
  CHECK(whole.label(0) == doctest::Approx(std::accumulate(trip.energy.begin(), trip.energy.end(), 0.0)).epsilon(1e-14));

  std::vector<FeatureVector> three(3);
  const std::vector<double> e{2.0, -1.0, 3.0};
  const auto ones = make_windows(three, e, 1);
  CHECK(ones.labels() == e);

  CHECK_THROWS_AS(make_windows(three, e, 4), EmptyDatasetError);
}

TEST_CASE("window k holds seconds [k, k+m) and its label is their energy sum") {
  const TripRecord trip = toy_trip(200);
  const auto f = engineer_features(trip);
  const auto ds = make_windows(f, trip.energy, 20);
  for (std::size_t k : {0u, 7u, 180u}) {
    double s = 0.0;
    for (std::size_t t = k; t < k + 20; ++t) s += trip.energy[t];
    CHECK(ds.label(k) == s);
    CHECK(ds.origin(k) == k);
    CHECK(ds.window(k)[1] == f[k][1]);
    CHECK(ds.window(k)[19 * kFeatureCount + 3] == f[k + 19][3]);
  }
}

TEST_CASE("windowing a suffix yields a suffix of the windows") {
  const TripRecord trip = toy_trip(300);
  const auto f = engineer_features(trip);
  const auto full = make_windows(f, trip.energy, 30);
  const std::size_t cut = 45;
  const auto tail = make_windows(std::span(f).subspan(cut), std::span(trip.energy).subspan(cut), 30);
  REQUIRE(tail.size() == full.size() - cut);
  for (std::size_t k = 0; k < tail.size(); ++k) {
    const auto a = tail.window(k), b = full.window(k + cut);
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
    CHECK(tail.label(k) == full.label(k + cut));
  }
}

TEST_CASE("chronological split sizes") {
  auto check_sizes = [](std::size_t n, SplitSpec s, std::size_t tr, std::size_t va, std::size_t te) {
    const SplitSizes z = split_sizes(n, s);
    CHECK(z.train == tr);
    CHECK(z.val == va);
    CHECK(z.test == te);
  };
  check_sizes(1741, {8, 1, 1}, 1392, 174, 175);
  check_sizes(10, {8, 1, 1}, 8, 1, 1);
  check_sizes(1741, {4, 1, 5}, 696, 174, 871);
  CHECK_THROWS_AS(split_sizes(10, {0, 1, 1}), ValidationError);
}

TEST_CASE("split is an ordered partition without temporal leakage") {
  const TripRecord trip = toy_trip(400);
  const auto ds = make_windows(engineer_features(trip), trip.energy, 25);
  for (SplitSpec s : {SplitSpec{8, 1, 1}, SplitSpec{4, 1, 5}, SplitSpec{6, 1, 3}}) {
    const DatasetSplit parts = chronological_split(ds, s);
    CHECK(parts.train.size() + parts.val.size() + parts.test.size() == ds.size());
    std::vector<std::size_t> origins = parts.train.origins();
    origins.insert(origins.end(), parts.val.origins().begin(), parts.val.origins().end());
    origins.insert(origins.end(), parts.test.origins().begin(), parts.test.origins().end());
    std::vector<std::size_t> expected(ds.size());
    std::iota(expected.begin(), expected.end(), 0);
    CHECK(origins == expected);
    CHECK(parts.test.origins().front() > parts.train.origins().back());
  }
  const auto tiny = ds.slice(0, 5);
  CHECK_THROWS_AS(chronological_split(tiny, {8, 1, 1}), SplitError);
}

TEST_CASE("standardizer: closed-form statistics") {
  WindowedDataset ds(1, 2);
  const double rows[3][2] = {{1.0, 5.0}, {2.0, 5.0}, {3.0, 5.0}};
  for (int r = 0; r < 3; ++r) ds.push_back(rows[r], 10.0 * r, r);
  const Standardizer st = fit_standardizer(ds);
  CHECK(st.mean[0] == 2.0);
  CHECK(st.stddev[0] == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-15));
  CHECK(st.stddev[0] == doctest::Approx(0.8165).epsilon(1e-4));
  const auto z = apply_standardizer(st, ds);
  CHECK(z.window(0)[0] == doctest::Approx(-1.2247).epsilon(1e-4));
  CHECK(z.window(1)[0] == 0.0);
  CHECK(z.window(2)[0] == doctest::Approx(1.2247).epsilon(1e-4));
  for (int r = 0; r < 3; ++r) CHECK(z.window(r)[1] == 0.0);
  CHECK(z.labels() == ds.labels());
  CHECK_THROWS_AS(fit_standardizer(WindowedDataset(1, 2)), EmptyDatasetError);
}

TEST_CASE("standardized training windows have zero mean and unit spread") {
  const TripRecord trip = generate_fleet(FleetOptions{1, 9, 1800}).front();
  const auto ds = make_windows(engineer_features(trip), trip.energy, 60);
  const DatasetSplit parts = chronological_split(ds, {8, 1, 1});
  const Standardizer st = fit_standardizer(parts.train);
  const auto z = apply_standardizer(st, parts.train);
  const std::size_t F = z.features();
  const std::size_t rows = z.values().size() / F;
  for (std::size_t j = 0; j < F; ++j) {
    double m = 0.0;
    for (std::size_t r = 0; r < rows; ++r) m += z.values()[r * F + j];
    m /= static_cast<double>(rows);
    double v = 0.0;
    for (std::size_t r = 0; r < rows; ++r) v += (z.values()[r * F + j] - m) * (z.values()[r * F + j] - m);
    CHECK(std::abs(m) < 1e-9);
    CHECK(std::abs(std::sqrt(v / static_cast<double>(rows)) - 1.0) < 1e-9);
  }
  const auto test = apply_standardizer(st, parts.test);
  CHECK(test.labels() == parts.test.labels());
  const auto back = invert_standardizer(st, z);
  for (std::size_t i = 0; i < back.values().size(); ++i) {
    CHECK(back.values()[i] == doctest::Approx(parts.train.values()[i]).epsilon(1e-12).scale(1.0));
  }
}

TEST_CASE("series lag finds a pure delay") {
  std::vector<double> x(400);
  for (std::size_t t = 0; t < x.size(); ++t) x[t] = std::sin(0.05 * t) + 0.3 * std::sin(0.31 * t);
  std::vector<double> delayed(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) delayed[t] = t >= 10 ? x[t - 10] : 0.0;
  CHECK(series_lag(x, delayed, 30) == 10);
  CHECK(series_lag(x, x, 30) == 0);
  const std::vector<double> flat(400, 1.0);
  CHECK_THROWS_AS(series_lag(flat, x, 30), CorrelationError);
  CHECK_THROWS_AS(series_lag(x, x, 200), ValidationError);
}

TEST_CASE("speed-energy lag on a trip whose energy trails its speed") {
  TripRecord r = toy_trip(900);
  for (std::size_t t = 0; t < r.size(); ++t) {
    const double v = 6.0 + 4.0 * std::sin(0.02 * t) + std::sin(0.13 * t);
    r.speed[t] = v;
  }
  for (std::size_t t = 0; t < r.size(); ++t) r.energy[t] = t >= 15 ? 0.02 * r.speed[t - 15] : 0.0;
  CHECK(speed_energy_lag(r, 40) == 15);
  TripRecord flat = r;
  std::fill(flat.energy.begin(), flat.energy.end(), 0.1);
  CHECK_THROWS_AS(speed_energy_lag(flat, 40), CorrelationError);
}
