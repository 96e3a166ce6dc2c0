#include "fedbev/fleet.hpp"

#include <algorithm>
#include <cctype>

#include <fmt/format.h>

#include "fedbev/battery.hpp"
#include "fedbev/error.hpp"

namespace fedbev {

namespace {

// Digit runs compare by value.
bool natural_less(const std::string& a, const std::string& b) {
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (std::isdigit(static_cast<unsigned char>(a[i])) && std::isdigit(static_cast<unsigned char>(b[j]))) {
      std::size_t ei = i, ej = j;
      while (ei < a.size() && std::isdigit(static_cast<unsigned char>(a[ei]))) ++ei;
      while (ej < b.size() && std::isdigit(static_cast<unsigned char>(b[ej]))) ++ej;
      const auto na = std::stoull(a.substr(i, ei - i)), nb = std::stoull(b.substr(j, ej - j));
      if (na != nb) return na < nb;
      i = ei;
      j = ej;
    } else {
      if (a[i] != b[j]) return a[i] < b[j];
      ++i;
      ++j;
    }
  }
  return a.size() - i < b.size() - j;
}

}  // namespace

std::vector<TripRecord> acquire_trips(const DataOptions& options) {
  if (options.source == "synthetic") {
    FleetOptions fo;
    fo.fleet_size = options.fleet_size;
    fo.seed = options.seed;
    fo.duration = options.duration;
    return generate_fleet(fo);
  }
  if (options.source != "csv") throw ValidationError(fmt::format("unknown data source '{}' (synthetic|csv)", options.source));
  if (!std::filesystem::is_directory(options.csv_dir)) {
    throw LoadError(fmt::format("{}: not a directory", options.csv_dir.string()));
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(options.csv_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(), [](const auto& a, const auto& b) {
    return natural_less(a.filename().string(), b.filename().string());
  });
  if (files.empty()) throw LoadError(fmt::format("{}: no .csv files", options.csv_dir.string()));
  std::vector<TripRecord> trips;
  for (const auto& f : files) trips.push_back(load_trip_csv(f, options.columns));
  return trips;
}

int client_id_from_name(std::string_view name, int fallback) {
  std::size_t end = name.size();
  std::size_t begin = end;
  while (begin > 0 && std::isdigit(static_cast<unsigned char>(name[begin - 1]))) --begin;
  if (begin == end || end - begin > 9) return fallback;
  return std::stoi(std::string(name.substr(begin, end - begin)));
}

ClientData prepare_client(const TripRecord& trip, int id, std::size_t window, const SplitSpec& split) {
  const auto features = engineer_features(trip);
  const WindowedDataset all = make_windows(features, trip.energy, window);
  DatasetSplit parts = chronological_split(all, split);
  const Standardizer st = fit_standardizer(parts.train);
  ClientData c;
  c.id = id;
  c.name = trip.vehicle_id;
  c.train = apply_standardizer(st, parts.train);
  c.val = apply_standardizer(st, parts.val);
  c.test = apply_standardizer(st, parts.test);
  return c;
}

FleetSpec build_fleet(std::span<const TripRecord> trips, std::size_t window, const SplitSpec& split) {
  FleetSpec fleet;
  std::vector<int> ids;
  for (std::size_t i = 0; i < trips.size(); ++i) ids.push_back(client_id_from_name(trips[i].vehicle_id, 0));
  // Fall back to positions when names do not give distinct positive ids.
  auto sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end() || (!sorted.empty() && sorted.front() <= 0)) {
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i + 1);
  }
  for (std::size_t i = 0; i < trips.size(); ++i) {
    try {
      fleet.clients.push_back(prepare_client(trips[i], ids[i], window, split));
    } catch (const SplitError& e) {
      throw SplitError(fmt::format("{}: {}", trips[i].vehicle_id, e.what()));
    } catch (const EmptyDatasetError& e) {
      throw EmptyDatasetError(fmt::format("{}: {}", trips[i].vehicle_id, e.what()));
    }
  }
  fleet.validate();
  return fleet;
}

}  // namespace fedbev
