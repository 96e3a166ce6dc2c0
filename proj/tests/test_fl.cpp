#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "fedbev/error.hpp"
#include "fedbev/fl.hpp"
#include "fedbev/rng.hpp"
#include "reference.hpp"

using namespace fedbev;
using namespace fedbev::testing;

namespace {

std::shared_ptr<const LayerPartition> tiny_partition() {
  // two scalars: a 1x1 "W" and a 1x1 "b"
  return std::make_shared<const LayerPartition>(
      std::vector<Segment>{{"dense1.W", 1, 1, 0, ""}, {"dense1.b", 1, 1, 1, ""}});
}

ClientUpdate update(int id, std::vector<double> v, std::size_t n) {
  return {id, ParamVector(tiny_partition(), std::move(v)), n};
}

struct Fleet {
  ArchSpec arch = small_arch(ModelKind::lstm);
  std::vector<WindowedDataset> data;
  ParamVector w0;
  std::vector<ClientState> clients;

  explicit Fleet(std::vector<std::size_t> sizes, std::uint64_t seed = 1, ModelKind kind = ModelKind::lstm) {
    arch = small_arch(kind);
    for (std::size_t i = 0; i < sizes.size(); ++i) data.push_back(random_dataset(arch.steps, sizes[i], seed + i));
    w0 = init_model(arch, seed);
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      clients.push_back(make_client(static_cast<int>(i + 1), data[i], w0, seed, 1e-2));
    }
  }
};

RoundPlan plan_for(Algorithm a, int epochs = 2, std::size_t batch = 4) {
  RoundPlan p;
  p.algorithm = a;
  p.local_epochs = epochs;
  p.batch_size = batch;
  p.local_lr = 1e-2;
  return p;
}

double distance(const ParamVector& a, const ParamVector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("weighted average examples") {
  std::vector<ClientUpdate> two{update(1, {1, 1}, 5), update(2, {5, 5}, 5)};
  CHECK(weighted_average(two).values()[0] == 3.0);
  CHECK(weighted_average(two).values()[1] == 3.0);

  two[0].n_samples = 1;
  two[1].n_samples = 3;
  CHECK(weighted_average(two).values()[0] == 4.0);

  std::vector<ClientUpdate> one{update(7, {0.1, -1e-300}, 13)};
  CHECK(weighted_average(one) == one[0].params);

  std::vector<ClientUpdate> same{update(3, {0.1, 0.7}, 2), update(1, {0.1, 0.7}, 9), update(2, {0.1, 0.7}, 5)};
  CHECK(weighted_average(same) == same[0].params);
}

TEST_CASE("weighted average errors") {
  CHECK_THROWS_AS(weighted_average(std::vector<ClientUpdate>{}), ValidationError);
  std::vector<ClientUpdate> dup{update(1, {1, 1}, 1), update(1, {2, 2}, 1)};
  CHECK_THROWS_AS(weighted_average(dup), ValidationError);
  const auto arch = small_arch(ModelKind::ann);
  std::vector<ClientUpdate> mixed{update(1, {1, 1}, 1), {2, init_model(arch, 1), 1}};
  CHECK_THROWS_AS(weighted_average(mixed), PartitionMismatchError);
}

TEST_CASE("aggregation weights sum to one") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> counts(1 + rng.below(12));
    for (auto& n : counts) n = 1 + rng.below(2000);
    const auto w = aggregation_weights(counts);
    CHECK(std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) <= 1e-15);
  }
}

TEST_CASE("weighted average is a convex combination and ignores listing order") {
  const auto arch = small_arch(ModelKind::gru);
  std::vector<ClientUpdate> entries;
  for (int id = 1; id <= 5; ++id) entries.push_back({id, random_params(arch, id), static_cast<std::size_t>(10 * id + 3)});
  const auto avg = weighted_average(entries);

  std::vector<std::size_t> counts;
  for (const auto& e : entries) counts.push_back(e.n_samples);
  const auto w = aggregation_weights(counts);
  for (std::size_t i = 0; i < avg.size(); ++i) {
    double direct = 0.0;
    for (std::size_t k = 0; k < entries.size(); ++k) direct += w[k] * entries[k].params[i];
    CHECK(std::abs(avg[i] - direct) < 1e-14);
  }

  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    auto shuffled = entries;
    rng.shuffle(shuffled);
    CHECK(weighted_average(shuffled) == avg);
  }
}

TEST_CASE("fedsgd: zero gradients and a single client") {
  Fleet f({6});
  ParamVector zero(f.w0.partition_ptr(), 0.0);
  std::vector<ClientUpdate> g{{1, zero, 6}, {2, zero, 3}};
  CHECK(fedsgd_step(f.w0, g, 0.5) == f.w0);

  RoundPlan plan = plan_for(Algorithm::sgd);
  plan.server_lr = 0.05;
  const auto grad = backward(f.w0, f.arch, f.data[0], std::vector<std::size_t>{0, 1, 2, 3, 4, 5}).gradient;
  ParamVector expected = f.w0;
  for (std::size_t i = 0; i < expected.size(); ++i) expected[i] -= 0.05 * grad[i];
  const auto next = fedsgd_round(f.w0, f.clients, f.arch, plan);
  CHECK(next == expected);
  CHECK(f.clients[0].params == next);
}

TEST_CASE("fedsgd on split data equals the pooled step (linear model, squared error)") {
  // Oracle: for y = theta . x with squared error, the full-batch gradient of
  // the pooled set is the sample-weighted mean of per-part gradients.
  const std::size_t d = 6;
  auto part = std::make_shared<const LayerPartition>(std::vector<Segment>{{"lin.W", 1, d, 0, ""}});
  Rng rng(11);
  std::vector<std::vector<double>> X(29, std::vector<double>(d));
  std::vector<double> y(29);
  for (std::size_t k = 0; k < X.size(); ++k) {
    for (auto& x : X[k]) x = rng.normal();
    y[k] = rng.uniform(-2.0, 2.0);
  }
  ParamVector theta(part, 0.0);
  for (std::size_t i = 0; i < d; ++i) theta[i] = rng.uniform(-1.0, 1.0);

  auto gradient = [&](std::size_t first, std::size_t last) {
    ParamVector g(part, 0.0);
    for (std::size_t k = first; k < last; ++k) {
      double r = -y[k];
      for (std::size_t i = 0; i < d; ++i) r += theta[i] * X[k][i];
      for (std::size_t i = 0; i < d; ++i) g[i] += 2.0 * r * X[k][i];
    }
    for (std::size_t i = 0; i < d; ++i) g[i] /= static_cast<double>(last - first);
    return g;
  };
  const std::vector<ClientUpdate> parts{{1, gradient(0, 12), 12}, {2, gradient(12, 29), 17}};
  const ParamVector pooled = gradient(0, 29);
  const double eta = 0.1;
  const auto fed = fedsgd_step(theta, parts, eta);
  for (std::size_t i = 0; i < d; ++i) CHECK(std::abs(fed[i] - (theta[i] - eta * pooled[i])) <= 1e-12);
}

TEST_CASE("fedsgd is linear in the server rate") {
  Fleet f({5, 8, 3});
  RoundPlan p1 = plan_for(Algorithm::sgd);
  RoundPlan p2 = p1;
  p1.server_lr = 0.01;
  p2.server_lr = 0.07;
  auto c1 = f.clients;
  auto c2 = f.clients;
  const auto w1 = fedsgd_round(f.w0, c1, f.arch, p1);
  const auto w2 = fedsgd_round(f.w0, c2, f.arch, p2);
  for (std::size_t i = 0; i < f.w0.size(); ++i) {
    const double lhs = w2[i] - f.w0[i];
    const double rhs = 7.0 * (w1[i] - f.w0[i]);
    CHECK(std::abs(lhs - rhs) <= 1e-12 * std::max(1.0, std::abs(f.w0[i])));
  }
}

TEST_CASE("fedavg with zero epochs returns w") {
  Fleet f({5, 6, 7});
  RoundPlan plan = plan_for(Algorithm::avg, 0);
  const auto w = random_params(f.arch, 4);
  CHECK(fedavg_round(w, w, f.clients, f.arch, plan, 1) == w);
}

TEST_CASE("fedavg with one client equals train_local") {
  Fleet f({9});
  RoundPlan plan = plan_for(Algorithm::avg, 3);
  plan.round = 2;
  const auto w = random_params(f.arch, 5, 0.3);
  ClientState copy = f.clients[0];
  const auto expected = train_local(w, f.arch, f.data[0], local_train_config(copy, plan), copy.adam);
  const auto next = fedavg_round(w, f.w0, f.clients, f.arch, plan, 1);
  CHECK(next == expected);
  CHECK(local_train_config(copy, plan).first_epoch == 6);
  CHECK(local_train_config(copy, plan).seed == derive_seed(1, "client", 1));
}

TEST_CASE("fedprox with mu = 0 matches fedavg bitwise") {
  Fleet a({5, 9, 4}), b({5, 9, 4});
  RoundPlan avg = plan_for(Algorithm::avg);
  RoundPlan prox = plan_for(Algorithm::prox);
  prox.mu = 0.0;
  ParamVector wa = a.w0, wb = b.w0;
  for (int r = 0; r < 3; ++r) {
    avg.round = prox.round = r;
    wa = fedavg_round(wa, a.w0, a.clients, a.arch, avg, 1);
    wb = fedavg_round(wb, b.w0, b.clients, b.arch, prox, 1);
    CHECK(wa == wb);
  }
}

TEST_CASE("fedprox local phase") {
  const auto arch = small_arch(ModelKind::gru);
  const auto ds = random_dataset(arch.steps, 12, 3);
  const auto w = random_params(arch, 1, 0.3);
  const auto anchor = random_params(arch, 2, 0.3);
  TrainConfig cfg{4, 3, 17};

  AdamState o1 = AdamState::for_size(w.size(), 1e-2), o2 = o1;
  CHECK(fedprox_local(w, anchor, 0.0, ds, arch, cfg, o1) == train_local(w, arch, ds, cfg, o2));

  // anchored at the starting point: the first proximal gradient is exactly zero
  TrainConfig one_batch{12, 1, 17};
  AdamState o3 = AdamState::for_size(w.size(), 1e-2), o4 = o3;
  CHECK(fedprox_local(w, w, 5.0, ds, arch, one_batch, o3) == train_local(w, arch, ds, one_batch, o4));

  AdamState o5 = AdamState::for_size(w.size(), 1e-2), o6 = o5;
  const auto loose = fedprox_local(w, anchor, 0.0, ds, arch, cfg, o5);
  const auto tight = fedprox_local(w, anchor, 1e6, ds, arch, cfg, o6);
  CHECK(distance(tight, anchor) < distance(loose, anchor));

  const auto other = init_model(small_arch(ModelKind::lstm), 1);
  AdamState o7 = AdamState::for_size(w.size(), 1e-2);
  CHECK_THROWS_AS(fedprox_local(w, other, 1.0, ds, arch, cfg, o7), PartitionMismatchError);
}

TEST_CASE("fedprox anchor modes") {
  Fleet a({6, 7}), b({6, 7});
  RoundPlan plan = plan_for(Algorithm::prox);
  plan.mu = 0.5;
  plan.round = 1;
  const auto w = random_params(a.arch, 8, 0.3);
  plan.anchor = AnchorMode::received;
  const auto received = fedavg_round(w, a.w0, a.clients, a.arch, plan, 1);
  plan.anchor = AnchorMode::previous_global;
  const auto prev_is_w = fedavg_round(w, w, b.clients, b.arch, plan, 1);
  CHECK(received == prev_is_w);
}

TEST_CASE("participant sampling") {
  Fleet f({3, 3, 3, 3, 3, 3, 3, 3, 3, 3});
  RoundPlan plan = plan_for(Algorithm::avg);
  plan.participation = 0.3;
  CHECK(plan.participants(10) == 3);
  plan.participation = 0.01;
  CHECK(plan.participants(10) == 1);
  plan.participation = 0.5;
  std::set<std::vector<std::size_t>> seen;
  for (int r = 0; r < 20; ++r) {
    plan.round = r;
    const auto s = sample_participants(f.clients, plan, 5);
    CHECK(s.size() == 5);
    CHECK(std::is_sorted(s.begin(), s.end()));
    CHECK(std::set<std::size_t>(s.begin(), s.end()).size() == 5);
    CHECK(s == sample_participants(f.clients, plan, 5));
    seen.insert(s);
  }
  CHECK(seen.size() > 1);
  plan.participation = 1.0;
  const auto all = sample_participants(f.clients, plan, 5);
  CHECK(all.size() == 10);
}

TEST_CASE("partial participation leaves other clients alone") {
  Fleet f({4, 5, 6, 7});
  RoundPlan plan = plan_for(Algorithm::avg, 1);
  plan.participation = 0.5;
  const auto before = f.clients;
  fedavg_round(f.w0, f.w0, f.clients, f.arch, plan, 3);
  const auto chosen = sample_participants(before, plan, 3);
  for (std::size_t i = 0; i < f.clients.size(); ++i) {
    const bool picked = std::find(chosen.begin(), chosen.end(), i) != chosen.end();
    CHECK((f.clients[i].params == before[i].params) == !picked);
  }
}

TEST_CASE("round plan validation") {
  RoundPlan p;
  p.participation = 0.0;
  CHECK_THROWS_AS(p.validate(4), ValidationError);
  p.participation = 1.5;
  CHECK_THROWS_AS(p.validate(4), ValidationError);
  p = RoundPlan{};
  p.algorithm = Algorithm::per;
  p.participation = 0.5;
  CHECK_THROWS_AS(p.validate(4), ValidationError);
  p = RoundPlan{};
  p.mu = -1.0;
  CHECK_THROWS_AS(p.validate(4), ValidationError);
  p = RoundPlan{};
  p.batch_size = 0;
  CHECK_THROWS_AS(p.validate(4), ValidationError);
  p = RoundPlan{};
  CHECK_NOTHROW(p.validate(4));
  CHECK(parse_algorithm("fedavg") == Algorithm::avg);
  CHECK_THROWS_AS(parse_algorithm("fedfoo"), ValidationError);
}

TEST_CASE("default shared/personal partitions") {
  ArchSpec lstm;
  const auto per = make_partition(lstm, Algorithm::per);
  CHECK(per.personal == std::vector<std::string>{"lstm3.W", "lstm3.U", "lstm3.b"});
  CHECK(per.shared == std::vector<std::string>{"lstm1.W", "lstm1.U", "lstm1.b", "lstm2.W", "lstm2.U", "lstm2.b",
                                               "out.W", "out.b"});
  const auto rep = make_partition(lstm, Algorithm::rep);
  CHECK(rep.shared != per.shared);
  CHECK(std::find(rep.shared.begin(), rep.shared.end(), "out.W") != rep.shared.end());

  const auto part = LayerPartition::for_arch(lstm);
  for (const auto* split : {&per, &rep}) {
    std::size_t total = 0;
    for (const auto* list : {&split->shared, &split->personal}) {
      for (const auto& name : *list) total += part.at(name).size();
    }
    CHECK(total == part.total_size());
  }

  CHECK(make_partition(lstm, Algorithm::per, "none").personal.empty());
  CHECK(make_partition(lstm, Algorithm::per, "layers:lstm1,lstm3").personal.size() == 6);
  CHECK_THROWS_AS(make_partition(lstm, Algorithm::per, "layers:lstm9"), ValidationError);
  CHECK_THROWS_AS(make_partition(lstm, Algorithm::per, "bogus"), ValidationError);
  CHECK_THROWS_AS(make_partition(lstm, Algorithm::per, "layers:lstm1,lstm2,lstm3,out"), PartitionMismatchError);
}

TEST_CASE("personalized server step") {
  for (Algorithm alg : {Algorithm::per, Algorithm::rep}) {
    Fleet f({5, 8, 6});
    const auto split = make_partition(f.arch, alg);
    for (std::size_t i = 0; i < f.clients.size(); ++i) f.clients[i].params = random_params(f.arch, 40 + i);
    const auto before = f.clients;
    aggregate_shared(f.clients, split);

    std::vector<ClientUpdate> ups;
    for (const auto& c : before) ups.push_back({c.id, c.params, c.n_samples()});
    const auto expected_shared = weighted_average_segments(ups, split.shared);
    for (std::size_t i = 0; i < f.clients.size(); ++i) {
      CHECK(f.clients[i].params.gather(split.personal) == before[i].params.gather(split.personal));
      CHECK(f.clients[i].params.gather(split.shared) == expected_shared);
      CHECK(f.clients[i].personal_snapshot == before[i].params.gather(split.personal));
    }
  }
}

TEST_CASE("fedper and fedrep rounds keep personal segments client-local") {
  Fleet f({5, 8, 6});
  const auto split = make_partition(f.arch, Algorithm::rep);
  RoundPlan plan = plan_for(Algorithm::rep, 1);
  fedrep_round(f.clients, split, f.arch, plan);
  // after the server step every shared segment agrees, personal ones differ
  for (std::size_t i = 1; i < f.clients.size(); ++i) {
    CHECK(f.clients[i].params.gather(split.shared) == f.clients[0].params.gather(split.shared));
    CHECK(f.clients[i].params.gather(split.personal) != f.clients[0].params.gather(split.personal));
  }

  Fleet g({5, 8, 6});
  RoundPlan step = plan_for(Algorithm::per);
  step.local_mode = LocalMode::single_step;
  step.local_lr = 0.1;
  const auto psplit = make_partition(g.arch, Algorithm::per);
  const auto before = g.clients;
  fedper_round(g.clients, psplit, g.arch, step);
  for (std::size_t i = 0; i < g.clients.size(); ++i) {
    const auto grad = client_gradient(before[i], g.arch, before[i].params);
    auto expected = before[i].params;
    for (std::size_t k = 0; k < expected.size(); ++k) expected[k] -= 0.1 * grad[k];
    CHECK(g.clients[i].params.gather(psplit.personal) == expected.gather(psplit.personal));
  }
}

TEST_CASE("fedper with nothing personal is fedavg") {
  Fleet a({5, 8, 6}), b({5, 8, 6});
  const auto split = make_partition(a.arch, Algorithm::per, "none");
  RoundPlan per = plan_for(Algorithm::per);
  RoundPlan avg = plan_for(Algorithm::avg);
  ParamVector w = b.w0;
  for (int r = 0; r < 3; ++r) {
    per.round = avg.round = r;
    fedper_round(a.clients, split, a.arch, per);
    w = fedavg_round(w, b.w0, b.clients, b.arch, avg, 1);
    for (const auto& c : a.clients) CHECK(c.params == w);
  }
}

TEST_CASE("client scheduling does not change round output") {
  Fleet a({5, 8, 6, 7}), b({5, 8, 6, 7});
  RoundPlan plan = plan_for(Algorithm::avg);
  set_client_threads(1);
  const auto serial = fedavg_round(a.w0, a.w0, a.clients, a.arch, plan, 1);
  set_client_threads(4);
  const auto parallel = fedavg_round(b.w0, b.w0, b.clients, b.arch, plan, 1);
  set_client_threads(1);
  CHECK(serial == parallel);

  Fleet c({5, 8, 6, 7});
  std::reverse(c.clients.begin(), c.clients.end());
  CHECK(fedavg_round(c.w0, c.w0, c.clients, c.arch, plan, 1) == serial);
}
