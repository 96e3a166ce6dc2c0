#include "fedbev/topology.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "fedbev/error.hpp"
#include "fedbev/rng.hpp"
#include "parallel.hpp"

namespace fedbev {

void FleetSpec::validate() const {
  if (clients.empty()) throw ValidationError("fleet has no clients");
  std::set<int> ids;
  for (const auto& c : clients) {
    if (!ids.insert(c.id).second) throw ValidationError(fmt::format("duplicate client id {}", c.id));
    if (c.train.empty() || c.val.empty() || c.test.empty()) {
      throw EmptyDatasetError(fmt::format("client {} has an empty split", c.name));
    }
  }
}

const ClientData& FleetSpec::by_id(int id) const {
  for (const auto& c : clients) {
    if (c.id == id) return c;
  }
  throw ValidationError(fmt::format("no client with id {}", id));
}

void GroupSpec::validate(const FleetSpec& fleet) const {
  if (groups.empty()) throw ValidationError("no groups given");
  std::set<int> seen;
  for (const auto& g : groups) {
    if (g.empty()) throw ValidationError("empty group");
    for (int id : g) {
      fleet.by_id(id);
      if (!seen.insert(id).second) throw ValidationError(fmt::format("client {} appears in more than one group", id));
    }
  }
}

namespace {

std::uint64_t init_seed(std::uint64_t seed) { return derive_seed(seed, "global-init"); }

std::size_t index_of(const FleetSpec& fleet, int id) {
  for (std::size_t i = 0; i < fleet.clients.size(); ++i) {
    if (fleet.clients[i].id == id) return i;
  }
  throw ValidationError(fmt::format("no client with id {}", id));
}

// Trajectory of one aggregation group.
struct GroupRun {
  std::vector<std::size_t> members;  // fleet indices
  std::vector<std::vector<double>> val, test;  // [round][member]
  std::vector<double> wall;
  std::vector<ParamVector> final_models;
};

GroupRun run_group(const FleetSpec& fleet, std::vector<std::size_t> members, const ArchSpec& arch, RoundPlan plan,
                   int rounds, const RunOptions& options) {
  GroupRun out;
  out.members = std::move(members);
  const ParamVector w0 = init_model(arch, init_seed(options.seed));
  std::vector<ClientState> clients;
  clients.reserve(out.members.size());
  for (std::size_t m : out.members) {
    const auto& c = fleet.clients[m];
    clients.push_back(make_client(c.id, c.train, w0, options.seed, plan.local_lr));
  }
  plan.round = 0;
  plan.validate(clients.size());
  std::optional<SharedPersonalSplit> split;
  if (plan.algorithm == Algorithm::per || plan.algorithm == Algorithm::rep) {
    split = make_partition(arch, plan.algorithm, plan.partition);
  }

  ParamVector w = w0, previous = w0;
  auto model_of = [&](std::size_t k) -> const ParamVector& { return split ? clients[k].params : w; };

  for (int r = 0; r < rounds; ++r) {
    plan.round = r;
    const auto start = std::chrono::steady_clock::now();
    switch (plan.algorithm) {
      case Algorithm::sgd: w = fedsgd_round(w, clients, arch, plan); break;
      case Algorithm::avg:
      case Algorithm::prox: {
        ParamVector next = fedavg_round(w, previous, clients, arch, plan, options.seed);
        previous = std::move(w);
        w = std::move(next);
        break;
      }
      case Algorithm::per: fedper_round(clients, *split, arch, plan); break;
      case Algorithm::rep: fedrep_round(clients, *split, arch, plan); break;
    }
    const auto stop = std::chrono::steady_clock::now();
    std::vector<double> val(clients.size()), test(clients.size());
    detail::parallel_for(clients.size(), client_threads(), [&](std::size_t k) {
      const auto& c = fleet.clients[out.members[k]];
      val[k] = evaluate(model_of(k), arch, c.val);
      test[k] = evaluate(model_of(k), arch, c.test);
    });
    out.val.push_back(std::move(val));
    out.test.push_back(std::move(test));
    out.wall.push_back(std::chrono::duration<double>(stop - start).count());
  }
  for (std::size_t k = 0; k < clients.size(); ++k) out.final_models.push_back(model_of(k));
  return out;
}

ExperimentReport assemble(const FleetSpec& fleet, const std::vector<GroupRun>& runs, const ArchSpec& arch,
                          const RoundPlan& plan, int rounds, const RunOptions& options, const LocalBaseline& baseline) {
  // Report rows follow fleet order.
  std::vector<std::pair<std::size_t, std::pair<std::size_t, std::size_t>>> rows;  // fleet idx -> (run, member)
  for (std::size_t g = 0; g < runs.size(); ++g) {
    for (std::size_t k = 0; k < runs[g].members.size(); ++k) rows.push_back({runs[g].members[k], {g, k}});
  }
  std::sort(rows.begin(), rows.end());

  ExperimentReport rep;
  rep.algorithm = std::string(to_string(plan.algorithm));
  rep.arch = std::string(to_string(arch.kind));
  rep.seed = options.seed;
  rep.rounds = rounds;
  for (const auto& [fi, where] : rows) {
    const auto& c = fleet.clients[fi];
    rep.client_ids.push_back(c.id);
    rep.client_names.push_back(c.name);
    rep.train_windows.push_back(c.train.size());
    rep.val_windows.push_back(c.val.size());
    rep.test_windows.push_back(c.test.size());
    rep.baseline_val.push_back(baseline.val_mae[fi]);
    rep.baseline_test.push_back(baseline.test_mae[fi]);
  }
  for (int r = 0; r < rounds; ++r) {
    RoundMetrics m;
    m.round = r + 1;
    for (const auto& [fi, where] : rows) {
      m.val_mae.push_back(runs[where.first].val[r][where.second]);
      m.test_mae.push_back(runs[where.first].test[r][where.second]);
    }
    for (const auto& run : runs) m.wall_seconds += run.wall[r];
    rep.history.push_back(std::move(m));
  }
  for (std::size_t row = 0; row < rows.size(); ++row) {
    const auto [g, k] = rows[row].second;
    if (rounds == 0) {
      rep.final_test.push_back(rep.baseline_test[row]);
      rep.reported_round.push_back(0);
      rep.final_models.push_back(baseline.models[rows[row].first]);
      continue;
    }
    int pick = rounds;
    if (options.report_best_val) {
      for (int r = 1; r <= rounds; ++r) {
        if (rep.history[r - 1].val_mae[row] < rep.history[pick - 1].val_mae[row]) pick = r;
      }
    }
    rep.final_test.push_back(rep.history[pick - 1].test_mae[row]);
    rep.reported_round.push_back(pick);
    rep.final_models.push_back(runs[g].final_models[k]);
  }
  if (options.cross_evaluate) {
    FleetSpec subset;
    for (const auto& [fi, where] : rows) subset.clients.push_back(fleet.clients[fi]);
    rep.cross = cross_evaluate(rep.final_models, subset, arch);
  }
  return rep;
}

LocalBaseline baseline_or_compute(const FleetSpec& fleet, const ArchSpec& arch, const RunOptions& options,
                                  const LocalBaseline* baseline) {
  if (!baseline) return train_local_baselines(fleet, arch, options);
  if (baseline->models.size() != fleet.clients.size() || baseline->val_mae.size() != fleet.clients.size() ||
      baseline->test_mae.size() != fleet.clients.size()) {
    throw ValidationError("local baseline does not match the fleet");
  }
  return *baseline;
}

}  // namespace

LocalBaseline train_local_baselines(const FleetSpec& fleet, const ArchSpec& arch, const RunOptions& options) {
  fleet.validate();
  arch.validate();
  const ParamVector w0 = init_model(arch, init_seed(options.seed));
  const std::size_t n = fleet.clients.size();
  LocalBaseline out;
  out.models.resize(n);
  out.val_mae.resize(n);
  out.test_mae.resize(n);
  detail::parallel_for(n, client_threads(), [&](std::size_t i) {
    const auto& c = fleet.clients[i];
    TrainConfig cfg = options.baseline;
    cfg.seed = derive_seed(options.seed, "baseline", static_cast<std::uint64_t>(c.id));
    cfg.first_epoch = 0;
    out.models[i] = train_local(w0, arch, c.train, cfg);
    out.val_mae[i] = evaluate(out.models[i], arch, c.val);
    out.test_mae[i] = evaluate(out.models[i], arch, c.test);
  });
  return out;
}

CrossEvaluation cross_evaluate(std::span<const ParamVector> models, const FleetSpec& fleet, const ArchSpec& arch) {
  const std::size_t n = models.size();
  if (n != fleet.clients.size()) throw ValidationError("cross_evaluate: one model per client expected");
  CrossEvaluation out;
  out.matrix.assign(n, std::vector<double>(n, 0.0));
  detail::parallel_for(n * n, client_threads(), [&](std::size_t k) {
    out.matrix[k / n][k % n] = evaluate(models[k / n], arch, fleet.clients[k % n].test);
  });
  for (const auto& row : out.matrix) {
    out.row_mean.push_back(std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(n));
  }
  return out;
}

ExperimentReport run_centralized(const FleetSpec& fleet, const ArchSpec& arch, const RoundPlan& plan, int rounds,
                                 const RunOptions& options, const LocalBaseline* baseline) {
  fleet.validate();
  arch.validate();
  if (rounds < 0) throw ValidationError("rounds must be >= 0");
  const LocalBaseline base = baseline_or_compute(fleet, arch, options, baseline);
  std::vector<std::size_t> all(fleet.clients.size());
  std::iota(all.begin(), all.end(), 0);
  std::vector<GroupRun> runs{run_group(fleet, all, arch, plan, rounds, options)};
  ExperimentReport rep = assemble(fleet, runs, arch, plan, rounds, options, base);
  rep.topology = "centralized";
  return rep;
}

ExperimentReport run_decentralized(const FleetSpec& fleet, const GroupSpec& groups, const ArchSpec& arch,
                                   const RoundPlan& plan, int rounds, const RunOptions& options,
                                   const LocalBaseline* baseline) {
  fleet.validate();
  arch.validate();
  groups.validate(fleet);
  if (rounds < 0) throw ValidationError("rounds must be >= 0");
  const LocalBaseline base = baseline_or_compute(fleet, arch, options, baseline);
  std::vector<GroupRun> runs;
  for (const auto& g : groups.groups) {
    std::vector<std::size_t> members;
    for (int id : g) members.push_back(index_of(fleet, id));
    std::sort(members.begin(), members.end());
    runs.push_back(run_group(fleet, members, arch, plan, rounds, options));
  }
  ExperimentReport rep = assemble(fleet, runs, arch, plan, rounds, options, base);
  rep.topology = "decentralized";
  rep.groups = groups.groups;
  return rep;
}

Performers select_performers(std::span<const int> client_ids, std::span<const double> baseline_mae, std::size_t k) {
  if (client_ids.size() != baseline_mae.size()) throw ValidationError("select_performers: ids and MAEs differ in length");
  if (k == 0 || 2 * k > client_ids.size()) {
    throw ValidationError(fmt::format("select_performers: k = {} needs 1 <= k <= {}", k, client_ids.size() / 2));
  }
  std::vector<std::size_t> order(client_ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (baseline_mae[a] != baseline_mae[b]) return baseline_mae[a] < baseline_mae[b];
    return client_ids[a] < client_ids[b];
  });
  std::vector<std::size_t> desc(order.size());
  std::iota(desc.begin(), desc.end(), 0);
  std::sort(desc.begin(), desc.end(), [&](std::size_t a, std::size_t b) {
    if (baseline_mae[a] != baseline_mae[b]) return baseline_mae[a] > baseline_mae[b];
    return client_ids[a] < client_ids[b];
  });
  Performers p;
  for (std::size_t i = 0; i < k; ++i) p.good.push_back(client_ids[order[i]]);
  for (std::size_t i = 0; i < k; ++i) p.weak.push_back(client_ids[desc[i]]);
  return p;
}

std::vector<std::vector<int>> performer_groups(const Performers& performers) {
  const std::size_t k = performers.good.size();
  if (k == 0 || performers.weak.size() != k) throw ValidationError("performer_groups: need k good and k weak clients");
  // Weak members leave mildest first, so the worst stays longest.
  std::vector<int> weak(performers.weak.rbegin(), performers.weak.rend());
  std::vector<std::vector<int>> groups;
  for (std::size_t j = 0; j <= k; ++j) {
    std::vector<int> g(weak.begin() + static_cast<std::ptrdiff_t>(j), weak.end());
    g.insert(g.end(), performers.good.begin(), performers.good.begin() + static_cast<std::ptrdiff_t>(j));
    std::sort(g.begin(), g.end());
    groups.push_back(std::move(g));
  }
  return groups;
}

DecentralizedTable run_performer_study(const FleetSpec& fleet, const ArchSpec& arch, const RoundPlan& plan,
                                       int rounds, const RunOptions& options, const LocalBaseline& baseline,
                                       std::size_t k) {
  fleet.validate();
  std::vector<int> ids;
  for (const auto& c : fleet.clients) ids.push_back(c.id);
  const Performers perf = select_performers(ids, baseline.test_mae, k);
  const auto compositions = performer_groups(perf);

  DecentralizedTable table;
  for (const auto& c : fleet.clients) {
    const bool good = std::find(perf.good.begin(), perf.good.end(), c.id) != perf.good.end();
    const bool weak = std::find(perf.weak.begin(), perf.weak.end(), c.id) != perf.weak.end();
    if (!good && !weak) continue;
    table.client_ids.push_back(c.id);
    table.labels.push_back(good ? PerformerLabel::good : PerformerLabel::weak);
    table.baseline.push_back(baseline.test_mae[index_of(fleet, c.id)]);
  }
  table.cells.assign(table.client_ids.size(), {});
  RunOptions opts = options;
  opts.cross_evaluate = false;
  for (std::size_t j = 0; j < compositions.size(); ++j) {
    table.columns.push_back(fmt::format("{}G+{}W", j, k - j));
    GroupSpec spec;
    spec.groups = {compositions[j]};
    for (int id : perf.good) spec.labels[id] = PerformerLabel::good;
    for (int id : perf.weak) spec.labels[id] = PerformerLabel::weak;
    ExperimentReport rep = run_decentralized(fleet, spec, arch, plan, rounds, opts, &baseline);
    for (std::size_t row = 0; row < table.client_ids.size(); ++row) {
      const auto it = std::find(rep.client_ids.begin(), rep.client_ids.end(), table.client_ids[row]);
      table.cells[row].push_back(it == rep.client_ids.end()
                                     ? std::nullopt
                                     : std::optional<double>(rep.final_test[static_cast<std::size_t>(
                                           it - rep.client_ids.begin())]));
    }
    rep.notes.emplace_back("composition", table.columns.back());
    table.runs.push_back(std::move(rep));
  }
  return table;
}

}  // namespace fedbev
