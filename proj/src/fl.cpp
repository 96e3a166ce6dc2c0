#include "fedbev/fl.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "fedbev/error.hpp"
#include "fedbev/rng.hpp"
#include "parallel.hpp"

namespace fedbev {

std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::sgd: return "sgd";
    case Algorithm::avg: return "avg";
    case Algorithm::prox: return "prox";
    case Algorithm::per: return "per";
    case Algorithm::rep: return "rep";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view text) {
  if (text == "sgd" || text == "fedsgd") return Algorithm::sgd;
  if (text == "avg" || text == "fedavg") return Algorithm::avg;
  if (text == "prox" || text == "fedprox") return Algorithm::prox;
  if (text == "per" || text == "fedper") return Algorithm::per;
  if (text == "rep" || text == "fedrep") return Algorithm::rep;
  throw ValidationError(fmt::format("unknown algorithm '{}' (sgd|avg|prox|per|rep)", text));
}

std::string_view to_string(AnchorMode a) { return a == AnchorMode::received ? "received" : "previous_global"; }

AnchorMode parse_anchor_mode(std::string_view text) {
  if (text == "received") return AnchorMode::received;
  if (text == "previous_global" || text == "previous") return AnchorMode::previous_global;
  throw ValidationError(fmt::format("unknown anchor mode '{}' (received|previous_global)", text));
}

std::string_view to_string(LocalMode m) { return m == LocalMode::epochs ? "epochs" : "single_step"; }

LocalMode parse_local_mode(std::string_view text) {
  if (text == "epochs") return LocalMode::epochs;
  if (text == "single_step") return LocalMode::single_step;
  throw ValidationError(fmt::format("unknown local mode '{}' (epochs|single_step)", text));
}

std::vector<double> aggregation_weights(std::span<const std::size_t> counts) {
  if (counts.empty()) throw ValidationError("aggregation_weights: no clients");
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  if (total == 0) throw ValidationError("aggregation_weights: zero total sample count");
  std::vector<double> w;
  w.reserve(counts.size());
  for (std::size_t n : counts) w.push_back(static_cast<double>(n) / static_cast<double>(total));
  return w;
}

namespace {

std::vector<std::size_t> id_order(std::span<const ClientUpdate> entries) {
  if (entries.empty()) throw ValidationError("weighted average of zero clients");
  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return entries[a].client_id < entries[b].client_id; });
  for (std::size_t k = 1; k < order.size(); ++k) {
    if (entries[order[k]].client_id == entries[order[k - 1]].client_id) {
      throw ValidationError(fmt::format("weighted average: duplicate client id {}", entries[order[k]].client_id));
    }
  }
  for (const auto& e : entries) {
    if (e.n_samples == 0) throw ValidationError(fmt::format("client {} has no training samples", e.client_id));
    if (!e.params.same_partition(entries.front().params)) {
      throw PartitionMismatchError(fmt::format("client {}: parameter layout differs from client {}", e.client_id,
                                               entries.front().client_id));
    }
  }
  return order;
}

// out <- running mean; out starts as the first vector.
template <class Get>
std::vector<double> running_mean(std::span<const ClientUpdate> entries, const std::vector<std::size_t>& order,
                                 Get get) {
  std::vector<double> out;
  double cumulative = 0.0;
  for (std::size_t idx : order) {
    const auto& e = entries[idx];
    const std::vector<double> x = get(e);
    if (out.empty() && cumulative == 0.0) {
      out = x;
      cumulative = static_cast<double>(e.n_samples);
      continue;
    }
    cumulative += static_cast<double>(e.n_samples);
    const double frac = static_cast<double>(e.n_samples) / cumulative;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += (x[i] - out[i]) * frac;
  }
  return out;
}

}  // namespace

ParamVector weighted_average(std::span<const ClientUpdate> entries) {
  const auto order = id_order(entries);
  auto values = running_mean(entries, order, [](const ClientUpdate& e) {
    return std::vector<double>(e.params.values().begin(), e.params.values().end());
  });
  return ParamVector(entries.front().params.partition_ptr(), std::move(values));
}

std::vector<double> weighted_average_segments(std::span<const ClientUpdate> entries,
                                              std::span<const std::string> segment_names) {
  const auto order = id_order(entries);
  return running_mean(entries, order, [&](const ClientUpdate& e) { return e.params.gather(segment_names); });
}

void RoundPlan::validate(std::size_t n_clients) const {
  if (n_clients == 0) throw ValidationError("round: no clients");
  if (!(participation > 0.0 && participation <= 1.0)) {
    throw ValidationError(fmt::format("participation must lie in (0, 1], got {}", participation));
  }
  if (participation < 1.0 && algorithm != Algorithm::avg && algorithm != Algorithm::prox) {
    throw ValidationError(fmt::format("partial participation is only defined for avg and prox, not {}",
                                      to_string(algorithm)));
  }
  if (local_epochs < 0) throw ValidationError("local_epochs must be >= 0");
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  if (!(mu >= 0.0)) throw ValidationError("mu must be >= 0");
  if (!(server_lr > 0.0)) throw ValidationError("server_lr must be positive");
  if (!(local_lr > 0.0)) throw ValidationError("local learning rate must be positive");
  if (round < 0) throw ValidationError("round index must be >= 0");
}

std::size_t RoundPlan::participants(std::size_t n_clients) const {
  // The small slack keeps 0.3 * 10 at 3.
  const auto k = static_cast<std::size_t>(std::ceil(participation * static_cast<double>(n_clients) - 1e-9));
  return std::clamp<std::size_t>(k, 1, n_clients);
}

ClientState make_client(int id, const WindowedDataset& train, const ParamVector& init, std::uint64_t run_seed,
                        double lr) {
  ClientState c;
  c.id = id;
  c.train = &train;
  c.params = init;
  c.adam = AdamState::for_size(init.size(), lr);
  c.seed = derive_seed(run_seed, "client", static_cast<std::uint64_t>(id));
  return c;
}

namespace {
std::atomic<unsigned> g_client_threads{1};

void check_clients(std::span<const ClientState> clients) {
  std::set<int> ids;
  for (const auto& c : clients) {
    if (!c.train) throw ValidationError(fmt::format("client {} has no training data", c.id));
    if (!ids.insert(c.id).second) throw ValidationError(fmt::format("duplicate client id {}", c.id));
  }
}
}  // namespace

void set_client_threads(unsigned threads) { g_client_threads = threads; }
unsigned client_threads() { return g_client_threads; }

ParamVector fedsgd_step(const ParamVector& w, std::span<const ClientUpdate> gradients, double eta) {
  const ParamVector g = weighted_average(gradients);
  if (!g.same_partition(w)) throw PartitionMismatchError("fedsgd_step: gradient layout differs from the model");
  ParamVector out = w;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= eta * g[i];
  return out;
}

ParamVector client_gradient(const ClientState& client, const ArchSpec& arch, const ParamVector& w) {
  std::vector<std::size_t> all(client.n_samples());
  std::iota(all.begin(), all.end(), 0);
  return backward(w, arch, *client.train, all, nullptr).gradient;
}

ParamVector fedsgd_round(const ParamVector& w, std::span<ClientState> clients, const ArchSpec& arch,
                         const RoundPlan& plan) {
  plan.validate(clients.size());
  check_clients(clients);
  std::vector<ClientUpdate> updates(clients.size());
  detail::parallel_for(clients.size(), client_threads(), [&](std::size_t i) {
    updates[i] = {clients[i].id, client_gradient(clients[i], arch, w), clients[i].n_samples()};
  });
  ParamVector next = fedsgd_step(w, updates, plan.server_lr);
  for (auto& c : clients) c.params = next;
  return next;
}

std::vector<std::size_t> sample_participants(std::span<const ClientState> clients, const RoundPlan& plan,
                                             std::uint64_t run_seed) {
  const std::size_t n = clients.size();
  const std::size_t k = plan.participants(n);
  std::vector<std::size_t> by_id(n);
  std::iota(by_id.begin(), by_id.end(), 0);
  std::sort(by_id.begin(), by_id.end(), [&](std::size_t a, std::size_t b) { return clients[a].id < clients[b].id; });
  if (k < n) {
    Rng rng(derive_seed(run_seed, "participation", static_cast<std::uint64_t>(plan.round)));
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
      std::swap(by_id[i], by_id[j]);
    }
    by_id.resize(k);
  }
  std::sort(by_id.begin(), by_id.end());
  return by_id;
}

ParamVector fedprox_local(const ParamVector& w_received, const ParamVector& anchor, double mu,
                          const WindowedDataset& ds, const ArchSpec& arch, const TrainConfig& cfg, AdamState& opt) {
  if (!(mu >= 0.0)) throw ValidationError("mu must be >= 0");
  return train_local(w_received, arch, ds, cfg, opt, ProximalTerm{&anchor, mu});
}

TrainConfig local_train_config(const ClientState& client, const RoundPlan& plan) {
  TrainConfig cfg;
  cfg.batch_size = plan.batch_size;
  cfg.epochs = plan.local_epochs;
  cfg.seed = client.seed;
  cfg.shuffle = true;
  cfg.first_epoch = static_cast<std::uint64_t>(plan.round) * static_cast<std::uint64_t>(plan.local_epochs);
  return cfg;
}

ParamVector fedavg_round(const ParamVector& w, const ParamVector& previous_global, std::span<ClientState> clients,
                         const ArchSpec& arch, const RoundPlan& plan, std::uint64_t run_seed) {
  if (plan.algorithm != Algorithm::avg && plan.algorithm != Algorithm::prox) {
    throw ValidationError("fedavg_round: algorithm must be avg or prox");
  }
  plan.validate(clients.size());
  check_clients(clients);
  const auto chosen = sample_participants(clients, plan, run_seed);
  const ParamVector& anchor = plan.anchor == AnchorMode::received ? w : previous_global;
  std::vector<ClientUpdate> updates(chosen.size());
  detail::parallel_for(chosen.size(), client_threads(), [&](std::size_t k) {
    ClientState& c = clients[chosen[k]];
    c.adam.lr = plan.local_lr;
    const TrainConfig cfg = local_train_config(c, plan);
    c.params = plan.algorithm == Algorithm::prox
                   ? fedprox_local(w, anchor, plan.mu, *c.train, arch, cfg, c.adam)
                   : train_local(w, arch, *c.train, cfg, c.adam);
    updates[k] = {c.id, c.params, c.n_samples()};
  });
  return weighted_average(updates);
}

void SharedPersonalSplit::validate(const LayerPartition& partition) const {
  std::set<std::string> seen;
  for (const auto* list : {&shared, &personal}) {
    for (const auto& name : *list) {
      if (!partition.find(name)) throw PartitionMismatchError(fmt::format("unknown segment '{}'", name));
      if (!seen.insert(name).second) throw PartitionMismatchError(fmt::format("segment '{}' listed twice", name));
    }
  }
  if (seen.size() != partition.segments().size()) {
    throw PartitionMismatchError("shared and personal segments must cover the whole model");
  }
  if (shared.empty()) throw PartitionMismatchError("nothing left to aggregate: the shared set is empty");
}

SharedPersonalSplit make_partition(const ArchSpec& arch, Algorithm algorithm, std::string_view policy) {
  arch.validate();
  const LayerPartition partition = LayerPartition::for_arch(arch);
  const auto layers = partition.layers();
  std::set<std::string> personal_layers;
  if (policy == "default") {
    if (algorithm == Algorithm::per) {
      personal_layers.insert(arch.layer_name(arch.hidden.size() - 1));
    } else if (algorithm == Algorithm::rep) {
      personal_layers.insert(arch.layer_name(0));
    } else {
      throw ValidationError(fmt::format("no shared/personal split for algorithm {}", to_string(algorithm)));
    }
  } else if (policy == "none") {
  } else if (policy.starts_with("layers:")) {
    std::string_view rest = policy.substr(7);
    while (!rest.empty()) {
      const std::size_t comma = rest.find(',');
      const std::string name(rest.substr(0, comma));
      if (std::find(layers.begin(), layers.end(), name) == layers.end()) {
        throw ValidationError(fmt::format("partition policy names unknown layer '{}'", name));
      }
      personal_layers.insert(name);
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    }
  } else {
    throw ValidationError(fmt::format("unknown partition policy '{}' (default|none|layers:a,b)", policy));
  }
  SharedPersonalSplit split;
  for (const auto& seg : partition.segments()) {
    (personal_layers.contains(seg.layer()) ? split.personal : split.shared).push_back(seg.name);
  }
  split.validate(partition);
  return split;
}

void aggregate_shared(std::span<ClientState> clients, const SharedPersonalSplit& split) {
  check_clients(clients);
  if (clients.empty()) throw ValidationError("aggregate_shared: no clients");
  for (const auto& c : clients) {
    if (!(c.params.partition() == clients.front().params.partition())) {
      throw PartitionMismatchError(fmt::format("client {}: parameter layout differs from client {}", c.id,
                                               clients.front().id));
    }
  }
  split.validate(clients.front().params.partition());
  std::vector<ClientUpdate> updates;
  updates.reserve(clients.size());
  for (const auto& c : clients) updates.push_back({c.id, c.params, c.n_samples()});
  const std::vector<double> avg = weighted_average_segments(updates, split.shared);
  for (auto& c : clients) {
    c.params.scatter(split.shared, avg);
    c.personal_snapshot = c.params.gather(split.personal);
  }
}

namespace {

void personalized_round(std::span<ClientState> clients, const SharedPersonalSplit& split, const ArchSpec& arch,
                        const RoundPlan& plan) {
  plan.validate(clients.size());
  check_clients(clients);
  detail::parallel_for(clients.size(), client_threads(), [&](std::size_t i) {
    ClientState& c = clients[i];
    if (plan.local_mode == LocalMode::epochs) {
      c.adam.lr = plan.local_lr;
      c.params = train_local(c.params, arch, *c.train, local_train_config(c, plan), c.adam);
    } else {
      const ParamVector g = client_gradient(c, arch, c.params);
      for (std::size_t k = 0; k < c.params.size(); ++k) c.params[k] -= plan.local_lr * g[k];
    }
  });
  aggregate_shared(clients, split);
}

}  // namespace

void fedper_round(std::span<ClientState> clients, const SharedPersonalSplit& split, const ArchSpec& arch,
                  const RoundPlan& plan) {
  personalized_round(clients, split, arch, plan);
}

void fedrep_round(std::span<ClientState> clients, const SharedPersonalSplit& split, const ArchSpec& arch,
                  const RoundPlan& plan) {
  personalized_round(clients, split, arch, plan);
}

}  // namespace fedbev
