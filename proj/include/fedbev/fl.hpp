#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedbev/nn.hpp"

namespace fedbev {

enum class Algorithm { sgd, avg, prox, per, rep };
enum class AnchorMode { received, previous_global };
enum class LocalMode { epochs, single_step };

std::string_view to_string(Algorithm a);
Algorithm parse_algorithm(std::string_view text);
std::string_view to_string(AnchorMode a);
AnchorMode parse_anchor_mode(std::string_view text);
std::string_view to_string(LocalMode m);
LocalMode parse_local_mode(std::string_view text);

/// Everything a client is allowed to send to an aggregator: its id, a
/// parameter (or gradient) vector and its training-sample count.
struct ClientUpdate {
  int client_id = 0;
  ParamVector params;
  std::size_t n_samples = 0;
};

/// n_v / sum(n) in client-id order.
std::vector<double> aggregation_weights(std::span<const std::size_t> counts);

/// Sample-weighted mean, summed in ascending client-id order so the result
/// does not depend on how entries are listed. Evaluated as a running mean,
/// so a single entry, or identical entries, come back bit for bit.
ParamVector weighted_average(std::span<const ClientUpdate> entries);

/// Weighted average restricted to the named segments; the result holds the
/// averaged data for those segments only, in the given order.
std::vector<double> weighted_average_segments(std::span<const ClientUpdate> entries,
                                              std::span<const std::string> segment_names);

struct RoundPlan {
  Algorithm algorithm = Algorithm::avg;
  double server_lr = 0.01;        // FedSGD step size
  int local_epochs = 5;
  std::size_t batch_size = 70;
  double participation = 1.0;     // FedAvg/FedProx only
  double mu = 0.01;
  AnchorMode anchor = AnchorMode::previous_global;
  LocalMode local_mode = LocalMode::epochs;
  double local_lr = 1e-3;         // Adam rate, or the SGD rate in single_step mode
  std::string partition = "default";  // per/rep policy, see make_partition
  int round = 0;                  // 0-based round index

  void validate(std::size_t n_clients) const;
  /// ceil(participation * n), at least 1.
  std::size_t participants(std::size_t n_clients) const;
};

/// One vehicle. The training split never leaves this struct; round
/// functions only read ClientUpdate values produced from it.
struct ClientState {
  int id = 0;
  const WindowedDataset* train = nullptr;
  ParamVector params;
  AdamState adam;
  std::optional<std::vector<double>> personal_snapshot;  // per/rep only
  std::uint64_t seed = 0;

  std::size_t n_samples() const { return train ? train->size() : 0; }
};

/// Fresh client: params copied from `init`, Adam zeroed.
ClientState make_client(int id, const WindowedDataset& train, const ParamVector& init, std::uint64_t run_seed,
                        double lr = 1e-3);

/// Worker pool size for client-local phases (0 = hardware concurrency).
/// Results do not depend on it.
void set_client_threads(unsigned threads);
unsigned client_threads();

/// Server half of FedSGD: w - eta * sum(n_v/n * g_v).
ParamVector fedsgd_step(const ParamVector& w, std::span<const ClientUpdate> gradients, double eta);

/// Full-batch, dropout-free gradient of the client's training MAE at w.
ParamVector client_gradient(const ClientState& client, const ArchSpec& arch, const ParamVector& w);

/// Every client sends its full-batch gradient at w; one weighted step.
ParamVector fedsgd_round(const ParamVector& w, std::span<ClientState> clients, const ArchSpec& arch,
                         const RoundPlan& plan);

/// Seeded draw of ceil(phi*|V|) client indices without replacement, sorted.
std::vector<std::size_t> sample_participants(std::span<const ClientState> clients, const RoundPlan& plan,
                                             std::uint64_t run_seed);

/// Local phase for FedProx: train_local with the gradient of
/// (mu/2)||w - anchor||^2 added to every batch gradient.
ParamVector fedprox_local(const ParamVector& w_received, const ParamVector& anchor, double mu,
                          const WindowedDataset& ds, const ArchSpec& arch, const TrainConfig& cfg, AdamState& opt);

/// Local training config for a client in the current round.
TrainConfig local_train_config(const ClientState& client, const RoundPlan& plan);

/// FedAvg (and FedProx when plan.algorithm == prox). `previous_global` is
/// the proximal anchor in previous_global mode (w_0 at the first round).
ParamVector fedavg_round(const ParamVector& w, const ParamVector& previous_global, std::span<ClientState> clients,
                         const ArchSpec& arch, const RoundPlan& plan, std::uint64_t run_seed);

struct SharedPersonalSplit {
  std::vector<std::string> shared;    // segment names
  std::vector<std::string> personal;

  void validate(const LayerPartition& partition) const;
  bool operator==(const SharedPersonalSplit&) const = default;
};

/// Policies: "default" (FedPer personalises the last hidden layer, FedRep
/// the first; the output layer stays shared), "none" (nothing personal),
/// "layers:<a>,<b>" (explicit layer prefixes).
SharedPersonalSplit make_partition(const ArchSpec& arch, Algorithm algorithm, std::string_view policy = "default");

/// Local phase on every client, then the shared segments of every client
/// are replaced by their weighted average. Personal segments stay put.
void fedper_round(std::span<ClientState> clients, const SharedPersonalSplit& split, const ArchSpec& arch,
                  const RoundPlan& plan);
void fedrep_round(std::span<ClientState> clients, const SharedPersonalSplit& split, const ArchSpec& arch,
                  const RoundPlan& plan);

/// Server step alone (shared in by the two functions above).
void aggregate_shared(std::span<ClientState> clients, const SharedPersonalSplit& split);

}  // namespace fedbev
