#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedbev/fl.hpp"
#include "fedbev/nn.hpp"
#include "fedbev/pipeline.hpp"

namespace fedbev {

/// Post-pipeline data of one vehicle.
struct ClientData {
  int id = 0;
  std::string name;  // "V1", ...
  WindowedDataset train, val, test;
  std::size_t total_windows() const { return train.size() + val.size() + test.size(); }
};

struct FleetSpec {
  std::vector<ClientData> clients;

  void validate() const;
  const ClientData& by_id(int id) const;
};

enum class PerformerLabel { good, weak };

/// Disjoint client groups for decentralized runs.
struct GroupSpec {
  std::vector<std::vector<int>> groups;
  std::map<int, PerformerLabel> labels;  // optional G/W tags

  void validate(const FleetSpec& fleet) const;
};

/// Standalone local training of every client (the "0 ITR" column).
struct LocalBaseline {
  std::vector<ParamVector> models;  // fleet order
  std::vector<double> val_mae;
  std::vector<double> test_mae;
};

struct RunOptions {
  std::uint64_t seed = 42;
  TrainConfig baseline{70, 65};
  /// Report the test MAE of the round with the lowest validation MAE
  /// instead of the last round.
  bool report_best_val = false;
  /// Skip the cross-evaluation matrix (it costs |clients|^2 evaluations).
  bool cross_evaluate = true;
};

struct RoundMetrics {
  int round = 0;  // 1-based
  std::vector<double> val_mae;   // per client, report order
  std::vector<double> test_mae;
  double wall_seconds = 0.0;     // not serialized with the report
};

struct CrossEvaluation {
  std::vector<std::vector<double>> matrix;  // (i, j): model i on client j's test split
  std::vector<double> row_mean;
};

struct ExperimentReport {
  static constexpr int kSchemaVersion = 1;

  std::string topology;                  // "centralized" | "decentralized"
  std::string algorithm;
  std::string arch;
  std::uint64_t seed = 0;
  int rounds = 0;
  std::vector<int> client_ids;           // row order
  std::vector<std::string> client_names;
  std::vector<std::size_t> train_windows, val_windows, test_windows;
  std::vector<std::vector<int>> groups;  // decentralized only
  std::vector<double> baseline_val, baseline_test;
  std::vector<RoundMetrics> history;
  std::vector<double> final_test;        // per client; baseline when rounds == 0
  std::vector<int> reported_round;       // which round final_test comes from
  std::optional<CrossEvaluation> cross;
  std::vector<std::pair<std::string, std::string>> config;  // echo
  std::vector<std::pair<std::string, std::string>> notes;   // derivations (e.g. G/W choice)

  /// Final models (global model repeated, or per-client composites).
  std::vector<ParamVector> final_models;
};

LocalBaseline train_local_baselines(const FleetSpec& fleet, const ArchSpec& arch, const RunOptions& options);

/// Model i on every client's test split.
CrossEvaluation cross_evaluate(std::span<const ParamVector> models, const FleetSpec& fleet, const ArchSpec& arch);

/// `baseline` is computed when not supplied.
ExperimentReport run_centralized(const FleetSpec& fleet, const ArchSpec& arch, const RoundPlan& plan, int rounds,
                                 const RunOptions& options, const LocalBaseline* baseline = nullptr);

/// Each group aggregates among its own members only.
ExperimentReport run_decentralized(const FleetSpec& fleet, const GroupSpec& groups, const ArchSpec& arch,
                                   const RoundPlan& plan, int rounds, const RunOptions& options,
                                   const LocalBaseline* baseline = nullptr);

struct Performers {
  std::vector<int> good;  // ascending MAE
  std::vector<int> weak;  // descending MAE
};

/// Lowest-k local-baseline test MAE are good, highest-k weak; ties by id.
Performers select_performers(std::span<const int> client_ids, std::span<const double> baseline_mae, std::size_t k);

/// The four compositions kG+(3-k)W for k = 0..3 (weak tail first, then the
/// best good performers), generalised to any group size.
std::vector<std::vector<int>> performer_groups(const Performers& performers);

/// Rows: the selected clients; columns: baseline plus one per composition.
struct DecentralizedTable {
  std::vector<int> client_ids;
  std::vector<PerformerLabel> labels;
  std::vector<std::string> columns;                       // "0G+3W", ...
  std::vector<std::vector<std::optional<double>>> cells;  // row x composition
  std::vector<double> baseline;
  std::vector<ExperimentReport> runs;
};

DecentralizedTable run_performer_study(const FleetSpec& fleet, const ArchSpec& arch, const RoundPlan& plan,
                                       int rounds, const RunOptions& options, const LocalBaseline& baseline,
                                       std::size_t k = 3);

}  // namespace fedbev
