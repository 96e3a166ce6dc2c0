#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedbev/fl.hpp"
#include "fedbev/fleet.hpp"
#include "fedbev/nn.hpp"
#include "fedbev/pipeline.hpp"
#include "fedbev/topology.hpp"

namespace fedbev {

/// One experiment. Every field has a dotted key (see config_keys()); the
/// text form is `key = value` per line with `#` comments.
struct ExperimentConfig {
  DataOptions data;
  SplitSpec split{8, 1, 1};
  std::size_t window = 60;

  ArchSpec arch;
  RoundPlan plan;
  std::string topology = "centralized";  // centralized | groups | performers
  std::vector<std::vector<int>> groups;  // fl.groups = 1,2,3;4,5
  std::size_t performers = 3;
  int rounds = 15;

  TrainConfig baseline{70, 65};
  bool report_best_val = false;
  bool cross_evaluate = true;

  std::uint64_t seed = 42;
  unsigned threads = 1;
  std::filesystem::path output_dir = "out";
  bool checkpoints = true;

  /// Throws ValidationError naming the key on an unknown key or bad value.
  void set(std::string_view key, std::string_view value);
  /// Every key with its canonical value, in documentation order.
  std::vector<std::pair<std::string, std::string>> echo() const;
  void validate() const;

  RunOptions run_options() const;
};

/// Keys accepted by ExperimentConfig::set, with a one-line description.
const std::vector<std::pair<std::string, std::string>>& config_keys();

ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path);

std::string format_config(const ExperimentConfig& cfg);

}  // namespace fedbev
