#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedbev/config.hpp"
#include "fedbev/report.hpp"
#include "fedbev/topology.hpp"

namespace fedbev {

/// Writes one CSV per synthetic vehicle into cfg.output_dir.
std::vector<std::filesystem::path> cmd_gen_data(const ExperimentConfig& cfg);

struct RunOutputs {
  std::filesystem::path report;              // report.json
  std::vector<std::filesystem::path> files;  // every file written, report included
  std::optional<ExperimentReport> run;       // centralized / groups
  std::optional<DecentralizedTable> study;   // performers
};

/// Pipeline, local baseline and the configured topology; writes the report
/// document, the CSV tables, timing.json and (optionally) checkpoints.
RunOutputs cmd_run(const ExperimentConfig& cfg);

/// One run per value of `axis` (rounds | split | window). Points land in
/// <output>/<axis>-<value>/, the combined table in sweep.json and
/// table_sweep_<axis>.csv. A failing point stops the sweep; the partial
/// result is written before the error is rethrown.
SweepResult cmd_sweep(const ExperimentConfig& cfg, const std::string& axis, std::span<const std::string> values);

enum class ReportFormat { text, csv };

/// Renders report documents. Documents whose configs differ only in
/// run.seed are merged into mean and spread columns.
std::string cmd_report(std::span<const std::filesystem::path> files, ReportFormat format);

}  // namespace fedbev
