#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedbev/topology.hpp"

namespace fedbev {

using ConfigEcho = std::vector<std::pair<std::string, std::string>>;

/// A paper-shaped table: one row per vehicle, MAE cells in Wh.
struct Table {
  std::string title;
  std::string row_header = "vehicle";
  std::vector<std::string> columns;
  std::vector<std::string> rows;
  std::vector<std::vector<std::optional<double>>> cells;
  /// Population spread per cell, filled by merge_tables only.
  std::vector<std::vector<std::optional<double>>> spread;

  void validate() const;
};

/// Columns: baseline, then "<R> ITR" when rounds > 0.
Table rounds_table(const ExperimentReport& report);
Table cross_table(const ExperimentReport& report);
/// Rows "<name> (G|W)", columns baseline and the compositions.
Table performer_table(const DecentralizedTable& study, const FleetSpec& fleet);

/// Cell-wise mean and population spread of same-shaped tables.
Table merge_tables(std::span<const Table> tables);

/// Column index of the minimum of each row (nullopt for an empty row);
/// ties go to the leftmost column.
std::vector<std::optional<std::size_t>> best_per_row(const Table& table);

/// Aligned plain text, 4 decimals, best cell of each row marked '*'.
std::string table_text(const Table& table);
/// Full-precision CSV; a trailing "best" column names each row's best cell.
std::string table_csv(const Table& table, bool best_column = true);

/// Per-round MAE in long form: round,vehicle,val_mae,test_mae (round 0 is
/// the local baseline).
std::string history_csv(const ExperimentReport& report);

struct SweepResult {
  std::string axis;                         // rounds | split | window
  std::vector<std::string> values;          // completed points
  Table table;
  std::vector<std::vector<std::size_t>> window_counts;  // [point][client] windows before the split
  std::vector<std::vector<std::size_t>> train_counts, val_counts, test_counts;
  ConfigEcho config;
  std::uint64_t seed = 0;
  bool partial = false;
  std::string failed_value;
  std::string error;
};

std::string run_report_json(const ExperimentReport& report);
std::string performer_report_json(const DecentralizedTable& study, const FleetSpec& fleet, const ConfigEcho& config,
                                  std::uint64_t seed);
std::string sweep_report_json(const SweepResult& sweep);

/// Reads back a run document (no models, no timings).
ExperimentReport parse_run_report(std::string_view json);

/// The part of any report document that cmd_report renders.
struct ReportView {
  std::string kind;  // run | performers | sweep
  ConfigEcho config;
  Table table;
};

/// Throws SchemaVersionError on a version mismatch.
ReportView parse_report_view(std::string_view json);

/// Wall-clock per round, kept apart from the byte-stable report.
std::string timing_json(const ExperimentReport& report);

void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace fedbev
