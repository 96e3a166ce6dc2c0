#include "fedbev/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "fedbev/error.hpp"

namespace fedbev {

using json = nlohmann::ordered_json;

void Table::validate() const {
  if (cells.size() != rows.size()) throw ShapeError(fmt::format("table '{}': {} rows but {} cell rows", title, rows.size(), cells.size()));
  for (const auto& r : cells) {
    if (r.size() != columns.size()) throw ShapeError(fmt::format("table '{}': ragged row", title));
  }
  if (!spread.empty() && spread.size() != rows.size()) throw ShapeError(fmt::format("table '{}': spread shape", title));
}

Table rounds_table(const ExperimentReport& report) {
  Table t;
  t.title = fmt::format("{} {} test MAE (Wh)", report.algorithm, report.arch);
  t.columns.push_back("baseline");
  if (report.rounds > 0) t.columns.push_back(fmt::format("{} ITR", report.rounds));
  for (std::size_t i = 0; i < report.client_ids.size(); ++i) {
    t.rows.push_back(report.client_names[i]);
    std::vector<std::optional<double>> row{report.baseline_test[i]};
    if (report.rounds > 0) row.push_back(report.final_test[i]);
    t.cells.push_back(std::move(row));
  }
  return t;
}

Table cross_table(const ExperimentReport& report) {
  if (!report.cross) throw ValidationError("report has no cross-evaluation matrix");
  Table t;
  t.title = "model (row) on test split (column), MAE (Wh)";
  t.row_header = "model";
  t.columns = report.client_names;
  t.columns.push_back("mean");
  for (std::size_t i = 0; i < report.client_names.size(); ++i) {
    t.rows.push_back(report.client_names[i]);
    std::vector<std::optional<double>> row(report.cross->matrix[i].begin(), report.cross->matrix[i].end());
    row.push_back(report.cross->row_mean[i]);
    t.cells.push_back(std::move(row));
  }
  return t;
}

Table performer_table(const DecentralizedTable& study, const FleetSpec& fleet) {
  Table t;
  t.title = "decentralized groups, test MAE (Wh)";
  t.columns.push_back("baseline");
  t.columns.insert(t.columns.end(), study.columns.begin(), study.columns.end());
  for (std::size_t i = 0; i < study.client_ids.size(); ++i) {
    t.rows.push_back(fmt::format("{} ({})", fleet.by_id(study.client_ids[i]).name,
                                 study.labels[i] == PerformerLabel::good ? "G" : "W"));
    std::vector<std::optional<double>> row{study.baseline[i]};
    row.insert(row.end(), study.cells[i].begin(), study.cells[i].end());
    t.cells.push_back(std::move(row));
  }
  return t;
}

Table merge_tables(std::span<const Table> tables) {
  if (tables.empty()) throw ValidationError("merge_tables: nothing to merge");
  const Table& first = tables.front();
  for (const auto& t : tables) {
    t.validate();
    if (t.columns != first.columns || t.rows != first.rows) {
      throw ShapeError("merge_tables: tables differ in rows or columns");
    }
  }
  Table out = first;
  out.title = fmt::format("{} (mean ± sd over {} runs)", first.title, tables.size());
  out.spread.assign(first.rows.size(), std::vector<std::optional<double>>(first.columns.size()));
  for (std::size_t r = 0; r < first.rows.size(); ++r) {
    for (std::size_t c = 0; c < first.columns.size(); ++c) {
      std::vector<double> xs;
      for (const auto& t : tables) {
        if (t.cells[r][c]) xs.push_back(*t.cells[r][c]);
      }
      if (xs.size() != tables.size()) {
        out.cells[r][c].reset();
        continue;
      }
      double mean = 0.0;
      for (double x : xs) mean += x;
      mean /= static_cast<double>(xs.size());
      double var = 0.0;
      for (double x : xs) var += (x - mean) * (x - mean);
      out.cells[r][c] = mean;
      out.spread[r][c] = std::sqrt(var / static_cast<double>(xs.size()));
    }
  }
  return out;
}

std::vector<std::optional<std::size_t>> best_per_row(const Table& table) {
  std::vector<std::optional<std::size_t>> out;
  for (const auto& row : table.cells) {
    std::optional<std::size_t> best;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (row[c] && (!best || *row[c] < *row[*best])) best = c;
    }
    out.push_back(best);
  }
  return out;
}

std::string table_text(const Table& table) {
  table.validate();
  const auto best = best_per_row(table);
  const bool merged = !table.spread.empty();
  std::vector<std::vector<std::string>> grid;
  grid.push_back({table.row_header});
  grid.back().insert(grid.back().end(), table.columns.begin(), table.columns.end());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    std::vector<std::string> line{table.rows[r]};
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      const auto& v = table.cells[r][c];
      std::string cell = "-";
      if (v) {
        cell = merged && table.spread[r][c] ? fmt::format("{:.4f} ± {:.4f}", *v, *table.spread[r][c])
                                            : fmt::format("{:.4f}", *v);
        if (best[r] == c) cell += "*";
      }
      line.push_back(std::move(cell));
    }
    grid.push_back(std::move(line));
  }
  // "±" is two bytes but one column wide.
  auto width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char ch : s) w += (ch & 0xC0) != 0x80;
    return w;
  };
  std::vector<std::size_t> widths(grid.front().size(), 0);
  for (const auto& line : grid) {
    for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], width(line[c]));
  }
  std::string out = table.title + "\n";
  for (const auto& line : grid) {
    std::string text;
    for (std::size_t c = 0; c < line.size(); ++c) {
      const std::string pad(widths[c] - width(line[c]), ' ');
      text += c == 0 ? line[c] + pad : "  " + pad + line[c];
    }
    out += text + "\n";
  }
  out += "* lowest MAE in the row\n";
  return out;
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string num(const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string(); }

}  // namespace

std::string table_csv(const Table& table, bool best_column) {
  table.validate();
  const bool merged = !table.spread.empty();
  const auto best = best_per_row(table);
  std::string out = csv_escape(table.row_header);
  for (const auto& c : table.columns) {
    out += merged ? fmt::format(",{}_mean,{}_sd", csv_escape(c), csv_escape(c)) : "," + csv_escape(c);
  }
  if (best_column) out += ",best";
  out += "\n";
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    out += csv_escape(table.rows[r]);
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      out += "," + num(table.cells[r][c]);
      if (merged) out += "," + num(table.spread[r][c]);
    }
    if (best_column) out += "," + (best[r] ? csv_escape(table.columns[*best[r]]) : std::string());
    out += "\n";
  }
  return out;
}

std::string history_csv(const ExperimentReport& report) {
  std::string out = "round,vehicle,val_mae,test_mae\n";
  for (std::size_t i = 0; i < report.client_names.size(); ++i) {
    out += fmt::format("0,{},{},{}\n", report.client_names[i], report.baseline_val[i], report.baseline_test[i]);
  }
  for (const auto& m : report.history) {
    for (std::size_t i = 0; i < report.client_names.size(); ++i) {
      out += fmt::format("{},{},{},{}\n", m.round, report.client_names[i], m.val_mae[i], m.test_mae[i]);
    }
  }
  return out;
}

namespace {

json config_json(const ConfigEcho& config) {
  json j = json::object();
  for (const auto& [k, v] : config) j[k] = v;
  return j;
}

ConfigEcho config_from(const json& j) {
  ConfigEcho out;
  for (const auto& [k, v] : j.items()) out.emplace_back(k, v.get<std::string>());
  return out;
}

json cell_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json table_json(const Table& t) {
  json j;
  j["title"] = t.title;
  j["row_header"] = t.row_header;
  j["columns"] = t.columns;
  j["rows"] = json::array();
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    json cells = json::array();
    for (const auto& v : t.cells[r]) cells.push_back(cell_json(v));
    j["rows"].push_back({{"label", t.rows[r]}, {"cells", cells}});
  }
  return j;
}

Table table_from(const json& j) {
  Table t;
  t.title = j.at("title").get<std::string>();
  t.row_header = j.at("row_header").get<std::string>();
  t.columns = j.at("columns").get<std::vector<std::string>>();
  for (const auto& row : j.at("rows")) {
    t.rows.push_back(row.at("label").get<std::string>());
    std::vector<std::optional<double>> cells;
    for (const auto& c : row.at("cells")) cells.push_back(c.is_null() ? std::nullopt : std::optional<double>(c.get<double>()));
    t.cells.push_back(std::move(cells));
  }
  t.validate();
  return t;
}

json header(std::string_view kind, const ConfigEcho& config, std::uint64_t seed) {
  json j;
  j["schema_version"] = ExperimentReport::kSchemaVersion;
  j["kind"] = kind;
  j["seed"] = seed;
  j["config"] = config_json(config);
  return j;
}

json parse_checked(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("report is not valid JSON: {}", e.what()));
  }
  if (!j.is_object() || !j.contains("schema_version")) throw SchemaVersionError("report has no schema_version");
  const int version = j["schema_version"].get<int>();
  if (version != ExperimentReport::kSchemaVersion) {
    throw SchemaVersionError(fmt::format("report schema version {} is not supported (expected {})", version,
                                         ExperimentReport::kSchemaVersion));
  }
  return j;
}

}  // namespace

std::string run_report_json(const ExperimentReport& r) {
  json j = header("run", r.config, r.seed);
  j["topology"] = r.topology;
  j["algorithm"] = r.algorithm;
  j["arch"] = r.arch;
  j["rounds"] = r.rounds;
  j["clients"] = json::array();
  for (std::size_t i = 0; i < r.client_ids.size(); ++i) {
    j["clients"].push_back({{"id", r.client_ids[i]},
                            {"name", r.client_names[i]},
                            {"train_windows", r.train_windows[i]},
                            {"val_windows", r.val_windows[i]},
                            {"test_windows", r.test_windows[i]},
                            {"baseline_val_mae", r.baseline_val[i]},
                            {"baseline_test_mae", r.baseline_test[i]},
                            {"final_test_mae", r.final_test[i]},
                            {"reported_round", r.reported_round[i]}});
  }
  if (!r.groups.empty()) j["groups"] = r.groups;
  j["history"] = json::array();
  for (const auto& m : r.history) {
    j["history"].push_back({{"round", m.round}, {"val_mae", m.val_mae}, {"test_mae", m.test_mae}});
  }
  if (r.cross) {
    j["cross_evaluation"] = {{"matrix", r.cross->matrix}, {"row_mean", r.cross->row_mean}};
  } else {
    j["cross_evaluation"] = nullptr;
  }
  j["notes"] = config_json(r.notes);
  j["table"] = table_json(rounds_table(r));
  return j.dump(2) + "\n";
}

ExperimentReport parse_run_report(std::string_view text) {
  const json j = parse_checked(text);
  if (j.at("kind") != "run") throw ValidationError("not a run report");
  ExperimentReport r;
  r.topology = j.at("topology").get<std::string>();
  r.algorithm = j.at("algorithm").get<std::string>();
  r.arch = j.at("arch").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.rounds = j.at("rounds").get<int>();
  r.config = config_from(j.at("config"));
  r.notes = config_from(j.at("notes"));
  for (const auto& c : j.at("clients")) {
    r.client_ids.push_back(c.at("id").get<int>());
    r.client_names.push_back(c.at("name").get<std::string>());
    r.train_windows.push_back(c.at("train_windows").get<std::size_t>());
    r.val_windows.push_back(c.at("val_windows").get<std::size_t>());
    r.test_windows.push_back(c.at("test_windows").get<std::size_t>());
    r.baseline_val.push_back(c.at("baseline_val_mae").get<double>());
    r.baseline_test.push_back(c.at("baseline_test_mae").get<double>());
    r.final_test.push_back(c.at("final_test_mae").get<double>());
    r.reported_round.push_back(c.at("reported_round").get<int>());
  }
  if (j.contains("groups")) r.groups = j["groups"].get<std::vector<std::vector<int>>>();
  for (const auto& m : j.at("history")) {
    RoundMetrics rm;
    rm.round = m.at("round").get<int>();
    rm.val_mae = m.at("val_mae").get<std::vector<double>>();
    rm.test_mae = m.at("test_mae").get<std::vector<double>>();
    r.history.push_back(std::move(rm));
  }
  if (!j.at("cross_evaluation").is_null()) {
    CrossEvaluation ce;
    ce.matrix = j["cross_evaluation"].at("matrix").get<std::vector<std::vector<double>>>();
    ce.row_mean = j["cross_evaluation"].at("row_mean").get<std::vector<double>>();
    r.cross = std::move(ce);
  }
  return r;
}

std::string performer_report_json(const DecentralizedTable& study, const FleetSpec& fleet, const ConfigEcho& config,
                                  std::uint64_t seed) {
  json j = header("performers", config, seed);
  json sel;
  json good = json::array(), weak = json::array();
  for (std::size_t i = 0; i < study.client_ids.size(); ++i) {
    const json entry = {{"id", study.client_ids[i]},
                        {"name", fleet.by_id(study.client_ids[i]).name},
                        {"baseline_test_mae", study.baseline[i]}};
    (study.labels[i] == PerformerLabel::good ? good : weak).push_back(entry);
  }
  sel["rule"] = "lowest k local-baseline test MAE are good, highest k weak, ties by id";
  sel["good"] = good;
  sel["weak"] = weak;
  j["selection"] = sel;
  j["compositions"] = json::array();
  for (std::size_t c = 0; c < study.columns.size(); ++c) {
    j["compositions"].push_back({{"name", study.columns[c]},
                                 {"members", study.runs[c].client_ids},
                                 {"final_test_mae", study.runs[c].final_test}});
  }
  j["table"] = table_json(performer_table(study, fleet));
  return j.dump(2) + "\n";
}

std::string sweep_report_json(const SweepResult& s) {
  json j = header("sweep", s.config, s.seed);
  j["axis"] = s.axis;
  j["values"] = s.values;
  j["status"] = s.partial ? "partial" : "complete";
  if (s.partial) {
    j["failed_value"] = s.failed_value;
    j["error"] = s.error;
  }
  j["window_counts"] = s.window_counts;
  j["train_windows"] = s.train_counts;
  j["val_windows"] = s.val_counts;
  j["test_windows"] = s.test_counts;
  j["table"] = table_json(s.table);
  return j.dump(2) + "\n";
}

ReportView parse_report_view(std::string_view text) {
  const json j = parse_checked(text);
  ReportView v;
  v.kind = j.at("kind").get<std::string>();
  v.config = config_from(j.at("config"));
  v.table = table_from(j.at("table"));
  return v;
}

std::string timing_json(const ExperimentReport& report) {
  json j;
  double total = 0.0;
  j["round_seconds"] = json::array();
  for (const auto& m : report.history) {
    j["round_seconds"].push_back(m.wall_seconds);
    total += m.wall_seconds;
  }
  j["total_round_seconds"] = total;
  return j.dump(2) + "\n";
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("{}: cannot write file", path.string()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(fmt::format("{}: write failed", path.string()));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("{}: cannot read file", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace fedbev
