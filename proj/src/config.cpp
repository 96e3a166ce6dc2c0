#include "fedbev/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>

#include "fedbev/error.hpp"

namespace fedbev {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  if (trim(s).empty()) return out;
  for (;;) {
    const std::size_t p = s.find(sep);
    out.push_back(trim(s.substr(0, p)));
    if (p == std::string_view::npos) break;
    s.remove_prefix(p + 1);
  }
  return out;
}

[[noreturn]] void bad(std::string_view key, std::string_view value, std::string_view what) {
  throw ValidationError(fmt::format("config key '{}': {} (got '{}')", key, what, value));
}

template <class T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto v = trim(value);
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) bad(key, value, "not a valid number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  const auto v = trim(value);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad(key, value, "expected true or false");
}

template <class T>
std::vector<T> parse_list(std::string_view key, std::string_view value) {
  std::vector<T> out;
  for (auto item : split(value, ',')) out.push_back(parse_number<T>(key, item));
  return out;
}

template <class T>
std::string join(const std::vector<T>& xs, std::string_view sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += fmt::format("{}{}", i ? sep : "", xs[i]);
  return out;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Key {
  std::string name;
  std::string help;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<Key>& key_table() {
  using C = ExperimentConfig;
  using SV = std::string_view;
  static const std::vector<Key> keys = {
      {"data.source", "synthetic | csv", [](C& c, SV v) { c.data.source = std::string(trim(v)); },
       [](const C& c) { return c.data.source; }},
      {"data.fleet_size", "number of synthetic vehicles",
       [](C& c, SV v) { c.data.fleet_size = parse_number<std::size_t>("data.fleet_size", v); },
       [](const C& c) { return fmt::format("{}", c.data.fleet_size); }},
      {"data.seed", "synthetic generator seed",
       [](C& c, SV v) { c.data.seed = parse_number<std::uint64_t>("data.seed", v); },
       [](const C& c) { return fmt::format("{}", c.data.seed); }},
      {"data.duration", "synthetic trip length in seconds",
       [](C& c, SV v) { c.data.duration = parse_number<std::size_t>("data.duration", v); },
       [](const C& c) { return fmt::format("{}", c.data.duration); }},
      {"data.csv_dir", "directory of per-vehicle CSV files", [](C& c, SV v) { c.data.csv_dir = std::string(trim(v)); },
       [](const C& c) { return c.data.csv_dir.string(); }},
      {"data.columns.time", "CSV header of the time column",
       [](C& c, SV v) { c.data.columns.time = std::string(trim(v)); }, [](const C& c) { return c.data.columns.time; }},
      {"data.columns.speed", "CSV header of the speed column",
       [](C& c, SV v) { c.data.columns.speed = std::string(trim(v)); }, [](const C& c) { return c.data.columns.speed; }},
      {"data.columns.acceleration", "CSV header of the acceleration column",
       [](C& c, SV v) { c.data.columns.acceleration = std::string(trim(v)); },
       [](const C& c) { return c.data.columns.acceleration; }},
      {"data.columns.distance", "CSV header of the distance column",
       [](C& c, SV v) { c.data.columns.distance = std::string(trim(v)); },
       [](const C& c) { return c.data.columns.distance; }},
      {"data.columns.energy", "CSV header of the per-second energy column",
       [](C& c, SV v) { c.data.columns.energy = std::string(trim(v)); },
       [](const C& c) { return c.data.columns.energy; }},
      {"data.split", "train:val:test ratio, e.g. 8:1:1",
       [](C& c, SV v) {
         const auto parts = split(v, ':');
         if (parts.size() != 3) bad("data.split", v, "expected a:b:c");
         c.split = {parse_number<int>("data.split", parts[0]), parse_number<int>("data.split", parts[1]),
                    parse_number<int>("data.split", parts[2])};
       },
       [](const C& c) { return fmt::format("{}:{}:{}", c.split.train, c.split.val, c.split.test); }},
      {"data.window", "window length m in seconds",
       [](C& c, SV v) {
         c.window = parse_number<std::size_t>("data.window", v);
         c.arch.steps = c.window;
       },
       [](const C& c) { return fmt::format("{}", c.window); }},
      {"model.arch", "ann | gru | lstm", [](C& c, SV v) { c.arch.kind = parse_model_kind(trim(v)); },
       [](const C& c) { return std::string(to_string(c.arch.kind)); }},
      {"model.hidden", "hidden layer widths, e.g. 40,32,16",
       [](C& c, SV v) { c.arch.hidden = parse_list<std::size_t>("model.hidden", v); },
       [](const C& c) { return join(c.arch.hidden); }},
      {"model.dropout", "dropout rates between hidden layers, e.g. 0.1,0.2",
       [](C& c, SV v) { c.arch.dropout = parse_list<double>("model.dropout", v); },
       [](const C& c) { return join(c.arch.dropout); }},
      {"model.learning_rate", "Adam learning rate (also the single_step SGD rate)",
       [](C& c, SV v) { c.plan.local_lr = parse_number<double>("model.learning_rate", v); },
       [](const C& c) { return fmt::format("{}", c.plan.local_lr); }},
      {"fl.algorithm", "sgd | avg | prox | per | rep", [](C& c, SV v) { c.plan.algorithm = parse_algorithm(trim(v)); },
       [](const C& c) { return std::string(to_string(c.plan.algorithm)); }},
      {"fl.topology", "centralized | groups | performers",
       [](C& c, SV v) { c.topology = std::string(trim(v)); }, [](const C& c) { return c.topology; }},
      {"fl.groups", "client groups for the groups topology, e.g. 1,2,3;4,5",
       [](C& c, SV v) {
         c.groups.clear();
         for (auto g : split(v, ';')) c.groups.push_back(parse_list<int>("fl.groups", g));
       },
       [](const C& c) {
         std::vector<std::string> gs;
         for (const auto& g : c.groups) gs.push_back(join(g));
         return join(gs, ";");
       }},
      {"fl.performers", "good/weak group size k for the performers topology",
       [](C& c, SV v) { c.performers = parse_number<std::size_t>("fl.performers", v); },
       [](const C& c) { return fmt::format("{}", c.performers); }},
      {"fl.rounds", "number of aggregation rounds", [](C& c, SV v) { c.rounds = parse_number<int>("fl.rounds", v); },
       [](const C& c) { return fmt::format("{}", c.rounds); }},
      {"fl.local_epochs", "local epochs E per round",
       [](C& c, SV v) { c.plan.local_epochs = parse_number<int>("fl.local_epochs", v); },
       [](const C& c) { return fmt::format("{}", c.plan.local_epochs); }},
      {"fl.batch_size", "local mini-batch size B",
       [](C& c, SV v) { c.plan.batch_size = parse_number<std::size_t>("fl.batch_size", v); },
       [](const C& c) { return fmt::format("{}", c.plan.batch_size); }},
      {"fl.participation", "fraction of clients per round (avg, prox)",
       [](C& c, SV v) { c.plan.participation = parse_number<double>("fl.participation", v); },
       [](const C& c) { return fmt::format("{}", c.plan.participation); }},
      {"fl.server_lr", "FedSGD server step size",
       [](C& c, SV v) { c.plan.server_lr = parse_number<double>("fl.server_lr", v); },
       [](const C& c) { return fmt::format("{}", c.plan.server_lr); }},
      {"fl.mu", "FedProx penalty weight", [](C& c, SV v) { c.plan.mu = parse_number<double>("fl.mu", v); },
       [](const C& c) { return fmt::format("{}", c.plan.mu); }},
      {"fl.anchor", "received | previous_global", [](C& c, SV v) { c.plan.anchor = parse_anchor_mode(trim(v)); },
       [](const C& c) { return std::string(to_string(c.plan.anchor)); }},
      {"fl.partition", "per/rep split policy: default | none | layers:a,b",
       [](C& c, SV v) { c.plan.partition = std::string(trim(v)); }, [](const C& c) { return c.plan.partition; }},
      {"fl.local_mode", "per/rep local phase: epochs | single_step",
       [](C& c, SV v) { c.plan.local_mode = parse_local_mode(trim(v)); },
       [](const C& c) { return std::string(to_string(c.plan.local_mode)); }},
      {"baseline.epochs", "epochs of the standalone local baseline",
       [](C& c, SV v) { c.baseline.epochs = parse_number<int>("baseline.epochs", v); },
       [](const C& c) { return fmt::format("{}", c.baseline.epochs); }},
      {"baseline.batch_size", "batch size of the standalone local baseline",
       [](C& c, SV v) { c.baseline.batch_size = parse_number<std::size_t>("baseline.batch_size", v); },
       [](const C& c) { return fmt::format("{}", c.baseline.batch_size); }},
      {"report.at", "final | best_val: which round the tables report",
       [](C& c, SV v) {
         const auto t = trim(v);
         if (t != "final" && t != "best_val") bad("report.at", v, "expected final or best_val");
         c.report_best_val = t == "best_val";
       },
       [](const C& c) { return std::string(c.report_best_val ? "best_val" : "final"); }},
      {"report.cross_evaluate", "compute the model x test-split matrix",
       [](C& c, SV v) { c.cross_evaluate = parse_bool("report.cross_evaluate", v); },
       [](const C& c) { return fmt_bool(c.cross_evaluate); }},
      {"run.seed", "global seed", [](C& c, SV v) { c.seed = parse_number<std::uint64_t>("run.seed", v); },
       [](const C& c) { return fmt::format("{}", c.seed); }},
      {"run.threads", "worker threads for client phases (0 = all cores)",
       [](C& c, SV v) { c.threads = parse_number<unsigned>("run.threads", v); },
       [](const C& c) { return fmt::format("{}", c.threads); }},
      {"output.dir", "output directory", [](C& c, SV v) { c.output_dir = std::string(trim(v)); },
       [](const C& c) { return c.output_dir.string(); }},
      {"output.checkpoints", "write final model checkpoints",
       [](C& c, SV v) { c.checkpoints = parse_bool("output.checkpoints", v); },
       [](const C& c) { return fmt_bool(c.checkpoints); }},
  };
  return keys;
}

}  // namespace

const std::vector<std::pair<std::string, std::string>>& config_keys() {
  static const auto keys = [] {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& k : key_table()) out.emplace_back(k.name, k.help);
    return out;
  }();
  return keys;
}

void ExperimentConfig::set(std::string_view key, std::string_view value) {
  for (const auto& k : key_table()) {
    if (k.name == key) {
      k.set(*this, value);
      return;
    }
  }
  throw ValidationError(fmt::format("unknown config key '{}'", key));
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::echo() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : key_table()) out.emplace_back(k.name, k.get(*this));
  return out;
}

void ExperimentConfig::validate() const {
  if (data.source != "synthetic" && data.source != "csv") {
    throw ValidationError(fmt::format("data.source must be synthetic or csv, got '{}'", data.source));
  }
  if (data.source == "synthetic") {
    if (data.fleet_size == 0) throw ValidationError("data.fleet_size must be positive");
    if (data.duration < 2) throw ValidationError("data.duration must be at least 2 s");
  } else if (data.csv_dir.empty()) {
    throw ValidationError("data.csv_dir is required for the csv source");
  }
  split.validate();
  if (window < 1) throw ValidationError("data.window must be positive");
  if (data.source == "synthetic" && window > data.duration) {
    throw ValidationError(fmt::format("data.window {} exceeds the {} s trip", window, data.duration));
  }
  arch.validate();
  if (arch.steps != window) {
    throw ValidationError(fmt::format("model input length {} differs from data.window {}", arch.steps, window));
  }
  if (rounds < 0) throw ValidationError("fl.rounds must be >= 0");
  const std::size_t n = data.source == "synthetic" ? data.fleet_size : std::size_t{1};
  RoundPlan p = plan;
  p.round = 0;
  p.validate(std::max<std::size_t>(n, 1));
  if (plan.algorithm == Algorithm::per || plan.algorithm == Algorithm::rep) {
    make_partition(arch, plan.algorithm, plan.partition);
  }
  baseline.validate();
  if (topology == "groups") {
    if (groups.empty()) throw ValidationError("fl.groups is required for the groups topology");
  } else if (topology == "performers") {
    if (performers == 0) throw ValidationError("fl.performers must be positive");
    if (data.source == "synthetic" && 2 * performers > data.fleet_size) {
      throw ValidationError(fmt::format("fl.performers = {} needs a fleet of at least {}", performers, 2 * performers));
    }
  } else if (topology != "centralized") {
    throw ValidationError(fmt::format("fl.topology must be centralized, groups or performers, got '{}'", topology));
  }
  if (output_dir.empty()) throw ValidationError("output.dir must not be empty");
}

RunOptions ExperimentConfig::run_options() const {
  RunOptions o;
  o.seed = seed;
  o.baseline = baseline;
  o.report_best_val = report_best_val;
  o.cross_evaluate = cross_evaluate;
  return o;
}

ExperimentConfig parse_config(std::string_view text, ExperimentConfig base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const std::size_t hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError(fmt::format("config line {}: expected 'key = value'", line_no));
    }
    try {
      base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("config line {}: {}", line_no, e.what()));
    }
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(fmt::format("{}: cannot read config file", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg.echo()) out += fmt::format("{} = {}\n", k, v);
  return out;
}

}  // namespace fedbev
