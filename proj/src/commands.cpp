#include "fedbev/commands.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "fedbev/checkpoint.hpp"
#include "fedbev/error.hpp"
#include "fedbev/fleet.hpp"

namespace fedbev {

namespace {

void make_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw Error(fmt::format("{}: cannot create output directory", dir.string()));
  }
}

void write(const std::filesystem::path& path, std::string_view text, std::vector<std::filesystem::path>& files) {
  write_text_file(path, text);
  files.push_back(path);
}

void write_checkpoints(const std::filesystem::path& dir, const ExperimentReport& rep, const ArchSpec& arch,
                       std::vector<std::filesystem::path>& files) {
  make_dir(dir);
  for (std::size_t i = 0; i < rep.final_models.size(); ++i) {
    Checkpoint ck;
    ck.arch = arch;
    ck.params = rep.final_models[i];
    ck.round = rep.rounds;
    ck.algorithm = rep.algorithm;
    ck.client = rep.client_names[i];
    const auto path = dir / (rep.client_names[i] + ".ckpt");
    save_checkpoint(path, ck);
    files.push_back(path);
  }
}

void write_run(const std::filesystem::path& dir, ExperimentReport& rep, const ExperimentConfig& cfg,
               RunOutputs& out) {
  rep.config = cfg.echo();
  const auto path = dir / "report.json";
  write(path, run_report_json(rep), out.files);
  out.report = path;
  write(dir / "table_rounds.csv", table_csv(rounds_table(rep)), out.files);
  write(dir / "per_round.csv", history_csv(rep), out.files);
  if (rep.cross) write(dir / "cross_eval.csv", table_csv(cross_table(rep)), out.files);
  write(dir / "timing.json", timing_json(rep), out.files);
  if (cfg.checkpoints) write_checkpoints(dir / "checkpoints", rep, cfg.arch, out.files);
}

struct Prepared {
  FleetSpec fleet;
  LocalBaseline baseline;
};

Prepared prepare(const ExperimentConfig& cfg) {
  const auto trips = acquire_trips(cfg.data);
  Prepared p{build_fleet(trips, cfg.window, cfg.split), {}};
  RoundPlan plan = cfg.plan;
  plan.validate(p.fleet.clients.size());
  if (cfg.topology == "performers" && 2 * cfg.performers > p.fleet.clients.size()) {
    throw ValidationError(fmt::format("fl.performers = {} needs at least {} clients, fleet has {}", cfg.performers,
                                      2 * cfg.performers, p.fleet.clients.size()));
  }
  if (cfg.topology == "groups") GroupSpec{cfg.groups, {}}.validate(p.fleet);
  p.baseline = train_local_baselines(p.fleet, cfg.arch, cfg.run_options());
  return p;
}

RunOutputs run_prepared(const ExperimentConfig& cfg, const Prepared& p) {
  RunOutputs out;
  make_dir(cfg.output_dir);
  const RunOptions opts = cfg.run_options();
  if (cfg.topology == "performers") {
    DecentralizedTable study =
        run_performer_study(p.fleet, cfg.arch, cfg.plan, cfg.rounds, opts, p.baseline, cfg.performers);
    const auto path = cfg.output_dir / "report.json";
    write(path, performer_report_json(study, p.fleet, cfg.echo(), cfg.seed), out.files);
    out.report = path;
    write(cfg.output_dir / "table_decentralized.csv", table_csv(performer_table(study, p.fleet)), out.files);
    out.study = std::move(study);
    return out;
  }
  ExperimentReport rep = cfg.topology == "groups"
                             ? run_decentralized(p.fleet, GroupSpec{cfg.groups, {}}, cfg.arch, cfg.plan, cfg.rounds,
                                                 opts, &p.baseline)
                             : run_centralized(p.fleet, cfg.arch, cfg.plan, cfg.rounds, opts, &p.baseline);
  write_run(cfg.output_dir, rep, cfg, out);
  out.run = std::move(rep);
  return out;
}

void start(const ExperimentConfig& cfg) {
  cfg.validate();
  set_client_threads(cfg.threads);
}

std::string point_dir(const std::string& axis, const std::string& value) {
  std::string v = value;
  std::replace(v.begin(), v.end(), ':', '-');
  return axis + "-" + v;
}

}  // namespace

std::vector<std::filesystem::path> cmd_gen_data(const ExperimentConfig& cfg) {
  start(cfg);
  if (cfg.data.source != "synthetic") throw ValidationError("gen-data needs data.source = synthetic");
  const auto trips = acquire_trips(cfg.data);
  make_dir(cfg.output_dir);
  std::vector<std::filesystem::path> files;
  for (const auto& t : trips) {
    const auto path = cfg.output_dir / (t.vehicle_id + ".csv");
    write_trip_csv(t, path);
    files.push_back(path);
  }
  return files;
}

RunOutputs cmd_run(const ExperimentConfig& cfg) {
  start(cfg);
  const Prepared p = prepare(cfg);
  return run_prepared(cfg, p);
}

SweepResult cmd_sweep(const ExperimentConfig& cfg, const std::string& axis, std::span<const std::string> values) {
  start(cfg);
  if (axis != "rounds" && axis != "split" && axis != "window") {
    throw ValidationError(fmt::format("unknown sweep axis '{}' (rounds|split|window)", axis));
  }
  if (values.empty()) throw ValidationError("sweep needs at least one value");
  if (cfg.topology != "centralized") throw ValidationError("sweeps run the centralized topology");
  {
    std::set<std::string> seen(values.begin(), values.end());
    if (seen.size() != values.size()) throw ValidationError("sweep values must be distinct");
  }
  // Every point is checked before the first one runs.
  std::vector<ExperimentConfig> points;
  for (const auto& v : values) {
    ExperimentConfig c = cfg;
    c.set(axis == "rounds" ? "fl.rounds" : axis == "split" ? "data.split" : "data.window", v);
    c.output_dir = cfg.output_dir / point_dir(axis, v);
    c.validate();
    points.push_back(std::move(c));
  }

  SweepResult s;
  s.axis = axis;
  s.config = cfg.echo();
  s.seed = cfg.seed;
  make_dir(cfg.output_dir);

  auto finish = [&] {
    write_text_file(cfg.output_dir / "sweep.json", sweep_report_json(s));
    write_text_file(cfg.output_dir / fmt::format("table_sweep_{}.csv", axis), table_csv(s.table));
  };
  auto record_counts = [&](const FleetSpec& fleet) {
    std::vector<std::size_t> all, tr, va, te;
    for (const auto& c : fleet.clients) {
      all.push_back(c.total_windows());
      tr.push_back(c.train.size());
      va.push_back(c.val.size());
      te.push_back(c.test.size());
    }
    s.window_counts.push_back(all);
    s.train_counts.push_back(tr);
    s.val_counts.push_back(va);
    s.test_counts.push_back(te);
  };

  s.table.title = fmt::format("{} {} test MAE (Wh) by {}", to_string(cfg.plan.algorithm), to_string(cfg.arch.kind), axis);
  if (axis == "rounds") {
    // The rounds of one long run are the rounds of every shorter one, so a
    // single run at the largest count serves every column.
    ExperimentConfig longest = points.front();
    for (const auto& p : points) {
      if (p.rounds > longest.rounds) longest = p;
    }
    longest.output_dir = cfg.output_dir / point_dir(axis, fmt::format("{}", longest.rounds));
    const Prepared prep = prepare(longest);
    const RunOutputs run = run_prepared(longest, prep);
    const ExperimentReport& rep = *run.run;
    record_counts(prep.fleet);
    s.table.columns.push_back("baseline");
    for (const auto& p : points) s.table.columns.push_back(fmt::format("{} ITR", p.rounds));
    for (std::size_t i = 0; i < rep.client_names.size(); ++i) {
      s.table.rows.push_back(rep.client_names[i]);
      std::vector<std::optional<double>> row{rep.baseline_test[i]};
      for (const auto& p : points) {
        if (p.rounds == 0) {
          row.push_back(rep.baseline_test[i]);
          continue;
        }
        int pick = p.rounds;
        if (cfg.report_best_val) {
          for (int r = 1; r <= p.rounds; ++r) {
            if (rep.history[r - 1].val_mae[i] < rep.history[pick - 1].val_mae[i]) pick = r;
          }
        }
        row.push_back(rep.history[pick - 1].test_mae[i]);
      }
      s.table.cells.push_back(std::move(row));
    }
    s.values.assign(values.begin(), values.end());
    finish();
    return s;
  }

  for (std::size_t k = 0; k < points.size(); ++k) {
    try {
      const Prepared prep = prepare(points[k]);
      const RunOutputs run = run_prepared(points[k], prep);
      const ExperimentReport& rep = *run.run;
      if (s.table.rows.empty()) {
        s.table.rows = rep.client_names;
        s.table.cells.assign(rep.client_names.size(), {});
      } else if (s.table.rows != rep.client_names) {
        throw ValidationError("sweep points disagree on the client set");
      }
      record_counts(prep.fleet);
      s.table.columns.push_back(axis == "window" ? fmt::format("m={}", values[k]) : values[k]);
      for (std::size_t i = 0; i < rep.final_test.size(); ++i) s.table.cells[i].push_back(rep.final_test[i]);
      s.values.push_back(values[k]);
    } catch (const std::exception& e) {
      s.partial = true;
      s.failed_value = values[k];
      s.error = e.what();
      finish();
      throw;
    }
  }
  finish();
  return s;
}

std::string cmd_report(std::span<const std::filesystem::path> files, ReportFormat format) {
  if (files.empty()) throw ValidationError("report needs at least one report file");
  std::vector<ReportView> views;
  for (const auto& f : files) views.push_back(parse_report_view(read_text_file(f)));

  auto without_seed = [](ConfigEcho c) {
    std::erase_if(c, [](const auto& kv) { return kv.first == "run.seed" || kv.first == "data.seed" || kv.first == "output.dir"; });
    return c;
  };
  bool mergeable = views.size() > 1;
  for (const auto& v : views) {
    if (v.kind != views.front().kind || without_seed(v.config) != without_seed(views.front().config)) mergeable = false;
  }

  auto render = [&](const Table& t) { return format == ReportFormat::text ? table_text(t) : table_csv(t); };
  if (mergeable) {
    std::vector<Table> tables;
    for (const auto& v : views) tables.push_back(v.table);
    return render(merge_tables(tables));
  }
  std::string out;
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (i > 0) out += "\n";
    out += render(views[i].table);
  }
  return out;
}

}  // namespace fedbev
