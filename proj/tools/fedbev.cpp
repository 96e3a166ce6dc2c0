// fedbev: generate fleets, run federated experiments, sweep, render reports.
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedbev/commands.hpp"
#include "fedbev/config.hpp"
#include "fedbev/error.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::map<std::string, std::string> values;  // key -> raw text

  void attach(CLI::App& sub) {
    sub.add_option("-c,--config", config_path, "experiment config file (key = value lines)");
    for (const auto& [key, help] : fedbev::config_keys()) {
      sub.add_option_function<std::string>(
          "--" + key, [this, key = key](const std::string& v) { values[key] = v; }, help);
    }
  }

  fedbev::ExperimentConfig build() const {
    fedbev::ExperimentConfig cfg = config_path.empty() ? fedbev::ExperimentConfig{} : fedbev::load_config(config_path);
    for (const auto& [key, help] : fedbev::config_keys()) {
      if (auto it = values.find(key); it != values.end()) cfg.set(key, it->second);
    }
    return cfg;
  }
};

std::string one_line(std::string s) {
  for (char& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return s;
}

int fail(std::string_view kind, const std::string& message, int code) {
  std::cerr << "fedbev: error: " << kind << ": " << one_line(message) << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated energy-consumption experiments on battery electric vehicle fleets"};
  app.require_subcommand(1);

  Overrides gen_opts, run_opts, sweep_opts;
  auto* gen = app.add_subcommand("gen-data", "write one synthetic trip CSV per vehicle into output.dir");
  gen_opts.attach(*gen);

  auto* run = app.add_subcommand("run", "pipeline, local baselines and the configured federated topology");
  run_opts.attach(*run);

  auto* sweep = app.add_subcommand("sweep", "one run per value of a config axis");
  sweep_opts.attach(*sweep);
  std::string axis;
  std::vector<std::string> values;
  sweep->add_option("--axis", axis, "rounds | split | window")->required();
  sweep->add_option("--values", values, "comma-separated axis values, e.g. 15,30,45,60")->required()->delimiter(',');

  auto* report = app.add_subcommand("report", "render report documents (runs differing only in seed are merged)");
  std::vector<std::string> report_files;
  std::string format = "text";
  report->add_option("files", report_files, "report.json / sweep.json files")->required();
  report->add_option("--format", format, "text | csv")->check(CLI::IsMember({"text", "csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 1);
  }

  try {
    if (*gen) {
      for (const auto& path : fedbev::cmd_gen_data(gen_opts.build())) std::cout << path.string() << "\n";
    } else if (*run) {
      const auto out = fedbev::cmd_run(run_opts.build());
      std::cout << fedbev::cmd_report(std::vector{out.report}, fedbev::ReportFormat::text);
      std::cout << "wrote " << out.files.size() << " files, report " << out.report.string() << "\n";
    } else if (*sweep) {
      const auto cfg = sweep_opts.build();
      const auto s = fedbev::cmd_sweep(cfg, axis, values);
      std::cout << fedbev::table_text(s.table);
      std::cout << "report " << (cfg.output_dir / "sweep.json").string() << "\n";
    } else if (*report) {
      std::vector<std::filesystem::path> files(report_files.begin(), report_files.end());
      std::cout << fedbev::cmd_report(files, format == "csv" ? fedbev::ReportFormat::csv : fedbev::ReportFormat::text);
    }
  } catch (const fedbev::ValidationError& e) {
    return fail("validation", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 2);
  }
  return 0;
}
