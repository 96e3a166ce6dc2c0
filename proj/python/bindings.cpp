#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <map>
#include <string>

#include "fedbev/battery.hpp"
#include "fedbev/commands.hpp"
#include "fedbev/config.hpp"
#include "fedbev/error.hpp"
#include "fedbev/fl.hpp"
#include "fedbev/fleet.hpp"
#include "fedbev/nn.hpp"
#include "fedbev/pipeline.hpp"
#include "fedbev/report.hpp"

namespace py = pybind11;
using namespace fedbev;

namespace {

ExperimentConfig make_config(const std::map<std::string, std::string>& overrides) {
  ExperimentConfig cfg;
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  cfg.validate();
  return cfg;
}

py::dict trip_dict(const TripRecord& t) {
  py::dict d;
  d["vehicle_id"] = t.vehicle_id;
  d["time"] = t.time;
  d["speed"] = t.speed;
  d["acceleration"] = t.acceleration;
  d["distance"] = t.distance;
  d["energy"] = t.energy;
  return d;
}

ArchSpec arch_of(const std::string& kind, const std::vector<std::size_t>& hidden, std::size_t steps) {
  ArchSpec a;
  a.kind = parse_model_kind(kind);
  a.hidden = hidden;
  a.dropout.assign(hidden.size() > 1 ? hidden.size() - 1 : 0, 0.0);
  a.steps = steps;
  a.validate();
  return a;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "fedbev core bindings";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  // registered last so it is tried first
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);

  m.def(
      "generate_fleet",
      [](std::size_t n, std::uint64_t seed, std::size_t duration) {
        py::list out;
        for (const auto& t : generate_fleet(FleetOptions{n, seed, duration})) out.append(trip_dict(t));
        return out;
      },
      py::arg("fleet_size") = 10, py::arg("seed") = 7, py::arg("duration") = 1800);

  m.def(
      "window_count",
      [](std::size_t duration, std::size_t window, std::uint64_t seed) {
        const TripRecord trip = generate_fleet(FleetOptions{1, seed, duration}).front();
        return make_windows(engineer_features(trip), trip.energy, window).size();
      },
      py::arg("duration"), py::arg("window"), py::arg("seed") = 7);

  m.def(
      "split_sizes",
      [](std::size_t n, int train, int val, int test) {
        const SplitSizes s = split_sizes(n, SplitSpec{train, val, test});
        return py::make_tuple(s.train, s.val, s.test);
      },
      py::arg("n"), py::arg("train") = 8, py::arg("val") = 1, py::arg("test") = 1);

  m.def("aggregation_weights", [](const std::vector<std::size_t>& counts) { return aggregation_weights(counts); });

  m.def(
      "weighted_average",
      [](const std::vector<std::vector<double>>& models, const std::vector<std::size_t>& counts) {
        if (models.size() != counts.size()) throw ValidationError("weighted_average: models and counts differ");
        if (models.empty()) throw ValidationError("weighted_average: no models");
        auto part = std::make_shared<const LayerPartition>(
            std::vector<Segment>{{"flat.W", models.front().size(), 1, 0, ""}});
        std::vector<ClientUpdate> ups;
        for (std::size_t i = 0; i < models.size(); ++i) {
          ups.push_back({static_cast<int>(i + 1), ParamVector(part, models[i]), counts[i]});
        }
        const ParamVector avg = weighted_average(ups);
        return std::vector<double>(avg.values().begin(), avg.values().end());
      },
      py::arg("models"), py::arg("counts"));

  m.def(
      "parameter_count",
      [](const std::string& kind, const std::vector<std::size_t>& hidden, std::size_t steps) {
        return LayerPartition::for_arch(arch_of(kind, hidden, steps)).total_size();
      },
      py::arg("kind") = "lstm", py::arg("hidden") = std::vector<std::size_t>{40, 32, 16}, py::arg("steps") = 60);

  m.def("config_keys", [] { return config_keys(); });

  m.def(
      "run",
      [](const std::map<std::string, std::string>& overrides) {
        const ExperimentConfig cfg = make_config(overrides);
        RunOutputs out;
        {
          py::gil_scoped_release release;
          out = cmd_run(cfg);
        }
        py::dict d;
        d["report"] = out.report;
        d["files"] = out.files;
        if (out.run) {
          d["clients"] = out.run->client_names;
          d["baseline_test"] = out.run->baseline_test;
          d["final_test"] = out.run->final_test;
        }
        return d;
      },
      py::arg("config") = std::map<std::string, std::string>{},
      "Run one experiment. Keys are the same dotted keys the CLI accepts.");

  m.def(
      "report",
      [](const std::vector<std::filesystem::path>& files, const std::string& format) {
        return cmd_report(files, format == "csv" ? ReportFormat::csv : ReportFormat::text);
      },
      py::arg("files"), py::arg("format") = "text");

  m.attr("__version__") = "0.1.0";
}
