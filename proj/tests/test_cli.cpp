#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedbev/commands.hpp"
#include "fedbev/config.hpp"
#include "fedbev/error.hpp"
#include "fedbev/report.hpp"
#include "fedbev/trip.hpp"

using namespace fedbev;
namespace fs = std::filesystem;

#ifndef FEDBEV_CLI_PATH
#error "FEDBEV_CLI_PATH must point at the fedbev executable"
#endif
#ifndef FEDBEV_GOLDEN_DIR
#error "FEDBEV_GOLDEN_DIR must point at tests/golden"
#endif

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "fedbev_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ExperimentConfig small(const fs::path& out) {
  return parse_config(R"(
data.fleet_size = 3
data.duration = 240
data.window = 10
model.hidden = 3,3,3
fl.rounds = 2
fl.local_epochs = 1
fl.batch_size = 32
baseline.epochs = 2
baseline.batch_size = 32
run.seed = 5
)",
                      [&] {
                        ExperimentConfig c;
                        c.output_dir = out;
                        return c;
                      }());
}

std::string slurp(const fs::path& p) { return read_text_file(p); }

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

struct Exec {
  int code;
  std::string out, err;
};

Exec cli(const std::string& args) {
  const fs::path dir = fs::temp_directory_path() / "fedbev_cli_tests";
  fs::create_directories(dir);
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + FEDBEV_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                          err.string() + "\"";
  const int status = std::system(cmd.c_str());
  return {WEXITSTATUS(status), slurp(out), slurp(err)};
}

}  // namespace

TEST_CASE("config text: keys, comments and echo round-trip") {
  const auto cfg = parse_config("# comment\nfl.algorithm = prox   # trailing\nfl.mu=0.5\ndata.split = 6:1:3\n"
                                "fl.groups = 1,2;3\nmodel.arch = gru\n");
  CHECK(cfg.plan.algorithm == Algorithm::prox);
  CHECK(cfg.plan.mu == 0.5);
  CHECK(cfg.split.train == 6);
  CHECK(cfg.split.test == 3);
  CHECK(cfg.groups == std::vector<std::vector<int>>{{1, 2}, {3}});
  CHECK(cfg.arch.kind == ModelKind::gru);
  CHECK(parse_config(format_config(cfg)).echo() == cfg.echo());

  const ExperimentConfig d;
  CHECK(d.arch.kind == ModelKind::lstm);
  CHECK(d.plan.algorithm == Algorithm::avg);
  CHECK(d.rounds == 15);
  CHECK(d.window == 60);
  CHECK(d.split.train == 8);
  CHECK(d.echo().size() == config_keys().size());
}

TEST_CASE("config errors name the key or line") {
  try {
    parse_config("fl.rounds = 3\n\nfl.nope = 1\n");
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    CHECK(std::string(e.what()).find("fl.nope") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("just words\n"), ValidationError);
  ExperimentConfig c;
  CHECK_THROWS_AS(c.set("fl.rounds", "many"), ValidationError);
  CHECK_THROWS_AS(c.set("data.split", "8:1"), ValidationError);
  c.set("fl.rounds", "-1");
  CHECK_THROWS_AS(c.validate(), ValidationError);
  ExperimentConfig p;
  p.set("fl.topology", "performers");
  p.set("data.fleet_size", "4");
  CHECK_THROWS_AS(p.validate(), ValidationError);
}

TEST_CASE("gen-data writes the fleet deterministically") {
  const auto dir = scratch("gen");
  ExperimentConfig cfg;
  cfg.output_dir = dir;
  const auto files = cmd_gen_data(cfg);
  REQUIRE(files.size() == 10);
  std::vector<std::string> first;
  bool negative = false, positive = false;
  for (const auto& f : files) {
    first.push_back(slurp(f));
    const auto trip = load_trip_csv(f);
    CHECK(trip.size() == 1800);
    for (double e : trip.energy) {
      negative |= e < 0.0;
      positive |= e > 0.0;
    }
  }
  CHECK(negative);
  CHECK(positive);
  cmd_gen_data(cfg);
  for (std::size_t i = 0; i < files.size(); ++i) CHECK(slurp(files[i]) == first[i]);
}

TEST_CASE("run writes the report set") {
  const auto dir = scratch("run");
  const auto out = cmd_run(small(dir));
  for (const char* name : {"report.json", "table_rounds.csv", "per_round.csv", "cross_eval.csv", "timing.json",
                           "checkpoints/V1.ckpt", "checkpoints/V3.ckpt"}) {
    CHECK_MESSAGE(fs::exists(dir / name), name);
  }
  REQUIRE(out.run);
  const auto table = rounds_table(*out.run);
  CHECK(table.columns == std::vector<std::string>{"baseline", "2 ITR"});
  CHECK(table.rows == std::vector<std::string>{"V1", "V2", "V3"});
  CHECK(count_lines(slurp(dir / "table_rounds.csv")) == 4);
  CHECK(count_lines(slurp(dir / "per_round.csv")) == 1 + 3 * 3);

  const auto back = parse_run_report(slurp(dir / "report.json"));
  CHECK(back.final_test == out.run->final_test);
  CHECK(back.baseline_test == out.run->baseline_test);
  CHECK(back.history.size() == 2);
}

TEST_CASE("same config twice: byte-identical files") {
  const auto dir = scratch("determinism");
  const auto cfg = small(dir);
  const auto first = cmd_run(cfg);
  std::vector<std::string> bytes;
  for (const auto& f : first.files) bytes.push_back(f.filename() == "timing.json" ? "" : slurp(f));
  const auto second = cmd_run(cfg);
  REQUIRE(second.files == first.files);
  for (std::size_t i = 0; i < first.files.size(); ++i) {
    if (first.files[i].filename() == "timing.json") continue;
    CHECK_MESSAGE(slurp(second.files[i]) == bytes[i], first.files[i].string());
  }
}

TEST_CASE("prox with mu = 0 and avg give identical tables") {
  auto a = small(scratch("avg"));
  auto p = small(scratch("prox"));
  p.set("fl.algorithm", "prox");
  p.set("fl.mu", "0");
  const auto ra = cmd_run(a);
  const auto rp = cmd_run(p);
  CHECK(rounds_table(*ra.run).cells == rounds_table(*rp.run).cells);
  CHECK(cmd_report(std::vector{ra.report}, ReportFormat::csv) == cmd_report(std::vector{rp.report}, ReportFormat::csv));
}

TEST_CASE("rounds = 0 reports the baseline only") {
  auto cfg = small(scratch("zero"));
  cfg.set("fl.rounds", "0");
  const auto out = cmd_run(cfg);
  CHECK(out.run->final_test == out.run->baseline_test);
  CHECK(rounds_table(*out.run).columns == std::vector<std::string>{"baseline"});
}

TEST_CASE("rounds sweep columns equal separate runs") {
  const auto dir = scratch("sweep_rounds");
  auto cfg = small(dir);
  cfg.cross_evaluate = false;
  const std::vector<std::string> values{"1", "3"};
  const auto s = cmd_sweep(cfg, "rounds", values);
  CHECK(s.table.columns == std::vector<std::string>{"baseline", "1 ITR", "3 ITR"});
  CHECK_FALSE(s.partial);
  CHECK(fs::exists(dir / "sweep.json"));
  CHECK(fs::exists(dir / "table_sweep_rounds.csv"));

  auto one = small(scratch("sweep_rounds_1"));
  one.cross_evaluate = false;
  one.set("fl.rounds", "1");
  const auto r1 = cmd_run(one);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(s.table.cells[i][0] == r1.run->baseline_test[i]);
    CHECK(s.table.cells[i][1] == r1.run->final_test[i]);
  }
}

TEST_CASE("window sweep records shrinking window counts") {
  const auto dir = scratch("sweep_window");
  auto cfg = small(dir);
  cfg.set("fl.rounds", "1");
  cfg.cross_evaluate = false;
  cfg.checkpoints = false;
  const std::vector<std::string> values{"10", "20", "30"};
  const auto s = cmd_sweep(cfg, "window", values);
  CHECK(s.table.columns == std::vector<std::string>{"m=10", "m=20", "m=30"});
  REQUIRE(s.window_counts.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t n : s.window_counts[k]) CHECK(n == 240 - 10 * (k + 1) + 1);
  }
}

TEST_CASE("split sweep keeps the window total") {
  auto cfg = small(scratch("sweep_split"));
  cfg.set("fl.rounds", "1");
  cfg.cross_evaluate = false;
  const std::vector<std::string> values{"8:1:1", "4:1:5", "6:1:3"};
  const auto s = cmd_sweep(cfg, "split", values);
  for (std::size_t k = 0; k < values.size(); ++k) {
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(s.train_counts[k][i] + s.val_counts[k][i] + s.test_counts[k][i] == s.window_counts[k][i]);
      CHECK(s.window_counts[k][i] == 231);
    }
  }
  CHECK(s.train_counts[1][0] == 231 * 4 / 10);
}

TEST_CASE("a failing sweep point leaves a partial report") {
  const auto dir = scratch("sweep_partial");
  auto cfg = small(dir);
  cfg.set("fl.rounds", "1");
  cfg.cross_evaluate = false;
  // 235 s windows leave 6 per vehicle: no validation part under 8:1:1.
  const std::vector<std::string> values{"10", "235"};
  CHECK_THROWS_AS(cmd_sweep(cfg, "window", values), SplitError);
  const auto view = parse_report_view(slurp(dir / "sweep.json"));
  CHECK(view.table.columns == std::vector<std::string>{"m=10"});
  CHECK(slurp(dir / "sweep.json").find("\"partial\"") != std::string::npos);

  const std::vector<std::string> dup{"10", "10"};
  CHECK_THROWS_AS(cmd_sweep(cfg, "window", dup), ValidationError);
  CHECK_THROWS_AS(cmd_sweep(cfg, "epochs", values), ValidationError);
}

TEST_CASE("report merges seed replicates") {
  auto a = small(scratch("seed_a"));
  auto b = small(scratch("seed_b"));
  a.cross_evaluate = b.cross_evaluate = false;
  b.set("run.seed", "6");
  const auto ra = cmd_run(a);
  const auto rb = cmd_run(b);
  const std::vector<fs::path> both{ra.report, rb.report};
  const auto csv = cmd_report(both, ReportFormat::csv);
  CHECK(csv.starts_with("vehicle,baseline_mean,baseline_sd,2 ITR_mean,2 ITR_sd,best\n"));
  const auto ta = rounds_table(*ra.run), tb = rounds_table(*rb.run);
  const auto merged = merge_tables(std::vector{ta, tb});
  const double x = *ta.cells[0][1], y = *tb.cells[0][1];
  CHECK(*merged.cells[0][1] == doctest::Approx((x + y) / 2).epsilon(1e-15));
  CHECK(*merged.spread[0][1] == doctest::Approx(std::abs(x - y) / 2).epsilon(1e-12));
  CHECK(cmd_report(both, ReportFormat::text).find("±") != std::string::npos);

  auto c = small(scratch("seed_c"));
  c.cross_evaluate = false;
  c.set("fl.rounds", "1");
  const auto rc = cmd_run(c);
  const auto apart = cmd_report(std::vector<fs::path>{ra.report, rc.report}, ReportFormat::csv);
  CHECK(apart.find("_mean") == std::string::npos);
}

TEST_CASE("golden rendering of a frozen report") {
  const fs::path golden = FEDBEV_GOLDEN_DIR;
  const std::vector<fs::path> in{golden / "run_report.json"};
  CHECK(cmd_report(in, ReportFormat::text) == slurp(golden / "run_report.txt"));
  CHECK(cmd_report(in, ReportFormat::csv) == slurp(golden / "run_report.csv"));
  const std::vector<fs::path> pair{golden / "run_report.json", golden / "run_report_seed2.json"};
  CHECK(cmd_report(pair, ReportFormat::text) == slurp(golden / "merged.txt"));
}

TEST_CASE("schema version mismatch is rejected") {
  std::string doc = slurp(fs::path(FEDBEV_GOLDEN_DIR) / "run_report.json");
  const auto at = doc.find("\"schema_version\": 1");
  REQUIRE(at != std::string::npos);
  doc.replace(at, 19, "\"schema_version\": 2");
  CHECK_THROWS_AS(parse_report_view(doc), SchemaVersionError);
  const auto dir = scratch("schema");
  write_text_file(dir / "v2.json", doc);
  const auto r = cli("report \"" + (dir / "v2.json").string() + "\"");
  CHECK(r.code == 2);
  CHECK(r.err.starts_with("fedbev: error: runtime: "));
}

TEST_CASE("command line exit codes") {
  const auto dir = scratch("exit");
  const auto ok = cli("gen-data --data.fleet_size 2 --data.duration 120 --output.dir \"" + dir.string() + "\"");
  CHECK(ok.code == 0);
  CHECK(fs::exists(dir / "V2.csv"));
  CHECK(ok.err.empty());

  const auto bad_value = cli("run --fl.rounds -1 --output.dir \"" + dir.string() + "\"");
  CHECK(bad_value.code == 1);
  CHECK(bad_value.err.starts_with("fedbev: error: validation: "));
  CHECK(count_lines(bad_value.err) == 1);

  CHECK(cli("frobnicate").code == 1);
  CHECK(cli("run --no-such-flag 3").code == 1);

  const auto missing = cli("report \"" + (dir / "absent.json").string() + "\"");
  CHECK(missing.code == 2);
  CHECK(count_lines(missing.err) == 1);

  std::ofstream(dir / "bad.conf") << "fl.rounds = 2\nthis is not a key\n";
  const auto conf = cli("run -c \"" + (dir / "bad.conf").string() + "\"");
  CHECK(conf.code == 1);
  CHECK(conf.err.find("line 2") != std::string::npos);
}
