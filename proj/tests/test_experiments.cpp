#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "mptlml/experiments.hpp"
#include "mptlml/io.hpp"
#include "mptlml/scoring.hpp"
#include "mptlml/text.hpp"

using namespace mptlml;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path root() {
  const fs::path dir = fs::temp_directory_path() / "mptlml_experiment_tests";
  fs::create_directories(dir);
  return dir;
}

RunOutcome run(const std::string& cmd, const json& cfg, const fs::path& out, int workers = 1) {
  fs::remove_all(out);
  RunOverrides ov;
  ov.out = out.string();
  ov.workers = workers;
  return run_experiment(cmd, cfg.dump(), ov);
}

json summary_of(const fs::path& dir) { return json::parse(read_text_file((dir / "summary.json").string())); }

}  // namespace

TEST_SUITE("experiments_cli") {
  TEST_CASE("command table") {
    const auto& cmds = experiment_commands();
    for (const char* name : {"gen-data", "convergence", "train", "train-bernoulli", "curve", "area-import"})
      CHECK(std::find(cmds.begin(), cmds.end(), name) != cmds.end());
  }

  TEST_CASE("gen-data writes reproducible artifacts") {
    const json cfg{{"D", 10}, {"K", 2}, {"N", 2000}, {"seed", 7}};
    const auto a = root() / "gen_a", b = root() / "gen_b";
    REQUIRE(run("gen-data", cfg, a).exit_code == 0);
    REQUIRE(run("gen-data", cfg, b).exit_code == 0);
    const auto data = read_text_file((a / "data.csv").string());
    CHECK(data == read_text_file((b / "data.csv").string()));
    CHECK(read_dataset_csv((a / "data.csv").string()).rows() == 2000);
    CHECK(read_dataset_csv((a / "data.csv").string()).cols() == 10);

    const auto manifest = json::parse(read_text_file((a / "manifest.json").string()));
    CHECK(manifest["config_sha256"].get<std::string>().size() == 64);
    CHECK(manifest["version"] == MPTLML_VERSION);
    CHECK(manifest["exit_code"] == 0);
    const auto resolved = json::parse(read_text_file((a / "resolved_config.json").string()));
    CHECK(resolved["seed"] == 7);
    CHECK(resolved["N"] == 2000);
    CHECK(resolved.contains("w_std"));

    const auto s = summary_of(a);
    CHECK(std::abs(s["z_score"].get<double>()) < 3.0);

    const auto bern = root() / "gen_bern";
    REQUIRE(run("gen-data", json{{"model", "bernoulli"}, {"D", 8}, {"N", 30}}, bern).exit_code == 0);
    CHECK(read_binary_dataset((bern / "data.txt").string()).rows() == 30);
  }

  TEST_CASE("exit codes") {
    const auto out = root() / "codes";
    CHECK(run("gen-data", json{{"N", 0}}, out).exit_code == 2);
    CHECK(run("gen-data", json{{"unknown_key", 1}}, out).exit_code == 2);
    CHECK(run("gen-data", json{{"K", "two"}}, out).exit_code == 2);
    CHECK(run("nope", json::object(), out).exit_code == 2);
    CHECK(run_experiment("gen-data", "{not json", RunOverrides{}).exit_code == 2);
    CHECK(run("area-import", json{{"file", "/nonexistent.csv"}}, out).exit_code == 3);
    CHECK(run("curve", json{{"grid", "weird"}, {"D", 4}, {"N", 10}}, out).exit_code == 2);
    CHECK(run("convergence", json{{"D", 13}, {"exhaustive", true}}, out).exit_code == 2);

    const auto bad_curve = root() / "bad_curve.csv";
    write_text_file(bad_curve.string(), "mask_size,rate,score_mean,score_stderr\n1,0.1,x,0\n");
    CHECK(run("area-import", json{{"file", bad_curve.string()}}, out).exit_code == 3);

    const auto bad_data = root() / "bad_data.csv";
    write_text_file(bad_data.string(), "x1,x2\n1,2\n3\n");
    CHECK(run("train", json{{"data", bad_data.string()}}, out).exit_code == 3);

    const json diverge{{"D", 4}, {"N", 20}, {"epochs", 50}, {"inits", 1}, {"optimizer", "sgd"}, {"learning_rate", 1e6}};
    CHECK(run("train", diverge, out).exit_code == 4);
    CHECK(summary_of(out).contains("error"));
    CHECK(fs::exists(out / "trace_init0.csv"));
  }

  TEST_CASE("convergence, train and curve") {
    const auto conv = root() / "conv";
    const json cc{{"D", 5}, {"N", 10}, {"replicates", 30}, {"exhaustive", true}, {"fixed_rate", 0.4}, {"bias_masks", 100}};
    REQUIRE(run("convergence", cc, conv).exit_code == 0);
    const auto unfixed = read_text_file((conv / "unfixed.csv").string());
    CHECK(unfixed.rfind("P,mean,std,std_err,rel_diff\n", 0) == 0);
    CHECK(unfixed.find("\nall,") != std::string::npos);
    CHECK(fs::exists(conv / "fixed.csv"));

    const auto tr = root() / "train";
    const json tc{{"D", 5}, {"N", 40}, {"epochs", 30}, {"inits", 2}, {"checkpoint_epochs", {0, 30}}};
    REQUIRE(run("train", tc, tr).exit_code == 0);
    std::ifstream trace(tr / "trace_init1.csv");
    CHECK(read_trace_csv(trace).size() == 30);
    CHECK(fs::exists(tr / "checkpoint_init0_epoch0.json"));
    CHECK(fs::exists(tr / "final_params_init1.json"));
    const auto ts = summary_of(tr);
    CHECK(ts["runs"].size() == 2);

    const auto cv = root() / "curve";
    const json vc{{"D", 5},
                  {"N", 40},
                  {"P", 5},
                  {"checkpoints", {(tr / "checkpoint_init0_epoch0.json").string(), (tr / "checkpoint_init0_epoch30.json").string()}}};
    REQUIRE(run("curve", vc, cv).exit_code == 0);
    const auto curve = read_curve_csv((cv / "curve_1.csv").string());
    CHECK(curve.points.size() == 5);
    CHECK(read_text_file((cv / "areas.csv").string()).rfind("index,label,area,lml_per_obs,rel_err,max_dev_in_pooled_se\n", 0) == 0);
    CHECK(summary_of(cv)["curves"].size() == 2);
  }

  TEST_CASE("area-import on a synthetic 99-row file") {
    const auto file = root() / "bert_like.csv";
    std::string text = "mask_size,rate,score_mean,score_stderr\n";
    double hand = 0.0;
    const auto grid = percent_grid(512);
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const double v = -2.0 - 0.02 * static_cast<double>(k);
      hand += v;
      text += std::to_string(grid[k]) + "," + format_double(static_cast<double>(k + 1) / 100.0) + "," + format_double(v) + ",0.01\n";
    }
    write_text_file(file.string(), text);
    const auto out = root() / "import";
    REQUIRE(run("area-import", json{{"file", file.string()}}, out).exit_code == 0);
    const auto s = summary_of(out);
    CHECK(s["points"] == 99);
    CHECK(s["dim"] == 512);
    CHECK(std::abs(s["area"].get<double>() - hand * 512.0 / 99.0) < 1e-9);
    CHECK(read_text_file((out / "curve.csv").string()) == text);
  }

  TEST_CASE("train-bernoulli small run") {
    const auto out = root() / "bern";
    const json c{{"D", 6}, {"N", 50}, {"inits", 1}, {"epochs", 6}, {"log_every", 2}, {"grid_points", 30}};
    REQUIRE(run("train-bernoulli", c, out).exit_code == 0);
    CHECK(fs::exists(out / "mpt_trace_init0.csv"));
    CHECK(fs::exists(out / "elbo_trace_init0.csv"));
    const auto s = summary_of(out);
    CHECK(s.contains("max_abs_lml_diff_per_obs"));
    CHECK(s["max_elbo_minus_lml_per_obs"].get<double>() <= 1e-3);
  }
}
