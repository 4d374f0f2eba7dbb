#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "csnn/cli.hpp"
#include "csnn/config.hpp"
#include "csnn/eval.hpp"
#include "csnn/experiment.hpp"
#include "csnn/model.hpp"
#include "support.hpp"

using namespace csnn;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "csnn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  Run r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string dataset() { return testing::synthetic_cifar_dir(CSNN_SYNTHETIC_DIR).string(); }

// Small three-layer model trained for 3 steps per layer on 64 images.
fs::path tiny_config_file(const fs::path& dir) {
  ModelConfig c = desk_d_csnn_preset();
  c.name = "cli_tiny";
  for (auto& l : c.layers) {
    l.grid_h = 3;
    l.grid_w = 3;
  }
  set_sequential_intervals(c, 3);
  c.batch_size = 4;
  c.data.train_images = 64;
  c.data.probe_train_images = 200;
  c.data.eval_images = 100;
  c.data.test_images = 100;
  c.probe.epochs = 3;
  const fs::path path = dir / "tiny.json";
  std::ofstream(path) << config_to_json(c);
  return path;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("help, version and bad arguments") {
  CHECK(run_cli({"--version"}).code == 0);
  CHECK(run_cli({"--help"}).code == 0);
  const Run none = run_cli({});
  CHECK(none.code != 0);
  const Run unknown = run_cli({"train", "--bogus-flag"});
  CHECK(unknown.code != 0);
  CHECK_FALSE(unknown.err.empty());
  CHECK(run_cli({"probe"}).code != 0);  // --ckpt is required
  const Run bad_variant = run_cli({"train", "--variant", "XYZ", "--out", testing::scratch_dir("cli_bad").string()});
  CHECK(bad_variant.code == 1);
  CHECK(bad_variant.err.find("csnn: error:") != std::string::npos);
  const Run no_data = run_cli({"train", "--dataset", "/nonexistent/cifar", "--out", testing::scratch_dir("cli_nodata").string()});
  CHECK(no_data.code == 1);
}

TEST_CASE("train, extract, probe, fewshot, inspect and utilization") {
  const fs::path dir = testing::scratch_dir("cli_flow");
  const std::string cfg = tiny_config_file(dir).string();
  const std::string run_a = (dir / "a").string();
  const std::string run_b = (dir / "b").string();
  const Run a = run_cli({"train", "--config", cfg, "--dataset", dataset(), "--out", run_a, "--seed", "4"});
  REQUIRE_MESSAGE(a.code == 0, a.err);
  const Run b = run_cli({"train", "--config", cfg, "--dataset", dataset(), "--out", run_b, "--seed", "4"});
  REQUIRE(b.code == 0);
  CHECK(slurp(fs::path(run_a) / "checkpoint.bin") == slurp(fs::path(run_b) / "checkpoint.bin"));
  CHECK(slurp(fs::path(run_a) / "metrics.csv") == slurp(fs::path(run_b) / "metrics.csv"));
  CHECK(read_csv((fs::path(run_a) / "metrics.csv").string()).rows.size() == 9);

  const auto manifest = nlohmann::json::parse(slurp(fs::path(run_a) / "manifest.json"));
  CHECK(manifest["command"] == "train");
  CHECK(manifest["seed"] == 4);
  CHECK(manifest["config_name"] == "cli_tiny");
  CHECK(manifest.contains("config_hash"));
  CHECK(manifest.contains("tool_version"));

  const std::string ckpt = (fs::path(run_a) / "checkpoint.bin").string();
  const std::string ds = dataset();
  const std::string reps = (dir / "reps").string();
  REQUIRE(run_cli({"extract", "--ckpt", ckpt, "--dataset", ds, "--out", reps}).code == 0);
  CHECK(load_representations((fs::path(reps) / "reps_train.bin").string()).rows == 200);
  CHECK(load_representations((fs::path(reps) / "reps_test.bin").string()).dim == 4 * 4 * 18);

  const std::string probe_dir = (dir / "probe").string();
  const Run probe = run_cli({"probe", "--ckpt", ckpt, "--reps", reps, "--out", probe_dir});
  REQUIRE_MESSAGE(probe.code == 0, probe.err);
  const CsvTable pt = read_csv((fs::path(probe_dir) / "probe.csv").string());
  REQUIRE(pt.rows.size() == 1);
  const double acc = std::stod(pt.rows[0][4]);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);

  const std::string fs_dir = (dir / "fewshot").string();
  const Run few = run_cli({"fewshot", "--ckpt", ckpt, "--reps", reps, "--shots", "1,5", "--folds", "2", "--out", fs_dir});
  REQUIRE_MESSAGE(few.code == 0, few.err);
  CHECK(read_csv((fs::path(fs_dir) / "fewshot.csv").string()).rows.size() == 2);
  CHECK(read_csv((fs::path(fs_dir) / "fewshot_folds.csv").string()).rows.size() == 4);

  const std::string insp = (dir / "inspect").string();
  const Run in = run_cli({"inspect", "--ckpt", ckpt, "--dataset", ds, "--images", "1", "--out", insp});
  REQUIRE_MESSAGE(in.code == 0, in.err);
  std::size_t images = 0;
  for (const auto& e : fs::directory_iterator(insp)) {
    const auto ext = e.path().extension();
    if (ext == ".ppm" || ext == ".pgm") {
      ++images;
      CHECK_NOTHROW(read_pixmap(e.path().string()));
    }
  }
  CHECK(images >= 4);
  CHECK(read_csv((fs::path(insp) / "class_order.csv").string()).rows.front()[1] == "9");

  const std::string util = (dir / "util").string();
  REQUIRE(run_cli({"utilization", "--ckpt", ckpt, "--dataset", ds, "--batch", "8", "--out", util}).code == 0);
  const CsvTable ut = read_csv((fs::path(util) / "utilization.csv").string());
  REQUIRE(ut.rows.size() == 3);
  for (const auto& row : ut.rows) {
    CHECK(std::stod(row.back()) > 0.0);
    CHECK(std::stod(row.back()) <= 1.0);
  }
}

TEST_CASE("resumed training matches an uninterrupted run") {
  const fs::path dir = testing::scratch_dir("cli_resume");
  const fs::path cfg_path = tiny_config_file(dir);
  const std::string full = (dir / "full").string();
  REQUIRE(run_cli({"train", "--config", cfg_path.string(), "--dataset", dataset(), "--out", full}).code == 0);

  // Same schedule cut short at step 5, then resumed under the full config.
  ModelConfig c = config_from_json(slurp(cfg_path));
  Model partial = build_model(c);
  const DatasetSplits splits = load_experiment_data(c, dataset());
  train(partial, splits.train.head(c.data.train_images).images, 5);
  const std::string cut = (dir / "cut.bin").string();
  save_checkpoint(partial, cut);
  const std::string resumed = (dir / "resumed").string();
  const Run r = run_cli({"train", "--ckpt", cut, "--dataset", dataset(), "--out", resumed});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(slurp(fs::path(full) / "checkpoint.bin") == slurp(fs::path(resumed) / "checkpoint.bin"));
  CHECK(run_cli({"train", "--ckpt", cut, "--seed", "3", "--dataset", dataset(), "--out", resumed}).code != 0);
}

TEST_CASE("ablate writes a probe result") {
  const fs::path dir = testing::scratch_dir("cli_ablate");
  const std::string cfg = tiny_config_file(dir).string();
  const Run r = run_cli({"ablate", "--variant", "RM", "--config", cfg, "--dataset", dataset(), "--out", (dir / "rm").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(dir / "rm" / "probe.csv"));
  const auto manifest = nlohmann::json::parse(slurp(dir / "rm" / "manifest.json"));
  CHECK(manifest["variant"] == "RM");
}

TEST_CASE("the installed binary reports usage errors through its exit code") {
  const std::string bin = CSNN_CLI_PATH;
  CHECK(std::system((bin + " --version > /dev/null").c_str()) == 0);
  CHECK(std::system((bin + " train --no-such-flag > /dev/null 2>&1").c_str()) != 0);
}
