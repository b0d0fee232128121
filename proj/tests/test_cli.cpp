#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

const std::string kCli = DEGPR_CLI_PATH;

struct RunResult {
  int exit_code = -1;
  std::string stdout_text;
  std::string stderr_text;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunResult run_cli(const std::string& args, const fs::path& workdir) {
  const fs::path out_file = workdir / "_stdout.txt";
  const fs::path err_file = workdir / "_stderr.txt";
  const std::string cmd = "cd " + workdir.string() + " && " + kCli + " " + args + " > " +
                          out_file.string() + " 2> " + err_file.string();
  const int rc = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = rc == -1 ? -1 : WEXITSTATUS(rc);
  r.stdout_text = slurp(out_file);
  r.stderr_text = slurp(err_file);
  fs::remove(out_file);
  fs::remove(err_file);
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("degpr_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// byte-level comparison of every regular file in a directory tree
bool dirs_identical(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> rel_a, rel_b;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) rel_a.push_back(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) rel_b.push_back(fs::relative(e.path(), b));
  std::sort(rel_a.begin(), rel_a.end());
  std::sort(rel_b.begin(), rel_b.end());
  if (rel_a != rel_b) return false;
  for (const auto& rel : rel_a)
    if (slurp(a / rel) != slurp(b / rel)) return false;
  return true;
}

}  // namespace

TEST_CASE("synth is deterministic and thread-count independent") {
  const fs::path dir = fresh_dir("synth");
  REQUIRE(run_cli("synth --count 4 --seed 11 --out a", dir).exit_code == 0);
  REQUIRE(run_cli("synth --count 4 --seed 11 --out b", dir).exit_code == 0);
  REQUIRE(run_cli("synth --count 4 --seed 11 --threads 2 --out c", dir).exit_code == 0);
  CHECK(dirs_identical(dir / "a", dir / "b"));
  CHECK(dirs_identical(dir / "a", dir / "c"));
  CHECK(fs::exists(dir / "a" / "manifest.json"));
  CHECK(fs::exists(dir / "a" / "resolved_config.json"));
  fs::remove_all(dir);
}

TEST_CASE("invalid inputs exit nonzero with a one-line error") {
  const fs::path dir = fresh_dir("errors");
  const RunResult r = run_cli("eval --manifest missing.json --detector also_missing.json "
                              "--out x", dir);
  CHECK(r.exit_code == 1);
  CHECK(r.stderr_text.rfind("error:", 0) == 0);
  CHECK(std::count(r.stderr_text.begin(), r.stderr_text.end(), '\n') == 1);
  fs::remove_all(dir);
}

TEST_CASE("config files override defaults and reject unknown keys") {
  const fs::path dir = fresh_dir("config");
  {
    std::ofstream cfg(dir / "good.json");
    cfg << R"({"count": 2, "prefix": "tile"})";
  }
  REQUIRE(run_cli("synth --config good.json --seed 3 --out good_out", dir).exit_code == 0);
  CHECK(fs::exists(dir / "good_out" / "tile_001.pgm"));
  CHECK_FALSE(fs::exists(dir / "good_out" / "tile_002.pgm"));

  {
    std::ofstream cfg(dir / "bad.json");
    cfg << R"({"count": 2, "not_a_flag": 5})";
  }
  const RunResult r = run_cli("synth --config bad.json --seed 3 --out bad_out", dir);
  CHECK(r.exit_code == 1);
  CHECK(r.stderr_text.find("unknown key") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("kl subcommand reports zero divergence for identical gaussians") {
  const fs::path dir = fresh_dir("kl");
  {
    std::ofstream v(dir / "vecs.csv");
    for (int i = 0; i < 40; ++i) v << 0.1 * i << "," << 0.05 * i - 1.0 << "\n";
  }
  REQUIRE(run_cli("gmm-fit --input vecs.csv --components 1 --seed 2 --out fit", dir)
              .exit_code == 0);
  const RunResult r =
      run_cli("kl --p fit/gmm.json --q fit/gmm.json --mc-samples 5000 --seed 4", dir);
  REQUIRE(r.exit_code == 0);
  double kl_value = 1e9, se = 1e9;
  int n = 0;
  REQUIRE(std::sscanf(r.stdout_text.c_str(), "kl %lf se %lf n %d", &kl_value, &se, &n) == 3);
  CHECK(n == 5000);
  CHECK(std::abs(kl_value) <= 3 * std::max(se, 1e-12));
  fs::remove_all(dir);
}

TEST_CASE("full pipeline runs and reruns bitwise identically") {
  const fs::path dir = fresh_dir("pipeline");
  REQUIRE(run_cli("synth --count 8 --seed 21 --out data", dir).exit_code == 0);
  REQUIRE(run_cli("encoder-train --manifest data/manifest.json --epochs 3 --batch-size 8 "
                  "--patch-size 64 --input-side 16 --embedding-dim 16 --seed 21 --out enc",
                  dir).exit_code == 0);

  const std::string train_args =
      "train --manifest data/manifest.json --encoder enc/encoder.json --lambda-reg 0.01 "
      "--epochs 25 --nms-iou 0.1 --seed 21 --threads 1 --out ";
  REQUIRE(run_cli(train_args + "det1", dir).exit_code == 0);
  REQUIRE(run_cli(train_args + "det2", dir).exit_code == 0);
  CHECK(dirs_identical(dir / "det1", dir / "det2"));

  const std::string eval_args =
      "eval --manifest data/manifest.json --detector det1/detector.json --seed 21 --out ";
  REQUIRE(run_cli(eval_args + "ev1", dir).exit_code == 0);
  REQUIRE(run_cli(eval_args + "ev2", dir).exit_code == 0);
  CHECK(dirs_identical(dir / "ev1", dir / "ev2"));
  CHECK(fs::exists(dir / "ev1" / "metrics.csv"));
  CHECK(fs::exists(dir / "ev1" / "metrics.json"));
  CHECK(fs::exists(dir / "ev1" / "counts.csv"));

  // baseline training ignores the regularizer entirely at lambda 0
  const std::string base_args =
      "train --manifest data/manifest.json --lambda-reg 0 --epochs 25 --nms-iou 0.1 "
      "--seed 21 --out ";
  REQUIRE(run_cli(base_args + "base1", dir).exit_code == 0);
  REQUIRE(run_cli(base_args + "base2", dir).exit_code == 0);
  CHECK(dirs_identical(dir / "base1", dir / "base2"));

  const RunResult q = run_cli("q-ratio --counts ev1/counts.csv --out qr", dir);
  REQUIRE(q.exit_code == 0);
  CHECK(q.stdout_text.find("accuracy,") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("ablation emits the five-row table") {
  const fs::path dir = fresh_dir("ablation");
  const RunResult r = run_cli(
      "ablation --seeds 1 --train-scenes 4 --test-scenes 2 --epochs 6 --encoder-epochs 2 "
      "--seed 7 --out abl", dir);
  REQUIRE(r.exit_code == 0);
  const std::string csv = slurp(dir / "abl" / "ablation.csv");
  CHECK(csv.find("baseline,no,no,no") != std::string::npos);
  CHECK(csv.find("explicit,yes,no,no") != std::string::npos);
  CHECK(csv.find("implicit,no,yes,no") != std::string::npos);
  CHECK(csv.find("explicit+implicit,yes,yes,no") != std::string::npos);
  CHECK(csv.find("explicit+implicit+balance,yes,yes,yes") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);  // header + 5 rows
  fs::remove_all(dir);
}
