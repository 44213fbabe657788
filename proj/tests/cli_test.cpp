#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "gghm/binary_io.hpp"
#include "gghm/config.hpp"
#include "gghm/verify.hpp"

namespace fs = std::filesystem;
using namespace gghm;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

fs::path work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "gghm_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run cli(const std::string& args, const std::string& env = "") {
  const auto out = work_dir() / "stdout.txt", err = work_dir() / "stderr.txt";
  const std::string cmd = env + " \"" GGHM_CLI_PATH "\" " + args + " >\"" + out.string() + "\" 2>\"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

std::string path(const std::string& name) { return (work_dir() / name).string(); }

const std::string kSmall = "--classes 6 --per-class 6 --t 8 --c 8 --hw 2 --sigma 0.2 --order-frac 0.3333333333333333";

std::string small_data(const std::string& name) {
  const auto p = path(name);
  if (!fs::exists(p)) {
    const auto r = cli("gen " + kSmall + " --seed 1 --out " + p);
    EXPECT_EQ(r.code, 0) << r.err;
  }
  return p;
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> lines;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) lines.push_back(json::parse(line));
  return lines;
}

std::vector<std::vector<double>> read_csv(const fs::path& p, std::size_t skip_cols) {
  std::vector<std::vector<double>> rows;
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::vector<double> row;
    std::string cell;
    for (std::size_t c = 0; std::getline(ss, cell, ','); ++c) {
      if (c >= skip_cols) row.push_back(std::stod(cell));
    }
    rows.push_back(row);
  }
  return rows;
}

const std::string kToyTrain = "--iterations 50 --total-steps 2 --frames 4 --lr 0.001";

}  // namespace

TEST(Gen, ReferenceCountAndDeterminism) {
  const auto a = path("ref_a.feat"), b = path("ref_b.feat");
  const std::string flags = "gen --classes 10 --per-class 20 --t 8 --c 64 --hw 7 --sigma 0.3 --order-frac 0.4 --seed 1";
  const auto r = cli(flags + " --out " + a);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("200 records"), std::string::npos) << r.out;
  ASSERT_EQ(cli(flags + " --out " + b).code, 0);
  EXPECT_EQ(io::read_file(a), io::read_file(b));
  EXPECT_EQ(features::read_features(a).records.size(), 200u);
}

TEST(Gen, InvalidSpecExitsTwo) {
  const auto r = cli("gen --per-class 0 --out " + path("bad.feat"));
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(r.err.empty());
  EXPECT_EQ(cli("gen --order-frac 0.3 --out " + path("bad.feat")).code, 2);
  EXPECT_EQ(cli("gen --classes many --out " + path("bad.feat")).code, 2);
}

TEST(Gen, SeedFromEnvironment) {
  const auto env = path("env.feat"), flag = path("flag5.feat"), other = path("flag1.feat");
  ASSERT_EQ(cli("gen " + kSmall + " --out " + env, "GGHM_SEED=5").code, 0);
  ASSERT_EQ(cli("gen " + kSmall + " --seed 5 --out " + flag).code, 0);
  ASSERT_EQ(cli("gen " + kSmall + " --seed 1 --out " + other).code, 0);
  EXPECT_EQ(io::read_file(env), io::read_file(flag));
  EXPECT_NE(io::read_file(env), io::read_file(other));
  EXPECT_EQ(cli("gen " + kSmall + " --out " + env, "GGHM_SEED=abc").code, 2);
}

TEST(Train, MissingFeatureFileExitsTwo) {
  const auto r = cli("train --data " + path("nope.feat") + " --out " + path("nope.ckpt"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nope.feat"), std::string::npos);
}

TEST(Train, ToyRunLogsAndReproduces) {
  const auto data = small_data("toy.feat");
  const auto a = path("toy_a.ckpt"), b = path("toy_b.ckpt");
  ASSERT_EQ(cli("train --data " + data + " --out " + a + " " + kToyTrain).code, 0);
  ASSERT_EQ(cli("train --data " + data + " --out " + b + " " + kToyTrain).code, 0);
  const auto log = read_jsonl(a + ".metrics.jsonl");
  ASSERT_EQ(log.size(), 3u);
  EXPECT_TRUE(log[0].contains("config"));
  EXPECT_EQ(log[0]["config"]["train.iterations_per_step"], 50);
  for (std::size_t i = 1; i < 3; ++i) {
    for (const char* key : {"step", "mean_loss", "mean_match_loss", "mean_graph_loss", "accuracy", "lr"}) {
      EXPECT_TRUE(log[i].contains(key)) << key;
    }
    EXPECT_EQ(log[i]["step"], i - 1);
  }
  EXPECT_EQ(slurp(a + ".metrics.jsonl"), slurp(b + ".metrics.jsonl"));
  EXPECT_EQ(io::read_file(a), io::read_file(b));
}

TEST(Train, LambdaZeroTrainsOnMatchLoss) {
  const auto data = small_data("toy.feat");
  const auto ckpt = path("lam0.ckpt");
  ASSERT_EQ(cli("train --data " + data + " --out " + ckpt + " --lam 0 " + kToyTrain).code, 0);
  const auto log = read_jsonl(ckpt + ".metrics.jsonl");
  EXPECT_EQ(log[0]["config"]["train.lambda"], 0.0);
  for (std::size_t i = 1; i < log.size(); ++i) EXPECT_EQ(log[i]["mean_loss"], log[i]["mean_match_loss"]);
}

TEST(Train, DivergenceExitsThreeAndKeepsCheckpoint) {
  auto ds = features::read_features(small_data("toy.feat"));
  for (auto& r : ds.records) r.frames[3] = std::nanf("");
  const auto data = path("nan.feat"), ckpt = path("nan.ckpt");
  features::write_features(ds, data);
  const auto r = cli("train --data " + data + " --out " + ckpt + " " + kToyTrain);
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_TRUE(fs::exists(ckpt));
  EXPECT_NE(r.err.find("diverged"), std::string::npos);
}

TEST(Eval, HeaderAndReproducibility) {
  const auto data = small_data("toy.feat");
  const auto csv = path("eval.csv");
  const auto a = cli("eval --data " + data + " --frames 4 --n-way 5 --k-shot 1 --episodes 1000 --seed 7 --out " + csv);
  ASSERT_EQ(a.code, 0) << a.err;
  const auto b = cli("eval --data " + data + " --frames 4 --n-way 5 --k-shot 1 --episodes 1000 --seed 7");
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out.find("5-way 1-shot"), std::string::npos) << a.out;
  EXPECT_NE(a.out.find("95% CI"), std::string::npos);
  EXPECT_EQ(read_csv(csv, 1).size(), 1000u);
  const auto single = cli("eval --data " + data + " --frames 4 --episodes 1");
  EXPECT_NE(single.out.find("CI undefined"), std::string::npos);
}

TEST(Eval, CheckpointMismatchNamesParameter) {
  const auto data = small_data("toy.feat");
  const auto ckpt = path("mismatch.ckpt");
  ASSERT_EQ(cli("train --data " + data + " --out " + ckpt + " --iterations 1 --total-steps 1 --frames 4").code, 0);
  const auto wide = path("wide.feat");
  ASSERT_EQ(cli("gen --classes 6 --per-class 6 --t 8 --c 16 --hw 2 --order-frac 0 --out " + wide).code, 0);
  const auto r = cli("eval --data " + wide + " --frames 4 --episodes 2 --checkpoint " + ckpt);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("ldtm.ptrm.attn.query.weight"), std::string::npos) << r.err;
  const auto ok = cli("eval --data " + data + " --frames 4 --episodes 2 --checkpoint " + ckpt);
  EXPECT_EQ(ok.code, 0) << ok.err;
  EXPECT_EQ(cli("eval --data " + data + " --frames 8 --episodes 2 --checkpoint " + ckpt).code, 2);
}

TEST(Sweep, SixAlphaRows) {
  const auto data = small_data("toy.feat");
  const auto csv = path("sweep.csv");
  const auto r = cli("sweep-alpha --data " + data + " --frames 4 --episodes 20 --out " + csv);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_csv(csv, 0);
  ASSERT_EQ(rows.size(), 6u);
  const std::vector<double> grid{0, 0.2, 0.4, 0.6, 0.8, 1.0};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(rows[i][0], grid[i]);
}

TEST(Export, ProbabilitiesAndCube) {
  const auto data = small_data("toy.feat");
  const auto dir = path("export");
  const auto r = cli("export-similarity --data " + data + " --frames 4 --out-dir " + dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto probs = read_csv(fs::path(dir) / "probabilities.csv", 2);
  ASSERT_EQ(probs.size(), 5u);
  for (const auto& row : probs) {
    double s = 0.0;
    for (const double p : row) s += p;
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
  const auto cube = read_csv(fs::path(dir) / "m_siam.csv", 2);
  EXPECT_EQ(cube.size(), 5u * 6u);
  for (const auto& row : cube) {
    for (const double v : row) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_TRUE(fs::exists(fs::path(dir) / "m_siam_aca.csv"));
  EXPECT_TRUE(fs::exists(fs::path(dir) / "distances.csv"));
}

TEST(Verify, FreshBuildPasses) {
  const auto r = cli("verify");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("L=28"), std::string::npos) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
}

TEST(Verify, InjectedSignFlipFailsOracleSuite) {
  verify::Options opt;
  opt.oracle_instances = 10;
  opt.frame_distance = [](const verify::Td& s, const verify::Td& q) { return -hpm::frame_hausdorff(s, q).item(); };
  EXPECT_FALSE(verify::oracle_suite(opt).passed());
  EXPECT_TRUE(verify::oracle_suite(verify::Options{}).passed());
}

TEST(Config, PrecedenceFlagsOverFileOverPreset) {
  const auto file = path("cfg.json");
  {
    std::ofstream out(file);
    out << R"({"preset": "ssv2", "hpm.alpha": 0.2, "ldtm.gap": 3})";
  }
  ConfigSources src;
  src.config_file = file;
  auto cfg = resolve_config(src);
  EXPECT_EQ(cfg.model.hpm.alpha, 0.2);
  EXPECT_EQ(cfg.model.ldtm.gap, 3u);
  EXPECT_EQ(cfg.model.ldtm.gamma, 0.5);  // from the preset
  src.overrides = {{"hpm.alpha", "0.8"}};
  cfg = resolve_config(src);
  EXPECT_EQ(cfg.model.hpm.alpha, 0.8);
  EXPECT_EQ(resolve_config(ConfigSources{}).model.hpm.alpha, 0.4);

  const auto data = small_data("toy.feat");
  const auto ckpt = path("prec.ckpt");
  ASSERT_EQ(cli("train --data " + data + " --out " + ckpt + " --config " + file +
                " --alpha 0.6 --iterations 1 --total-steps 1 --frames 4")
                .code,
            0);
  const auto log = read_jsonl(ckpt + ".metrics.jsonl");
  EXPECT_EQ(log[0]["config"]["hpm.alpha"], 0.6);
  EXPECT_EQ(log[0]["config"]["ldtm.gap"], 3);
  EXPECT_EQ(log[0]["config"]["preset"], "ssv2");
}

TEST(Config, UnknownKeysRejected) {
  const auto file = path("bad_cfg.json");
  {
    std::ofstream out(file);
    out << R"({"hpm.alpah": 0.2})";
  }
  ConfigSources src;
  src.config_file = file;
  EXPECT_THROW(resolve_config(src), ConfigError);
  const auto data = small_data("toy.feat");
  EXPECT_EQ(cli("eval --data " + data + " --config " + file).code, 2);
  EXPECT_EQ(cli("eval --data " + data + " --set hpm.bogus=1").code, 2);
  EXPECT_EQ(cli("eval --data " + data + " --alpha 1.5").code, 2);
  EXPECT_EQ(cli("eval --data " + data + " --preset imagenet").code, 2);
}

TEST(Config, PresetsMirrorTables) {
  ConfigSources src;
  src.preset = "hmdb51";
  const auto cfg = resolve_config(src);
  EXPECT_EQ(cfg.train.learning_rate, 1e-4);
  EXPECT_EQ(cfg.train.step_boundaries, (std::vector<std::size_t>{0, 2, 3, 5}));
  EXPECT_EQ(cfg.train.lr_factors, (std::vector<double>{1.0, 0.5, 0.1, 0.01}));
  EXPECT_EQ(cfg.model.hpm.alpha, 0.5);
  src.preset = "kinetics";
  EXPECT_EQ(resolve_config(src).model.ldtm.beta, 0.9);
}
