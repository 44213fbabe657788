// gghm: generate synthetic features, train, evaluate, sweep alpha, export
// similarity matrices and run the property suites.
//
// Exit codes: 0 success, 1 verification failure, 2 usage or configuration
// error, 3 training divergence.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <list>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "gghm/config.hpp"
#include "gghm/export.hpp"
#include "gghm/numgrad/checkpoint.hpp"
#include "gghm/sweep.hpp"
#include "gghm/verify.hpp"

namespace {

using namespace gghm;
using Model = GghmModel<float>;

constexpr int kVerifyFailed = 1;
constexpr int kUsage = 2;
constexpr int kDiverged = 3;

// Flags that override one dotted config key each.
const std::vector<std::pair<std::string, std::string>> kOverrideFlags{
    {"--alpha", "hpm.alpha"},
    {"--gamma", "ldtm.gamma"},
    {"--beta", "ldtm.beta"},
    {"--gap", "ldtm.gap"},
    {"--lam", "train.lambda"},
    {"--n-way", "episode.n_way"},
    {"--k-shot", "episode.k_shot"},
    {"--frames", "episode.frames"},
    {"--episodes", "eval.episodes"},
    {"--lr", "train.lr"},
    {"--iterations", "train.iterations_per_step"},
    {"--total-steps", "train.total_steps"},
    {"--layers", "ggpc.layers"},
    {"--distance", "hpm.distance"},
    {"--temperature", "hpm.temperature"},
    {"--mode", "hpm.mode"},
    {"--seed", "seed"},
};

const std::vector<std::pair<std::string, std::string>> kGenFlags{
    {"--classes", "synth.classes"},     {"--per-class", "synth.per_class"}, {"--t", "synth.t"},
    {"--c", "synth.c"},                 {"--sigma", "synth.sigma"},         {"--order-frac", "synth.order_frac"},
    {"--distractor-scale", "synth.distractor_scale"},
};

struct ConfigArgs {
  std::string preset, config_file;
  std::vector<std::string> sets;
  std::list<std::pair<std::string, std::string>> flag_values;  // key, raw text; stable addresses for CLI11
  std::string hw;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args, const std::vector<std::pair<std::string, std::string>>& flags) {
  cmd->add_option("--preset", args.preset, "Dataset preset: kinetics, ssv2, ucf101, hmdb51");
  cmd->add_option("--config", args.config_file, "JSON file of dotted config keys");
  cmd->add_option("--set", args.sets, "Override any config key, key=value (repeatable)");
  for (const auto& [flag, key] : flags) {
    args.flag_values.emplace_back(key, "");
    cmd->add_option(flag, args.flag_values.back().second, "Sets " + key);
  }
}

RunConfig resolve(const ConfigArgs& args) {
  ConfigSources src;
  src.preset = args.preset;
  src.config_file = args.config_file;
  for (const auto& [key, raw] : args.flag_values) {
    if (!raw.empty()) src.overrides.emplace_back(key, raw);
  }
  if (!args.hw.empty()) {
    src.overrides.emplace_back("synth.h", args.hw);
    src.overrides.emplace_back("synth.w", args.hw);
  }
  for (const auto& s : args.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    src.overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return resolve_config(src);
}

features::FeatureDataset load_dataset(const std::string& path, RunConfig& cfg) {
  if (!std::filesystem::exists(path)) throw ConfigError("feature file '" + path + "' does not exist");
  auto ds = features::read_features(path);
  cfg.bind_dims(ds.dims);
  cfg.validate();
  return ds;
}

Model load_model(const RunConfig& cfg, const std::string& checkpoint) {
  auto model = Model::create(cfg.model, cfg.seed);
  if (!checkpoint.empty()) numgrad::load_checkpoint(model.params, checkpoint);
  return model;
}

std::string header(const RunConfig& cfg, std::size_t episodes) {
  return std::to_string(cfg.n_way) + "-way " + std::to_string(cfg.k_shot) + "-shot, " + std::to_string(episodes) +
         " episodes, seed " + std::to_string(cfg.seed);
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
  return buf;
}

int cmd_gen(const RunConfig& cfg, const std::string& out) {
  auto spec = cfg.synth;
  spec.seed = cfg.seed;
  const auto ds = features::generate_synthetic(spec);
  features::write_features(ds, out);
  std::cout << "wrote " << ds.records.size() << " records [T=" << ds.dims.t_raw << ", C=" << ds.dims.c
            << ", H=" << ds.dims.h << ", W=" << ds.dims.w << "] to " << out << '\n';
  return 0;
}

int cmd_train(RunConfig cfg, const std::string& data, const std::string& out, std::string metrics) {
  const auto ds = load_dataset(data, cfg);
  if (metrics.empty()) metrics = out + ".metrics.jsonl";
  std::ofstream log(metrics, std::ios::binary);
  if (!log) throw ConfigError("cannot write '" + metrics + "'");
  log << json{{"config", to_json(cfg)}}.dump() << '\n';

  auto model = Model::create(cfg.model, cfg.seed);
  auto rng = training_engine(cfg.seed);
  try {
    train(model, ds, cfg.train_episodes(), cfg.train, rng, [&](const StepMetrics& m) {
      const json line{{"step", m.step},         {"mean_loss", m.mean_loss}, {"mean_match_loss", m.mean_match_loss},
                      {"mean_graph_loss", m.mean_graph_loss}, {"accuracy", m.accuracy}, {"lr", m.lr}};
      log << line.dump() << '\n' << std::flush;
      std::cout << line.dump() << '\n';
    });
  } catch (const DivergenceError& e) {
    numgrad::save_checkpoint(model.params, out);
    std::cerr << "diverged at step " << e.step() << ", iteration " << e.iteration() << ": " << e.what()
              << "; last finite parameters saved to " << out << '\n';
    return kDiverged;
  }
  numgrad::save_checkpoint(model.params, out);
  std::cout << "checkpoint " << out << ", metrics " << metrics << '\n';
  return 0;
}

int cmd_eval(RunConfig cfg, const std::string& data, const std::string& checkpoint, const std::string& out) {
  const auto ds = load_dataset(data, cfg);
  const auto model = load_model(cfg, checkpoint);
  const auto report = evaluate(model, ds, cfg.eval_episode_config(), cfg.eval_episodes);
  std::cout << header(cfg, cfg.eval_episodes) << (checkpoint.empty() ? " (untrained init)" : "") << '\n';
  std::cout << "accuracy " << pct(report.accuracy);
  if (report.ci95) std::cout << " +/- " << pct(*report.ci95) << " (95% CI)\n";
  else std::cout << " (CI undefined for a single episode)\n";
  if (!out.empty()) exporting::write_episode_accuracies(out, report);
  return 0;
}

int cmd_sweep(RunConfig cfg, const std::string& data, const std::string& checkpoint, const std::string& out) {
  const auto ds = load_dataset(data, cfg);
  const auto model = load_model(cfg, checkpoint);
  const auto rows = sweep_alpha(model, ds, cfg.eval_episode_config(), cfg.eval_episodes);
  std::cout << header(cfg, cfg.eval_episodes) << '\n';
  for (const auto& [alpha, r] : rows) std::cout << "alpha " << exporting::fixed6(alpha) << "  " << pct(r.accuracy) << '\n';
  if (!out.empty()) exporting::write_alpha_sweep(out, rows);
  return 0;
}

int cmd_export(RunConfig cfg, const std::string& data, const std::string& checkpoint, const std::string& dir) {
  const auto ds = load_dataset(data, cfg);
  const auto model = load_model(cfg, checkpoint);
  auto ep_cfg = cfg.train_episodes();
  std::mt19937_64 rng(episode_seed(cfg.seed, 0));
  const auto ep = episode::sample_episode<float>(ds, ep_cfg, features::SampleMode::eval, rng);
  numgrad::NoGradGuard no_grad;
  const auto out = model.forward(ep, cfg.n_way, cfg.k_shot);
  std::filesystem::create_directories(dir);
  const auto base = std::filesystem::path(dir);
  exporting::write_query_matrix((base / "probabilities.csv").string(),
                                hpm::class_probabilities(out.match.distances, cfg.model.hpm.temperature),
                                ep.query_labels);
  exporting::write_query_matrix((base / "distances.csv").string(), out.match.distances, ep.query_labels);
  std::cout << "wrote " << (base / "probabilities.csv").string() << ", " << (base / "distances.csv").string();
  if (out.cube.m_siam.defined()) {
    exporting::write_similarity_cube((base / "m_siam.csv").string(), out.cube.m_siam);
    exporting::write_aca_sidecar((base / "m_siam_aca.csv").string(), out.aca_logits, ep.query_labels);
    std::cout << ", " << (base / "m_siam.csv").string() << ", " << (base / "m_siam_aca.csv").string();
  } else {
    std::cout << " (graph module disabled: no similarity cube)";
  }
  std::cout << '\n';
  return 0;
}

int cmd_verify(std::uint64_t seed) {
  verify::Options opt;
  opt.seed = seed;
  bool ok = true;
  for (const auto& suite : verify::run_all(opt)) {
    std::size_t passed = 0;
    for (const auto& c : suite.checks) passed += c.passed;
    std::cout << (suite.passed() ? "PASS " : "FAIL ") << suite.name << " (" << passed << "/" << suite.checks.size()
              << ")\n";
    for (const auto& c : suite.checks) {
      std::cout << "  " << (c.passed ? "ok   " : "FAIL ") << c.name;
      if (!c.detail.empty()) std::cout << ": " << c.detail;
      std::cout << '\n';
    }
    ok = ok && suite.passed();
  }
  return ok ? 0 : kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GgHM few-shot matching engine"};
  app.require_subcommand(1);

  ConfigArgs gen_args, train_args, eval_args, sweep_args, export_args;
  std::string gen_out, data, checkpoint, out, metrics, out_dir;
  std::uint64_t verify_seed = 1;

  auto* gen = app.add_subcommand("gen", "Write a synthetic GGHMFEAT feature file");
  add_config_options(gen, gen_args, kGenFlags);
  gen->add_option("--hw", gen_args.hw, "Spatial height and width");
  gen_args.flag_values.emplace_back("seed", "");
  gen->add_option("--seed", gen_args.flag_values.back().second, "Generator seed");
  gen->add_option("--out", gen_out, "Output feature file")->required();

  auto* tr = app.add_subcommand("train", "Train on a feature file");
  add_config_options(tr, train_args, kOverrideFlags);
  tr->add_option("--data", data, "Feature file")->required();
  tr->add_option("--out", out, "Checkpoint to write")->required();
  tr->add_option("--metrics", metrics, "JSON-lines metrics log (default <out>.metrics.jsonl)");

  auto* ev = app.add_subcommand("eval", "Evaluate over seeded episodes");
  add_config_options(ev, eval_args, kOverrideFlags);
  ev->add_option("--data", data, "Feature file")->required();
  ev->add_option("--checkpoint", checkpoint, "Checkpoint (default: untrained init from --seed)");
  ev->add_option("--out", out, "CSV of per-episode accuracies");

  auto* sw = app.add_subcommand("sweep-alpha", "Accuracy at alpha = 0, 0.2, ..., 1");
  add_config_options(sw, sweep_args, kOverrideFlags);
  sw->add_option("--data", data, "Feature file")->required();
  sw->add_option("--checkpoint", checkpoint, "Checkpoint");
  sw->add_option("--out", out, "Two-column CSV");

  auto* ex = app.add_subcommand("export-similarity", "Probability, distance and similarity-cube CSVs for one episode");
  add_config_options(ex, export_args, kOverrideFlags);
  ex->add_option("--data", data, "Feature file")->required();
  ex->add_option("--checkpoint", checkpoint, "Checkpoint");
  ex->add_option("--out-dir", out_dir, "Output directory")->required();

  auto* ver = app.add_subcommand("verify", "Run the property suites");
  ver->add_option("--seed", verify_seed, "Seed for random instances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen) return cmd_gen(resolve(gen_args), gen_out);
    if (*tr) return cmd_train(resolve(train_args), data, out, metrics);
    if (*ev) return cmd_eval(resolve(eval_args), data, checkpoint, out);
    if (*sw) return cmd_sweep(resolve(sweep_args), data, checkpoint, out);
    if (*ex) return cmd_export(resolve(export_args), data, checkpoint, out_dir);
    if (*ver) return cmd_verify(verify_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
