// rsgrpo: dataset generation, training, ablation sweeps, evaluation and
// gradient checks for the reward-scoped GRPO engine.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 check failure.

#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rsgrpo/config.hpp"
#include "rsgrpo/eval_harness.hpp"
#include "rsgrpo/experiment.hpp"
#include "rsgrpo/gradcheck.hpp"
#include "rsgrpo/io.hpp"
#include "rsgrpo/trainer.hpp"

namespace fs = std::filesystem;
using namespace rsgrpo;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kCheckFailed = 2;

struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config_file;
  std::vector<std::string> overrides;
  int workers = 0;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config_file, "key = value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", o.overrides, "override one key, e.g. --set train.epochs=2")->take_all();
  cmd->add_option("-w,--workers", o.workers, "worker threads (results do not depend on it)")
      ->check(CLI::PositiveNumber);
}

ExperimentConfig resolve(const CommonOptions& o) {
  ExperimentConfig cfg;
  if (!o.config_file.empty()) apply_config_text(cfg, read_file(o.config_file), o.config_file);
  for (const auto& a : o.overrides) apply_assignment(cfg, a);
  if (o.workers > 0) cfg.train.workers = o.workers;
  cfg.validate();
  return cfg;
}

void log(const std::string& msg) { std::cerr << msg << std::endl; }

DataSplits load_or_generate(const std::string& data_dir, const ExperimentConfig& cfg) {
  if (data_dir.empty()) {
    log("generating datasets from the configuration");
    return make_datasets(cfg);
  }
  DataSplits d;
  d.sft = load_dataset(fs::path(data_dir) / "sft.jsonl");
  d.rl = load_dataset(fs::path(data_dir) / "rl.jsonl");
  d.eval = load_dataset(fs::path(data_dir) / "eval.jsonl");
  for (const Dataset* ds : {&d.sft, &d.rl, &d.eval}) {
    if (ds->vocab.size != cfg.features.vocab_size) {
      throw std::invalid_argument(data_dir + ": dataset vocabulary size " + std::to_string(ds->vocab.size) +
                                  " does not match features.vocab_size " +
                                  std::to_string(cfg.features.vocab_size));
    }
  }
  return d;
}

std::string fixed(double x, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

int cmd_gen_data(const CommonOptions& o, const std::string& out) {
  const ExperimentConfig cfg = resolve(o);
  const DataSplits d = make_datasets(cfg);
  const fs::path dir(out);
  save_dataset(dir / "sft.jsonl", d.sft);
  save_dataset(dir / "rl.jsonl", d.rl);
  save_dataset(dir / "eval.jsonl", d.eval);
  atomic_write(dir / "config.resolved", config_snapshot(cfg));
  log("wrote " + std::to_string(d.sft.episodes.size()) + " sft, " + std::to_string(d.rl.episodes.size()) +
      " rl and " + std::to_string(d.eval.episodes.size()) + " eval episodes to " + dir.string());
  return kOk;
}

int cmd_train(const CommonOptions& o, const std::string& data_dir, std::string out) {
  const ExperimentConfig cfg = resolve(o);
  if (out.empty()) out = cfg.out_dir;
  const fs::path dir(out);
  const DataSplits data = load_or_generate(data_dir, cfg);
  atomic_write(dir / "config.resolved", config_snapshot(cfg));

  const Vocabulary& vocab = data.sft.vocab;
  const GrammarKind grammar = grammar_for(cfg.train.mode);
  TrainHooks hooks;
  hooks.on_checkpoint = [&](const PolicyParams& theta, int epoch) {
    const std::string name = epoch < 0 ? "sft.ckpt.json" : "epoch-" + std::to_string(epoch + 1) + ".ckpt.json";
    save_checkpoint(dir / name, Checkpoint{cfg.features, vocab, grammar, theta});
    log("checkpoint " + (dir / name).string());
  };
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = run_training(cfg, data, hooks);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  save_checkpoint(dir / "final.ckpt.json", Checkpoint{cfg.features, vocab, grammar, r.theta});
  atomic_write(dir / "metrics.csv", metrics_csv(r.metrics));
  nlohmann::json summary = {{"mode", to_string(cfg.train.mode)},
                            {"seed", cfg.train.seed},
                            {"post_sft", eval_to_json(r.post_sft)},
                            {"final", eval_to_json(r.final_eval)},
                            {"rl_episodes", r.rl_episodes},
                            {"curriculum_dropped", r.curriculum.dropped()},
                            {"seconds", secs}};
  atomic_write(dir / "summary.json", summary.dump(2) + "\n");
  std::cout << to_string(cfg.train.mode) << ": post-SFT acc " << fixed(r.post_sft.accuracy) << " f1 "
            << fixed(r.post_sft.f1) << " -> final acc " << fixed(r.final_eval.accuracy) << " f1 "
            << fixed(r.final_eval.f1) << " (" << r.rl_episodes << " RL episodes, " << fixed(secs, 1) << "s)\n";
  return kOk;
}

int cmd_ablate(const CommonOptions& o, const std::string& data_dir, std::string out, int seeds,
               const std::vector<std::string>& mode_names) {
  const ExperimentConfig cfg = resolve(o);
  if (out.empty()) out = cfg.out_dir;
  std::vector<TrainMode> modes;
  for (const auto& m : mode_names) modes.push_back(mode_from_string(m));
  if (modes.empty()) modes = ablation_modes();
  const DataSplits data = load_or_generate(data_dir, cfg);
  const auto rows = run_ablation(cfg, data, modes, seeds, cfg.train.seed, [](const AblationRow& r) {
    log(r.mode + " seed " + std::to_string(r.seed) + ": f1 " + fixed(r.post_sft_f1) + " -> " + fixed(r.eval_f1));
  });
  const fs::path dir(out);
  atomic_write(dir / "ablation.csv", ablation_csv(rows));
  atomic_write(dir / "config.resolved", config_snapshot(cfg));
  std::cout << "mode,runs,post_sft_acc,eval_acc,eval_f1\n";
  for (const auto& s : summarize_ablation(rows)) {
    std::cout << s.mode << ',' << s.runs << ',' << fixed(s.post_sft_acc) << ',' << fixed(s.eval_acc) << ','
              << fixed(s.eval_f1) << '\n';
  }
  return kOk;
}

int cmd_eval(const CommonOptions& o, const std::string& checkpoint, const std::string& data_file,
             const std::string& out, const std::string& audit) {
  ExperimentConfig cfg = resolve(o);
  const Checkpoint ck = load_checkpoint(checkpoint);
  std::vector<Episode> episodes;
  if (data_file.empty()) {
    cfg.eval.vocab_size = ck.vocab.size;
    episodes = generate_dataset(cfg.eval, ck.vocab);
  } else {
    Dataset d = load_dataset(data_file);
    if (d.vocab.size != ck.vocab.size) throw std::invalid_argument("dataset and checkpoint vocabularies differ");
    episodes = std::move(d.episodes);
  }
  const ToyPolicy policy = ck.policy();
  const EvalResult r = evaluate(policy, ck.theta, episodes, cfg.train.max_length, cfg.train.workers);
  const std::string json = eval_to_json(r).dump(2) + "\n";
  if (out.empty()) {
    std::cout << json;
  } else {
    atomic_write(out, json);
  }
  if (!audit.empty()) {
    std::string lines;
    for (const auto& a : r.audit) lines += audit_to_json(a).dump() + "\n";
    atomic_write(audit, lines);
  }
  return kOk;
}

int cmd_gradcheck(const GradCheckOptions& opt, const std::string& report_file) {
  const auto t0 = std::chrono::steady_clock::now();
  const GradCheckReport r = run_gradcheck(opt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::json j = {{"configs", r.cases.size()},
                      {"max_log_prob_error", r.max_log_prob_error},
                      {"max_loss_error", r.max_loss_error},
                      {"clipped_group_fraction", r.clipped_group_fraction},
                      {"tolerance", r.tolerance},
                      {"passed", r.passed()},
                      {"seconds", secs}};
  if (!report_file.empty()) {
    nlohmann::json cases = nlohmann::json::array();
    for (const auto& c : r.cases) {
      cases.push_back({{"index", c.index},
                       {"mode", c.mode},
                       {"dimension", c.dimension},
                       {"log_prob_error", c.log_prob_error},
                       {"loss_error", c.loss_error},
                       {"clipped_tokens", c.clipped_tokens}});
    }
    nlohmann::json full = j;
    full["cases"] = cases;
    atomic_write(report_file, full.dump(2) + "\n");
  }
  std::cout << j.dump(2) << "\n";
  if (!r.passed()) throw CheckFailed("gradient check failed");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reward-scoped GRPO on a synthetic evidence-QA task"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "rsgrpo 1.0");

  CommonOptions common;

  auto* gen = app.add_subcommand("gen-data", "generate sft/rl/eval JSONL datasets");
  add_common(gen, common);
  std::string gen_out = "data";
  gen->add_option("-o,--out", gen_out, "output directory");

  auto* tr = app.add_subcommand("train", "cold start then RL; writes checkpoints and metrics.csv");
  add_common(tr, common);
  std::string train_data, train_out;
  tr->add_option("-d,--data", train_data, "directory written by gen-data (default: generate in memory)");
  tr->add_option("-o,--out", train_out, "run directory (default: out_dir from the config)");

  auto* ab = app.add_subcommand("ablate", "train every mode over several seeds");
  add_common(ab, common);
  std::string ab_data, ab_out;
  int ab_seeds = 5;
  std::vector<std::string> ab_modes;
  ab->add_option("-d,--data", ab_data, "directory written by gen-data (default: generate in memory)");
  ab->add_option("-o,--out", ab_out, "output directory (default: out_dir from the config)");
  ab->add_option("--seeds", ab_seeds, "seeds per mode, starting at the configured seed")
      ->check(CLI::PositiveNumber);
  ab->add_option("--modes", ab_modes, "subset of rs-grpo, mixed-grpo, answer-only, think-then-answer")
      ->delimiter(',');

  auto* ev = app.add_subcommand("eval", "greedy evaluation of a checkpoint");
  add_common(ev, common);
  std::string ev_ckpt, ev_data, ev_out, ev_audit;
  ev->add_option("-k,--checkpoint", ev_ckpt, "checkpoint JSON")->required()->check(CLI::ExistingFile);
  ev->add_option("-d,--data", ev_data, "JSONL dataset (default: eval spec from the config)")
      ->check(CLI::ExistingFile);
  ev->add_option("-o,--out", ev_out, "result JSON (default: stdout)");
  ev->add_option("--audit", ev_audit, "per-episode JSONL audit");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the analytic gradients");
  GradCheckOptions gc_opt;
  std::string gc_report;
  gc->add_option("--configs", gc_opt.configs, "random configurations")->check(CLI::PositiveNumber);
  gc->add_option("--seed", gc_opt.seed, "seed for the configurations");
  gc->add_option("--tolerance", gc_opt.tolerance, "max relative error");
  gc->add_option("--corrupt", gc_opt.corrupt, "add this offset to the analytic loss gradient (self-test)");
  gc->add_option("--report", gc_report, "write per-configuration errors to this JSON file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(common, gen_out);
    if (*tr) return cmd_train(common, train_data, train_out);
    if (*ab) return cmd_ablate(common, ab_data, ab_out, ab_seeds, ab_modes);
    if (*ev) return cmd_eval(common, ev_ckpt, ev_data, ev_out, ev_audit);
    if (*gc) return cmd_gradcheck(gc_opt, gc_report);
  } catch (const CheckFailed& e) {
    std::cerr << "rsgrpo: " << e.what() << "\n";
    return kCheckFailed;
  } catch (const GradientCheckError& e) {
    std::cerr << "rsgrpo: " << e.what() << "\n";
    return kCheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "rsgrpo: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
