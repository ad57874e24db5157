#pragma once

#include <algorithm>
#include <cstdint>
#include <iterator>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rsgrpo/config.hpp"
#include "rsgrpo/eval_harness.hpp"
#include "rsgrpo/synth_env.hpp"
#include "rsgrpo/trainer.hpp"

namespace rsgrpo {

struct DataSplits {
  Dataset sft;
  Dataset rl;
  Dataset eval;
};

/// Generates the training pool, splits it into cold-start and RL parts, and
/// draws the evaluation set from its own spec.
inline DataSplits make_datasets(const ExperimentConfig& cfg) {
  cfg.validate();
  const Vocabulary vocab = Vocabulary::standard(cfg.data.vocab_size);
  auto pool = generate_dataset(cfg.data, vocab);
  auto [sft, rl] = split_dataset(pool, cfg.split_ratio, cfg.data.seed);
  DataSplits d;
  d.sft = {cfg.data, vocab, "sft", std::move(sft)};
  d.rl = {cfg.data, vocab, "rl", std::move(rl)};
  d.eval = {cfg.eval, vocab, "eval", generate_dataset(cfg.eval, vocab)};
  return d;
}

inline TrainResult run_training(const ExperimentConfig& cfg, const DataSplits& data, const TrainHooks& hooks = {}) {
  return train(cfg.train, cfg.features, data.sft.vocab, data.sft.episodes, data.rl.episodes, data.eval.episodes,
               hooks);
}

struct AblationRow {
  std::string mode;
  std::uint64_t seed = 0;
  double post_sft_acc = 0.0;
  double post_sft_f1 = 0.0;
  double eval_acc = 0.0;
  double eval_f1 = 0.0;
  std::size_t rl_episodes = 0;
};

inline const std::vector<TrainMode>& ablation_modes() {
  static const std::vector<TrainMode> modes = {TrainMode::RsGrpo, TrainMode::MixedGrpo, TrainMode::AnswerOnly,
                                               TrainMode::ThinkThenAnswer};
  return modes;
}

/// Trains every mode on every seed over the same data. Seeds are
/// `first_seed, first_seed + 1, ...`; a given seed drives the same derived
/// streams in every mode.
template <typename Progress>
std::vector<AblationRow> run_ablation(const ExperimentConfig& base, const DataSplits& data,
                                      std::span<const TrainMode> modes, int seeds, std::uint64_t first_seed,
                                      Progress&& progress) {
  std::vector<AblationRow> rows;
  for (TrainMode mode : modes) {
    for (int s = 0; s < seeds; ++s) {
      ExperimentConfig cfg = base;
      cfg.train.mode = mode;
      cfg.train.seed = first_seed + static_cast<std::uint64_t>(s);
      const TrainResult r = run_training(cfg, data);
      AblationRow row;
      row.mode = to_string(mode);
      row.seed = cfg.train.seed;
      row.post_sft_acc = r.post_sft.accuracy;
      row.post_sft_f1 = r.post_sft.f1;
      row.eval_acc = r.final_eval.accuracy;
      row.eval_f1 = r.final_eval.f1;
      row.rl_episodes = r.rl_episodes;
      progress(row);
      rows.push_back(row);
    }
  }
  return rows;
}

inline std::vector<AblationRow> run_ablation(const ExperimentConfig& base, const DataSplits& data,
                                             std::span<const TrainMode> modes, int seeds,
                                             std::uint64_t first_seed) {
  return run_ablation(base, data, modes, seeds, first_seed, [](const AblationRow&) {});
}

inline std::string ablation_csv(std::span<const AblationRow> rows) {
  std::ostringstream os;
  os.precision(17);
  os << "mode,seed,post_sft_acc,post_sft_f1,eval_acc,eval_f1,rl_episodes\n";
  for (const auto& r : rows) {
    os << r.mode << ',' << r.seed << ',' << r.post_sft_acc << ',' << r.post_sft_f1 << ',' << r.eval_acc << ','
       << r.eval_f1 << ',' << r.rl_episodes << '\n';
  }
  return os.str();
}

struct ModeSummary {
  std::string mode;
  int runs = 0;
  double post_sft_acc = 0.0;
  double eval_acc = 0.0;
  double eval_f1 = 0.0;
};

inline std::vector<ModeSummary> summarize_ablation(std::span<const AblationRow> rows) {
  std::vector<ModeSummary> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const ModeSummary& m) { return m.mode == r.mode; });
    if (it == out.end()) {
      out.push_back({r.mode});
      it = std::prev(out.end());
    }
    ++it->runs;
    it->post_sft_acc += r.post_sft_acc;
    it->eval_acc += r.eval_acc;
    it->eval_f1 += r.eval_f1;
  }
  for (auto& m : out) {
    m.post_sft_acc /= m.runs;
    m.eval_acc /= m.runs;
    m.eval_f1 /= m.runs;
  }
  return out;
}

}  // namespace rsgrpo
