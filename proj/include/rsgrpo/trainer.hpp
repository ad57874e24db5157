#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsgrpo/advantage_engine.hpp"
#include "rsgrpo/curriculum.hpp"
#include "rsgrpo/eval_harness.hpp"
#include "rsgrpo/parallel.hpp"
#include "rsgrpo/random.hpp"
#include "rsgrpo/reward_kernel.hpp"
#include "rsgrpo/synth_env.hpp"
#include "rsgrpo/toy_policy.hpp"

namespace rsgrpo {

/// Training modes. rs-grpo scopes channels by the stage of each token;
/// mixed-grpo applies the mean of all three channels to every token;
/// answer-only applies derivation
/// and format to every token; think-then-answer drops the observe and
/// evidence scopes from the grammar.
enum class TrainMode { RsGrpo, MixedGrpo, AnswerOnly, ThinkThenAnswer };

inline const char* to_string(TrainMode m) {
  switch (m) {
    case TrainMode::RsGrpo: return "rs-grpo";
    case TrainMode::MixedGrpo: return "mixed-grpo";
    case TrainMode::AnswerOnly: return "answer-only";
    case TrainMode::ThinkThenAnswer: return "think-then-answer";
  }
  return "?";
}

inline TrainMode mode_from_string(const std::string& s) {
  for (auto m : {TrainMode::RsGrpo, TrainMode::MixedGrpo, TrainMode::AnswerOnly, TrainMode::ThinkThenAnswer}) {
    if (s == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown mode '" + s + "'");
}

inline GrammarKind grammar_for(TrainMode m) {
  return m == TrainMode::ThinkThenAnswer ? GrammarKind::ThinkThenAnswer : GrammarKind::EvidenceGuided;
}

struct OptimizerConfig {
  TrainMode mode = TrainMode::RsGrpo;
  int group_size = 8;
  double learning_rate = 15.0;
  double clip_low = 0.2;
  double clip_high = 0.28;
  double temperature = 1.2;
  int rollout_batch = 32;
  int epochs = 4;
  double max_grad_norm = 1.0;
  double weight_decay = 0.0;
  double k_pos = 2.0;
  int max_length = 64;
  int inner_steps = 1;
  bool dynamic_sampling = false;
  bool curriculum = true;
  int curriculum_group = 8;
  Normalization normalization = Normalization::ScopeClass;

  // Cold start. The 5e-7 SFT rate used for billion-parameter backbones does
  // not transfer to the linear policy. The default budget of 1600
  // demonstrations leaves two-hop bridging for RL to discover.
  double sft_learning_rate = 10.0;
  int sft_epochs = 1;
  int sft_batch = 32;
  int sft_limit = 1600;  // 0 = use the whole SFT split

  std::uint64_t seed = 1;
  int workers = 1;
  int gradcheck_every = 0;

  void validate() const {
    if (group_size < 2) throw std::invalid_argument("group_size must be >= 2");
    if (!(clip_low > 0.0) || !(clip_high > 0.0)) throw std::invalid_argument("clip bounds must be positive");
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    if (rollout_batch < 1 || sft_batch < 1) throw std::invalid_argument("batch sizes must be positive");
    if (epochs < 0 || sft_epochs < 0) throw std::invalid_argument("epoch counts must be >= 0");
    if (!(learning_rate >= 0.0) || !(sft_learning_rate >= 0.0)) {
      throw std::invalid_argument("learning rates must be >= 0");
    }
    if (!(max_grad_norm > 0.0)) throw std::invalid_argument("max_grad_norm must be positive");
    if (!(k_pos > 0.0)) throw std::invalid_argument("k_pos must be positive");
    if (max_length < 1) throw std::invalid_argument("max_length must be positive");
    if (inner_steps < 1) throw std::invalid_argument("inner_steps must be >= 1");
    if (curriculum_group < 1) throw std::invalid_argument("curriculum_group must be >= 1");
    if (workers < 1) throw std::invalid_argument("workers must be >= 1");
  }
};

/// Raised when the in-training finite-difference check disagrees with the
/// analytic gradient.
struct GradientCheckError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- cold start ----------------------------------------------------------

struct Demonstration {
  Episode episode;
  TaggedTrajectory trajectory;
};

/// One SGD step on mean token-level cross-entropy. Returns the batch NLL per
/// token measured before the update.
inline double sft_step(const ToyPolicy& policy, PolicyParams& theta, std::span<const Demonstration> batch,
                       double learning_rate) {
  if (batch.empty()) throw std::invalid_argument("sft_step: empty batch");
  std::size_t tokens = 0;
  for (const auto& d : batch) {
    if (!d.trajectory.well_formed) throw std::invalid_argument("sft_step: malformed demonstration");
    tokens += d.trajectory.length();
  }
  const double scale = 1.0 / static_cast<double>(tokens);
  std::vector<double> grad(theta.size(), 0.0);
  double nll = 0.0;
  for (const auto& d : batch) {
    const auto& toks = d.trajectory.tokens;
    for (double lp : policy.log_prob(theta, toks, d.episode)) nll -= lp;
    std::vector<double> w(toks.size(), scale);
    policy.accumulate_log_prob_grad(theta, toks, d.episode, w, grad);
  }
  for (std::size_t j = 0; j < theta.size(); ++j) theta[j] += learning_rate * grad[j];
  return nll * scale;
}

// ---- RS-GRPO objective ---------------------------------------------------

struct GroupRollouts {
  Episode episode;
  std::vector<Rollout> rollouts;
  std::vector<ChannelScores> scores;
  AdvantageMatrix advantages;

  std::size_t total_tokens() const {
    std::size_t n = 0;
    for (const auto& r : rollouts) n += r.trajectory.length();
    return n;
  }

  bool all_zero_advantage() const {
    for (const auto& row : advantages) {
      for (double a : row) {
        if (a != 0.0) return false;
      }
    }
    return true;
  }
};

inline ScopeMapping mapping_for(TrainMode m) {
  switch (m) {
    case TrainMode::MixedGrpo: return ScopeMapping::uniform(kAllChannels);
    case TrainMode::AnswerOnly: return ScopeMapping::uniform(kDerivationFormat);
    default: return ScopeMapping::reward_scoped();
  }
}

/// Advantages for scored rollouts under a training mode. The two unscoped
/// modes go through the sequence-level GRPO path.
inline AdvantageMatrix mode_advantages(TrainMode mode, std::span<const ScoredRollout> scored,
                                       Normalization norm = Normalization::ScopeClass) {
  switch (mode) {
    case TrainMode::MixedGrpo: return sequence_advantages(scored, kAllChannels);
    case TrainMode::AnswerOnly: return sequence_advantages(scored, kDerivationFormat);
    default: return group_advantages(scored, norm);
  }
}

/// Fills scores and advantages for already-sampled rollouts.
inline void score_group(GroupRollouts& g, const Vocabulary& vocab, TrainMode mode, double k_pos,
                        Normalization norm = Normalization::ScopeClass,
                        const std::optional<ScopeMapping>& mapping_override = std::nullopt) {
  const ScopeMapping mapping = mapping_override.value_or(mapping_for(mode));
  std::vector<ScoredRollout> scored;
  g.scores.clear();
  for (const auto& r : g.rollouts) {
    const ChannelScores s = score_rollout(r.trajectory, g.episode, k_pos, vocab);
    g.scores.push_back(s);
    scored.push_back({s, aggregate_token_rewards(r.trajectory, s, mapping)});
  }
  g.advantages = mode_advantages(mode, scored, norm);
}

inline GroupRollouts sample_group(const ToyPolicy& policy, std::span<const double> theta, const Episode& ep,
                                  const OptimizerConfig& cfg, Rng& rng) {
  GroupRollouts g;
  g.episode = ep;
  for (int i = 0; i < cfg.group_size; ++i) {
    g.rollouts.push_back(policy.sample_rollout(theta, ep, cfg.temperature, cfg.max_length, rng));
  }
  score_group(g, policy.vocab(), cfg.mode, cfg.k_pos, cfg.normalization);
  return g;
}

/// Unnormalized surrogate sum over one group: sum_i sum_t min(r A, clip(r) A)
/// and its gradient.
struct SurrogateSum {
  double objective = 0.0;
  std::vector<double> grad;
  std::size_t tokens = 0;
  std::size_t clipped = 0;
};

inline SurrogateSum surrogate_sum(const ToyPolicy& policy, const GroupRollouts& group,
                                  std::span<const double> theta, double clip_low, double clip_high) {
  SurrogateSum out;
  out.grad.assign(theta.size(), 0.0);
  if (group.advantages.size() != group.rollouts.size()) {
    throw std::invalid_argument("rs_grpo_loss: advantages missing for the group");
  }
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const auto& r = group.rollouts[i];
    const auto& toks = r.trajectory.tokens;
    const auto& adv = group.advantages[i];
    if (r.log_probs.size() != toks.size() || adv.size() != toks.size()) {
      throw std::invalid_argument("rs_grpo_loss: per-token arrays disagree in length");
    }
    const auto lp = policy.log_prob(theta, toks, group.episode);
    std::vector<double> weights(toks.size(), 0.0);
    for (std::size_t t = 0; t < toks.size(); ++t) {
      const double ratio = std::exp(lp[t] - r.log_probs[t]);
      if (!std::isfinite(ratio)) throw std::runtime_error("rs_grpo_loss: non-finite importance ratio");
      const double a = adv[t];
      const double unclipped = ratio * a;
      const double clipped = std::clamp(ratio, 1.0 - clip_low, 1.0 + clip_high) * a;
      if (unclipped <= clipped) {
        out.objective += unclipped;
        weights[t] = unclipped;  // d(r A) = A r dlogpi
      } else {
        out.objective += clipped;
        ++out.clipped;
      }
    }
    out.tokens += toks.size();
    policy.accumulate_log_prob_grad(theta, toks, group.episode, weights, out.grad);
  }
  return out;
}

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;
  std::size_t tokens = 0;
  std::size_t clipped = 0;

  double clip_fraction() const { return tokens ? static_cast<double>(clipped) / tokens : 0.0; }
};

/// Clipped surrogate over one group, normalized by the group's total token
/// count. No KL term.
inline LossResult rs_grpo_loss(const ToyPolicy& policy, const GroupRollouts& group, std::span<const double> theta,
                               double clip_low = 0.2, double clip_high = 0.28) {
  auto s = surrogate_sum(policy, group, theta, clip_low, clip_high);
  LossResult out;
  out.tokens = s.tokens;
  out.clipped = s.clipped;
  if (s.tokens == 0) {
    out.grad.assign(theta.size(), 0.0);
    return out;
  }
  const double inv = 1.0 / static_cast<double>(s.tokens);
  out.loss = -s.objective * inv;
  out.grad = std::move(s.grad);
  for (double& g : out.grad) g *= -inv;
  return out;
}

/// Token-level normalization across every group of a rollout batch.
inline LossResult batch_loss(const ToyPolicy& policy, std::span<const GroupRollouts> groups,
                             std::span<const double> theta, double clip_low, double clip_high, int workers = 1) {
  std::vector<SurrogateSum> parts(groups.size());
  parallel_for(groups.size(), workers, [&](std::size_t i) {
    parts[i] = surrogate_sum(policy, groups[i], theta, clip_low, clip_high);
  });
  LossResult out;
  out.grad.assign(theta.size(), 0.0);
  double objective = 0.0;
  for (const auto& p : parts) {
    objective += p.objective;
    out.tokens += p.tokens;
    out.clipped += p.clipped;
    for (std::size_t j = 0; j < theta.size(); ++j) out.grad[j] += p.grad[j];
  }
  if (out.tokens == 0) return out;
  const double inv = 1.0 / static_cast<double>(out.tokens);
  out.loss = -objective * inv;
  for (double& g : out.grad) g *= -inv;
  return out;
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
inline double clip_grad_norm(std::span<double> grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (double& g : grad) g *= s;
  }
  return norm;
}

// ---- training loop -------------------------------------------------------

struct MetricRow {
  int step = 0;
  std::string mode;
  std::optional<double> mean_perception;
  std::optional<double> mean_derivation;
  std::optional<double> mean_format;
  std::optional<double> loss;
  std::optional<double> clip_fraction;
  std::optional<double> eval_acc;
  std::optional<double> eval_f1;
};

inline std::string metrics_csv(std::span<const MetricRow> rows) {
  std::ostringstream os;
  os.precision(17);
  os << "step,mode,mean_perception,mean_derivation,mean_format,loss,clip_fraction,eval_acc,eval_f1\n";
  auto cell = [&](const std::optional<double>& v) {
    os << ',';
    if (v) os << *v;
  };
  for (const auto& r : rows) {
    os << r.step << ',' << r.mode;
    cell(r.mean_perception);
    cell(r.mean_derivation);
    cell(r.mean_format);
    cell(r.loss);
    cell(r.clip_fraction);
    cell(r.eval_acc);
    cell(r.eval_f1);
    os << '\n';
  }
  return os.str();
}

struct TrainHooks {
  /// Called after the cold start (epoch = -1) and after every RL epoch.
  std::function<void(const PolicyParams&, int epoch)> on_checkpoint;
  /// Called with each step's post-clip gradient norm.
  std::function<void(double)> on_grad_norm;
};

struct TrainResult {
  PolicyParams sft_theta;
  PolicyParams theta;
  std::vector<double> sft_losses;
  std::vector<MetricRow> metrics;
  EvalResult post_sft;
  EvalResult final_eval;
  CurriculumReport curriculum;
  std::size_t rl_episodes = 0;
};

/// Central-difference check of log_prob_grad on `coords` random coordinates.
/// Returns the max relative error.
inline double spot_check_log_prob_grad(const ToyPolicy& policy, std::span<const double> theta,
                                       std::span<const TokenId> tokens, const Episode& ep, int coords, Rng& rng,
                                       double h = 1e-5) {
  const auto analytic = policy.log_prob_grad(theta, tokens, ep);
  PolicyParams probe(theta.begin(), theta.end());
  auto total = [&] {
    double s = 0.0;
    for (double lp : policy.log_prob(probe, tokens, ep)) s += lp;
    return s;
  };
  double worst_diff = 0.0, scale = 0.0;
  for (int c = 0; c < coords; ++c) {
    const std::size_t j = uniform_index(rng, probe.size());
    const double keep = probe[j];
    probe[j] = keep + h;
    const double up = total();
    probe[j] = keep - h;
    const double down = total();
    probe[j] = keep;
    const double fd = (up - down) / (2 * h);
    worst_diff = std::max(worst_diff, std::abs(fd - analytic[j]));
    scale = std::max({scale, std::abs(fd), std::abs(analytic[j])});
  }
  return scale > 0.0 ? worst_diff / scale : worst_diff;
}

/// Cold start on gold trajectories of `sft_set`, then RL on `rl_set`.
inline TrainResult train(const OptimizerConfig& cfg, const FeatureConfig& features, const Vocabulary& vocab,
                         std::span<const Episode> sft_set, std::span<const Episode> rl_set,
                         std::span<const Episode> eval_set, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (features.vocab_size != vocab.size) throw std::invalid_argument("train: vocabulary mismatch");
  const GrammarKind grammar = grammar_for(cfg.mode);
  const ToyPolicy policy(features, vocab, grammar);
  const std::string mode = to_string(cfg.mode);
  auto check_vocab = [&](std::span<const Episode> eps) {
    for (const auto& ep : eps) {
      for (const auto& d : ep.docs) {
        for (TokenId t : d) {
          if (!vocab.contains(t)) throw std::invalid_argument("train: dataset token outside vocabulary");
        }
      }
    }
  };
  check_vocab(sft_set);
  check_vocab(rl_set);
  check_vocab(eval_set);

  TrainResult result;
  PolicyParams theta = policy.zero_params();

  // Stage 1: cold start.
  std::vector<Demonstration> demos;
  const std::size_t sft_count =
      cfg.sft_limit > 0 ? std::min<std::size_t>(cfg.sft_limit, sft_set.size()) : sft_set.size();
  for (std::size_t i = 0; i < sft_count; ++i) {
    demos.push_back({sft_set[i], gold_trajectory(sft_set[i], vocab, grammar)});
  }
  for (int e = 0; e < cfg.sft_epochs && !demos.empty(); ++e) {
    Rng rng = derive_rng(cfg.seed, "sft", e);
    shuffle(demos, rng);
    for (std::size_t b = 0; b < demos.size(); b += cfg.sft_batch) {
      const std::size_t n = std::min<std::size_t>(cfg.sft_batch, demos.size() - b);
      result.sft_losses.push_back(
          sft_step(policy, theta, std::span<const Demonstration>(demos).subspan(b, n), cfg.sft_learning_rate));
    }
  }
  result.sft_theta = theta;
  if (hooks.on_checkpoint) hooks.on_checkpoint(theta, -1);

  result.post_sft = evaluate(policy, theta, eval_set, cfg.max_length, cfg.workers);
  result.final_eval = result.post_sft;
  {
    MetricRow row;
    row.step = 0;
    row.mode = mode;
    row.eval_acc = result.post_sft.accuracy;
    row.eval_f1 = result.post_sft.f1;
    result.metrics.push_back(row);
  }

  // Stage 2: difficulty filter with the cold-start policy.
  std::vector<Episode> rl_episodes(rl_set.begin(), rl_set.end());
  if (cfg.curriculum && !rl_episodes.empty()) {
    auto filtered = curriculum_filter(
        rl_episodes, cfg.curriculum_group, cfg.k_pos, vocab,
        [&](const Episode& ep, int g) {
          Rng rng = derive_rng(cfg.seed, "curriculum", static_cast<std::uint64_t>(ep.id), g);
          return policy.sample_rollout(theta, ep, cfg.temperature, cfg.max_length, rng).trajectory;
        },
        cfg.workers);
    rl_episodes = std::move(filtered.kept);
    result.curriculum = std::move(filtered.report);
  }
  result.rl_episodes = rl_episodes.size();

  // Stage 3: RS-GRPO.
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs && !rl_episodes.empty(); ++epoch) {
    std::vector<std::size_t> order(rl_episodes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (!cfg.curriculum) {
      Rng rng = derive_rng(cfg.seed, "order", epoch);
      shuffle(order, rng);
    }
    for (std::size_t b = 0; b < order.size(); b += cfg.rollout_batch) {
      ++step;
      const std::size_t n = std::min<std::size_t>(cfg.rollout_batch, order.size() - b);
      const PolicyParams theta_old = theta;
      std::vector<GroupRollouts> groups(n);
      parallel_for(n, cfg.workers, [&](std::size_t i) {
        Rng rng = derive_rng(cfg.seed, "rollout", static_cast<std::uint64_t>(step), i);
        groups[i] = sample_group(policy, theta_old, rl_episodes[order[b + i]], cfg, rng);
      });

      MetricRow row;
      row.step = step;
      row.mode = mode;
      double p = 0.0, d = 0.0, f = 0.0, count = 0.0;
      for (const auto& g : groups) {
        for (const auto& s : g.scores) {
          p += s.perception;
          d += s.derivation;
          f += s.format;
          count += 1.0;
        }
      }
      row.mean_perception = p / count;
      row.mean_derivation = d / count;
      row.mean_format = f / count;

      if (cfg.dynamic_sampling) {
        std::erase_if(groups, [](const GroupRollouts& g) { return g.all_zero_advantage(); });
      }

      double clip_sum = 0.0;
      for (int inner = 0; inner < cfg.inner_steps; ++inner) {
        LossResult lr = batch_loss(policy, groups, theta, cfg.clip_low, cfg.clip_high, cfg.workers);
        double decay = 0.0;
        for (std::size_t j = 0; j < theta.size(); ++j) {
          decay += theta[j] * theta[j];
          lr.grad[j] += cfg.weight_decay * theta[j];
        }
        lr.loss += 0.5 * cfg.weight_decay * decay;
        if (inner == 0) row.loss = lr.loss;
        clip_sum += lr.clip_fraction();
        clip_grad_norm(lr.grad, cfg.max_grad_norm);
        if (hooks.on_grad_norm) {
          double sq = 0.0;
          for (double g : lr.grad) sq += g * g;
          hooks.on_grad_norm(std::sqrt(sq));
        }
        for (std::size_t j = 0; j < theta.size(); ++j) theta[j] -= cfg.learning_rate * lr.grad[j];
      }
      row.clip_fraction = clip_sum / cfg.inner_steps;

      if (cfg.gradcheck_every > 0 && step % cfg.gradcheck_every == 0 && !groups.empty()) {
        Rng rng = derive_rng(cfg.seed, "gradcheck", step);
        const auto& r = groups.front().rollouts.front();
        const double err =
            spot_check_log_prob_grad(policy, theta, r.trajectory.tokens, groups.front().episode, 16, rng);
        if (err > 1e-4) {
          throw GradientCheckError("gradient check failed at step " + std::to_string(step) +
                                   ": relative error " + std::to_string(err));
        }
      }
      result.metrics.push_back(row);
    }
    result.final_eval = evaluate(policy, theta, eval_set, cfg.max_length, cfg.workers);
    result.metrics.back().eval_acc = result.final_eval.accuracy;
    result.metrics.back().eval_f1 = result.final_eval.f1;
    if (hooks.on_checkpoint) hooks.on_checkpoint(theta, epoch);
  }

  result.theta = std::move(theta);
  return result;
}

}  // namespace rsgrpo
