#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rsgrpo/random.hpp"
#include "rsgrpo/synth_env.hpp"
#include "rsgrpo/toy_policy.hpp"
#include "rsgrpo/trainer.hpp"

namespace rsgrpo {

struct GradCheckOptions {
  int configs = 50;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 1;
  /// Test hook: added to every analytic loss-gradient entry so the checker can
  /// be shown to fail.
  double corrupt = 0.0;
};

struct GradCheckCase {
  int index = 0;
  std::string mode;
  std::size_t dimension = 0;
  double log_prob_error = 0.0;
  double loss_error = 0.0;
  std::size_t clipped_tokens = 0;
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  double max_log_prob_error = 0.0;
  double max_loss_error = 0.0;
  double clipped_group_fraction = 0.0;
  double tolerance = 0.0;

  bool passed() const {
    return !cases.empty() && max_log_prob_error < tolerance && max_loss_error < tolerance &&
           clipped_group_fraction >= 0.2;
  }
};

/// max_j |a_j - b_j| / max_j max(|a_j|, |b_j|).
inline double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t j = 0; j < analytic.size(); ++j) {
    diff = std::max(diff, std::abs(analytic[j] - numeric[j]));
    scale = std::max({scale, std::abs(analytic[j]), std::abs(numeric[j])});
  }
  return scale > 0.0 ? diff / scale : diff;
}

/// Central differences of f over every coordinate of theta.
template <typename F>
std::vector<double> numeric_gradient(F&& f, std::vector<double> theta, double h) {
  std::vector<double> g(theta.size());
  for (std::size_t j = 0; j < theta.size(); ++j) {
    const double keep = theta[j];
    theta[j] = keep + h;
    const double up = f(theta);
    theta[j] = keep - h;
    const double down = f(theta);
    theta[j] = keep;
    g[j] = (up - down) / (2.0 * h);
  }
  return g;
}

namespace detail {

inline std::vector<double> gaussian_vector(std::size_t n, double scale, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) {
    // Box-Muller on the portable uniform stream.
    const double u1 = std::max(uniform01(rng), 1e-300);
    const double u2 = uniform01(rng);
    x = scale * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }
  return v;
}

/// True when some importance ratio sits so close to a clip edge that a finite
/// difference step could cross the kink.
inline bool near_clip_edge(const ToyPolicy& policy, const GroupRollouts& g, std::span<const double> theta,
                           double lo, double hi) {
  for (const auto& r : g.rollouts) {
    const auto lp = policy.log_prob(theta, r.trajectory.tokens, g.episode);
    for (std::size_t t = 0; t < lp.size(); ++t) {
      const double ratio = std::exp(lp[t] - r.log_probs[t]);
      if (std::abs(ratio - (1.0 - lo)) < 1e-3 || std::abs(ratio - (1.0 + hi)) < 1e-3) return true;
    }
  }
  return false;
}

}  // namespace detail

/// Finite-difference audit of the log-probability gradient and of the full
/// clipped-surrogate loss gradient on random small policies. Each
/// configuration draws a feature layout, an episode, an old parameter vector
/// for sampling and a perturbed current one, so importance ratios leave the
/// clip range on a good share of tokens.
inline GradCheckReport run_gradcheck(const GradCheckOptions& opt) {
  GradCheckReport report;
  report.tolerance = opt.tolerance;
  const TrainMode modes[] = {TrainMode::RsGrpo, TrainMode::MixedGrpo, TrainMode::AnswerOnly,
                             TrainMode::ThinkThenAnswer};
  int clipped_groups = 0;
  for (int c = 0; c < opt.configs; ++c) {
    Rng rng = derive_rng(opt.seed, "gradcheck", static_cast<std::uint64_t>(c));
    DatasetSpec spec;
    spec.vocab_size = 24;
    spec.docs_min = 1;
    spec.docs_max = 2;
    spec.doc_length = 4;
    spec.distractor_pairs = 1;
    const Vocabulary vocab = Vocabulary::standard(spec.vocab_size);
    const Episode ep = generate_episode(spec, vocab, rng, c);

    FeatureConfig fc;
    fc.vocab_size = vocab.size;
    fc.window = 1 + static_cast<int>(uniform_index(rng, 2));
    fc.state_features = bernoulli(rng, 0.7);
    fc.copy_features = bernoulli(rng, 0.7);

    OptimizerConfig cfg;
    cfg.mode = modes[c % 4];
    cfg.group_size = 4;
    cfg.max_length = 24;
    const ToyPolicy policy(fc, vocab, grammar_for(cfg.mode));

    GradCheckCase cs;
    cs.index = c;
    cs.mode = to_string(cfg.mode);
    cs.dimension = policy.dimension();

    // The group mixes the reference trajectory, corrupted copies of it and
    // one free sample, so channel scores (and advantages) spread out.
    const PolicyParams theta_old = detail::gaussian_vector(policy.dimension(), 0.5, rng);
    const auto gold = gold_trajectory(ep, vocab, grammar_for(cfg.mode)).tokens;
    GroupRollouts group;
    group.episode = ep;
    auto add = [&](std::vector<TokenId> toks) {
      Rollout r;
      r.log_probs = policy.log_prob(theta_old, toks, ep);
      r.trajectory = parse(toks, vocab, ep.k(), grammar_for(cfg.mode));
      group.rollouts.push_back(std::move(r));
    };
    add(gold);
    for (int m = 0; m < cfg.group_size - 2; ++m) {
      auto toks = gold;
      const std::size_t pos = uniform_index(rng, toks.size());
      if (!vocab.is_tag(toks[pos]) || bernoulli(rng, 0.3)) {
        toks[pos] = static_cast<TokenId>(uniform_index(rng, static_cast<std::uint64_t>(vocab.size)));
      }
      add(std::move(toks));
    }
    group.rollouts.push_back(policy.sample_rollout(theta_old, ep, cfg.temperature, cfg.max_length, rng));
    score_group(group, vocab, cfg.mode, cfg.k_pos, cfg.normalization);

    PolicyParams theta;
    for (int attempt = 0;; ++attempt) {
      theta = theta_old;
      const auto noise = detail::gaussian_vector(theta.size(), 0.12, rng);
      for (std::size_t j = 0; j < theta.size(); ++j) theta[j] += noise[j];
      if (!detail::near_clip_edge(policy, group, theta, cfg.clip_low, cfg.clip_high) || attempt > 20) break;
    }

    // Log-probability gradient of the first rollout.
    const auto& toks = group.rollouts.front().trajectory.tokens;
    const auto lp_analytic = policy.log_prob_grad(theta, toks, ep);
    const auto lp_numeric = numeric_gradient(
        [&](const std::vector<double>& th) {
          double s = 0.0;
          for (double x : policy.log_prob(th, toks, ep)) s += x;
          return s;
        },
        theta, opt.step);
    cs.log_prob_error = relative_error(lp_analytic, lp_numeric);

    // Full loss gradient.
    auto loss = rs_grpo_loss(policy, group, theta, cfg.clip_low, cfg.clip_high);
    for (double& g : loss.grad) g += opt.corrupt;
    const auto loss_numeric = numeric_gradient(
        [&](const std::vector<double>& th) {
          return rs_grpo_loss(policy, group, th, cfg.clip_low, cfg.clip_high).loss;
        },
        theta, opt.step);
    cs.loss_error = relative_error(loss.grad, loss_numeric);
    cs.clipped_tokens = loss.clipped;
    if (loss.clipped > 0) ++clipped_groups;

    report.max_log_prob_error = std::max(report.max_log_prob_error, cs.log_prob_error);
    report.max_loss_error = std::max(report.max_loss_error, cs.loss_error);
    report.cases.push_back(cs);
  }
  if (!report.cases.empty()) {
    report.clipped_group_fraction = static_cast<double>(clipped_groups) / static_cast<double>(report.cases.size());
  }
  return report;
}

}  // namespace rsgrpo
