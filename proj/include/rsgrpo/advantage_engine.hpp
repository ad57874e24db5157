#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsgrpo/reward_kernel.hpp"
#include "rsgrpo/scope_grammar.hpp"

namespace rsgrpo {

/// Subset of the three reward channels.
struct ChannelSet {
  bool perception = false;
  bool derivation = false;
  bool format = false;

  int count() const { return int(perception) + int(derivation) + int(format); }
  int bits() const { return int(perception) | int(derivation) << 1 | int(format) << 2; }

  friend bool operator==(const ChannelSet&, const ChannelSet&) = default;
};

inline constexpr ChannelSet kPerceptionFormat{true, false, true};
inline constexpr ChannelSet kDerivationFormat{false, true, true};
inline constexpr ChannelSet kFormatOnly{false, false, true};
inline constexpr ChannelSet kAllChannels{true, true, true};

inline std::string to_string(ChannelSet c) {
  std::string s = "{";
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (s.size() > 1) s += ",";
    s += name;
  };
  add(c.perception, "perception");
  add(c.derivation, "derivation");
  add(c.format, "format");
  return s + "}";
}

/// Reward-scope mapping: which channels supervise tokens of each scope.
/// `unscoped` covers tag tokens and every token of a malformed trajectory.
struct ScopeMapping {
  ChannelSet observe = kPerceptionFormat;
  ChannelSet evidence = kPerceptionFormat;
  ChannelSet think = kDerivationFormat;
  ChannelSet answer = kDerivationFormat;
  ChannelSet unscoped = kFormatOnly;

  static ScopeMapping reward_scoped() { return {}; }
  static ScopeMapping uniform(ChannelSet c) { return {c, c, c, c, c}; }

  ChannelSet operator()(const std::optional<ScopeId>& scope) const {
    if (!scope) return unscoped;
    switch (scope->kind) {
      case ScopeKind::Observe: return observe;
      case ScopeKind::Evidence: return evidence;
      case ScopeKind::Think: return think;
      case ScopeKind::Answer: return answer;
    }
    return unscoped;
  }
};

/// Reward-scope mapping M(t): perception and format on observe/evidence
/// tokens, derivation and format on think/answer tokens, format alone on
/// tag tokens.
inline ChannelSet channel_set(const std::optional<ScopeId>& scope) {
  return ScopeMapping::reward_scoped()(scope);
}

/// Mean of the channel scores selected by `channels`.
inline double mean_over(const ChannelScores& s, ChannelSet channels) {
  if (channels.count() == 0) throw std::invalid_argument("mean_over: empty channel set");
  double sum = 0.0;
  if (channels.perception) sum += s.perception;
  if (channels.derivation) sum += s.derivation;
  if (channels.format) sum += s.format;
  return sum / static_cast<double>(channels.count());
}

struct TokenReward {
  double reward = 0.0;
  ChannelSet channels;
};

inline std::vector<TokenReward> aggregate_token_rewards(const TaggedTrajectory& traj,
                                                        const ChannelScores& scores,
                                                        const ScopeMapping& mapping = {}) {
  std::vector<TokenReward> rows(traj.length());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    rows[t].channels = mapping(scope_of(traj, t));
    rows[t].reward = mean_over(scores, rows[t].channels);
  }
  return rows;
}

struct ScoredRollout {
  ChannelScores scores;
  std::vector<TokenReward> rows;
};

/// Per rollout, per token advantage.
using AdvantageMatrix = std::vector<std::vector<double>>;

enum class Normalization {
  ScopeClass,  // normalize each channel-set class across the group
  Positional,  // normalize at each token position over rollouts that reach it
};

inline constexpr double kMinStd = 1e-8;

/// (x - mean) / std with population statistics; all zeros when std < 1e-8.
inline std::vector<double> normalize_group(std::span<const double> xs) {
  std::vector<double> out(xs.size(), 0.0);
  if (xs.empty()) return out;
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / n);
  if (!(sd >= kMinStd)) return out;
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = (xs[i] - mean) / sd;
  return out;
}

/// Group-relative token advantages.
///
/// Channel scores are sequence level, so every token of one channel-set class
/// in a rollout carries the same aggregated reward. ScopeClass mode therefore
/// normalizes the per-rollout class reward across the group once per class.
/// Positional mode aligns tokens by index instead; rollouts shorter than t do
/// not enter the statistics at t.
inline AdvantageMatrix group_advantages(std::span<const ScoredRollout> group,
                                        Normalization mode = Normalization::ScopeClass) {
  if (group.size() < 2) throw std::invalid_argument("group_advantages: need G >= 2");
  AdvantageMatrix adv(group.size());
  for (std::size_t i = 0; i < group.size(); ++i) adv[i].assign(group[i].rows.size(), 0.0);

  if (mode == Normalization::ScopeClass) {
    std::vector<ChannelSet> classes;
    for (const auto& r : group) {
      for (const auto& row : r.rows) {
        bool known = false;
        for (const auto& c : classes) known = known || c == row.channels;
        if (!known) classes.push_back(row.channels);
      }
    }
    std::vector<double> rewards(group.size());
    for (const auto& c : classes) {
      for (std::size_t i = 0; i < group.size(); ++i) rewards[i] = mean_over(group[i].scores, c);
      const auto normalized = normalize_group(rewards);
      for (std::size_t i = 0; i < group.size(); ++i) {
        for (std::size_t t = 0; t < group[i].rows.size(); ++t) {
          if (group[i].rows[t].channels == c) adv[i][t] = normalized[i];
        }
      }
    }
    return adv;
  }

  std::size_t longest = 0;
  for (const auto& r : group) longest = std::max(longest, r.rows.size());
  std::vector<double> column;
  std::vector<std::size_t> members;
  for (std::size_t t = 0; t < longest; ++t) {
    column.clear();
    members.clear();
    for (std::size_t i = 0; i < group.size(); ++i) {
      if (t < group[i].rows.size()) {
        column.push_back(group[i].rows[t].reward);
        members.push_back(i);
      }
    }
    const auto normalized = normalize_group(column);
    for (std::size_t m = 0; m < members.size(); ++m) adv[members[m]][t] = normalized[m];
  }
  return adv;
}

/// Standard GRPO: one scalar reward per rollout (the mean of `channels`),
/// normalized across the group and broadcast to every token.
inline AdvantageMatrix sequence_advantages(std::span<const ScoredRollout> group, ChannelSet channels) {
  if (group.size() < 2) throw std::invalid_argument("sequence_advantages: need G >= 2");
  std::vector<double> rewards(group.size());
  for (std::size_t i = 0; i < group.size(); ++i) rewards[i] = mean_over(group[i].scores, channels);
  const auto normalized = normalize_group(rewards);
  AdvantageMatrix adv(group.size());
  for (std::size_t i = 0; i < group.size(); ++i) adv[i].assign(group[i].rows.size(), normalized[i]);
  return adv;
}

}  // namespace rsgrpo
