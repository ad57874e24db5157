#include <gtest/gtest.h>

#include <cmath>

#include "rsgrpo/advantage_engine.hpp"
#include "rsgrpo/random.hpp"

using namespace rsgrpo;

namespace {

const Vocabulary V = Vocabulary::standard(48);

TaggedTrajectory sample_traj() {
  TrajectoryParts parts{{11}, {{12, 40}, {8}}, {11, 40}, {40}};
  return assemble(parts, V);
}

ScoredRollout scored(const TaggedTrajectory& traj, ChannelScores s, const ScopeMapping& m = {}) {
  return {s, aggregate_token_rewards(traj, s, m)};
}

}  // namespace

TEST(ScopeMapping, ChannelSets) {
  EXPECT_EQ(channel_set(ScopeId::observe()), kPerceptionFormat);
  EXPECT_EQ(channel_set(ScopeId::evidence(2)), kPerceptionFormat);
  EXPECT_EQ(channel_set(ScopeId::think()), kDerivationFormat);
  EXPECT_EQ(channel_set(ScopeId::answer()), kDerivationFormat);
  EXPECT_EQ(channel_set(std::nullopt), kFormatOnly);
  EXPECT_EQ(to_string(kPerceptionFormat), "{perception,format}");
}

TEST(TokenRewards, ObserveTokenAveragesPerceptionAndFormat) {
  const auto traj = sample_traj();
  const auto rows = aggregate_token_rewards(traj, {0.6, 0.3, 1.0});
  EXPECT_DOUBLE_EQ(rows[1].reward, 0.8);  // first observe content token
  EXPECT_DOUBLE_EQ(rows[0].reward, 1.0);  // tag: format only
  const Span* ans = traj.find(ScopeId::answer());
  EXPECT_DOUBLE_EQ(rows[ans->begin].reward, 0.65);
}

TEST(TokenRewards, ConstantWithinChannelSet) {
  const auto traj = sample_traj();
  const auto rows = aggregate_token_rewards(traj, {0.25, 0.5, 1.0});
  for (const auto& a : rows) {
    for (const auto& b : rows) {
      if (a.channels == b.channels) {
        EXPECT_EQ(a.reward, b.reward);
      }
    }
  }
  EXPECT_THROW(mean_over({}, ChannelSet{}), std::invalid_argument);
}

TEST(GroupAdvantages, TwoRolloutsGivePlusMinusOne) {
  EXPECT_EQ(normalize_group(std::vector<double>{1.0, 0.0}), (std::vector<double>{1.0, -1.0}));
  EXPECT_EQ(normalize_group(std::vector<double>{1, 1, 0, 0}), (std::vector<double>{1, 1, -1, -1}));
  EXPECT_EQ(normalize_group(std::vector<double>{0.3, 0.3, 0.3}), (std::vector<double>{0, 0, 0}));

  const auto traj = sample_traj();
  std::vector<ScoredRollout> g{scored(traj, {1.0, 0.5, 1.0}), scored(traj, {0.0, 0.5, 1.0})};
  const auto adv = group_advantages(g);
  const Span* obs = traj.find(ScopeId::observe());
  const Span* ans = traj.find(ScopeId::answer());
  EXPECT_DOUBLE_EQ(adv[0][obs->begin], 1.0);
  EXPECT_DOUBLE_EQ(adv[1][obs->begin], -1.0);
  // Derivation and format agree across the group: no signal.
  EXPECT_EQ(adv[0][ans->begin], 0.0);
  EXPECT_EQ(adv[0][0], 0.0);
}

TEST(GroupAdvantages, RequiresTwoRollouts) {
  const auto traj = sample_traj();
  std::vector<ScoredRollout> g{scored(traj, {1, 1, 1})};
  EXPECT_THROW(group_advantages(g), std::invalid_argument);
  EXPECT_THROW(sequence_advantages(g, kAllChannels), std::invalid_argument);
}

TEST(GroupAdvantages, MalformedRolloutsOnlyCarryFormatClass) {
  const auto good = sample_traj();
  auto toks = good.tokens;
  toks.pop_back();
  const auto bad = parse(toks, V, 2);
  std::vector<ScoredRollout> g{scored(good, {1, 1, 1}), scored(bad, {0, 0, 0})};
  const auto adv = group_advantages(g);
  for (double a : adv[1]) EXPECT_DOUBLE_EQ(a, -1.0);
  for (double a : adv[0]) EXPECT_DOUBLE_EQ(a, 1.0);
}

// Property checks over random groups: shift and positive-scale invariance,
// zero-spread safety, and zero mean / unit variance per class.
TEST(GroupAdvantages, InvariancesOnRandomGroups) {
  Rng rng = derive_rng(5, "adv-props");
  const auto traj = sample_traj();
  int failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int G = 2 + static_cast<int>(uniform_index(rng, 7));
    std::vector<ChannelScores> s(G);
    for (auto& x : s) x = {uniform01(rng), uniform01(rng), double(uniform_index(rng, 2))};
    const double shift = uniform01(rng) * 4 - 2;
    const double scale = 0.1 + uniform01(rng) * 10;
    std::vector<ScoredRollout> base, shifted, scaled, flat;
    for (const auto& x : s) {
      base.push_back(scored(traj, x));
      shifted.push_back(scored(traj, {x.perception + shift, x.derivation + shift, x.format + shift}));
      scaled.push_back(scored(traj, {x.perception * scale, x.derivation * scale, x.format * scale}));
      flat.push_back(scored(traj, s[0]));
    }
    const auto a = group_advantages(base);
    const auto b = group_advantages(shifted);
    const auto c = group_advantages(scaled);
    const auto d = group_advantages(flat);
    for (int i = 0; i < G; ++i) {
      for (std::size_t t = 0; t < a[i].size(); ++t) {
        if (std::abs(a[i][t] - b[i][t]) > 1e-6) ++failures;
        if (std::abs(a[i][t] - c[i][t]) > 1e-9) ++failures;
        if (d[i][t] != 0.0) ++failures;
      }
    }
    // Per class: the class value of each rollout sits at any token of that class.
    for (std::size_t t : {std::size_t{0}, traj.find(ScopeId::observe())->begin, traj.find(ScopeId::answer())->begin}) {
      std::vector<double> raw(G);
      double m = 0, v = 0;
      for (int i = 0; i < G; ++i) {
        raw[i] = base[i].rows[t].reward;
        m += a[i][t];
      }
      m /= G;
      for (int i = 0; i < G; ++i) v += (a[i][t] - m) * (a[i][t] - m);
      v /= G;
      double rm = 0, rv = 0;
      for (double x : raw) rm += x;
      rm /= G;
      for (double x : raw) rv += (x - rm) * (x - rm);
      if (std::sqrt(rv / G) >= kMinStd) {
        if (std::abs(m) > 1e-9 || std::abs(v - 1.0) > 1e-9) ++failures;
      }
    }
  }
  EXPECT_EQ(failures, 0);
}

TEST(GroupAdvantages, PositionalModeSkipsShortRollouts) {
  TrajectoryParts p1{{11}, {}, {11}, {40}};
  TrajectoryParts p2{{11}, {}, {11, 40, 41}, {40}};
  const auto a = assemble(p1, V), b = assemble(p2, V);
  std::vector<ScoredRollout> g{scored(a, {1, 1, 1}), scored(b, {0, 0, 1})};
  const auto adv = group_advantages(g, Normalization::Positional);
  ASSERT_EQ(adv[1].size(), b.length());
  for (std::size_t t = a.length(); t < b.length(); ++t) EXPECT_EQ(adv[1][t], 0.0);
  EXPECT_DOUBLE_EQ(adv[0][0], 0.0);  // both tags: format reward 1 in both
}

TEST(SequenceAdvantages, BroadcastsOneValuePerRollout) {
  const auto traj = sample_traj();
  std::vector<ScoredRollout> g{scored(traj, {1, 1, 1}), scored(traj, {0, 1, 1}), scored(traj, {0.5, 0, 1})};
  const auto adv = sequence_advantages(g, kAllChannels);
  std::vector<double> r{1.0, 2.0 / 3.0, 1.5 / 3.0};
  const auto expect = normalize_group(r);
  for (int i = 0; i < 3; ++i) {
    for (double a : adv[i]) EXPECT_DOUBLE_EQ(a, expect[i]);
  }
}

TEST(SequenceAdvantages, EqualsScopedPathWithSingleClass) {
  Rng rng = derive_rng(9, "single-class");
  const auto traj = sample_traj();
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ScoredRollout> g;
    for (int i = 0; i < 6; ++i) {
      g.push_back(scored(traj, {uniform01(rng), uniform01(rng), uniform01(rng)},
                         ScopeMapping::uniform(kAllChannels)));
    }
    EXPECT_EQ(group_advantages(g), sequence_advantages(g, kAllChannels));
  }
}
