#include <gtest/gtest.h>

#include <algorithm>

#include "oracles.hpp"
#include "rsgrpo/random.hpp"
#include "rsgrpo/scope_grammar.hpp"
#include "rsgrpo/synth_env.hpp"

using namespace rsgrpo;

namespace {

const Vocabulary V = Vocabulary::standard(48);

TokenId tag(Tag t) { return V.tag(t); }

std::vector<TokenId> one_doc_tokens() {
  return {tag(Tag::ObserveOpen), 11,  tag(Tag::ObserveClose), tag(Tag::EvidenceOpen), 11, 40,
          tag(Tag::EvidenceClose), tag(Tag::ThinkOpen), 11, 40, tag(Tag::ThinkClose), tag(Tag::AnswerOpen),
          40, tag(Tag::AnswerClose)};
}

}  // namespace

TEST(ScopeGrammar, GoldTrajectoryHasKPlusThreeSpans) {
  DatasetSpec spec;
  spec.episodes = 200;
  for (const auto& ep : generate_dataset(spec, V)) {
    const auto traj = gold_trajectory(ep, V);
    ASSERT_TRUE(traj.well_formed);
    EXPECT_EQ(traj.spans.size(), static_cast<std::size_t>(ep.k() + 3));
  }
}

TEST(ScopeGrammar, MissingAnswerCloseIsMalformed) {
  auto toks = one_doc_tokens();
  toks.pop_back();
  const auto traj = parse(toks, V, 1);
  EXPECT_FALSE(traj.well_formed);
  EXPECT_TRUE(traj.spans.empty());
}

TEST(ScopeGrammar, TrailingTokensAreMalformed) {
  auto toks = one_doc_tokens();
  toks.push_back(40);
  EXPECT_FALSE(parse(toks, V, 1).well_formed);
}

TEST(ScopeGrammar, WrongDocumentCountIsMalformed) {
  EXPECT_TRUE(parse(one_doc_tokens(), V, 1).well_formed);
  EXPECT_FALSE(parse(one_doc_tokens(), V, 2).well_formed);
  EXPECT_FALSE(parse(one_doc_tokens(), V, 0).well_formed);
}

TEST(ScopeGrammar, EmptyInputIsMalformed) {
  EXPECT_FALSE(parse(std::vector<TokenId>{}, V, 0).well_formed);
}

// Tag strings against a regular-expression checker, for k = 0, 1, 2: every
// string up to length 6, every ordering of the required tags for k = 0, every
// transposition of the canonical order plus random orderings for k = 1, 2,
// and a content token inserted at every position.
TEST(ScopeGrammar, AgreesWithRegexChecker) {
  Rng rng = derive_rng(3, "grammar-test");
  for (int k = 0; k <= 2; ++k) {
    auto check = [&](const std::vector<TokenId>& t) {
      const bool lib = parse(t, V, k).well_formed;
      const bool ref = oracle::accepts(oracle::tag_string(t, V), k);
      ASSERT_EQ(lib, ref) << oracle::tag_string(t, V) << " k=" << k;
    };
    std::vector<TokenId> toks;
    for (std::size_t len = 1; len <= 6; ++len) {
      std::vector<int> digits(len, 0);
      while (true) {
        toks.assign(len, 0);
        for (std::size_t i = 0; i < len; ++i) toks[i] = V.tags[digits[i]];
        check(toks);
        std::size_t i = 0;
        while (i < len && ++digits[i] == 8) digits[i++] = 0;
        if (i == len) break;
      }
    }

    const auto canon = expected_tags(V, k, GrammarKind::EvidenceGuided);
    check(canon);
    EXPECT_TRUE(parse(canon, V, k).well_formed);
    if (k == 0) {
      auto tags = canon;
      std::sort(tags.begin(), tags.end());
      int accepted = 0;
      do {
        check(tags);
        accepted += parse(tags, V, k).well_formed ? 1 : 0;
      } while (std::next_permutation(tags.begin(), tags.end()));
      EXPECT_EQ(accepted, 1);
    }
    for (std::size_t i = 0; i < canon.size(); ++i) {
      for (std::size_t j = i + 1; j < canon.size(); ++j) {
        auto t = canon;
        std::swap(t[i], t[j]);
        check(t);
      }
    }
    for (int r = 0; r < 20000; ++r) {
      auto t = canon;
      shuffle(t, rng);
      check(t);
    }
    for (std::size_t pos = 0; pos <= canon.size(); ++pos) {
      auto t = canon;
      t.insert(t.begin() + static_cast<std::ptrdiff_t>(pos), 20);
      check(t);
    }
  }
}

// Evidence tags carry no document index, so document order is positional:
// the i-th evidence block is Evidence(i). What can go wrong is an evidence
// block in the wrong stage.
TEST(ScopeGrammar, EvidenceOutsideItsStageIsMalformed) {
  std::vector<TokenId> late{tag(Tag::ObserveOpen), tag(Tag::ObserveClose), tag(Tag::EvidenceOpen),
                            tag(Tag::EvidenceClose), tag(Tag::ThinkOpen), tag(Tag::ThinkClose),
                            tag(Tag::EvidenceOpen), tag(Tag::EvidenceClose), tag(Tag::AnswerOpen),
                            tag(Tag::AnswerClose)};
  EXPECT_FALSE(parse(late, V, 2).well_formed);
  std::vector<TokenId> early{tag(Tag::EvidenceOpen), tag(Tag::EvidenceClose), tag(Tag::ObserveOpen),
                             tag(Tag::ObserveClose), tag(Tag::ThinkOpen), tag(Tag::ThinkClose),
                             tag(Tag::AnswerOpen), tag(Tag::AnswerClose)};
  EXPECT_FALSE(parse(early, V, 1).well_formed);

  TrajectoryParts parts{{11}, {{12, 40}, {13, 41}}, {11}, {40}};
  const auto traj = assemble(parts, V);
  ASSERT_TRUE(traj.well_formed);
  EXPECT_EQ(traj.content(*traj.find(ScopeId::evidence(1)))[0], 12);
  EXPECT_EQ(traj.content(*traj.find(ScopeId::evidence(2)))[0], 13);
}

TEST(ScopeGrammar, ThinkThenAnswerGrammar) {
  std::vector<TokenId> toks{tag(Tag::ThinkOpen), 11, tag(Tag::ThinkClose), tag(Tag::AnswerOpen), 40,
                            tag(Tag::AnswerClose)};
  const auto traj = parse(toks, V, 3, GrammarKind::ThinkThenAnswer);
  ASSERT_TRUE(traj.well_formed);
  EXPECT_EQ(traj.spans.size(), 2u);
  EXPECT_FALSE(parse(one_doc_tokens(), V, 1, GrammarKind::ThinkThenAnswer).well_formed);
  EXPECT_TRUE(oracle::accepts(oracle::tag_string(toks, V), 0, false));
}

TEST(ScopeGrammar, SerializeLengthIsContentPlusTags) {
  TrajectoryParts parts{{11}, {{11, 40}}, {11, 40}, {40}};
  const auto traj = assemble(parts, V);
  ASSERT_TRUE(traj.well_formed);
  const auto out = serialize(traj, V);
  EXPECT_EQ(out.size(), 1u + 2u + 2u + 1u + 8u);
  EXPECT_EQ(out, one_doc_tokens());
}

TEST(ScopeGrammar, EmptyThinkSpanRoundTrips) {
  TrajectoryParts parts{{11}, {{8}}, {}, {9}};
  const auto traj = assemble(parts, V);
  ASSERT_TRUE(traj.well_formed);
  EXPECT_EQ(traj.find(ScopeId::think())->size(), 0u);
  const auto again = parse(serialize(traj, V), V, 1);
  EXPECT_TRUE(again.well_formed);
  EXPECT_EQ(again.spans, traj.spans);
}

TEST(ScopeGrammar, SerializeRejectsMalformed) {
  const auto traj = parse(std::vector<TokenId>{40}, V, 0);
  EXPECT_THROW(serialize(traj, V), std::invalid_argument);
}

TEST(ScopeGrammar, ParseSerializeIdentityOnRandomGoldTrajectories) {
  DatasetSpec spec;
  spec.episodes = 1000;
  spec.seed = 77;
  for (const auto& ep : generate_dataset(spec, V)) {
    const auto traj = gold_trajectory(ep, V);
    const auto toks = serialize(traj, V);
    EXPECT_EQ(toks, traj.tokens);
    const auto back = parse(toks, V, ep.k());
    ASSERT_TRUE(back.well_formed);
    EXPECT_EQ(back.spans, traj.spans);
  }
}

TEST(ScopeGrammar, ScopeOfPositions) {
  TrajectoryParts parts{{11}, {{12, 40}, {13, 41}}, {11}, {40}};
  const auto traj = assemble(parts, V);
  ASSERT_TRUE(traj.well_formed);
  EXPECT_EQ(scope_of(traj, 0), std::nullopt);  // <observe>
  EXPECT_EQ(scope_of(traj, 1), ScopeId::observe());
  const Span* second = traj.find(ScopeId::evidence(2));
  ASSERT_NE(second, nullptr);
  EXPECT_EQ(scope_of(traj, second->begin + 1), ScopeId::evidence(2));
  EXPECT_EQ(scope_of(traj, second->end), std::nullopt);  // </evidence>
  EXPECT_THROW(scope_of(traj, traj.length()), std::out_of_range);

  auto toks = traj.tokens;
  toks.pop_back();
  const auto bad = parse(toks, V, 2);
  for (std::size_t t = 0; t < bad.length(); ++t) EXPECT_EQ(scope_of(bad, t), std::nullopt);
}

TEST(ScopeGrammar, SpanMultisetForWellFormed) {
  DatasetSpec spec;
  spec.episodes = 100;
  for (const auto& ep : generate_dataset(spec, V)) {
    const auto traj = gold_trajectory(ep, V);
    int obs = 0, ev = 0, th = 0, an = 0;
    for (const auto& s : traj.spans) {
      switch (s.scope.kind) {
        case ScopeKind::Observe: ++obs; EXPECT_EQ(s.scope.doc, 0); break;
        case ScopeKind::Evidence: ++ev; EXPECT_EQ(s.scope.doc, ev); break;
        case ScopeKind::Think: ++th; EXPECT_EQ(s.scope.doc, 0); break;
        case ScopeKind::Answer: ++an; EXPECT_EQ(s.scope.doc, 0); break;
      }
    }
    EXPECT_EQ(obs, 1);
    EXPECT_EQ(ev, ep.k());
    EXPECT_EQ(th, 1);
    EXPECT_EQ(an, 1);
  }
}

TEST(ScopeGrammar, JsonRoundTrip) {
  TrajectoryParts parts{{}, {}, {11}, {40}};
  const auto traj = assemble(parts, V, GrammarKind::ThinkThenAnswer);
  const auto back = trajectory_from_json(trajectory_to_json(traj), V);
  EXPECT_TRUE(back.well_formed);
  EXPECT_EQ(back.grammar, GrammarKind::ThinkThenAnswer);
  EXPECT_EQ(back.tokens, traj.tokens);
}
