#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rsgrpo/vocabulary.hpp"

namespace rsgrpo {

enum class ScopeKind { Observe, Evidence, Think, Answer };

/// Scope of one span. `doc` is the 1-based document index for Evidence and
/// 0 for every other kind.
struct ScopeId {
  ScopeKind kind = ScopeKind::Observe;
  int doc = 0;

  static ScopeId observe() { return {ScopeKind::Observe, 0}; }
  static ScopeId evidence(int doc) { return {ScopeKind::Evidence, doc}; }
  static ScopeId think() { return {ScopeKind::Think, 0}; }
  static ScopeId answer() { return {ScopeKind::Answer, 0}; }

  friend bool operator==(const ScopeId&, const ScopeId&) = default;
};

/// Which tag sequence a trajectory must follow.
///
/// EvidenceGuided: observe, k evidence blocks, think, answer.
/// ThinkThenAnswer: think, answer (the ablation without perception scopes).
enum class GrammarKind { EvidenceGuided, ThinkThenAnswer };

inline const char* to_string(GrammarKind g) {
  return g == GrammarKind::EvidenceGuided ? "evidence-guided" : "think-then-answer";
}

inline GrammarKind grammar_from_string(const std::string& s) {
  if (s == "evidence-guided") return GrammarKind::EvidenceGuided;
  if (s == "think-then-answer") return GrammarKind::ThinkThenAnswer;
  throw std::invalid_argument("unknown grammar '" + s + "'");
}

/// Half-open interval [begin, end) of content tokens.
struct Span {
  ScopeId scope;
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct TaggedTrajectory {
  std::vector<TokenId> tokens;
  std::vector<Span> spans;
  bool well_formed = false;
  int k = 0;
  GrammarKind grammar = GrammarKind::EvidenceGuided;

  std::span<const TokenId> content(const Span& s) const {
    return std::span<const TokenId>(tokens).subspan(s.begin, s.size());
  }

  const Span* find(ScopeId id) const {
    for (const auto& s : spans) {
      if (s.scope == id) return &s;
    }
    return nullptr;
  }

  std::size_t length() const { return tokens.size(); }
};

/// The exact tag sequence accepted for `k` documents.
inline std::vector<TokenId> expected_tags(const Vocabulary& vocab, int k,
                                          GrammarKind grammar) {
  std::vector<TokenId> tags;
  if (grammar == GrammarKind::EvidenceGuided) {
    tags.push_back(vocab.tag(Tag::ObserveOpen));
    tags.push_back(vocab.tag(Tag::ObserveClose));
    for (int i = 0; i < k; ++i) {
      tags.push_back(vocab.tag(Tag::EvidenceOpen));
      tags.push_back(vocab.tag(Tag::EvidenceClose));
    }
  }
  tags.push_back(vocab.tag(Tag::ThinkOpen));
  tags.push_back(vocab.tag(Tag::ThinkClose));
  tags.push_back(vocab.tag(Tag::AnswerOpen));
  tags.push_back(vocab.tag(Tag::AnswerClose));
  return tags;
}

namespace detail {

inline ScopeId scope_for_open(const Vocabulary& vocab, TokenId open, int evidence_seen) {
  if (open == vocab.tag(Tag::ObserveOpen)) return ScopeId::observe();
  if (open == vocab.tag(Tag::EvidenceOpen)) return ScopeId::evidence(evidence_seen + 1);
  if (open == vocab.tag(Tag::ThinkOpen)) return ScopeId::think();
  return ScopeId::answer();
}

}  // namespace detail

/// Parses a token sequence into scope spans. Never throws on malformed
/// input: the result simply has `well_formed == false` and no spans.
inline TaggedTrajectory parse(std::span<const TokenId> tokens, const Vocabulary& vocab, int k,
                              GrammarKind grammar = GrammarKind::EvidenceGuided) {
  TaggedTrajectory out;
  out.tokens.assign(tokens.begin(), tokens.end());
  out.k = k;
  out.grammar = grammar;
  if (tokens.empty() || k < 0) return out;

  const auto expected = expected_tags(vocab, k, grammar);
  std::vector<Span> spans;
  std::size_t next = 0;
  bool inside = false;
  std::size_t start = 0;
  int evidence_seen = 0;

  for (std::size_t pos = 0; pos < tokens.size(); ++pos) {
    const TokenId tok = tokens[pos];
    if (!vocab.is_tag(tok)) {
      if (!inside) return out;
      continue;
    }
    if (next >= expected.size() || tok != expected[next]) return out;
    if (next % 2 == 0) {
      inside = true;
      start = pos + 1;
    } else {
      inside = false;
      ScopeId id = detail::scope_for_open(vocab, expected[next - 1], evidence_seen);
      if (id.kind == ScopeKind::Evidence) ++evidence_seen;
      spans.push_back({id, start, pos});
    }
    ++next;
  }
  if (next != expected.size()) return out;

  out.spans = std::move(spans);
  out.well_formed = true;
  return out;
}

/// Inverse of parse for well-formed trajectories.
inline std::vector<TokenId> serialize(const TaggedTrajectory& traj, const Vocabulary& vocab) {
  if (!traj.well_formed) {
    throw std::invalid_argument("cannot serialize a malformed trajectory");
  }
  std::vector<TokenId> out;
  out.reserve(traj.tokens.size());
  for (const auto& s : traj.spans) {
    Tag open = Tag::ObserveOpen;
    switch (s.scope.kind) {
      case ScopeKind::Observe: open = Tag::ObserveOpen; break;
      case ScopeKind::Evidence: open = Tag::EvidenceOpen; break;
      case ScopeKind::Think: open = Tag::ThinkOpen; break;
      case ScopeKind::Answer: open = Tag::AnswerOpen; break;
    }
    out.push_back(vocab.tag(open));
    auto body = traj.content(s);
    out.insert(out.end(), body.begin(), body.end());
    out.push_back(vocab.tag(static_cast<Tag>(static_cast<int>(open) + 1)));
  }
  return out;
}

/// Scope containing position t, or nullopt for tag tokens and for every
/// position of a malformed trajectory.
inline std::optional<ScopeId> scope_of(const TaggedTrajectory& traj, std::size_t t) {
  if (t >= traj.tokens.size()) {
    throw std::out_of_range("token position " + std::to_string(t) + " out of range");
  }
  for (const auto& s : traj.spans) {
    if (t >= s.begin && t < s.end) return s.scope;
    if (t < s.begin) break;
  }
  return std::nullopt;
}

/// Span contents for building a trajectory programmatically.
struct TrajectoryParts {
  std::vector<TokenId> observe;
  std::vector<std::vector<TokenId>> evidence;
  std::vector<TokenId> think;
  std::vector<TokenId> answer;
};

inline TaggedTrajectory assemble(const TrajectoryParts& parts, const Vocabulary& vocab,
                                 GrammarKind grammar = GrammarKind::EvidenceGuided) {
  std::vector<TokenId> toks;
  auto emit = [&](Tag open, const std::vector<TokenId>& body) {
    toks.push_back(vocab.tag(open));
    toks.insert(toks.end(), body.begin(), body.end());
    toks.push_back(vocab.tag(static_cast<Tag>(static_cast<int>(open) + 1)));
  };
  int k = 0;
  if (grammar == GrammarKind::EvidenceGuided) {
    emit(Tag::ObserveOpen, parts.observe);
    for (const auto& e : parts.evidence) emit(Tag::EvidenceOpen, e);
    k = static_cast<int>(parts.evidence.size());
  }
  emit(Tag::ThinkOpen, parts.think);
  emit(Tag::AnswerOpen, parts.answer);
  return parse(toks, vocab, k, grammar);
}

/// JSON-lines record {tokens, k}; the grammar field is written only for the
/// two-scope ablation grammar.
inline nlohmann::json trajectory_to_json(const TaggedTrajectory& traj) {
  nlohmann::json j{{"tokens", traj.tokens}, {"k", traj.k}};
  if (traj.grammar != GrammarKind::EvidenceGuided) j["grammar"] = to_string(traj.grammar);
  return j;
}

inline TaggedTrajectory trajectory_from_json(const nlohmann::json& j, const Vocabulary& vocab) {
  auto tokens = j.at("tokens").get<std::vector<TokenId>>();
  GrammarKind grammar = GrammarKind::EvidenceGuided;
  if (j.contains("grammar")) grammar = grammar_from_string(j["grammar"].get<std::string>());
  return parse(tokens, vocab, j.at("k").get<int>(), grammar);
}

}  // namespace rsgrpo
