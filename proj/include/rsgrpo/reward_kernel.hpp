#pragma once

#include <algorithm>
#include <span>
#include <stdexcept>
#include <vector>

#include "rsgrpo/scope_grammar.hpp"
#include "rsgrpo/synth_env.hpp"
#include "rsgrpo/vocabulary.hpp"

namespace rsgrpo {

/// F1 over multiset overlap of token ids. Two empty bags score 1, exactly one
/// empty bag scores 0.
inline double token_bag_f1(std::span<const TokenId> pred, std::span<const TokenId> gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  std::vector<TokenId> a(pred.begin(), pred.end());
  std::vector<TokenId> b(gold.begin(), gold.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0, overlap = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++overlap;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(a.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(b.size());
  return 2.0 * precision * recall / (precision + recall);
}

struct DocumentEvidence {
  std::vector<TokenId> predicted;
  std::vector<TokenId> gold;
  bool relevant = false;
};

struct EvidenceRecord {
  std::vector<DocumentEvidence> docs;
};

struct AnswerRecord {
  std::vector<TokenId> predicted;
  std::vector<TokenId> gold;
  bool sufficient = true;
};

struct ChannelScores {
  double perception = 0.0;
  double derivation = 0.0;
  double format = 0.0;

  friend bool operator==(const ChannelScores&, const ChannelScores&) = default;
};

/// Weighted evidence reward: relevant documents earn k_pos * F1 against the
/// gold evidence, irrelevant documents earn 1 for an exact abstention, and the
/// sum is normalized by the best achievable total.
inline double perception_reward(const EvidenceRecord& records, double k_pos, const Vocabulary& vocab) {
  if (records.docs.empty()) throw std::invalid_argument("perception_reward: empty evidence record");
  if (!(k_pos > 0.0)) throw std::invalid_argument("perception_reward: k_pos must be positive");
  double earned = 0.0;
  double attainable = 0.0;
  for (const auto& d : records.docs) {
    if (d.relevant) {
      earned += k_pos * token_bag_f1(d.predicted, d.gold);
      attainable += k_pos;
    } else {
      const bool abstained = d.predicted.size() == 1 && d.predicted[0] == vocab.no_relevant;
      earned += abstained ? 1.0 : 0.0;
      attainable += 1.0;
    }
  }
  return earned / attainable;
}

inline std::vector<TokenId> effective_gold_answer(const AnswerRecord& record, const Vocabulary& vocab) {
  if (!record.sufficient) return {vocab.insufficient};
  return record.gold;
}

inline double derivation_reward(const AnswerRecord& record, const Vocabulary& vocab) {
  const auto gold = effective_gold_answer(record, vocab);
  return token_bag_f1(record.predicted, gold);
}

inline double format_reward(const TaggedTrajectory& traj) { return traj.well_formed ? 1.0 : 0.0; }

inline EvidenceRecord evidence_record(const TaggedTrajectory& traj, const Episode& ep) {
  EvidenceRecord rec;
  for (int i = 0; i < ep.k(); ++i) {
    DocumentEvidence d;
    if (const Span* s = traj.find(ScopeId::evidence(i + 1))) {
      auto body = traj.content(*s);
      d.predicted.assign(body.begin(), body.end());
    }
    d.gold = ep.gold_evidence[i];
    d.relevant = !d.gold.empty();
    rec.docs.push_back(std::move(d));
  }
  return rec;
}

inline AnswerRecord answer_record(const TaggedTrajectory& traj, const Episode& ep) {
  AnswerRecord rec;
  if (const Span* s = traj.find(ScopeId::answer())) {
    auto body = traj.content(*s);
    rec.predicted.assign(body.begin(), body.end());
  }
  rec.gold = ep.gold_answer;
  rec.sufficient = ep.sufficient;
  return rec;
}

/// All three channels for one rollout. Malformed output scores zero on every
/// channel. Trajectories without evidence scopes (the two-scope grammar, or an
/// episode without documents) have nothing to misperceive; their perception
/// channel mirrors the format channel.
inline ChannelScores score_rollout(const TaggedTrajectory& traj, const Episode& ep, double k_pos,
                                   const Vocabulary& vocab) {
  if (!traj.well_formed) return {};
  if (traj.grammar == GrammarKind::EvidenceGuided && traj.k != ep.k()) {
    throw std::invalid_argument("score_rollout: trajectory and episode disagree on document count");
  }
  ChannelScores s;
  s.format = format_reward(traj);
  s.derivation = derivation_reward(answer_record(traj, ep), vocab);
  if (traj.grammar == GrammarKind::EvidenceGuided && ep.k() > 0) {
    s.perception = perception_reward(evidence_record(traj, ep), k_pos, vocab);
  } else {
    s.perception = s.format;
  }
  return s;
}

}  // namespace rsgrpo
