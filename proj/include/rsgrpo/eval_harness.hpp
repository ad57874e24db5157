#pragma once

#include <algorithm>
#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rsgrpo/parallel.hpp"
#include "rsgrpo/reward_kernel.hpp"
#include "rsgrpo/scope_grammar.hpp"
#include "rsgrpo/synth_env.hpp"
#include "rsgrpo/toy_policy.hpp"

namespace rsgrpo {

enum class ContextClass { Sufficient = 0, Insufficient = 1 };

inline const char* to_string(ContextClass c) {
  return c == ContextClass::Sufficient ? "sufficient" : "insufficient";
}

/// The generator's label; it matches the all-evidence-present rule by
/// construction.
inline ContextClass classify_context(const Episode& ep) {
  return ep.sufficient ? ContextClass::Sufficient : ContextClass::Insufficient;
}

enum class Outcome { CorrectGeneration, IncorrectGeneration, Abstention };

inline const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::CorrectGeneration: return "correct";
    case Outcome::IncorrectGeneration: return "incorrect";
    case Outcome::Abstention: return "abstention";
  }
  return "?";
}

struct EpisodeAudit {
  int id = 0;
  ContextClass context = ContextClass::Sufficient;
  bool well_formed = false;
  std::vector<TokenId> prediction;
  std::vector<TokenId> gold;
  bool correct = false;
  double f1 = 0.0;
  Outcome outcome = Outcome::IncorrectGeneration;
};

/// Fractions within one context class. The three outcome fractions sum to 1;
/// `accuracy` is the fraction judged correct, which for insufficient contexts
/// is the abstention fraction.
struct ClassBreakdown {
  int count = 0;
  double correct_generation = 0.0;
  double incorrect_generation = 0.0;
  double abstention = 0.0;
  double accuracy = 0.0;
};

struct EvalResult {
  double accuracy = 0.0;
  double f1 = 0.0;
  int sufficient = 0;
  int insufficient = 0;
  std::array<ClassBreakdown, 2> breakdown{};
  std::vector<EpisodeAudit> audit;

  const ClassBreakdown& of(ContextClass c) const { return breakdown[static_cast<int>(c)]; }
};

inline EpisodeAudit audit_episode(const Episode& ep, const TaggedTrajectory& traj, const Vocabulary& vocab) {
  EpisodeAudit a;
  a.id = ep.id;
  a.context = classify_context(ep);
  a.well_formed = traj.well_formed;
  const AnswerRecord rec = answer_record(traj, ep);
  a.gold = effective_gold_answer(rec, vocab);
  if (!traj.well_formed) return a;  // incorrect, f1 = 0
  a.prediction = rec.predicted;
  a.f1 = token_bag_f1(a.prediction, a.gold);
  auto sorted = [](std::vector<TokenId> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  a.correct = sorted(a.prediction) == sorted(a.gold);
  const bool abstained = a.prediction.size() == 1 && a.prediction[0] == vocab.insufficient;
  if (abstained) {
    a.outcome = Outcome::Abstention;
  } else {
    a.outcome = a.correct ? Outcome::CorrectGeneration : Outcome::IncorrectGeneration;
  }
  return a;
}

inline EvalResult summarize(std::vector<EpisodeAudit> audit) {
  if (audit.empty()) throw std::invalid_argument("evaluate: empty dataset");
  EvalResult r;
  std::array<std::array<int, 3>, 2> outcome_counts{};
  std::array<int, 2> correct_counts{};
  int correct = 0;
  double f1_sum = 0.0;
  for (const auto& a : audit) {
    const int c = static_cast<int>(a.context);
    ++r.breakdown[c].count;
    ++outcome_counts[c][static_cast<int>(a.outcome)];
    if (a.correct) {
      ++correct;
      ++correct_counts[c];
    }
    f1_sum += a.f1;
  }
  const double n = static_cast<double>(audit.size());
  r.accuracy = static_cast<double>(correct) / n;
  r.f1 = f1_sum / n;
  r.sufficient = r.breakdown[0].count;
  r.insufficient = r.breakdown[1].count;
  for (int c = 0; c < 2; ++c) {
    auto& b = r.breakdown[c];
    if (b.count == 0) continue;
    const double m = static_cast<double>(b.count);
    b.correct_generation = outcome_counts[c][0] / m;
    b.incorrect_generation = outcome_counts[c][1] / m;
    b.abstention = outcome_counts[c][2] / m;
    b.accuracy = correct_counts[c] / m;
  }
  r.audit = std::move(audit);
  return r;
}

/// Evaluates any decoder mapping an episode to a trajectory.
template <typename Decoder>
EvalResult evaluate_with(std::span<const Episode> episodes, const Vocabulary& vocab, Decoder&& decode,
                         int workers = 1) {
  if (episodes.empty()) throw std::invalid_argument("evaluate: empty dataset");
  std::vector<EpisodeAudit> audit(episodes.size());
  parallel_for(episodes.size(), workers, [&](std::size_t i) {
    audit[i] = audit_episode(episodes[i], decode(episodes[i]), vocab);
  });
  return summarize(std::move(audit));
}

/// Greedy-decodes every episode with the policy.
inline EvalResult evaluate(const ToyPolicy& policy, std::span<const double> theta,
                           std::span<const Episode> episodes, int max_length, int workers = 1) {
  return evaluate_with(
      episodes, policy.vocab(),
      [&](const Episode& ep) { return policy.greedy(theta, ep, max_length).trajectory; }, workers);
}

inline nlohmann::json breakdown_to_json(const ClassBreakdown& b) {
  return {{"count", b.count},
          {"correct_generation", b.correct_generation},
          {"incorrect_generation", b.incorrect_generation},
          {"abstention", b.abstention},
          {"accuracy", b.accuracy}};
}

inline nlohmann::json eval_to_json(const EvalResult& r) {
  return {{"accuracy", r.accuracy},
          {"f1", r.f1},
          {"f1_averaging", "mean-over-queries"},
          {"accuracy_rule", "exact token-bag match against effective gold"},
          {"episodes", r.sufficient + r.insufficient},
          {"sufficient", r.sufficient},
          {"insufficient", r.insufficient},
          {"breakdown",
           {{"sufficient", breakdown_to_json(r.of(ContextClass::Sufficient))},
            {"insufficient", breakdown_to_json(r.of(ContextClass::Insufficient))}}}};
}

inline nlohmann::json audit_to_json(const EpisodeAudit& a) {
  return {{"episode", a.id},
          {"class", to_string(a.context)},
          {"well_formed", a.well_formed},
          {"prediction", a.prediction},
          {"gold", a.gold},
          {"correct", a.correct},
          {"f1", a.f1},
          {"outcome", to_string(a.outcome)}};
}

}  // namespace rsgrpo
