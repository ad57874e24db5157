#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rsgrpo/random.hpp"
#include "rsgrpo/scope_grammar.hpp"
#include "rsgrpo/synth_env.hpp"
#include "rsgrpo/vocabulary.hpp"

namespace rsgrpo {

using PolicyParams = std::vector<double>;

/// Feature layout of the log-linear policy. Logits are
///
///   z[y] = sum over active row features f of W[f][y]
///        + sum over copy blocks b of c[b] * [y is in the lookup set of b]
///
/// Row features (each owns `vocab_size` output weights):
///   window  one-hot of each of the last `window` tokens of
///           (episode encoding ++ generated prefix)
///   state   generation phase x position-in-span bucket, and whether any
///           evidence block is still owed
///   lookup  per copy block, whether the block applies here with or without
///           a match (lets the policy abstain or decline exactly when a
///           lookup comes back empty)
///   bias    always active
///
/// Copy blocks (one shared scalar each) point at tokens found by episode
/// lookups: the query key, key hits and two-hop bridges in the current
/// document, the value paired with the previous token, lookups over recorded
/// evidence, and the last reasoning token. Sharing one weight per block makes
/// the copy behaviour independent of token identity.
struct FeatureConfig {
  int vocab_size = 48;
  int window = 2;
  bool state_features = true;
  bool copy_features = true;

  static constexpr int kPhases = 7;
  static constexpr int kPositionBuckets = 4;
  static constexpr int kStateFeatures = kPhases * kPositionBuckets + 2;
  static constexpr int kCopyBlocks = 7;

  int window_offset() const { return 0; }
  int state_offset() const { return window * vocab_size; }
  int lookup_offset() const { return state_offset() + (state_features ? kStateFeatures : 0); }
  int bias_row() const { return lookup_offset() + (copy_features ? 2 * kCopyBlocks : 0); }
  int num_rows() const { return bias_row() + 1; }
  /// Index of the first copy-block scalar in the flat parameter vector.
  std::size_t copy_param_offset() const {
    return static_cast<std::size_t>(num_rows()) * static_cast<std::size_t>(vocab_size);
  }
  std::size_t dimension() const { return copy_param_offset() + (copy_features ? kCopyBlocks : 0); }

  void validate() const {
    if (vocab_size < 1) throw std::invalid_argument("feature config: vocab_size must be positive");
    if (window < 0) throw std::invalid_argument("feature config: window must be >= 0");
  }

  friend bool operator==(const FeatureConfig&, const FeatureConfig&) = default;
};

inline void to_json(nlohmann::json& j, const FeatureConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},
                     {"window", c.window},
                     {"state_features", c.state_features},
                     {"copy_features", c.copy_features}};
}

inline void from_json(const nlohmann::json& j, FeatureConfig& c) {
  c.vocab_size = j.at("vocab_size").get<int>();
  c.window = j.at("window").get<int>();
  c.state_features = j.at("state_features").get<bool>();
  c.copy_features = j.at("copy_features").get<bool>();
  c.validate();
}

enum class Phase : int { Start = 0, Observe, Evidence, Think, Answer, Between, Done };

enum class CopyBlock : int {
  ObserveQuery = 0,
  EvidenceKeyHit,
  EvidenceBridge,
  EvidenceValue,
  ThinkQuery,
  ThinkLookup,
  AnswerCopy,
};

struct CopyMatch {
  CopyBlock block;
  TokenId token;
};

/// Active features at one decoding step.
struct ActiveFeatures {
  std::vector<int> rows;  // bias row last
  std::vector<CopyMatch> copies;
};

/// Conditioning state for the next token: a deterministic function of the
/// episode and the generated prefix, updated one token at a time.
class PolicyContext {
 public:
  PolicyContext(const Episode& ep, const Vocabulary& vocab, GrammarKind grammar)
      : vocab_(&vocab), grammar_(grammar), query_(ep.query), k_(ep.k()) {
    for (TokenId q : ep.query) encoding_.push_back(q);
    for (const auto& d : ep.docs) {
      encoding_.push_back(vocab.doc_separator);
      encoding_.insert(encoding_.end(), d.begin(), d.end());
      doc_pairs_.push_back(document_pairs(d, vocab));
      all_pairs_.insert(all_pairs_.end(), doc_pairs_.back().begin(), doc_pairs_.back().end());
    }
    hits_.resize(k_);
    bridges_.resize(k_);
    for (int i = 0; i < k_; ++i) {
      for (const auto& p : doc_pairs_[i]) {
        if (std::find(query_.begin(), query_.end(), p.key) != query_.end()) hits_[i].push_back(p.key);
        for (int j = 0; j < k_; ++j) {
          if (j == i) continue;
          for (const auto& o : doc_pairs_[j]) {
            if (o.value == p.key && std::find(query_.begin(), query_.end(), o.key) != query_.end()) {
              bridges_[i].push_back(p.key);
            }
          }
        }
      }
    }
  }

  void push(TokenId tok) {
    const auto& v = *vocab_;
    prefix_.push_back(tok);
    if (v.is_tag(tok)) {
      if (tok == v.tag(Tag::ObserveOpen)) {
        open(Phase::Observe);
      } else if (tok == v.tag(Tag::EvidenceOpen)) {
        ++evidence_opened_;
        open(Phase::Evidence);
      } else if (tok == v.tag(Tag::ThinkOpen)) {
        open(Phase::Think);
      } else if (tok == v.tag(Tag::AnswerOpen)) {
        open(Phase::Answer);
      } else {
        if (phase_ == Phase::Evidence) {
          auto p = document_pairs(span_, v);
          recorded_.insert(recorded_.end(), p.begin(), p.end());
        }
        phase_ = tok == v.tag(Tag::AnswerClose) ? Phase::Done : Phase::Between;
        span_pos_ = 0;
        span_.clear();
      }
      return;
    }
    if (!in_span()) return;
    ++span_pos_;
    span_.push_back(tok);
    if (phase_ == Phase::Observe) observed_.push_back(tok);
    if (phase_ == Phase::Think) last_think_ = tok;
  }

  void active_features(const FeatureConfig& cfg, ActiveFeatures& out) const {
    out.rows.clear();
    out.copies.clear();
    const int V = cfg.vocab_size;
    for (int w = 0; w < cfg.window; ++w) {
      if (auto t = window_token(w)) {
        if (*t >= 0 && *t < V) out.rows.push_back(cfg.window_offset() + w * V + *t);
      }
    }
    if (cfg.state_features) {
      const int bucket = in_span() ? std::min(span_pos_, FeatureConfig::kPositionBuckets - 1) : 0;
      out.rows.push_back(cfg.state_offset() + static_cast<int>(phase_) * FeatureConfig::kPositionBuckets + bucket);
      out.rows.push_back(cfg.state_offset() + FeatureConfig::kPhases * FeatureConfig::kPositionBuckets +
                         (evidence_opened_ < k_ ? 0 : 1));
    }
    if (!cfg.copy_features) {
      out.rows.push_back(cfg.bias_row());
      return;
    }

    std::array<int, FeatureConfig::kCopyBlocks> matches{};
    std::array<bool, FeatureConfig::kCopyBlocks> applies{};
    auto consider = [&](CopyBlock b) { applies[static_cast<int>(b)] = true; };
    auto copy = [&](CopyBlock b, TokenId t) {
      consider(b);
      if (t < 0 || t >= V) return;
      for (const auto& c : out.copies) {
        if (c.block == b && c.token == t) return;
      }
      out.copies.push_back({b, t});
      ++matches[static_cast<int>(b)];
    };
    const int doc = evidence_opened_ - 1;
    switch (phase_) {
      case Phase::Observe:
        consider(CopyBlock::ObserveQuery);
        for (TokenId q : query_) {
          if (std::find(observed_.begin(), observed_.end(), q) == observed_.end()) {
            copy(CopyBlock::ObserveQuery, q);
          }
        }
        break;
      case Phase::Evidence:
        if (doc < 0 || doc >= k_) break;
        if (span_pos_ == 0) {
          consider(CopyBlock::EvidenceKeyHit);
          consider(CopyBlock::EvidenceBridge);
          for (TokenId t : hits_[doc]) copy(CopyBlock::EvidenceKeyHit, t);
          for (TokenId t : bridges_[doc]) copy(CopyBlock::EvidenceBridge, t);
        } else {
          consider(CopyBlock::EvidenceValue);
          if (auto val = lookup_value(doc_pairs_[doc], prefix_.back())) copy(CopyBlock::EvidenceValue, *val);
        }
        break;
      case Phase::Think:
        if (span_pos_ == 0) {
          consider(CopyBlock::ThinkQuery);
          for (TokenId q : query_) copy(CopyBlock::ThinkQuery, q);
        } else {
          consider(CopyBlock::ThinkLookup);
          const auto& source = grammar_ == GrammarKind::EvidenceGuided ? recorded_ : all_pairs_;
          if (auto val = lookup_value(source, prefix_.back())) copy(CopyBlock::ThinkLookup, *val);
        }
        break;
      case Phase::Answer:
        if (span_pos_ == 0) {
          consider(CopyBlock::AnswerCopy);
          if (last_think_) copy(CopyBlock::AnswerCopy, *last_think_);
        }
        break;
      default:
        break;
    }
    for (int b = 0; b < FeatureConfig::kCopyBlocks; ++b) {
      if (applies[b]) out.rows.push_back(cfg.lookup_offset() + 2 * b + (matches[b] > 0 ? 0 : 1));
    }
    out.rows.push_back(cfg.bias_row());
  }

  std::size_t prefix_length() const { return prefix_.size(); }
  const std::vector<TokenId>& prefix() const { return prefix_; }
  Phase phase() const { return phase_; }

 private:
  bool in_span() const {
    return phase_ == Phase::Observe || phase_ == Phase::Evidence || phase_ == Phase::Think ||
           phase_ == Phase::Answer;
  }

  void open(Phase p) {
    phase_ = p;
    span_pos_ = 0;
    span_.clear();
  }

  std::optional<TokenId> window_token(int w) const {
    const auto back = static_cast<std::size_t>(w);
    if (back < prefix_.size()) return prefix_[prefix_.size() - 1 - back];
    const std::size_t into = back - prefix_.size();
    if (into < encoding_.size()) return encoding_[encoding_.size() - 1 - into];
    return std::nullopt;
  }

  const Vocabulary* vocab_;
  GrammarKind grammar_;
  std::vector<TokenId> query_;
  int k_ = 0;
  std::vector<TokenId> encoding_;
  std::vector<std::vector<KeyValue>> doc_pairs_;
  std::vector<KeyValue> all_pairs_;
  std::vector<std::vector<TokenId>> hits_;
  std::vector<std::vector<TokenId>> bridges_;

  std::vector<TokenId> prefix_;
  Phase phase_ = Phase::Start;
  int span_pos_ = 0;
  int evidence_opened_ = 0;
  std::vector<TokenId> span_;
  std::vector<TokenId> observed_;
  std::vector<KeyValue> recorded_;
  std::optional<TokenId> last_think_;
};

struct Rollout {
  TaggedTrajectory trajectory;
  std::vector<double> log_probs;  // temperature-1 log-probabilities of the sampled tokens
};

/// Log-linear autoregressive policy over the features of FeatureConfig.
class ToyPolicy {
 public:
  ToyPolicy(FeatureConfig features, Vocabulary vocab,
            GrammarKind grammar = GrammarKind::EvidenceGuided)
      : features_(features), vocab_(vocab), grammar_(grammar) {
    features_.validate();
    if (features_.vocab_size != vocab_.size) {
      throw std::invalid_argument("feature config vocab_size does not match vocabulary");
    }
  }

  const FeatureConfig& features() const { return features_; }
  const Vocabulary& vocab() const { return vocab_; }
  GrammarKind grammar() const { return grammar_; }
  std::size_t dimension() const { return features_.dimension(); }

  PolicyParams zero_params() const { return PolicyParams(dimension(), 0.0); }

  PolicyContext context(const Episode& ep) const { return PolicyContext(ep, vocab_, grammar_); }

  std::vector<double> logits(std::span<const double> theta, const PolicyContext& ctx) const {
    check_dim(theta);
    ActiveFeatures active;
    ctx.active_features(features_, active);
    std::vector<double> z(vocab_.size, 0.0);
    accumulate_logits(theta, active, z);
    return z;
  }

  Rollout sample_rollout(std::span<const double> theta, const Episode& ep, double temperature,
                         int max_length, Rng& rng) const {
    if (!(temperature > 0.0)) throw std::invalid_argument("sample_rollout: temperature must be positive");
    return decode(theta, ep, max_length, [&](const std::vector<double>& z) {
      const double m = *std::max_element(z.begin(), z.end());
      double total = 0.0;
      std::vector<double> w(z.size());
      for (std::size_t v = 0; v < z.size(); ++v) {
        w[v] = std::exp((z[v] - m) / temperature);
        total += w[v];
      }
      double u = uniform01(rng) * total;
      for (std::size_t v = 0; v < z.size(); ++v) {
        u -= w[v];
        if (u < 0.0 && w[v] > 0.0) return static_cast<TokenId>(v);
      }
      // Rounding left u marginally non-negative: take the last positive entry.
      for (std::size_t v = z.size(); v-- > 0;) {
        if (w[v] > 0.0) return static_cast<TokenId>(v);
      }
      return TokenId{0};
    });
  }

  /// Argmax decoding; ties resolve to the lowest id.
  Rollout greedy(std::span<const double> theta, const Episode& ep, int max_length) const {
    return decode(theta, ep, max_length, [](const std::vector<double>& z) {
      return static_cast<TokenId>(std::max_element(z.begin(), z.end()) - z.begin());
    });
  }

  /// Temperature-1 log-probability of every token of `tokens` given its prefix.
  std::vector<double> log_prob(std::span<const double> theta, std::span<const TokenId> tokens,
                               const Episode& ep) const {
    check_dim(theta);
    PolicyContext ctx = context(ep);
    ActiveFeatures active;
    std::vector<double> z(vocab_.size);
    std::vector<double> out;
    out.reserve(tokens.size());
    for (TokenId tok : tokens) {
      check_token(tok);
      ctx.active_features(features_, active);
      std::fill(z.begin(), z.end(), 0.0);
      accumulate_logits(theta, active, z);
      out.push_back(z[tok] - log_sum_exp(z));
      ctx.push(tok);
    }
    return out;
  }

  /// grad += sum_t weight[t] * d/dtheta log pi(tokens[t] | prefix).
  void accumulate_log_prob_grad(std::span<const double> theta, std::span<const TokenId> tokens,
                                const Episode& ep, std::span<const double> weights,
                                std::span<double> grad) const {
    check_dim(theta);
    if (grad.size() != theta.size()) throw std::invalid_argument("gradient buffer has wrong size");
    if (weights.size() != tokens.size()) throw std::invalid_argument("one weight per token required");
    PolicyContext ctx = context(ep);
    ActiveFeatures active;
    std::vector<double> z(vocab_.size);
    const auto V = static_cast<std::size_t>(vocab_.size);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const TokenId tok = tokens[t];
      check_token(tok);
      ctx.active_features(features_, active);
      if (weights[t] != 0.0) {
        std::fill(z.begin(), z.end(), 0.0);
        accumulate_logits(theta, active, z);
        const double lse = log_sum_exp(z);
        for (std::size_t v = 0; v < V; ++v) {
          const double indicator = static_cast<TokenId>(v) == tok ? 1.0 : 0.0;
          z[v] = weights[t] * (indicator - std::exp(z[v] - lse));
        }
        for (int f : active.rows) {
          double* row = grad.data() + static_cast<std::size_t>(f) * V;
          for (std::size_t v = 0; v < V; ++v) row[v] += z[v];
        }
        const std::size_t c0 = features_.copy_param_offset();
        for (const auto& c : active.copies) grad[c0 + static_cast<std::size_t>(c.block)] += z[c.token];
      }
      ctx.push(tok);
    }
  }

  std::vector<double> log_prob_grad(std::span<const double> theta, std::span<const TokenId> tokens,
                                    const Episode& ep) const {
    std::vector<double> grad(theta.size(), 0.0);
    std::vector<double> ones(tokens.size(), 1.0);
    accumulate_log_prob_grad(theta, tokens, ep, ones, grad);
    return grad;
  }

  static double log_sum_exp(std::span<const double> z) {
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double x : z) s += std::exp(x - m);
    return m + std::log(s);
  }

 private:
  void check_dim(std::span<const double> theta) const {
    if (theta.size() != dimension()) {
      throw std::invalid_argument("parameter vector has dimension " + std::to_string(theta.size()) +
                                  ", policy expects " + std::to_string(dimension()));
    }
  }

  void check_token(TokenId tok) const {
    if (!vocab_.contains(tok)) throw std::invalid_argument("token id outside vocabulary: " + std::to_string(tok));
  }

  void accumulate_logits(std::span<const double> theta, const ActiveFeatures& active,
                         std::vector<double>& z) const {
    const auto V = static_cast<std::size_t>(vocab_.size);
    for (int f : active.rows) {
      const double* row = theta.data() + static_cast<std::size_t>(f) * V;
      for (std::size_t v = 0; v < V; ++v) z[v] += row[v];
    }
    const std::size_t c0 = features_.copy_param_offset();
    for (const auto& c : active.copies) z[c.token] += theta[c0 + static_cast<std::size_t>(c.block)];
  }

  template <typename Pick>
  Rollout decode(std::span<const double> theta, const Episode& ep, int max_length, Pick&& pick) const {
    check_dim(theta);
    if (max_length < 1) throw std::invalid_argument("max_length must be positive");
    PolicyContext ctx = context(ep);
    ActiveFeatures active;
    std::vector<double> z(vocab_.size);
    std::vector<TokenId> tokens;
    std::vector<double> lps;
    const TokenId stop = vocab_.tag(Tag::AnswerClose);
    while (static_cast<int>(tokens.size()) < max_length) {
      ctx.active_features(features_, active);
      std::fill(z.begin(), z.end(), 0.0);
      accumulate_logits(theta, active, z);
      const TokenId tok = pick(z);
      lps.push_back(z[tok] - log_sum_exp(z));
      tokens.push_back(tok);
      ctx.push(tok);
      if (tok == stop) break;
    }
    Rollout r;
    r.trajectory = parse(tokens, vocab_, ep.k(), grammar_);
    r.log_probs = std::move(lps);
    return r;
  }

  FeatureConfig features_;
  Vocabulary vocab_;
  GrammarKind grammar_;
};

// ---- checkpoints -------------------------------------------------------

struct Checkpoint {
  FeatureConfig features;
  Vocabulary vocab;
  GrammarKind grammar = GrammarKind::EvidenceGuided;
  PolicyParams theta;

  ToyPolicy policy() const { return ToyPolicy(features, vocab, grammar); }
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
  return {{"format", "rsgrpo-checkpoint/1"},
          {"features", c.features},
          {"vocab", c.vocab},
          {"grammar", to_string(c.grammar)},
          {"theta", c.theta}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string{}) != "rsgrpo-checkpoint/1") {
    throw std::runtime_error("not an rsgrpo checkpoint");
  }
  Checkpoint c;
  c.features = j.at("features").get<FeatureConfig>();
  c.vocab = j.at("vocab").get<Vocabulary>();
  c.grammar = grammar_from_string(j.at("grammar").get<std::string>());
  c.theta = j.at("theta").get<PolicyParams>();
  if (c.theta.size() != c.features.dimension()) {
    throw std::runtime_error("checkpoint theta has " + std::to_string(c.theta.size()) +
                             " entries, feature config expects " + std::to_string(c.features.dimension()));
  }
  for (double x : c.theta) {
    if (!std::isfinite(x)) throw std::runtime_error("checkpoint contains a non-finite parameter");
  }
  return c;
}

}  // namespace rsgrpo
