#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rsgrpo/random.hpp"
#include "rsgrpo/scope_grammar.hpp"
#include "rsgrpo/vocabulary.hpp"

namespace rsgrpo {

// Content symbols split into two pools: the lower half are keys, the upper
// half are values and filler symbols. Bridge tokens of two-hop chains are
// keys that also appear in value position.
inline TokenId key_pool_end(const Vocabulary& vocab) {
  return vocab.first_content + vocab.num_content() / 2;
}

inline bool is_key_token(const Vocabulary& vocab, TokenId t) {
  return t >= vocab.first_content && t < key_pool_end(vocab);
}

inline bool is_value_token(const Vocabulary& vocab, TokenId t) {
  return t >= key_pool_end(vocab) && t < vocab.size;
}

struct KeyValue {
  TokenId key;
  TokenId value;
  friend bool operator==(const KeyValue&, const KeyValue&) = default;
};

/// Reads (key, value) pairs left to right: a key token opens a pair and the
/// next token is its value; any other token is a filler and is skipped.
inline std::vector<KeyValue> document_pairs(std::span<const TokenId> doc, const Vocabulary& vocab) {
  std::vector<KeyValue> out;
  std::size_t i = 0;
  while (i < doc.size()) {
    if (is_key_token(vocab, doc[i]) && i + 1 < doc.size()) {
      out.push_back({doc[i], doc[i + 1]});
      i += 2;
    } else {
      ++i;
    }
  }
  return out;
}

inline std::optional<TokenId> lookup_value(std::span<const KeyValue> pairs, TokenId key) {
  for (const auto& p : pairs) {
    if (p.key == key) return p.value;
  }
  return std::nullopt;
}

struct Episode {
  int id = 0;
  std::vector<TokenId> query;
  std::vector<std::vector<TokenId>> docs;
  std::vector<std::vector<TokenId>> gold_evidence;
  std::vector<TokenId> gold_answer;
  bool sufficient = true;
  int hops = 1;

  int k() const { return static_cast<int>(docs.size()); }
  friend bool operator==(const Episode&, const Episode&) = default;
};

struct DatasetSpec {
  int docs_min = 1;
  int docs_max = 5;
  int vocab_size = 48;
  int doc_length = 8;
  int distractor_pairs = 2;
  double insufficiency_rate = 0.3;
  double two_hop_rate = 0.2;
  int episodes = 1000;
  std::uint64_t seed = 1;

  int keys_needed() const { return docs_max * (distractor_pairs + 1) + 2; }

  void validate() const {
    if (docs_min < 1 || docs_max < docs_min) {
      throw std::invalid_argument("document count range must satisfy 1 <= docs_min <= docs_max");
    }
    if (distractor_pairs < 0) throw std::invalid_argument("distractor_pairs must be >= 0");
    if (episodes < 1) throw std::invalid_argument("episodes must be positive");
    if (!(insufficiency_rate >= 0.0 && insufficiency_rate <= 1.0)) {
      throw std::invalid_argument("insufficiency_rate must lie in [0, 1]");
    }
    if (!(two_hop_rate >= 0.0 && two_hop_rate <= 1.0)) {
      throw std::invalid_argument("two_hop_rate must lie in [0, 1]");
    }
    if (doc_length < 2 * (distractor_pairs + 1)) {
      throw std::invalid_argument("doc_length " + std::to_string(doc_length) + " cannot hold " +
                                  std::to_string(distractor_pairs + 1) + " key-value pairs");
    }
    Vocabulary vocab = Vocabulary::standard(vocab_size);
    const int keys = key_pool_end(vocab) - vocab.first_content;
    if (keys < keys_needed() || vocab.size - key_pool_end(vocab) < 1) {
      throw std::invalid_argument("vocab_size " + std::to_string(vocab_size) +
                                  " is too small: need " + std::to_string(keys_needed()) +
                                  " distinct keys per episode");
    }
  }

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

inline void to_json(nlohmann::json& j, const DatasetSpec& s) {
  j = nlohmann::json{{"docs_min", s.docs_min},
                     {"docs_max", s.docs_max},
                     {"vocab_size", s.vocab_size},
                     {"doc_length", s.doc_length},
                     {"distractor_pairs", s.distractor_pairs},
                     {"insufficiency_rate", s.insufficiency_rate},
                     {"two_hop_rate", s.two_hop_rate},
                     {"episodes", s.episodes},
                     {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, DatasetSpec& s) {
  s.docs_min = j.at("docs_min").get<int>();
  s.docs_max = j.at("docs_max").get<int>();
  s.vocab_size = j.at("vocab_size").get<int>();
  s.doc_length = j.at("doc_length").get<int>();
  s.distractor_pairs = j.at("distractor_pairs").get<int>();
  s.insufficiency_rate = j.at("insufficiency_rate").get<double>();
  s.two_hop_rate = j.at("two_hop_rate").get<double>();
  s.episodes = j.at("episodes").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
}

/// Draws one episode. Consumes a fixed pattern of draws from `rng` given
/// the spec, so episodes are reproducible from (spec, rng state).
inline Episode generate_episode(const DatasetSpec& spec, const Vocabulary& vocab, Rng& rng,
                                int id = 0) {
  spec.validate();
  Episode ep;
  ep.id = id;

  const int k = spec.docs_min + static_cast<int>(uniform_index(
                                    rng, static_cast<std::uint64_t>(spec.docs_max - spec.docs_min + 1)));
  const bool two_hop = k >= 2 && bernoulli(rng, spec.two_hop_rate);
  ep.sufficient = !bernoulli(rng, spec.insufficiency_rate);
  ep.hops = two_hop ? 2 : 1;

  std::vector<TokenId> keys;
  for (TokenId t = vocab.first_content; t < key_pool_end(vocab); ++t) keys.push_back(t);
  shuffle(keys, rng);
  const TokenId value_lo = key_pool_end(vocab);
  const auto value_count = static_cast<std::uint64_t>(vocab.size - value_lo);
  auto random_value = [&] { return static_cast<TokenId>(value_lo + uniform_index(rng, value_count)); };

  const TokenId query = keys[0];
  const TokenId bridge = keys[1];
  std::size_t next_key = 2;
  const TokenId answer = random_value();
  ep.query = {query};

  // Document holding the first link, and (two-hop) the second link.
  const int doc_a = static_cast<int>(uniform_index(rng, k));
  int doc_b = -1;
  if (two_hop) {
    doc_b = static_cast<int>(uniform_index(rng, k - 1));
    if (doc_b >= doc_a) ++doc_b;
  }
  bool first_link = true;
  bool second_link = two_hop;
  if (!ep.sufficient) {
    if (two_hop && bernoulli(rng, 0.5)) {
      second_link = false;
    } else {
      first_link = false;
    }
  }

  ep.gold_evidence.assign(k, {});
  std::vector<std::optional<KeyValue>> gold_pair(k);
  if (first_link) {
    gold_pair[doc_a] = KeyValue{query, two_hop ? bridge : answer};
    ep.gold_evidence[doc_a] = {query, two_hop ? bridge : answer};
  }
  if (two_hop && second_link) {
    gold_pair[doc_b] = KeyValue{bridge, answer};
    // Only reachable from the query when the first link is present.
    if (first_link) ep.gold_evidence[doc_b] = {bridge, answer};
  }

  const int fillers = spec.doc_length - 2 * (spec.distractor_pairs + 1);
  ep.docs.resize(k);
  for (int d = 0; d < k; ++d) {
    std::vector<std::vector<TokenId>> units;
    if (gold_pair[d]) units.push_back({gold_pair[d]->key, gold_pair[d]->value});
    const int distractors = spec.distractor_pairs + (gold_pair[d] ? 0 : 1);
    for (int p = 0; p < distractors; ++p) units.push_back({keys[next_key++], random_value()});
    for (int f = 0; f < fillers; ++f) units.push_back({random_value()});
    shuffle(units, rng);
    for (const auto& u : units) ep.docs[d].insert(ep.docs[d].end(), u.begin(), u.end());
  }

  ep.gold_answer = ep.sufficient ? std::vector<TokenId>{answer}
                                 : std::vector<TokenId>{vocab.insufficient};
  return ep;
}

inline std::vector<Episode> generate_dataset(const DatasetSpec& spec, const Vocabulary& vocab) {
  spec.validate();
  Rng rng = derive_rng(spec.seed, "data");
  std::vector<Episode> out;
  out.reserve(spec.episodes);
  for (int i = 0; i < spec.episodes; ++i) out.push_back(generate_episode(spec, vocab, rng, i));
  return out;
}

/// Chain of tokens derivable from the query through the recorded pairs:
/// query, then each looked-up value while the lookup succeeds.
inline std::vector<TokenId> derivation_chain(const Episode& ep, const Vocabulary& vocab) {
  std::vector<KeyValue> pairs;
  for (const auto& e : ep.gold_evidence) {
    auto p = document_pairs(e, vocab);
    pairs.insert(pairs.end(), p.begin(), p.end());
  }
  std::vector<TokenId> chain = ep.query;
  if (chain.empty()) return chain;
  TokenId cur = chain.back();
  while (auto v = lookup_value(pairs, cur)) {
    chain.push_back(*v);
    cur = *v;
    if (static_cast<int>(chain.size()) > ep.hops + 1) break;
  }
  return chain;
}

/// Reference trajectory: observe restates the query key, each evidence block
/// records that document's gold pair (or the no-relevant-information token),
/// think restates the derivation chain (ending in the insufficiency token when
/// the chain breaks), answer is the effective gold answer.
inline TaggedTrajectory gold_trajectory(const Episode& ep, const Vocabulary& vocab,
                                        GrammarKind grammar = GrammarKind::EvidenceGuided) {
  TrajectoryParts parts;
  parts.observe = ep.query;
  for (const auto& e : ep.gold_evidence) {
    parts.evidence.push_back(e.empty() ? std::vector<TokenId>{vocab.no_relevant} : e);
  }
  parts.think = derivation_chain(ep, vocab);
  if (!ep.sufficient) parts.think.push_back(vocab.insufficient);
  parts.answer = ep.gold_answer;
  return assemble(parts, vocab, grammar);
}

/// Seed-deterministic partition into (sft, rl). Each part keeps input order.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> split_dataset(const std::vector<T>& items, double ratio,
                                                        std::uint64_t seed) {
  if (items.empty()) throw std::invalid_argument("cannot split an empty dataset");
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split ratio must lie in (0, 1)");
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = derive_rng(seed, "split");
  shuffle(order, rng);
  const auto n_first = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(items.size())));
  std::vector<bool> first(items.size(), false);
  for (std::size_t i = 0; i < n_first; ++i) first[order[i]] = true;
  std::pair<std::vector<T>, std::vector<T>> out;
  for (std::size_t i = 0; i < items.size(); ++i) (first[i] ? out.first : out.second).push_back(items[i]);
  return out;
}

// ---- JSONL persistence -------------------------------------------------

inline nlohmann::json episode_to_json(const Episode& ep) {
  return {{"id", ep.id},
          {"query", ep.query},
          {"docs", ep.docs},
          {"gold_evidence", ep.gold_evidence},
          {"gold_answer", ep.gold_answer},
          {"sufficient", ep.sufficient},
          {"hops", ep.hops}};
}

inline Episode episode_from_json(const nlohmann::json& j) {
  Episode ep;
  ep.id = j.at("id").get<int>();
  ep.query = j.at("query").get<std::vector<TokenId>>();
  ep.docs = j.at("docs").get<std::vector<std::vector<TokenId>>>();
  ep.gold_evidence = j.at("gold_evidence").get<std::vector<std::vector<TokenId>>>();
  ep.gold_answer = j.at("gold_answer").get<std::vector<TokenId>>();
  ep.sufficient = j.at("sufficient").get<bool>();
  ep.hops = j.at("hops").get<int>();
  if (ep.gold_evidence.size() != ep.docs.size()) {
    throw std::runtime_error("episode " + std::to_string(ep.id) +
                             ": gold_evidence and docs differ in length");
  }
  return ep;
}

struct Dataset {
  DatasetSpec spec;
  Vocabulary vocab;
  std::string split;
  std::vector<Episode> episodes;
};

}  // namespace rsgrpo
