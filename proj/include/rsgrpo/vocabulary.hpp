#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace rsgrpo {

using TokenId = std::int32_t;

// Reserved tag ids occupy 0..7 in this order.
enum class Tag : int {
  ObserveOpen = 0,
  ObserveClose,
  EvidenceOpen,
  EvidenceClose,
  ThinkOpen,
  ThinkClose,
  AnswerOpen,
  AnswerClose,
};

inline constexpr int kNumTags = 8;

/// Token vocabulary with single-id reserved tags and special content tokens.
///
/// Layout: tags, then the "no relevant information" token, the
/// "insufficient to answer" token and a document separator used only when
/// encoding episodes. Every id from `first_content` up to `size` is a plain
/// content symbol.
struct Vocabulary {
  int size = 0;
  std::array<TokenId, kNumTags> tags{0, 1, 2, 3, 4, 5, 6, 7};
  TokenId no_relevant = 8;
  TokenId insufficient = 9;
  TokenId doc_separator = 10;
  TokenId first_content = 11;

  static Vocabulary standard(int size) {
    Vocabulary v;
    v.size = size;
    v.validate();
    return v;
  }

  TokenId tag(Tag t) const { return tags[static_cast<int>(t)]; }

  bool is_tag(TokenId id) const {
    for (TokenId t : tags) {
      if (t == id) return true;
    }
    return false;
  }

  bool contains(TokenId id) const { return id >= 0 && id < size; }

  int num_content() const { return size - first_content; }

  void validate() const {
    if (size <= first_content) {
      throw std::invalid_argument("vocabulary size " + std::to_string(size) +
                                  " leaves no content symbols");
    }
    std::array<bool, 64> seen{};
    auto mark = [&](TokenId id) {
      if (id < 0 || id >= size || id >= first_content) {
        throw std::invalid_argument("reserved token id out of range: " +
                                    std::to_string(id));
      }
      if (id < 64) {
        if (seen[id]) {
          throw std::invalid_argument("duplicate reserved token id " +
                                      std::to_string(id));
        }
        seen[id] = true;
      }
    };
    for (TokenId t : tags) mark(t);
    mark(no_relevant);
    mark(insufficient);
    mark(doc_separator);
  }

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;
};

inline void to_json(nlohmann::json& j, const Vocabulary& v) {
  j = nlohmann::json{
      {"size", v.size},
      {"tags",
       {{"observe_open", v.tags[0]},
        {"observe_close", v.tags[1]},
        {"evidence_open", v.tags[2]},
        {"evidence_close", v.tags[3]},
        {"think_open", v.tags[4]},
        {"think_close", v.tags[5]},
        {"answer_open", v.tags[6]},
        {"answer_close", v.tags[7]}}},
      {"no_relevant", v.no_relevant},
      {"insufficient", v.insufficient},
      {"doc_separator", v.doc_separator},
      {"first_content", v.first_content},
  };
}

inline void from_json(const nlohmann::json& j, Vocabulary& v) {
  v.size = j.at("size").get<int>();
  const auto& t = j.at("tags");
  v.tags = {t.at("observe_open").get<TokenId>(),  t.at("observe_close").get<TokenId>(),
            t.at("evidence_open").get<TokenId>(), t.at("evidence_close").get<TokenId>(),
            t.at("think_open").get<TokenId>(),    t.at("think_close").get<TokenId>(),
            t.at("answer_open").get<TokenId>(),   t.at("answer_close").get<TokenId>()};
  v.no_relevant = j.at("no_relevant").get<TokenId>();
  v.insufficient = j.at("insufficient").get<TokenId>();
  v.doc_separator = j.at("doc_separator").get<TokenId>();
  v.first_content = j.at("first_content").get<TokenId>();
  v.validate();
}

}  // namespace rsgrpo
