#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "rsgrpo/synth_env.hpp"
#include "rsgrpo/toy_policy.hpp"
#include "rsgrpo/trainer.hpp"

namespace rsgrpo {

/// Everything an experiment needs: the training-data spec, the evaluation-set
/// spec, the policy features and the optimizer. Data seeds are separate from
/// the training seed so runs with different seeds share their data.
struct ExperimentConfig {
  DatasetSpec data;
  DatasetSpec eval;
  FeatureConfig features;
  OptimizerConfig train;
  double split_ratio = 0.8;
  std::string out_dir = "runs/default";

  ExperimentConfig() {
    data.episodes = 20000;
    eval.docs_min = 3;
    eval.docs_max = 3;
    eval.episodes = 500;
    eval.seed = 1001;
    features.vocab_size = data.vocab_size;
  }

  void validate() const {
    data.validate();
    eval.validate();
    features.validate();
    train.validate();
    if (data.vocab_size != eval.vocab_size || data.vocab_size != features.vocab_size) {
      throw std::invalid_argument("data.vocab_size, eval.vocab_size and features.vocab_size must agree");
    }
    if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw std::invalid_argument("split_ratio must lie in (0, 1)");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (!in || !in.eof()) throw std::invalid_argument("config: bad value '" + v + "' for " + key);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: bad boolean '" + v + "' for " + key);
}

struct Field {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <typename T>
std::string show(const T& v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::map<std::string, Field> fields(ExperimentConfig& c) {
  std::map<std::string, Field> f;
  auto num = [&f](const std::string& key, auto& ref) {
    using T = std::remove_reference_t<decltype(ref)>;
    f[key] = {[&ref, key](const std::string& v) { ref = parse_number<T>(key, v); }, [&ref] { return show(ref); }};
  };
  auto flag = [&f](const std::string& key, bool& ref) {
    f[key] = {[&ref, key](const std::string& v) { ref = parse_bool(key, v); },
              [&ref] { return std::string(ref ? "true" : "false"); }};
  };
  auto text = [&f](const std::string& key, std::string& ref) {
    f[key] = {[&ref](const std::string& v) { ref = v; }, [&ref] { return ref; }};
  };
  for (auto [prefix, spec] : {std::pair{"data.", &c.data}, std::pair{"eval.", &c.eval}}) {
    const std::string p = prefix;
    num(p + "docs_min", spec->docs_min);
    num(p + "docs_max", spec->docs_max);
    num(p + "doc_length", spec->doc_length);
    num(p + "distractor_pairs", spec->distractor_pairs);
    num(p + "insufficiency_rate", spec->insufficiency_rate);
    num(p + "two_hop_rate", spec->two_hop_rate);
    num(p + "episodes", spec->episodes);
    num(p + "seed", spec->seed);
  }
  // One vocabulary size for data, eval and policy.
  f["vocab_size"] = {[&c](const std::string& v) {
                       const int n = parse_number<int>("vocab_size", v);
                       c.data.vocab_size = c.eval.vocab_size = c.features.vocab_size = n;
                     },
                     [&c] { return show(c.data.vocab_size); }};
  num("split_ratio", c.split_ratio);
  num("features.window", c.features.window);
  flag("features.state", c.features.state_features);
  flag("features.copy", c.features.copy_features);

  auto& t = c.train;
  f["train.mode"] = {[&t](const std::string& v) { t.mode = mode_from_string(v); },
                     [&t] { return std::string(to_string(t.mode)); }};
  f["train.normalization"] = {
      [&t](const std::string& v) {
        if (v == "scope-class") {
          t.normalization = Normalization::ScopeClass;
        } else if (v == "positional") {
          t.normalization = Normalization::Positional;
        } else {
          throw std::invalid_argument("config: train.normalization must be scope-class or positional");
        }
      },
      [&t] { return std::string(t.normalization == Normalization::ScopeClass ? "scope-class" : "positional"); }};
  num("train.group_size", t.group_size);
  num("train.learning_rate", t.learning_rate);
  num("train.clip_low", t.clip_low);
  num("train.clip_high", t.clip_high);
  num("train.temperature", t.temperature);
  num("train.rollout_batch", t.rollout_batch);
  num("train.epochs", t.epochs);
  num("train.max_grad_norm", t.max_grad_norm);
  num("train.weight_decay", t.weight_decay);
  num("train.k_pos", t.k_pos);
  num("train.max_length", t.max_length);
  num("train.inner_steps", t.inner_steps);
  flag("train.dynamic_sampling", t.dynamic_sampling);
  flag("train.curriculum", t.curriculum);
  num("train.curriculum_group", t.curriculum_group);
  num("train.sft_learning_rate", t.sft_learning_rate);
  num("train.sft_epochs", t.sft_epochs);
  num("train.sft_batch", t.sft_batch);
  num("train.sft_limit", t.sft_limit);
  num("train.gradcheck_every", t.gradcheck_every);
  num("seed", t.seed);
  num("workers", t.workers);
  text("out_dir", c.out_dir);
  return f;
}

}  // namespace detail

/// Applies one `key=value` assignment.
inline void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  auto f = detail::fields(c);
  auto it = f.find(key);
  if (it == f.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  it->second.set(value);
}

inline void apply_assignment(ExperimentConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw std::invalid_argument("config: expected key=value, got '" + assignment + "'");
  set_config_value(c, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

/// Parses `key = value` lines; '#' starts a comment.
inline void apply_config_text(ExperimentConfig& c, const std::string& text, const std::string& origin = "config") {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    try {
      apply_assignment(c, line);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

/// Resolved configuration in the same format the parser reads.
inline std::string config_snapshot(const ExperimentConfig& c) {
  ExperimentConfig copy = c;
  std::string out;
  for (const auto& [key, field] : detail::fields(copy)) out += key + " = " + field.get() + "\n";
  return out;
}

}  // namespace rsgrpo
