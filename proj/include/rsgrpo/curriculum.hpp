#pragma once

#include <algorithm>
#include <span>
#include <stdexcept>
#include <vector>

#include "rsgrpo/parallel.hpp"
#include "rsgrpo/reward_kernel.hpp"
#include "rsgrpo/synth_env.hpp"

namespace rsgrpo {

struct CurriculumEntry {
  int episode_id = 0;
  std::vector<double> scores;  // derivation reward of each candidate
  double mean = 0.0;
  bool kept = true;
};

struct CurriculumReport {
  std::vector<CurriculumEntry> entries;  // input order

  std::size_t dropped() const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [](const auto& e) { return !e.kept; }));
  }
};

struct CurriculumResult {
  std::vector<Episode> kept;  // easy to hard
  CurriculumReport report;
};

/// Difficulty filter. Draws `group` candidates per episode through
/// `sample(episode, candidate_index)`, drops episodes whose candidates all
/// reach a perfect derivation reward, and orders survivors by descending
/// mean score (ties keep input order).
template <typename Sampler>
CurriculumResult curriculum_filter(std::span<const Episode> episodes, int group, double k_pos,
                                   const Vocabulary& vocab, Sampler&& sample, int workers = 1) {
  if (group < 1) throw std::invalid_argument("curriculum_filter: group must be >= 1");
  CurriculumResult out;
  out.report.entries.resize(episodes.size());
  parallel_for(episodes.size(), workers, [&](std::size_t i) {
    const Episode& ep = episodes[i];
    auto& entry = out.report.entries[i];
    entry.episode_id = ep.id;
    bool all_perfect = true;
    double sum = 0.0;
    for (int g = 0; g < group; ++g) {
      const TaggedTrajectory traj = sample(ep, g);
      const double s = score_rollout(traj, ep, k_pos, vocab).derivation;
      entry.scores.push_back(s);
      sum += s;
      all_perfect = all_perfect && s == 1.0;
    }
    entry.mean = sum / group;
    entry.kept = !all_perfect;
  });

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    if (out.report.entries[i].kept) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return out.report.entries[a].mean > out.report.entries[b].mean;
  });
  for (std::size_t i : order) out.kept.push_back(episodes[i]);
  return out;
}

}  // namespace rsgrpo
