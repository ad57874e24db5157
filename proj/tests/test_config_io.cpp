#include <gtest/gtest.h>

#include <filesystem>

#include "rsgrpo/config.hpp"
#include "rsgrpo/experiment.hpp"
#include "rsgrpo/io.hpp"

using namespace rsgrpo;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("rsgrpo-test-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Config, DefaultsValidate) {
  ExperimentConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.train.group_size, 8);
  EXPECT_EQ(c.train.temperature, 1.2);
  EXPECT_EQ(c.train.clip_high, 0.28);
  EXPECT_EQ(c.eval.docs_min, 3);
  EXPECT_EQ(c.eval.docs_max, 3);
}

TEST(Config, ParsesTextWithComments) {
  ExperimentConfig c;
  apply_config_text(c, "# comment\ntrain.mode = mixed-grpo\n\n seed=7 # trailing\ntrain.curriculum = false\n");
  EXPECT_EQ(c.train.mode, TrainMode::MixedGrpo);
  EXPECT_EQ(c.train.seed, 7u);
  EXPECT_FALSE(c.train.curriculum);
}

TEST(Config, VocabSizeSetsAllThree) {
  ExperimentConfig c;
  apply_assignment(c, "vocab_size=64");
  EXPECT_EQ(c.data.vocab_size, 64);
  EXPECT_EQ(c.eval.vocab_size, 64);
  EXPECT_EQ(c.features.vocab_size, 64);
}

TEST(Config, ErrorsNameTheLine) {
  ExperimentConfig c;
  try {
    apply_config_text(c, "seed = 1\ntrain.epochs = many\n", "run.cfg");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos);
  }
  EXPECT_THROW(apply_assignment(c, "nope=1"), std::invalid_argument);
  EXPECT_THROW(apply_assignment(c, "seed"), std::invalid_argument);
  EXPECT_THROW(apply_assignment(c, "train.curriculum=maybe"), std::invalid_argument);
  EXPECT_THROW(apply_assignment(c, "train.normalization=other"), std::invalid_argument);
}

TEST(Config, SnapshotRoundTrips) {
  ExperimentConfig c;
  apply_config_text(c, "train.learning_rate = 0.123456789\ndata.seed = 99\ntrain.normalization = positional\n");
  ExperimentConfig d;
  apply_config_text(d, config_snapshot(c));
  EXPECT_EQ(config_snapshot(c), config_snapshot(d));
  EXPECT_EQ(d.train.learning_rate, 0.123456789);
  EXPECT_EQ(d.train.normalization, Normalization::Positional);
}

TEST(Config, ValidationCatchesMismatch) {
  ExperimentConfig c;
  c.eval.vocab_size = 64;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.split_ratio = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Io, DatasetRoundTrip) {
  const auto dir = scratch_dir("ds");
  ExperimentConfig c;
  c.data.episodes = 100;
  c.eval.episodes = 10;
  const auto d = make_datasets(c);
  EXPECT_EQ(d.sft.episodes.size(), 80u);
  EXPECT_EQ(d.rl.episodes.size(), 20u);
  EXPECT_EQ(d.eval.episodes.size(), 10u);
  save_dataset(dir / "rl.jsonl", d.rl);
  const auto back = load_dataset(dir / "rl.jsonl");
  EXPECT_EQ(back.episodes, d.rl.episodes);
  EXPECT_EQ(back.spec, d.rl.spec);
  EXPECT_EQ(back.split, "rl");
  EXPECT_FALSE(fs::exists(dir / "rl.jsonl.tmp"));
  fs::remove_all(dir);
}

TEST(Io, DatasetValidation) {
  ExperimentConfig c;
  c.data.episodes = 5;
  const auto d = make_datasets(c);
  auto text = dataset_to_jsonl(d.sft);
  EXPECT_NO_THROW(dataset_from_jsonl(text));
  EXPECT_THROW(dataset_from_jsonl(""), std::runtime_error);
  EXPECT_THROW(dataset_from_jsonl("{\"format\":\"other\"}\n"), std::runtime_error);
  // Drop the last episode: the header count no longer matches.
  auto cut = text.substr(0, text.rfind('\n', text.size() - 2) + 1);
  EXPECT_THROW(dataset_from_jsonl(cut), std::runtime_error);
  EXPECT_THROW(load_dataset("/nonexistent/rsgrpo.jsonl"), std::runtime_error);
}

TEST(Io, CheckpointRoundTrip) {
  const auto dir = scratch_dir("ckpt");
  const Vocabulary v = Vocabulary::standard(48);
  FeatureConfig fc;
  Checkpoint c{fc, v, GrammarKind::ThinkThenAnswer, PolicyParams(fc.dimension(), 0.25)};
  save_checkpoint(dir / "a.json", c);
  const auto back = load_checkpoint(dir / "a.json");
  EXPECT_EQ(back.theta, c.theta);
  EXPECT_EQ(back.grammar, GrammarKind::ThinkThenAnswer);
  atomic_write(dir / "bad.json", "{}");
  EXPECT_ANY_THROW(load_checkpoint(dir / "bad.json"));
  fs::remove_all(dir);
}

TEST(Experiment, AblationCsvAndSummary) {
  std::vector<AblationRow> rows{{"rs-grpo", 1, 0.5, 0.5, 0.7, 0.75, 10}, {"rs-grpo", 2, 0.5, 0.5, 0.9, 0.95, 10},
                                {"answer-only", 1, 0.5, 0.5, 0.3, 0.3, 10}};
  const auto csv = ablation_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "mode,seed,post_sft_acc,post_sft_f1,eval_acc,eval_f1,rl_episodes");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  const auto s = summarize_ablation(rows);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].mode, "rs-grpo");
  EXPECT_EQ(s[0].runs, 2);
  EXPECT_DOUBLE_EQ(s[0].eval_f1, 0.85);
  EXPECT_EQ(ablation_modes().size(), 4u);
}
