#include <map>

#include <gtest/gtest.h>
#include <json.hpp>

#include "partsmamba/occlusion.hpp"
#include "partsmamba/skeleton_data.hpp"
#include "partsmamba/train.hpp"

using namespace partsmamba;

namespace {

RunSettings tiny_settings() {
  RunSettings s = parse_settings(
      "window = 8\nchannels = 8\ninner_channels = 4\nstate_size = 2\nblocks = 1\n"
      "scan_chunk = 4\nepochs_gcn = 2\nepochs_hybrid = 3\nbatch_size = 4\n"
      "learning_rate = 0.003\n");
  return s;
}

std::vector<Sample> tiny_data(const RunSettings& s, std::size_t per_class = 3) {
  return prepare_samples(synth_dataset(4, per_class, 5), s.model);
}

std::vector<std::string> lines_of(const TrainResult& r) {
  std::vector<std::string> out;
  for (const auto& m : r.metrics) out.push_back(metrics_line(m, false));
  return out;
}

}  // namespace

TEST(PrepareSamples, WindowsAndValidates) {
  const RunSettings s = tiny_settings();
  const auto clips = synth_dataset(2, 2, 1);
  const auto samples = prepare_samples(clips, s.model);
  ASSERT_EQ(samples.size(), 4u);
  EXPECT_EQ(samples[0].clip.shape(), (Shape{25, 8, 3}));
  EXPECT_EQ(samples[1].label, static_cast<std::size_t>(clips[1].label));

  auto bad_label = clips;
  bad_label[0].label = 4;
  EXPECT_THROW(prepare_samples(bad_label, s.model), ConfigError);
  bad_label[0].label = -1;
  EXPECT_THROW(prepare_samples(bad_label, s.model), ConfigError);
  SkeletonClip small{Tensor({6, 4, 3}), 0, "six"};
  EXPECT_THROW(prepare_samples({small}, s.model), ConfigError);
}

TEST(Policy, ParseAndName) {
  EXPECT_EQ(parse_policy("none"), OcclusionPolicy::None);
  EXPECT_EQ(parse_policy("parts-masked"), OcclusionPolicy::PartsMasked);
  EXPECT_EQ(policy_name(OcclusionPolicy::PartsMasked), "parts-masked");
  EXPECT_THROW(parse_policy("masked"), SpecError);
}

TEST(Policy, SceneDrawIsUniformOverNoneAndFiveScenes) {
  const OcclusionTable table = OcclusionTable::ntu25();
  std::map<std::string, int> counts;
  const int draws = 6000;
  for (int i = 0; i < draws; ++i) ++counts[draw_training_scene(table, 3, 2, i / 100, i % 100)];
  ASSERT_EQ(counts.size(), 6u);
  EXPECT_TRUE(counts.contains(""));
  for (const auto& [scene, n] : counts) {
    if (!scene.empty()) EXPECT_TRUE(table.has_scene(scene)) << scene;
    EXPECT_NEAR(n, draws / 6, 150) << "'" << scene << "'";
  }
  EXPECT_EQ(draw_training_scene(table, 3, 2, 4, 7), draw_training_scene(table, 3, 2, 4, 7));
}

TEST(Train, EmptyDatasetIsConfigError) {
  const RunSettings s = tiny_settings();
  EXPECT_THROW(train_two_step({}, s, load_skeleton(s.model), OcclusionPolicy::None), ConfigError);
}

TEST(Train, SeededRunsAreIdenticalAcrossThreadCounts) {
  RunSettings s = tiny_settings();
  const auto data = tiny_data(s);
  const SkeletonSpec sk = load_skeleton(s.model);
  const TrainResult a = train_two_step(data, s, sk, OcclusionPolicy::PartsMasked);
  s.train.threads = 3;
  const TrainResult b = train_two_step(data, s, sk, OcclusionPolicy::PartsMasked);
  EXPECT_EQ(lines_of(a), lines_of(b));
  for (std::size_t i = 0; i < a.hybrid.params().size(); ++i) {
    EXPECT_TRUE(bit_identical(a.hybrid.params()[i].value, b.hybrid.params()[i].value))
        << a.hybrid.params()[i].name;
  }
  s.model.seed = 1;
  const TrainResult c = train_two_step(data, s, sk, OcclusionPolicy::PartsMasked);
  EXPECT_NE(lines_of(a), lines_of(c));
}

TEST(Train, StagesAndMetricsRecords) {
  const RunSettings s = tiny_settings();
  std::vector<EpochMetrics> seen;
  const TrainResult r = train_two_step(tiny_data(s), s, load_skeleton(s.model), OcclusionPolicy::None,
                                       [&](const EpochMetrics& m) { seen.push_back(m); });
  ASSERT_EQ(r.metrics.size(), 5u);
  ASSERT_EQ(seen.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(seen[i].stage, i < 2 ? "gcn" : "hybrid");
    EXPECT_EQ(seen[i].masked_samples, 0u);
    EXPECT_EQ(seen[i].occlusion, "none");
    EXPECT_GE(seen[i].accuracy, 0.0);
    EXPECT_LE(seen[i].accuracy, 1.0);
  }
  EXPECT_FALSE(r.gcn.params().contains("block0.spatial.w_f"));
  EXPECT_TRUE(r.hybrid.params().contains("block0.spatial.w_f"));

  const auto j = nlohmann::json::parse(metrics_line(r.metrics[3], false));
  EXPECT_EQ(j["stage"], "hybrid");
  EXPECT_EQ(j["epoch"], 2);
  EXPECT_FALSE(j.contains("seconds"));
  EXPECT_TRUE(nlohmann::json::parse(metrics_line(r.metrics[3], true)).contains("seconds"));
}

TEST(Train, PartsMaskedPolicyMasksSomeSamples) {
  const RunSettings s = tiny_settings();
  const auto data = tiny_data(s, 6);
  const TrainResult r = train_two_step(data, s, load_skeleton(s.model), OcclusionPolicy::PartsMasked);
  std::size_t masked = 0;
  for (const auto& m : r.metrics) {
    EXPECT_LE(m.masked_samples, data.size());
    EXPECT_EQ(m.occlusion, "parts-masked");
    masked += m.masked_samples;
  }
  // About five in six draws carry a scene.
  EXPECT_GT(masked, r.metrics.size() * data.size() / 2);
}

TEST(Train, LossMostlyDecreasesOverFirstTenEpochs) {
  RunSettings s = load_settings(PARTSMAMBA_CONFIG_DIR "/desk.cfg");
  s.train.epochs_hybrid = 10;
  s.train.stop_accuracy = 2.0;
  const auto data = prepare_samples(synth_dataset(4, 50, 0), s.model);
  const TrainResult r = train_two_step(data, s, load_skeleton(s.model), OcclusionPolicy::None);
  std::vector<double> loss;
  for (const auto& m : r.metrics) {
    if (m.stage == "hybrid") loss.push_back(m.loss);
  }
  ASSERT_EQ(loss.size(), 10u);
  int rises = 0;
  for (std::size_t i = 1; i < loss.size(); ++i) rises += loss[i] > loss[i - 1] ? 1 : 0;
  EXPECT_LE(rises, 1);
  EXPECT_LT(loss.back(), loss.front());
}

TEST(Train, StopAccuracyEndsHybridStageEarly) {
  RunSettings s = tiny_settings();
  s.train.epochs_hybrid = 50;
  s.train.stop_accuracy = 0.0;
  const TrainResult r = train_two_step(tiny_data(s), s, load_skeleton(s.model), OcclusionPolicy::None);
  std::size_t hybrid = 0;
  for (const auto& m : r.metrics) hybrid += m.stage == "hybrid";
  EXPECT_EQ(hybrid, 1u);
}

TEST(Evaluate, MaskFunctionAndAccuracyRange) {
  const RunSettings s = tiny_settings();
  const auto data = tiny_data(s);
  const SkeletonSpec sk = load_skeleton(s.model);
  Model m(s.model, sk.partition, sk.graph);
  const EvalResult clean = evaluate(m, data);
  EXPECT_EQ(clean.samples, data.size());
  EXPECT_GE(clean.accuracy, 0.0);
  EXPECT_LE(clean.accuracy, 1.0);
  // Hiding every joint gives every sample the same logits.
  const EvalResult blank = evaluate(m, data, [&](std::size_t) { return OcclusionMask(25, 8, false); });
  const Tensor zero_logits = m.logits(Tensor({25, 8, 3}));
  std::size_t argmax = 0;
  for (std::size_t k = 1; k < 4; ++k) argmax = zero_logits[k] > zero_logits[argmax] ? k : argmax;
  std::size_t hits = 0;
  for (const auto& d : data) hits += d.label == argmax;
  EXPECT_DOUBLE_EQ(blank.accuracy, static_cast<double>(hits) / data.size());
}

TEST(Evaluate, SeededSpecsRepeatFiveTimes) {
  const RunSettings s = tiny_settings();
  const auto data = tiny_data(s);
  const SkeletonSpec sk = load_skeleton(s.model);
  const Model m(s.model, sk.partition, sk.graph);

  const EvalReport det = evaluate_spec(m, data, "parts:trunk", sk.occlusion, 0);
  EXPECT_EQ(det.repetitions.size(), 1u);
  const auto det_lines = metrics_lines(det, "eval");
  ASSERT_EQ(det_lines.size(), 1u);
  const auto dj = nlohmann::json::parse(det_lines[0]);
  EXPECT_EQ(dj["run"], "mean");
  EXPECT_EQ(dj["occlusion"], "parts:trunk");

  const EvalReport rnd = evaluate_spec(m, data, "randomframe:0.5", sk.occlusion, 0);
  ASSERT_EQ(rnd.repetitions.size(), kEvalRepetitions);
  double sum = 0;
  for (const auto& r : rnd.repetitions) sum += r.accuracy;
  EXPECT_NEAR(rnd.mean.accuracy, sum / 5.0, 1e-15);
  const auto lines = metrics_lines(rnd, "eval");
  ASSERT_EQ(lines.size(), 6u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(nlohmann::json::parse(lines[i])["run"], "rep" + std::to_string(i + 1));
  }
  EXPECT_EQ(nlohmann::json::parse(lines[5])["run"], "mean");

  const EvalReport again = evaluate_spec(m, data, "randomframe:0.5", sk.occlusion, 0);
  EXPECT_EQ(metrics_lines(again, "eval"), lines);
  EXPECT_THROW(evaluate_spec(m, data, "bogus", sk.occlusion, 0), SpecError);
}
