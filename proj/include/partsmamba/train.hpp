#pragma once

// Two-step training (graph-convolution head first, then the full hybrid
// initialized from it), evaluation under occlusion, and metrics records.

#include <functional>
#include <string>
#include <vector>

#include "partsmamba/config.hpp"
#include "partsmamba/model.hpp"
#include "partsmamba/occlusion.hpp"
#include "partsmamba/skeleton_data.hpp"

namespace partsmamba {

/// A window-sampled clip ready for the model.
struct Sample {
  Tensor clip;  // [V, T, 3]
  std::size_t label = 0;
};

/// Samples every clip to the configured window; rejects joint-count and
/// label mismatches.
std::vector<Sample> prepare_samples(const std::vector<SkeletonClip>& clips,
                                    const ModelConfig& config);

enum class OcclusionPolicy { None, PartsMasked };
std::string policy_name(OcclusionPolicy p);
OcclusionPolicy parse_policy(const std::string& s);

struct EpochMetrics {
  std::string stage;  // "gcn" or "hybrid"
  std::size_t epoch = 0;
  std::string occlusion;
  double loss = 0.0;
  double accuracy = 0.0;
  double seconds = 0.0;
  std::size_t masked_samples = 0;
};

struct TrainResult {
  Model gcn;
  Model hybrid;
  std::vector<EpochMetrics> metrics;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Scene drawn for sample `index` of `epoch` under the parts-masked policy:
/// empty for no mask, otherwise an occlusion scene name.
std::string draw_training_scene(const OcclusionTable& table, std::uint64_t seed,
                                std::size_t stage, std::size_t epoch, std::size_t index);

/// Throws ConfigError on an empty dataset and NumericError (with stage,
/// epoch and sample) on a non-finite loss.
TrainResult train_two_step(const std::vector<Sample>& data, const RunSettings& settings,
                           const SkeletonSpec& skeleton, OcclusionPolicy policy,
                           const EpochCallback& on_epoch = {});

/// Trains `model` in place for one stage.
std::vector<EpochMetrics> train_stage(Model& model, const std::vector<Sample>& data,
                                      const TrainConfig& train, std::size_t epochs,
                                      const std::string& stage, const OcclusionTable& table,
                                      OcclusionPolicy policy, const EpochCallback& on_epoch = {});

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
  std::size_t samples = 0;
};

using MaskFn = std::function<OcclusionMask(std::size_t index)>;
EvalResult evaluate(const Model& model, const std::vector<Sample>& data, const MaskFn& mask = {});

struct EvalReport {
  std::string occlusion;
  std::vector<EvalResult> repetitions;  // one entry for deterministic specs
  EvalResult mean;
};

inline constexpr std::size_t kEvalRepetitions = 5;

/// Seeded-random specs draw a fresh mask per sample and repetition and are
/// repeated kEvalRepetitions times; the others run once.
EvalReport evaluate_spec(const Model& model, const std::vector<Sample>& data,
                         const std::string& spec, const OcclusionTable& table,
                         std::uint64_t seed);

/// One JSON object per line. Wall-clock seconds are included only when
/// `with_time` is set so seeded runs stay byte-identical.
std::string metrics_line(const EpochMetrics& m, bool with_time);
std::vector<std::string> metrics_lines(const EvalReport& r, const std::string& split);

}  // namespace partsmamba
