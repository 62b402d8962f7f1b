#pragma once

// The full network: graph-convolution head, K spatial-temporal blocks and a
// mean-pool classifier, plus an analytic FLOP estimate.

#include <cstdint>
#include <vector>

#include "partsmamba/autograd.hpp"
#include "partsmamba/config.hpp"
#include "partsmamba/graph_fusion.hpp"
#include "partsmamba/parts_scanning.hpp"
#include "partsmamba/ssm.hpp"
#include "partsmamba/temporal.hpp"

namespace partsmamba {

/// Fixed two-layer spatial graph convolution (row-normalized Â·X·W, ReLU
/// after each) followed by a width-5 depthwise temporal convolution and a
/// ReLU.
struct GcnHead {
  static constexpr std::size_t kTemporalWidth = 5;

  Tensor adjacency;  // row-normalized, not learned
  Param* w1 = nullptr;
  Param* w2 = nullptr;
  Param* temporal = nullptr;

  Var apply(Tape& tape, Var x) const;
};

struct SpatialFusionBlock {
  NormedProjection proj_parts;
  NormedProjection proj_body;
  NormedProjection proj_gate;
  std::vector<BiSsmLayer> part_ssms;
  Param* mix = nullptr;
  BiSsmLayer body_ssm;
  TopologyLayer topo_parts;
  TopologyLayer topo_body;
  Param* w_f = nullptr;

  Var apply(Tape& tape, Var x, const PartPartition& partition, std::size_t chunk,
            const FusionProbe& probe = {}) const;
};

struct ForwardProbe {
  FusionProbe fusion;
};

class Model {
 public:
  Model(ModelConfig config, PartPartition partition, SkeletonGraph graph);

  const ModelConfig& config() const { return config_; }
  const PartPartition& partition() const { return partition_; }
  const SkeletonGraph& graph() const { return graph_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// clip [V, T, 3] -> logits [num_classes].
  Var forward(Tape& tape, const Tensor& clip, const ForwardProbe& probe = {}) const;
  /// Same pipeline stopped before pooling, [V, T, C].
  Var features(Tape& tape, Var clip, const ForwardProbe& probe = {}) const;
  Tensor logits(const Tensor& clip) const;

  const GcnHead& head() const { return head_; }
  const SpatialFusionBlock& spatial_block(std::size_t k) const { return spatial_.at(k); }
  const TemporalLayer& temporal_block(std::size_t k) const { return temporal_.at(k); }

  /// Rounds every parameter to the configured storage precision.
  void round_to_dtype();
  /// Copies every parameter whose name also exists in `other`.
  std::size_t copy_matching(const Model& other);

 private:
  ModelConfig config_;
  PartPartition partition_;
  SkeletonGraph graph_;
  ParamStore params_;
  GcnHead head_;
  std::vector<SpatialFusionBlock> spatial_;
  std::vector<TemporalLayer> temporal_;
  Param* classifier_ = nullptr;
};

/// Multiply-add counts per component; elementwise operations count one
/// each. Every term except the classifier weights scales linearly in T.
struct FlopCount {
  std::uint64_t head = 0;
  std::uint64_t spatial = 0;
  std::uint64_t temporal = 0;
  std::uint64_t classifier = 0;

  std::uint64_t total() const { return head + spatial + temporal + classifier; }
};

FlopCount flops_estimate(const ModelConfig& config);

/// Per-position cost of one directional selective scan with C channels
/// and S states: B/C/Δ selection, discretization, the 2·S·C state update
/// and the readout.
std::uint64_t scan_step_flops(std::uint64_t channels, std::uint64_t state_size);

}  // namespace partsmamba
