#pragma once

// Spatial scanning over the joints of each frame: three projected streams,
// independent bidirectional SSMs per body part, one over the whole body,
// and the ReLU gate.

#include <cstddef>
#include <string>
#include <vector>

#include "partsmamba/autograd.hpp"
#include "partsmamba/skeleton_tables.hpp"
#include "partsmamba/ssm.hpp"

namespace partsmamba {

/// Linear projection followed by layer normalization.
struct NormedProjection {
  Param* weight = nullptr;  // [C, C']
  Param* gamma = nullptr;   // [C']
  Param* beta = nullptr;    // [C']

  static NormedProjection create(ParamStore& store, const std::string& prefix, std::size_t in,
                                 std::size_t out, Rng& rng);
  /// Shares `weight` with `other` but owns its normalization.
  static NormedProjection sharing_weight(ParamStore& store, const std::string& prefix,
                                         const NormedProjection& other);
  Var apply(Tape& tape, Var x) const;
};

struct SpatialStreams {
  Var x_p;  // parts stream
  Var x_s;  // body stream
  Var x_g;  // gate stream, before the ReLU
};

/// layer_norm(x_gcn · W) for each of the three streams.
SpatialStreams project_streams(Tape& tape, Var x_gcn, const NormedProjection& parts,
                               const NormedProjection& body, const NormedProjection& gate);

/// Scan directions for one part.
struct PartScanVars {
  SsmVars fwd;
  SsmVars bwd;
};

/// For every frame, runs each part's bidirectional SSM over that part's
/// joints in intra-part order, writes the results back to the joints'
/// canonical positions, then mixes channels with a width-1 convolution.
/// x_p is [V, T, C'].
Var part_wise_scan(Var x_p, const PartPartition& partition, const std::vector<PartScanVars>& ssms,
                   Var mix, std::size_t chunk);

/// For every frame, a bidirectional scan over all V joints in canonical
/// order.
Var body_scan(Var x_s, const SsmVars& fwd, const SsmVars& bwd, std::size_t chunk);

Var gate_stream(Var x_g);

/// Uniform(±sqrt(1/fan_in)) initialization for a [fan_in, fan_out] weight.
Tensor init_projection(std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace partsmamba
