#pragma once

// Graph-aware aggregation of the scan outputs and the gated fusion that
// combines parts, body, graph and gate streams.

#include <string>

#include "partsmamba/autograd.hpp"

namespace partsmamba {

/// alpha · (A · x) + x, where (A · x)[v] = sum_u A[v, u] x[u]. Exposed
/// separately so tests can inspect the value before normalization.
Var topology_preactivation(Var x, Var a, Var alpha);

/// layer_norm(alpha · (A · x) + x).
Var topology_aggregate(Var x, Var a, Var alpha, Var gamma, Var beta);

/// Learnable V×V topology with its impact ratio and output normalization.
struct TopologyLayer {
  Param* a = nullptr;      // [V, V]
  Param* alpha = nullptr;  // [1]
  Param* gamma = nullptr;  // [C']
  Param* beta = nullptr;   // [C']

  /// `a` starts at `init`, alpha at 0.
  static TopologyLayer create(ParamStore& store, const std::string& prefix, const Tensor& init,
                              std::size_t channels);
  Var apply(Tape& tape, Var x) const;
};

struct FusionInputs {
  Var x_p;        // parts scan output
  Var x_s;        // body scan output
  Var x_p_graph;  // graph-aware parts stream
  Var x_s_graph;  // graph-aware body stream
  Var x_g;        // gate
};

/// Test probe: keep only the x_p ⊙ x_g term.
struct FusionProbe {
  bool parts_gate_only = false;
};

/// F_self = x_p⊙x_g + x_s⊙x_g, F_cross = x_p'⊙x_s + x_p⊙x_s',
/// F = (F_self + F_cross) · W_f.
Var gated_fusion(const FusionInputs& in, Var w_f, const FusionProbe& probe = {});

}  // namespace partsmamba
