#pragma once

// Selective state-space scan: input-dependent discretization, a sequential
// reference recurrence, a chunked associative scan, and the bidirectional
// composition used by the spatial scans.

#include <cstddef>
#include <string>

#include "partsmamba/autograd.hpp"

namespace partsmamba {

/// Per-channel parameters of one selective SSM (one scan direction).
///
/// The state matrix is diagonal, A = -exp(a_log), so every entry is
/// strictly negative. The step size is Δ = softplus(w_delta * x + delta_bias)
/// per channel, B_t = x_t * w_b and C_t = x_t * w_c.
struct SsmParams {
  Tensor a_log;       // [C, S]
  Tensor w_delta;     // [C, 1]
  Tensor delta_bias;  // [C]
  Tensor w_b;         // [C, S]
  Tensor w_c;         // [C, S]
  Tensor d_skip;      // [C]

  std::size_t channels() const { return a_log.extent(0); }
  std::size_t state_size() const { return a_log.extent(1); }
  void validate() const;
  Tensor state_matrix() const;

  /// Seeded initialization: a_log = log(1..S) per channel, projections
  /// uniform in ±sqrt(1/fan_in), softplus(delta_bias) log-uniform in
  /// [1e-3, 1e-1], d_skip = 1.
  static SsmParams init(std::size_t channels, std::size_t state_size, Rng& rng);
};

/// The input-dependent quantities of a scan over x[L, C].
struct Selection {
  Tensor delta;  // [L, C]
  Tensor b;      // [L, S]
  Tensor c;      // [L, S]
};

struct Discretized {
  Tensor a_bar;  // [L, C, S]
  Tensor b_bar;  // [L, C, S]
};

double softplus(double z);

Selection select(const Tensor& x, const SsmParams& p);

/// a_bar = exp(Δ·A) (exact), b_bar = Δ·B (Euler). Throws std::domain_error
/// on any non-positive Δ.
Discretized discretize(const Tensor& delta, const Tensor& a, const Tensor& b_t);

/// Recurrence h_t = a_bar_t ⊙ h_{t-1} + b_bar_t ⊙ x_t from h_0 = 0 with
/// readout y_t = C_t · h_t + D ⊙ x_t, for a fixed selection.
Tensor scan_sequential(const Tensor& x, const Selection& sel, const SsmParams& p);
/// Same recurrence evaluated with the associative combine
/// (a2, b2) ∘ (a1, b1) = (a2·a1, a2·b1 + b2) inside chunks of `chunk`
/// steps, then a carried prefix state across chunks.
Tensor scan_chunked(const Tensor& x, const Selection& sel, const SsmParams& p, std::size_t chunk);

Tensor selective_scan_seq(const Tensor& x, const SsmParams& p);
Tensor selective_scan_parallel(const Tensor& x, const SsmParams& p, std::size_t chunk);
/// scan(x, fwd) + reverse(scan(reverse(x), bwd)). `chunk` = 0 uses the
/// sequential recurrence.
Tensor bidirectional_scan(const Tensor& x, const SsmParams& fwd, const SsmParams& bwd,
                          std::size_t chunk = 0);

/// Test-only mutation switch: flips the sign of the input term inside the
/// chunk combine so the equivalence checks have something to catch.
void set_scan_fault_injection(bool enabled);
bool scan_fault_injection();

// ---------------------------------------------------------------------------
// Model-facing layer
// ---------------------------------------------------------------------------

/// An SSM whose parameters live in a ParamStore.
struct SsmLayer {
  Param* a_log = nullptr;
  Param* w_delta = nullptr;
  Param* delta_bias = nullptr;
  Param* w_b = nullptr;
  Param* w_c = nullptr;
  Param* d_skip = nullptr;

  static SsmLayer create(ParamStore& store, const std::string& prefix, std::size_t channels,
                         std::size_t state_size, Rng& rng);
  SsmParams values() const;
};

/// Tape handles for one SSM's parameters.
struct SsmVars {
  Var a_log, w_delta, delta_bias, w_b, w_c, d_skip;

  static SsmVars bind(Tape& tape, const SsmLayer& layer);
  static SsmVars constants(Tape& tape, const SsmParams& p);
  static SsmVars leaves(Tape& tape, const SsmParams& p);
};

/// Forward and backward directions. With tied weights both members point
/// at the same parameters.
struct BiSsmLayer {
  SsmLayer fwd;
  SsmLayer bwd;

  static BiSsmLayer create(ParamStore& store, const std::string& prefix, std::size_t channels,
                           std::size_t state_size, bool tied, Rng& rng);
};

/// Differentiable selective scan over a batch of independent sequences
/// x[B, L, C] sharing one parameter set. Uses the chunked kernel.
Var selective_scan(Var x, const SsmVars& p, std::size_t chunk);

/// Differentiable bidirectional scan over axis 1 of x[B, L, C]. The
/// backward stream is re-reversed before the sum so positions align.
Var bidirectional_scan(Var x, const SsmVars& fwd, const SsmVars& bwd, std::size_t chunk);

}  // namespace partsmamba
