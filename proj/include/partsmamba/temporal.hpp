#pragma once

// Unidirectional temporal Mamba block and the sub-frame (spatial-temporal)
// scan ordering.

#include <cstddef>
#include <string>
#include <vector>

#include "partsmamba/autograd.hpp"
#include "partsmamba/ssm.hpp"

namespace partsmamba {

/// Raised for invalid model or run configuration values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flat-index map that turns a [T, V, C] time-major tensor into
/// [T·n, (V/n)·C] scan tokens: frame t contributes n consecutive tokens,
/// token (t, k) holding the joints joint_order[k·V/n .. (k+1)·V/n).
/// An empty `joint_order` means canonical order.
std::vector<std::size_t> st_reorder_indices(std::size_t frames, std::size_t joints,
                                            std::size_t channels, std::size_t sections,
                                            const std::vector<std::size_t>& joint_order = {});

/// x is time-major [T, V, C].
Tensor st_reorder(const Tensor& x, std::size_t sections,
                  const std::vector<std::size_t>& joint_order = {});
/// Inverse of st_reorder; `channels` disambiguates the (V/n)·C token width.
Tensor st_restore(const Tensor& y, std::size_t sections, std::size_t channels,
                  const std::vector<std::size_t>& joint_order = {});

/// Token projections and the SSM of one temporal block.
struct TemporalLayer {
  Param* w_in = nullptr;   // [(V/n)·C, inner]
  Param* w_out = nullptr;  // [inner, (V/n)·C]
  SsmLayer ssm;
  std::size_t sections = 1;
  std::vector<std::size_t> joint_order;

  static TemporalLayer create(ParamStore& store, const std::string& prefix, std::size_t joints,
                              std::size_t channels, std::size_t sections, std::size_t state_size,
                              std::vector<std::size_t> joint_order, Rng& rng);
};

/// x [V, T, C] -> tokens -> inner width -> unidirectional scan -> back to
/// token width -> [V, T, C], plus the block input.
Var temporal_block(Tape& tape, Var x, const TemporalLayer& layer, std::size_t chunk);

}  // namespace partsmamba
