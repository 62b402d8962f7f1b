#pragma once

// Occlusion masks over [V, T] and their application by zeroing.
//
// Spec grammar (one flat string):
//   none | parts:<scene> | temporal:<portion>:<random|middle>
//        | randomframe:<portion> | periodic:<period>

#include <cstdint>
#include <string>
#include <vector>

#include "partsmamba/skeleton_tables.hpp"
#include "partsmamba/tensor.hpp"

namespace partsmamba {

/// Raised for occlusion specs outside the grammar.
class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

extern const char* const kOcclusionGrammar;

struct OcclusionMask {
  std::size_t joints = 0;
  std::size_t frames = 0;
  std::vector<std::uint8_t> visible;  // [V, T] row-major, 1 = visible

  OcclusionMask() = default;
  OcclusionMask(std::size_t v, std::size_t t, bool fill = true)
      : joints(v), frames(t), visible(v * t, fill ? 1 : 0) {}

  bool at(std::size_t v, std::size_t t) const { return visible[v * frames + t] != 0; }
  void set(std::size_t v, std::size_t t, bool vis) { visible[v * frames + t] = vis ? 1 : 0; }
  std::size_t hidden_count() const;
  bool all_visible() const { return hidden_count() == 0; }
  /// Frames with every joint hidden.
  std::vector<std::size_t> hidden_frames() const;

  friend bool operator==(const OcclusionMask&, const OcclusionMask&) = default;
};

OcclusionMask mask_intersection(const OcclusionMask& a, const OcclusionMask& b);

OcclusionMask mask_parts(const std::string& scene, const OcclusionTable& table, std::size_t v,
                         std::size_t t);

enum class TemporalStart { Random, Middle };
OcclusionMask mask_temporal(double portion, TemporalStart mode, std::size_t v, std::size_t t,
                            std::uint64_t seed);
OcclusionMask mask_random_frames(double portion, std::size_t v, std::size_t t,
                                 std::uint64_t seed);
OcclusionMask mask_periodic(std::size_t period, std::size_t v, std::size_t t);

/// Zeroes all three coordinates of every hidden (joint, frame).
Tensor apply_mask(const Tensor& x, const OcclusionMask& mask);

struct OcclusionSpec {
  enum class Kind { None, Parts, Temporal, RandomFrame, Periodic };
  Kind kind = Kind::None;
  std::string scene;
  double portion = 0.0;
  TemporalStart start = TemporalStart::Middle;
  std::size_t period = 0;

  /// True when the generated mask depends on the seed.
  bool seeded() const;
  std::string to_string() const;
};

/// Throws SpecError with the grammar on malformed input.
OcclusionSpec parse_occlusion_spec(const std::string& text);

OcclusionMask make_mask(const OcclusionSpec& spec, const OcclusionTable& table, std::size_t v,
                        std::size_t t, std::uint64_t seed);

/// Header `occlusion <spec> seed <n> joints <V> frames <T> format 1`, then V
/// lines of T 0/1 characters.
std::string format_mask(const OcclusionMask& mask, const std::string& spec, std::uint64_t seed);

/// Deterministic per-draw seed from a base seed and up to three counters.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);

}  // namespace partsmamba
