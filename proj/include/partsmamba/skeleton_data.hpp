#pragma once

// Skeleton clips: NTU `.skeleton` parsing, the native one-record-per-line
// dataset format, window sampling and the synthetic desk dataset.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "partsmamba/skeleton_tables.hpp"
#include "partsmamba/tensor.hpp"

namespace partsmamba {

struct SkeletonClip {
  Tensor joints;  // [V, F, 3], meters
  int label = -1;
  std::string source;

  std::size_t joint_count() const { return joints.extent(0); }
  std::size_t frame_count() const { return joints.extent(1); }
};

/// Raised for structurally valid files the parser does not handle
/// (joint counts other than 25).
class UnsupportedFormat : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kNtuJoints = 25;

/// Reads one NTU `.skeleton` stream and keeps the body with the largest
/// motion energy. The label comes from the `Axxx` code in `source`
/// (0-based), or -1 when absent.
SkeletonClip parse_ntu_skeleton(std::istream& in, const std::string& source);
SkeletonClip load_ntu_skeleton(const std::filesystem::path& path);

/// One body per frame, written in the NTU layout with placeholder values
/// for everything except x, y, z.
struct NtuBody {
  std::uint64_t id;
  Tensor joints;  // [25, F, 3]; frames where the body is absent are skipped
  std::vector<bool> present;
};
void write_ntu_skeleton(std::ostream& out, const std::vector<NtuBody>& bodies,
                        std::size_t frames);

/// Sum over frames of the per-joint displacement norms.
double motion_energy(const Tensor& joints);

/// Frame index i of the window maps to floor(i·F/T) when F >= T and to
/// i mod F otherwise.
std::vector<std::size_t> window_indices(std::size_t frames, std::size_t window);
Tensor sample_window(const SkeletonClip& clip, std::size_t window);

/// Native dataset format: one record per line, `label V F` followed by the
/// V·F·3 coordinates in [V, F, 3] row-major order.
void write_dataset(std::ostream& out, const std::vector<SkeletonClip>& clips);
std::vector<SkeletonClip> read_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const std::vector<SkeletonClip>& clips);
std::vector<SkeletonClip> load_dataset(const std::filesystem::path& path);

/// Synthetic NTU-25 clips: every class oscillates its own pair of limbs at
/// a class-specific frequency and phase on top of a rest pose.
struct SynthSpec {
  double noise = 0.01;
  double amplitude = 0.2;
  std::size_t min_frames = 48;
  std::size_t max_frames = 96;
};
std::vector<SkeletonClip> synth_dataset(std::size_t classes, std::size_t samples_per_class,
                                        std::uint64_t seed, const SynthSpec& spec = {});

/// Noise-free mean trajectory of a class, [25, frames, 3].
Tensor synth_class_mean(std::size_t cls, std::size_t frames, const SynthSpec& spec = {});

/// Limb (partition part index, 1..4) driven primarily and secondarily by a class.
std::pair<std::size_t, std::size_t> synth_class_limbs(std::size_t cls);

}  // namespace partsmamba
