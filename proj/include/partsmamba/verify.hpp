#pragma once

// The self-check suite behind `partsmamba check`: oracle comparisons,
// gradient checks, locality and causality probes, and round-trips.

#include <cstdint>
#include <string>
#include <vector>

#include "partsmamba/config.hpp"
#include "partsmamba/skeleton_tables.hpp"

namespace partsmamba {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// The micro configuration used for end-to-end gradient checks:
/// V=6, T=4, C=8, C'=4, S=2, K=1, N=2, f64, a chain graph and two parts of
/// three joints.
struct MicroSetup {
  ModelConfig config;
  PartPartition partition;
  SkeletonGraph graph;
};
MicroSetup micro_setup(std::uint64_t seed = 0);

std::vector<CheckResult> run_checks(std::uint64_t seed);
std::string format_report(const std::vector<CheckResult>& results);

}  // namespace partsmamba
