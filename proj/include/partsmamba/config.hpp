#pragma once

// Model and training configuration, loaded from flat `key = value` files.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "partsmamba/skeleton_tables.hpp"
#include "partsmamba/temporal.hpp"

namespace partsmamba {

enum class DType { F32, F64 };
std::string dtype_name(DType d);
DType parse_dtype(const std::string& s);

enum class SectionGrouping { Contiguous, Parts };

struct ModelConfig {
  std::size_t joints = 25;          // V
  std::size_t window = 64;          // T
  std::size_t channels = 64;        // C
  std::size_t inner_channels = 0;   // C'; 0 means C / 2
  std::size_t state_size = 8;       // S
  std::size_t blocks = 2;           // K
  std::size_t sections = 5;         // N
  std::size_t num_classes = 4;
  std::size_t scan_chunk = 16;
  std::string partition;            // empty: built-in NTU-25 table
  std::string adjacency;            // empty: built-in NTU-25 bones
  std::string occlusion_table;      // empty: built-in NTU-25 scenes
  std::uint64_t seed = 0;
  DType dtype = DType::F32;
  bool tie_gate_projection = false;
  bool tie_direction_weights = false;
  SectionGrouping grouping = SectionGrouping::Contiguous;

  std::size_t inner() const { return inner_channels ? inner_channels : channels / 2; }
  /// Throws ConfigError on inconsistent values.
  void validate() const;
};

enum class Optimizer { Adam, Sgd };

struct TrainConfig {
  std::size_t epochs_gcn = 20;
  std::size_t epochs_hybrid = 200;
  std::size_t batch_size = 16;
  Optimizer optimizer = Optimizer::Adam;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  /// Stage 2 stops once training accuracy reaches this value; above 1
  /// disables early stopping.
  double stop_accuracy = 2.0;
  std::size_t threads = 1;
  bool record_time = false;
};

struct RunSettings {
  ModelConfig model;
  TrainConfig train;
};

/// Parses `key = value` lines (`#` comments). Every key has a default;
/// unknown keys and malformed values raise ConfigError.
RunSettings parse_settings(const std::string& text);
RunSettings load_settings(const std::filesystem::path& path);

/// Model keys only, in a fixed order.
std::map<std::string, std::string> model_config_entries(const ModelConfig& c);
ModelConfig model_config_from_entries(const std::map<std::string, std::string>& entries);
std::string settings_to_text(const RunSettings& s);

/// Skeleton tables resolved from a configuration.
struct SkeletonSpec {
  PartPartition partition;
  SkeletonGraph graph;
  OcclusionTable occlusion;
};

/// Loads the configured table files, falling back to the built-in NTU-25
/// tables when a path is empty and V = 25.
SkeletonSpec load_skeleton(const ModelConfig& c);

}  // namespace partsmamba
