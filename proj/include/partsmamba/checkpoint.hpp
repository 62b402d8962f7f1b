#pragma once

// Checkpoint container: a plain-text manifest (format version, stage tag,
// model configuration, skeleton tables, ordered parameter table) followed by
// raw little-endian parameter payloads in manifest order.
//
//   partsmamba-checkpoint 1
//   stage hybrid
//   config <n>
//   <key> = <value>            (n lines)
//   partition <n>
//   <name>: <ids>              (n lines)
//   edges <n>
//   <a> <b>                    (n lines)
//   params <n>
//   <name> <f32|f64> <d0>x<d1>...   (n lines)
//   payload
//   <binary>

#include <filesystem>
#include <iosfwd>
#include <string>

#include "partsmamba/model.hpp"

namespace partsmamba {

inline constexpr int kCheckpointVersion = 1;

struct LoadedCheckpoint {
  Model model;
  std::string stage;  // "gcn" or "hybrid"
};

void write_checkpoint(std::ostream& out, const Model& model, const std::string& stage);
LoadedCheckpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::string& stage);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace partsmamba
