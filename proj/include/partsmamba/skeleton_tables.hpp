#pragma once

// Text tables describing a skeleton: the scan partition, the bone list and
// the occlusion scenes. Built-in copies of the NTU 25-joint tables ship
// alongside the files in data/.

#include <cstddef>
#include <filesystem>
#include <istream>
#include <string>
#include <utility>
#include <vector>

#include "partsmamba/tensor.hpp"

namespace partsmamba {

/// Raised for malformed table or data files; carries the line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct JointSet {
  std::string name;
  std::vector<std::size_t> joints;
};

/// Parses `<name>: <id> <id> ...` lines; `#` starts a comment.
std::vector<JointSet> parse_joint_sets(std::istream& in);
std::string format_joint_sets(const std::vector<JointSet>& sets);

/// Disjoint joint subsets covering 0..V-1, each listed in its intra-part
/// scan order.
class PartPartition {
 public:
  PartPartition(std::vector<JointSet> parts, std::size_t joints);

  static PartPartition parse(std::istream& in, std::size_t joints);
  static PartPartition load(const std::filesystem::path& path, std::size_t joints);
  static PartPartition ntu25();
  /// One part holding every joint in index order.
  static PartPartition whole_body(std::size_t joints);

  const std::vector<JointSet>& parts() const { return parts_; }
  std::size_t joints() const { return joints_; }
  std::size_t part_of(std::size_t joint) const { return owner_.at(joint); }
  /// Concatenation of all parts' joint lists.
  std::vector<std::size_t> scan_order() const;
  std::string to_text() const { return format_joint_sets(parts_); }

 private:
  std::vector<JointSet> parts_;
  std::size_t joints_;
  std::vector<std::size_t> owner_;
};

/// Undirected bone list over V joints.
class SkeletonGraph {
 public:
  SkeletonGraph(std::vector<std::pair<std::size_t, std::size_t>> edges, std::size_t joints);

  static SkeletonGraph parse(std::istream& in, std::size_t joints);
  static SkeletonGraph load(const std::filesystem::path& path, std::size_t joints);
  static SkeletonGraph ntu25();
  /// 0-1-2-...-(V-1).
  static SkeletonGraph chain(std::size_t joints);

  std::size_t joints() const { return joints_; }
  const std::vector<std::pair<std::size_t, std::size_t>>& edges() const { return edges_; }
  std::string to_text() const;

  /// A + I.
  Tensor adjacency_with_self_loops() const;
  /// D^-1/2 (A + I) D^-1/2.
  Tensor symmetric_normalized() const;
  /// D^-1 (A + I); rows sum to one.
  Tensor row_normalized() const;

 private:
  std::vector<std::pair<std::size_t, std::size_t>> edges_;
  std::size_t joints_;
};

/// Named joint sets zeroed by the part-occlusion scenes.
class OcclusionTable {
 public:
  OcclusionTable(std::vector<JointSet> scenes, std::size_t joints);

  static OcclusionTable parse(std::istream& in, std::size_t joints);
  static OcclusionTable load(const std::filesystem::path& path, std::size_t joints);
  static OcclusionTable ntu25();

  const std::vector<JointSet>& scenes() const { return scenes_; }
  const JointSet& scene(const std::string& name) const;
  bool has_scene(const std::string& name) const;
  std::size_t joints() const { return joints_; }
  std::string to_text() const { return format_joint_sets(scenes_); }

 private:
  std::vector<JointSet> scenes_;
  std::size_t joints_;
};

// Contents of data/ntu25.parts, data/ntu25.edges and data/ntu25.occlusion.
const char* ntu25_parts_text();
const char* ntu25_edges_text();
const char* ntu25_occlusion_text();

}  // namespace partsmamba
