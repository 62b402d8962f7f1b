#include "partsmamba/skeleton_tables.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace partsmamba {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::ifstream open_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

void check_range(const std::vector<JointSet>& sets, std::size_t joints, const char* what) {
  for (const auto& s : sets) {
    for (auto j : s.joints) {
      if (j >= joints) {
        throw std::invalid_argument(std::string(what) + " '" + s.name + "' names joint " +
                                    std::to_string(j) + " but the skeleton has " +
                                    std::to_string(joints) + " joints");
      }
    }
  }
}

}  // namespace

std::vector<JointSet> parse_joint_sets(std::istream& in) {
  std::vector<JointSet> sets;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw ParseError("expected '<name>: <joint ids>'", lineno);
    JointSet set;
    set.name = trim(line.substr(0, colon));
    if (set.name.empty()) throw ParseError("empty set name", lineno);
    for (const auto& s : sets) {
      if (s.name == set.name) throw ParseError("duplicate set name '" + set.name + "'", lineno);
    }
    std::istringstream ids(line.substr(colon + 1));
    std::string tok;
    while (ids >> tok) {
      std::size_t pos = 0;
      long long v = -1;
      try {
        v = std::stoll(tok, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != tok.size() || v < 0) throw ParseError("bad joint id '" + tok + "'", lineno);
      set.joints.push_back(static_cast<std::size_t>(v));
    }
    if (set.joints.empty()) throw ParseError("set '" + set.name + "' lists no joints", lineno);
    sets.push_back(std::move(set));
  }
  return sets;
}

std::string format_joint_sets(const std::vector<JointSet>& sets) {
  std::ostringstream os;
  for (const auto& s : sets) {
    os << s.name << ':';
    for (auto j : s.joints) os << ' ' << j;
    os << '\n';
  }
  return os.str();
}

PartPartition::PartPartition(std::vector<JointSet> parts, std::size_t joints)
    : parts_(std::move(parts)), joints_(joints), owner_(joints, joints) {
  if (parts_.empty()) throw std::invalid_argument("partition has no parts");
  check_range(parts_, joints_, "part");
  for (std::size_t p = 0; p < parts_.size(); ++p) {
    if (parts_[p].joints.empty()) {
      throw std::invalid_argument("part '" + parts_[p].name + "' is empty");
    }
    for (auto j : parts_[p].joints) {
      if (owner_[j] != joints_) {
        throw std::invalid_argument("joint " + std::to_string(j) + " appears in both '" +
                                    parts_[owner_[j]].name + "' and '" + parts_[p].name + "'");
      }
      owner_[j] = p;
    }
  }
  for (std::size_t j = 0; j < joints_; ++j) {
    if (owner_[j] == joints_) {
      throw std::invalid_argument("joint " + std::to_string(j) + " belongs to no part");
    }
  }
}

PartPartition PartPartition::parse(std::istream& in, std::size_t joints) {
  return PartPartition(parse_joint_sets(in), joints);
}

PartPartition PartPartition::load(const std::filesystem::path& path, std::size_t joints) {
  auto in = open_table(path);
  return parse(in, joints);
}

PartPartition PartPartition::ntu25() {
  std::istringstream in(ntu25_parts_text());
  return parse(in, 25);
}

PartPartition PartPartition::whole_body(std::size_t joints) {
  JointSet all{"body", {}};
  for (std::size_t j = 0; j < joints; ++j) all.joints.push_back(j);
  return PartPartition({std::move(all)}, joints);
}

std::vector<std::size_t> PartPartition::scan_order() const {
  std::vector<std::size_t> order;
  for (const auto& p : parts_) order.insert(order.end(), p.joints.begin(), p.joints.end());
  return order;
}

SkeletonGraph::SkeletonGraph(std::vector<std::pair<std::size_t, std::size_t>> edges,
                             std::size_t joints)
    : edges_(std::move(edges)), joints_(joints) {
  if (joints_ == 0) throw std::invalid_argument("skeleton has no joints");
  for (const auto& [a, b] : edges_) {
    if (a >= joints_ || b >= joints_) {
      throw std::invalid_argument("edge " + std::to_string(a) + "-" + std::to_string(b) +
                                  " out of range for " + std::to_string(joints_) + " joints");
    }
  }
}

SkeletonGraph SkeletonGraph::parse(std::istream& in, std::size_t joints) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    long long a = -1, b = -1;
    std::string extra;
    if (!(ls >> a >> b) || (ls >> extra) || a < 0 || b < 0) {
      throw ParseError("expected '<joint_id> <joint_id>'", lineno);
    }
    edges.emplace_back(static_cast<std::size_t>(a), static_cast<std::size_t>(b));
  }
  return SkeletonGraph(std::move(edges), joints);
}

SkeletonGraph SkeletonGraph::load(const std::filesystem::path& path, std::size_t joints) {
  auto in = open_table(path);
  return parse(in, joints);
}

SkeletonGraph SkeletonGraph::ntu25() {
  std::istringstream in(ntu25_edges_text());
  return parse(in, 25);
}

SkeletonGraph SkeletonGraph::chain(std::size_t joints) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t j = 1; j < joints; ++j) edges.emplace_back(j - 1, j);
  return SkeletonGraph(std::move(edges), joints);
}

std::string SkeletonGraph::to_text() const {
  std::ostringstream os;
  for (const auto& [a, b] : edges_) os << a << ' ' << b << '\n';
  return os.str();
}

Tensor SkeletonGraph::adjacency_with_self_loops() const {
  Tensor a = Tensor::identity(joints_);
  for (const auto& [u, v] : edges_) {
    a.at(u, v) = 1.0;
    a.at(v, u) = 1.0;
  }
  return a;
}

Tensor SkeletonGraph::symmetric_normalized() const {
  Tensor a = adjacency_with_self_loops();
  std::vector<double> inv_sqrt(joints_);
  for (std::size_t i = 0; i < joints_; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < joints_; ++j) deg += a.at(i, j);
    inv_sqrt[i] = 1.0 / std::sqrt(deg);
  }
  for (std::size_t i = 0; i < joints_; ++i) {
    for (std::size_t j = 0; j < joints_; ++j) a.at(i, j) *= inv_sqrt[i] * inv_sqrt[j];
  }
  return a;
}

Tensor SkeletonGraph::row_normalized() const {
  Tensor a = adjacency_with_self_loops();
  for (std::size_t i = 0; i < joints_; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < joints_; ++j) deg += a.at(i, j);
    for (std::size_t j = 0; j < joints_; ++j) a.at(i, j) /= deg;
  }
  return a;
}

OcclusionTable::OcclusionTable(std::vector<JointSet> scenes, std::size_t joints)
    : scenes_(std::move(scenes)), joints_(joints) {
  check_range(scenes_, joints_, "occlusion scene");
}

OcclusionTable OcclusionTable::parse(std::istream& in, std::size_t joints) {
  return OcclusionTable(parse_joint_sets(in), joints);
}

OcclusionTable OcclusionTable::load(const std::filesystem::path& path, std::size_t joints) {
  auto in = open_table(path);
  return parse(in, joints);
}

OcclusionTable OcclusionTable::ntu25() {
  std::istringstream in(ntu25_occlusion_text());
  return parse(in, 25);
}

bool OcclusionTable::has_scene(const std::string& name) const {
  return std::any_of(scenes_.begin(), scenes_.end(),
                     [&](const JointSet& s) { return s.name == name; });
}

const JointSet& OcclusionTable::scene(const std::string& name) const {
  for (const auto& s : scenes_) {
    if (s.name == name) return s;
  }
  throw std::invalid_argument("unknown occlusion scene '" + name + "'");
}

const char* ntu25_parts_text() {
  return R"TABLE(# NTU RGB+D 25-joint body partition for part-wise scanning.
# One part per line, joints 0-based, listed proximal -> distal (scan order).
trunk: 0 1 20 2 3
left_arm: 4 5 6 7 21 22
right_arm: 8 9 10 11 23 24
left_leg: 12 13 14 15
right_leg: 16 17 18 19
)TABLE";
}

const char* ntu25_edges_text() {
  return R"TABLE(# NTU RGB+D 25-joint bone list, 0-based joint ids, one bone per line.
0 1
1 20
2 20
3 2
4 20
5 4
6 5
7 6
8 20
9 8
10 9
11 10
12 0
13 12
14 13
15 14
16 0
17 16
18 17
19 18
21 22
22 7
23 24
24 11
)TABLE";
}

const char* ntu25_occlusion_text() {
  return R"TABLE(# Part-occlusion scenes for the NTU RGB+D 25-joint skeleton, 0-based ids.
# Scene membership follows the part-occlusion protocol of RA-GCN (Song et
# al., "Richly Activated Graph Convolutional Network for Robust
# Skeleton-based Action Recognition"); joint ids reconstructed from the
# NTU joint naming, not copied from a published table.
left_arm: 4 5 6 7 21 22
right_arm: 8 9 10 11 23 24
two_hands: 6 7 21 22 10 11 23 24
two_legs: 12 13 14 15 16 17 18 19
trunk: 0 1 2 3 20
)TABLE";
}

}  // namespace partsmamba
