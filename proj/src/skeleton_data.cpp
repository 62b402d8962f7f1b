#include "partsmamba/skeleton_data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <regex>
#include <sstream>

namespace partsmamba {

namespace {

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  std::vector<std::string> tokens(const char* expecting) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_;
      std::istringstream ls(line);
      std::vector<std::string> out;
      for (std::string tok; ls >> tok;) out.push_back(tok);
      if (!out.empty()) return out;
    }
    throw ParseError(std::string("unexpected end of file, expected ") + expecting, line_ + 1);
  }

  long long integer(const char* expecting) {
    const auto tok = tokens(expecting);
    long long v = 0;
    const auto& s = tok.front();
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || tok.size() != 1) {
      throw ParseError(std::string("expected ") + expecting + ", got '" + s + "'", line_);
    }
    return v;
  }

  std::size_t line() const { return line_; }

 private:
  std::istream& in_;
  std::size_t line_ = 0;
};

double to_real(const std::string& s, std::size_t line) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
    throw ParseError("expected a finite real, got '" + s + "'", line);
  }
  return v;
}

int label_from_source(const std::string& source) {
  static const std::regex action("A(\\d{3})");
  const std::string stem = std::filesystem::path(source).filename().string();
  std::smatch m;
  if (!std::regex_search(stem, m, action)) return -1;
  return std::stoi(m[1].str()) - 1;
}

struct Track {
  Tensor joints;
  std::vector<bool> present;
};

}  // namespace

double motion_energy(const Tensor& joints) {
  double e = 0.0;
  for (std::size_t v = 0; v < joints.extent(0); ++v) {
    for (std::size_t t = 1; t < joints.extent(1); ++t) {
      double sq = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        const double d = joints.at(v, t, k) - joints.at(v, t - 1, k);
        sq += d * d;
      }
      e += std::sqrt(sq);
    }
  }
  return e;
}

SkeletonClip parse_ntu_skeleton(std::istream& in, const std::string& source) {
  LineReader r(in);
  const long long frames = r.integer("frame count");
  if (frames <= 0) throw ParseError("frame count must be positive", r.line());
  const auto nf = static_cast<std::size_t>(frames);

  std::map<std::string, Track> tracks;
  std::vector<std::string> order;
  for (std::size_t f = 0; f < nf; ++f) {
    const long long bodies = r.integer("body count");
    if (bodies < 0) throw ParseError("negative body count", r.line());
    for (long long b = 0; b < bodies; ++b) {
      const std::string id = r.tokens("body info line").front();
      const long long nj = r.integer("joint count");
      if (nj != static_cast<long long>(kNtuJoints)) {
        throw UnsupportedFormat("line " + std::to_string(r.line()) + ": joint count " +
                                std::to_string(nj) + " is not supported (expected 25)");
      }
      auto [it, inserted] = tracks.try_emplace(id);
      if (inserted) {
        it->second.joints = Tensor({kNtuJoints, nf, 3});
        it->second.present.assign(nf, false);
        order.push_back(id);
      }
      Track& tr = it->second;
      for (std::size_t j = 0; j < kNtuJoints; ++j) {
        const auto tok = r.tokens("joint line");
        if (tok.size() < 3) throw ParseError("joint line needs at least x y z", r.line());
        for (std::size_t k = 0; k < 3; ++k) tr.joints.at(j, f, k) = to_real(tok[k], r.line());
      }
      tr.present[f] = true;
    }
  }
  if (tracks.empty()) throw ParseError("file contains no bodies", r.line());

  // Energy counts only displacements between consecutive present frames so
  // absent frames (zero-filled) do not look like motion.
  const Track* best = nullptr;
  double best_energy = -1.0;
  for (const auto& id : order) {
    const Track& tr = tracks.at(id);
    double e = 0.0;
    for (std::size_t t = 1; t < nf; ++t) {
      if (!tr.present[t] || !tr.present[t - 1]) continue;
      for (std::size_t v = 0; v < kNtuJoints; ++v) {
        double sq = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
          const double d = tr.joints.at(v, t, k) - tr.joints.at(v, t - 1, k);
          sq += d * d;
        }
        e += std::sqrt(sq);
      }
    }
    if (e > best_energy) {
      best_energy = e;
      best = &tr;
    }
  }
  return SkeletonClip{best->joints, label_from_source(source), source};
}

SkeletonClip load_ntu_skeleton(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_ntu_skeleton(in, path.filename().string());
}

void write_ntu_skeleton(std::ostream& out, const std::vector<NtuBody>& bodies,
                        std::size_t frames) {
  char buf[64];
  auto real = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << frames << '\n';
  for (std::size_t f = 0; f < frames; ++f) {
    std::size_t count = 0;
    for (const auto& b : bodies) count += b.present.at(f) ? 1 : 0;
    out << count << '\n';
    for (const auto& b : bodies) {
      if (!b.present[f]) continue;
      out << b.id << " 0 0 0 0 0 0 0 0 2\n" << kNtuJoints << '\n';
      for (std::size_t j = 0; j < kNtuJoints; ++j) {
        out << real(b.joints.at(j, f, 0)) << ' ' << real(b.joints.at(j, f, 1)) << ' '
            << real(b.joints.at(j, f, 2)) << " 0 0 0 0 0 0 0 0 2\n";
      }
    }
  }
}

std::vector<std::size_t> window_indices(std::size_t frames, std::size_t window) {
  if (frames == 0) throw std::invalid_argument("cannot sample a window from an empty clip");
  if (window == 0) throw std::invalid_argument("window size must be at least 1");
  std::vector<std::size_t> idx(window);
  for (std::size_t i = 0; i < window; ++i) {
    idx[i] = frames >= window ? i * frames / window : i % frames;
  }
  return idx;
}

Tensor sample_window(const SkeletonClip& clip, std::size_t window) {
  if (clip.joints.rank() != 3 || clip.joints.extent(2) != 3) {
    throw ShapeError("clip joints must be [V, F, 3], got " + shape_str(clip.joints.shape()));
  }
  const std::size_t v = clip.joint_count();
  const auto idx = window_indices(clip.frame_count(), window);
  Tensor out({v, window, 3});
  for (std::size_t j = 0; j < v; ++j) {
    for (std::size_t t = 0; t < window; ++t) {
      for (std::size_t k = 0; k < 3; ++k) out.at(j, t, k) = clip.joints.at(j, idx[t], k);
    }
  }
  return out;
}

void write_dataset(std::ostream& out, const std::vector<SkeletonClip>& clips) {
  char buf[32];
  for (const auto& c : clips) {
    out << c.label << ' ' << c.joint_count() << ' ' << c.frame_count();
    for (double v : c.joints.data()) {
      const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
      out << ' ' << std::string_view(buf, static_cast<std::size_t>(p - buf));
    }
    out << '\n';
  }
}

std::vector<SkeletonClip> read_dataset(std::istream& in) {
  std::vector<SkeletonClip> clips;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const char* p = line.data();
    const char* end = p + line.size();
    auto skip = [&] {
      while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
    };
    auto next_int = [&](const char* what) {
      skip();
      long long v = 0;
      const auto [q, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) throw ParseError(std::string("expected ") + what, lineno);
      p = q;
      return v;
    };
    const long long label = next_int("label");
    const long long v = next_int("joint count");
    const long long f = next_int("frame count");
    if (label < 0 || v <= 0 || f <= 0) {
      throw ParseError("label must be non-negative and V, F positive", lineno);
    }
    Tensor joints({static_cast<std::size_t>(v), static_cast<std::size_t>(f), 3});
    for (auto& x : joints.data()) {
      skip();
      const auto [q, ec] = std::from_chars(p, end, x);
      if (ec != std::errc() || !std::isfinite(x)) {
        throw ParseError("expected " + std::to_string(joints.numel()) + " finite coordinates",
                         lineno);
      }
      p = q;
    }
    skip();
    if (p != end) throw ParseError("trailing values after the record", lineno);
    clips.push_back(SkeletonClip{std::move(joints), static_cast<int>(label),
                                 "record" + std::to_string(clips.size())});
  }
  return clips;
}

void save_dataset(const std::filesystem::path& path, const std::vector<SkeletonClip>& clips) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_dataset(out, clips);
}

std::vector<SkeletonClip> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  return read_dataset(in);
}

namespace {

// Approximate NTU rest pose in meters (x right, y up, z depth).
constexpr double kRestPose[kNtuJoints][3] = {
    {0.00, 0.00, 3.0},    {0.00, 0.30, 3.0},    {0.00, 0.60, 3.0},   {0.00, 0.75, 3.0},
    {-0.18, 0.50, 3.0},   {-0.30, 0.25, 3.0},   {-0.35, 0.02, 3.0},  {-0.37, -0.05, 3.0},
    {0.18, 0.50, 3.0},    {0.30, 0.25, 3.0},    {0.35, 0.02, 3.0},   {0.37, -0.05, 3.0},
    {-0.10, -0.05, 3.0},  {-0.12, -0.45, 3.0},  {-0.13, -0.85, 3.0}, {-0.13, -0.90, 2.9},
    {0.10, -0.05, 3.0},   {0.12, -0.45, 3.0},   {0.13, -0.85, 3.0},  {0.13, -0.90, 2.9},
    {0.00, 0.50, 3.0},    {-0.38, -0.12, 3.0},  {-0.33, -0.08, 3.0}, {0.38, -0.12, 3.0},
    {0.33, -0.08, 3.0},
};

struct ClassMotion {
  double frequency;
  double phase;
  std::size_t limb_a;
  std::size_t limb_b;
};

ClassMotion class_motion(std::size_t cls) {
  const auto [a, b] = synth_class_limbs(cls);
  return {1.0 + 0.75 * static_cast<double>(cls), static_cast<double>(cls) * std::numbers::pi / 3.0,
          a, b};
}

// Adds the class motion to `out` for frames [0, F). Jitter terms are zero
// for the class mean.
void add_motion(Tensor& out, const ClassMotion& m, double amp, double phase, double trunk_sway) {
  const PartPartition parts = PartPartition::ntu25();
  const std::size_t frames = out.extent(1);
  for (std::size_t t = 0; t < frames; ++t) {
    const double u = 2.0 * std::numbers::pi * m.frequency * static_cast<double>(t) /
                     static_cast<double>(frames);
    for (const std::size_t limb : {m.limb_a, m.limb_b}) {
      const auto& joints = parts.parts()[limb].joints;
      const double shift = limb == m.limb_b ? std::numbers::pi / 2.0 : 0.0;
      for (std::size_t i = 0; i < joints.size(); ++i) {
        const double w = std::min(1.0, static_cast<double>(i) / 2.0);
        out.at(joints[i], t, 0) += amp * w * std::sin(u + phase + shift);
        out.at(joints[i], t, 1) += 0.5 * amp * w * std::cos(u + phase + shift);
      }
    }
    for (const std::size_t j : parts.parts()[0].joints) {
      out.at(j, t, 0) += trunk_sway * kRestPose[j][1] * std::sin(u + phase);
    }
  }
}

}  // namespace

std::pair<std::size_t, std::size_t> synth_class_limbs(std::size_t cls) {
  // Parts 1..4 are the four limbs of the NTU-25 partition.
  return {1 + cls % 4, 1 + (cls + 1 + cls / 4) % 4};
}

Tensor synth_class_mean(std::size_t cls, std::size_t frames, const SynthSpec& spec) {
  Tensor out({kNtuJoints, frames, 3});
  for (std::size_t j = 0; j < kNtuJoints; ++j) {
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t k = 0; k < 3; ++k) out.at(j, t, k) = kRestPose[j][k];
    }
  }
  const ClassMotion m = class_motion(cls);
  add_motion(out, m, spec.amplitude, m.phase, 0.04);
  return out;
}

std::vector<SkeletonClip> synth_dataset(std::size_t classes, std::size_t samples_per_class,
                                        std::uint64_t seed, const SynthSpec& spec) {
  if (classes < 2) throw std::invalid_argument("synthetic dataset needs at least 2 classes");
  if (spec.min_frames == 0 || spec.min_frames > spec.max_frames) {
    throw std::invalid_argument("synthetic frame range is empty");
  }
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> frames_dist(spec.min_frames, spec.max_frames);
  std::uniform_real_distribution<double> jitter(-0.3, 0.3), scale(0.8, 1.2), offset(-0.05, 0.05);
  std::normal_distribution<double> noise(0.0, spec.noise);

  std::vector<SkeletonClip> clips;
  clips.reserve(classes * samples_per_class);
  for (std::size_t s = 0; s < samples_per_class; ++s) {
    for (std::size_t c = 0; c < classes; ++c) {
      const std::size_t frames = frames_dist(rng);
      const ClassMotion m = class_motion(c);
      const double amp = spec.amplitude * scale(rng);
      const double phase = m.phase + jitter(rng);
      const double shift[3] = {offset(rng), offset(rng), offset(rng)};
      Tensor joints({kNtuJoints, frames, 3});
      for (std::size_t j = 0; j < kNtuJoints; ++j) {
        for (std::size_t t = 0; t < frames; ++t) {
          for (std::size_t k = 0; k < 3; ++k) joints.at(j, t, k) = kRestPose[j][k] + shift[k];
        }
      }
      add_motion(joints, m, amp, phase, 0.04);
      for (auto& x : joints.data()) x += noise(rng);
      clips.push_back(SkeletonClip{std::move(joints), static_cast<int>(c),
                                   "synth" + std::to_string(clips.size())});
    }
  }
  return clips;
}

}  // namespace partsmamba
