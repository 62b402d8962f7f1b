#include "partsmamba/occlusion.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

namespace partsmamba {

const char* const kOcclusionGrammar =
    "none | parts:<scene> | temporal:<portion>:<random|middle> | randomframe:<portion> | "
    "periodic:<period>";

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void check_portion(double portion) {
  if (!(portion >= 0.0 && portion <= 1.0)) {
    throw SpecError("occlusion portion must lie in [0, 1], got " + std::to_string(portion));
  }
}

void hide_frame(OcclusionMask& m, std::size_t t) {
  for (std::size_t v = 0; v < m.joints; ++v) m.set(v, t, false);
}

[[noreturn]] void bad_spec(const std::string& text, const std::string& why) {
  throw SpecError("bad occlusion spec '" + text + "' (" + why + "); expected " +
                  kOcclusionGrammar);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return splitmix(splitmix(splitmix(splitmix(base) ^ a) ^ b) ^ c);
}

std::size_t OcclusionMask::hidden_count() const {
  return static_cast<std::size_t>(std::count(visible.begin(), visible.end(), 0));
}

std::vector<std::size_t> OcclusionMask::hidden_frames() const {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < frames; ++t) {
    bool all_hidden = joints > 0;
    for (std::size_t v = 0; v < joints && all_hidden; ++v) all_hidden = !at(v, t);
    if (all_hidden) out.push_back(t);
  }
  return out;
}

OcclusionMask mask_intersection(const OcclusionMask& a, const OcclusionMask& b) {
  if (a.joints != b.joints || a.frames != b.frames) {
    throw ShapeError("mask intersection needs equal grids");
  }
  OcclusionMask out = a;
  for (std::size_t i = 0; i < out.visible.size(); ++i) out.visible[i] &= b.visible[i];
  return out;
}

OcclusionMask mask_parts(const std::string& scene, const OcclusionTable& table, std::size_t v,
                         std::size_t t) {
  if (table.joints() != v) {
    throw ShapeError("occlusion table covers " + std::to_string(table.joints()) +
                     " joints, mask needs " + std::to_string(v));
  }
  OcclusionMask m(v, t);
  for (std::size_t j : table.scene(scene).joints) {
    for (std::size_t f = 0; f < t; ++f) m.set(j, f, false);
  }
  return m;
}

OcclusionMask mask_temporal(double portion, TemporalStart mode, std::size_t v, std::size_t t,
                            std::uint64_t seed) {
  check_portion(portion);
  const auto m = static_cast<std::size_t>(std::floor(portion * static_cast<double>(t)));
  std::size_t start = (t - m) / 2;
  if (mode == TemporalStart::Random) {
    Rng rng(seed);
    start = std::uniform_int_distribution<std::size_t>(0, t - m)(rng);
  }
  OcclusionMask mask(v, t);
  for (std::size_t f = start; f < start + m; ++f) hide_frame(mask, f);
  return mask;
}

OcclusionMask mask_random_frames(double portion, std::size_t v, std::size_t t,
                                 std::uint64_t seed) {
  check_portion(portion);
  const auto m = static_cast<std::size_t>(std::llround(portion * static_cast<double>(t)));
  std::vector<std::size_t> frames(t);
  std::iota(frames.begin(), frames.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(frames.begin(), frames.end(), rng);
  OcclusionMask mask(v, t);
  for (std::size_t i = 0; i < m; ++i) hide_frame(mask, frames[i]);
  return mask;
}

OcclusionMask mask_periodic(std::size_t period, std::size_t v, std::size_t t) {
  if (period < 2) throw SpecError("periodic occlusion needs a period of at least 2");
  OcclusionMask mask(v, t);
  for (std::size_t f = period - 1; f < t; f += period) hide_frame(mask, f);
  return mask;
}

Tensor apply_mask(const Tensor& x, const OcclusionMask& mask) {
  if (x.rank() != 3 || x.extent(0) != mask.joints || x.extent(1) != mask.frames) {
    throw ShapeError("mask [" + std::to_string(mask.joints) + ", " +
                     std::to_string(mask.frames) + "] does not match input " +
                     shape_str(x.shape()));
  }
  Tensor out = x;
  const std::size_t c = x.extent(2);
  for (std::size_t i = 0; i < mask.visible.size(); ++i) {
    if (mask.visible[i]) continue;
    for (std::size_t k = 0; k < c; ++k) out[i * c + k] = 0.0;
  }
  return out;
}

bool OcclusionSpec::seeded() const {
  return (kind == Kind::Temporal && start == TemporalStart::Random) || kind == Kind::RandomFrame;
}

std::string OcclusionSpec::to_string() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::None:
      os << "none";
      break;
    case Kind::Parts:
      os << "parts:" << scene;
      break;
    case Kind::Temporal:
      os << "temporal:" << portion << ':' << (start == TemporalStart::Middle ? "middle" : "random");
      break;
    case Kind::RandomFrame:
      os << "randomframe:" << portion;
      break;
    case Kind::Periodic:
      os << "periodic:" << period;
      break;
  }
  return os.str();
}

OcclusionSpec parse_occlusion_spec(const std::string& text) {
  const auto f = split(text, ':');
  if (f.empty()) bad_spec(text, "empty");
  auto portion = [&](const std::string& s) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || p != s.data() + s.size()) {
      bad_spec(text, "portion '" + s + "' is not a number");
    }
    if (!(v >= 0.0 && v <= 1.0)) bad_spec(text, "portion must lie in [0, 1]");
    return v;
  };
  OcclusionSpec s;
  const std::string& head = f[0];
  if (head == "none" && f.size() == 1) {
    s.kind = OcclusionSpec::Kind::None;
  } else if (head == "parts" && f.size() == 2 && !f[1].empty()) {
    s.kind = OcclusionSpec::Kind::Parts;
    s.scene = f[1];
  } else if (head == "temporal" && f.size() == 3) {
    s.kind = OcclusionSpec::Kind::Temporal;
    s.portion = portion(f[1]);
    if (f[2] == "middle") {
      s.start = TemporalStart::Middle;
    } else if (f[2] == "random") {
      s.start = TemporalStart::Random;
    } else {
      bad_spec(text, "start must be random or middle");
    }
  } else if (head == "randomframe" && f.size() == 2) {
    s.kind = OcclusionSpec::Kind::RandomFrame;
    s.portion = portion(f[1]);
  } else if (head == "periodic" && f.size() == 2) {
    s.kind = OcclusionSpec::Kind::Periodic;
    std::size_t p = 0;
    const auto& a = f[1];
    const auto [q, ec] = std::from_chars(a.data(), a.data() + a.size(), p);
    if (a.empty() || ec != std::errc() || q != a.data() + a.size()) {
      bad_spec(text, "period '" + a + "' is not an integer");
    }
    if (p < 2) bad_spec(text, "period must be at least 2");
    s.period = p;
  } else {
    bad_spec(text, "unrecognized form");
  }
  return s;
}

OcclusionMask make_mask(const OcclusionSpec& spec, const OcclusionTable& table, std::size_t v,
                        std::size_t t, std::uint64_t seed) {
  switch (spec.kind) {
    case OcclusionSpec::Kind::None:
      return OcclusionMask(v, t);
    case OcclusionSpec::Kind::Parts:
      if (!table.has_scene(spec.scene)) {
        throw SpecError("unknown occlusion scene '" + spec.scene + "'");
      }
      return mask_parts(spec.scene, table, v, t);
    case OcclusionSpec::Kind::Temporal:
      return mask_temporal(spec.portion, spec.start, v, t, seed);
    case OcclusionSpec::Kind::RandomFrame:
      return mask_random_frames(spec.portion, v, t, seed);
    case OcclusionSpec::Kind::Periodic:
      return mask_periodic(spec.period, v, t);
  }
  return OcclusionMask(v, t);
}

std::string format_mask(const OcclusionMask& mask, const std::string& spec, std::uint64_t seed) {
  std::string out = "occlusion " + spec + " seed " + std::to_string(seed) + " joints " +
                    std::to_string(mask.joints) + " frames " + std::to_string(mask.frames) +
                    " format 1\n";
  for (std::size_t v = 0; v < mask.joints; ++v) {
    for (std::size_t t = 0; t < mask.frames; ++t) out += mask.at(v, t) ? '1' : '0';
    out += '\n';
  }
  return out;
}

}  // namespace partsmamba
