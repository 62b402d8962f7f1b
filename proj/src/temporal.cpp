#include "partsmamba/temporal.hpp"

#include <numeric>

#include "partsmamba/ops.hpp"
#include "partsmamba/parts_scanning.hpp"

namespace partsmamba {

namespace {

std::vector<std::size_t> resolve_order(std::size_t joints, const std::vector<std::size_t>& order) {
  if (order.empty()) {
    std::vector<std::size_t> id(joints);
    std::iota(id.begin(), id.end(), 0);
    return id;
  }
  if (order.size() != joints) throw ConfigError("joint order does not cover every joint");
  std::vector<bool> seen(joints, false);
  for (auto j : order) {
    if (j >= joints || seen[j]) throw ConfigError("joint order is not a permutation");
    seen[j] = true;
  }
  return order;
}

void check_sections(std::size_t joints, std::size_t sections) {
  if (sections == 0 || joints % sections != 0) {
    throw ConfigError("sub-frame section count " + std::to_string(sections) +
                      " does not divide " + std::to_string(joints) + " joints");
  }
}

// Maps each token element to its [V, T, C] source index.
std::vector<std::size_t> joint_major_token_indices(std::size_t frames, std::size_t joints,
                                                   std::size_t channels, std::size_t sections,
                                                   const std::vector<std::size_t>& order) {
  const std::size_t per = joints / sections;
  std::vector<std::size_t> idx(frames * joints * channels);
  std::size_t o = 0;
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t k = 0; k < sections; ++k) {
      for (std::size_t j = 0; j < per; ++j) {
        const std::size_t joint = order[k * per + j];
        for (std::size_t c = 0; c < channels; ++c) idx[o++] = (joint * frames + t) * channels + c;
      }
    }
  }
  return idx;
}

std::vector<std::size_t> invert(const std::vector<std::size_t>& perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return inv;
}

}  // namespace

std::vector<std::size_t> st_reorder_indices(std::size_t frames, std::size_t joints,
                                            std::size_t channels, std::size_t sections,
                                            const std::vector<std::size_t>& joint_order) {
  check_sections(joints, sections);
  const auto order = resolve_order(joints, joint_order);
  const std::size_t per = joints / sections;
  std::vector<std::size_t> idx(frames * joints * channels);
  std::size_t o = 0;
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t k = 0; k < sections; ++k) {
      for (std::size_t j = 0; j < per; ++j) {
        const std::size_t joint = order[k * per + j];
        for (std::size_t c = 0; c < channels; ++c) idx[o++] = (t * joints + joint) * channels + c;
      }
    }
  }
  return idx;
}

Tensor st_reorder(const Tensor& x, std::size_t sections,
                  const std::vector<std::size_t>& joint_order) {
  if (x.rank() != 3) throw ShapeError("st_reorder: expected [T, V, C], got " + shape_str(x.shape()));
  const std::size_t t = x.extent(0), v = x.extent(1), c = x.extent(2);
  const auto idx = st_reorder_indices(t, v, c, sections, joint_order);
  Tensor out({t * sections, (v / sections) * c});
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = x[idx[i]];
  return out;
}

Tensor st_restore(const Tensor& y, std::size_t sections, std::size_t channels,
                  const std::vector<std::size_t>& joint_order) {
  if (y.rank() != 2 || sections == 0 || channels == 0 || y.extent(0) % sections != 0 ||
      y.extent(1) % channels != 0) {
    throw ShapeError("st_restore: shape " + shape_str(y.shape()) + " is not a token grid for " +
                     std::to_string(sections) + " sections of " + std::to_string(channels) +
                     " channels");
  }
  const std::size_t t = y.extent(0) / sections;
  const std::size_t v = (y.extent(1) / channels) * sections;
  const auto idx = st_reorder_indices(t, v, channels, sections, joint_order);
  Tensor out({t, v, channels});
  for (std::size_t i = 0; i < idx.size(); ++i) out[idx[i]] = y[i];
  return out;
}

TemporalLayer TemporalLayer::create(ParamStore& store, const std::string& prefix,
                                    std::size_t joints, std::size_t channels,
                                    std::size_t sections, std::size_t state_size,
                                    std::vector<std::size_t> joint_order, Rng& rng) {
  check_sections(joints, sections);
  TemporalLayer l;
  const std::size_t token = (joints / sections) * channels;
  const std::size_t inner = 2 * channels;
  l.w_in = &store.add(prefix + ".w_in", init_projection(token, inner, rng));
  l.ssm = SsmLayer::create(store, prefix + ".ssm", inner, state_size, rng);
  l.w_out = &store.add(prefix + ".w_out", init_projection(inner, token, rng));
  l.sections = sections;
  l.joint_order = resolve_order(joints, joint_order);
  return l;
}

Var temporal_block(Tape& tape, Var x, const TemporalLayer& layer, std::size_t chunk) {
  const Shape s = x.shape();
  if (s.size() != 3) throw ShapeError("temporal_block: expected [V, T, C], got " + shape_str(s));
  const std::size_t v = s[0], t = s[1], c = s[2];
  check_sections(v, layer.sections);
  const auto order = resolve_order(v, layer.joint_order);
  auto to_tokens = joint_major_token_indices(t, v, c, layer.sections, order);
  auto from_tokens = invert(to_tokens);
  const std::size_t token = (v / layer.sections) * c;

  // One batch element: the whole token path is a single causal sequence.
  Var tokens = gather(x, std::move(to_tokens), {1, t * layer.sections, token}, "st_reorder");
  Var inner = linear_map(tokens, tape.param(*layer.w_in));
  Var scanned = selective_scan(inner, SsmVars::bind(tape, layer.ssm), chunk);
  Var back = linear_map(scanned, tape.param(*layer.w_out));
  Var restored = gather(back, std::move(from_tokens), s, "st_restore");
  return add(x, restored);
}

}  // namespace partsmamba
