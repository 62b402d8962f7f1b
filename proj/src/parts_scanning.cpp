#include "partsmamba/parts_scanning.hpp"

#include <cmath>

#include "partsmamba/ops.hpp"

namespace partsmamba {

Tensor init_projection(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  return Tensor::uniform({fan_in, fan_out}, -bound, bound, rng);
}

NormedProjection NormedProjection::create(ParamStore& store, const std::string& prefix,
                                          std::size_t in, std::size_t out, Rng& rng) {
  NormedProjection p;
  p.weight = &store.add(prefix + ".weight", init_projection(in, out, rng));
  p.gamma = &store.add(prefix + ".norm.gamma", Tensor({out}, 1.0));
  p.beta = &store.add(prefix + ".norm.beta", Tensor({out}, 0.0));
  return p;
}

NormedProjection NormedProjection::sharing_weight(ParamStore& store, const std::string& prefix,
                                                  const NormedProjection& other) {
  NormedProjection p;
  const std::size_t out = other.weight->value.extent(1);
  p.weight = other.weight;
  p.gamma = &store.add(prefix + ".norm.gamma", Tensor({out}, 1.0));
  p.beta = &store.add(prefix + ".norm.beta", Tensor({out}, 0.0));
  return p;
}

Var NormedProjection::apply(Tape& tape, Var x) const {
  return layer_norm(linear_map(x, tape.param(*weight)), tape.param(*gamma), tape.param(*beta));
}

SpatialStreams project_streams(Tape& tape, Var x_gcn, const NormedProjection& parts,
                               const NormedProjection& body, const NormedProjection& gate) {
  if (x_gcn.value().rank() != 3) {
    throw ShapeError("project_streams: expected [V, T, C], got " + shape_str(x_gcn.shape()));
  }
  const std::size_t c = x_gcn.shape()[2];
  for (const NormedProjection* p : {&parts, &body, &gate}) {
    const Shape& w = p->weight->value.shape();
    if (w[0] != c || w[1] > c) {
      throw ShapeError("project_streams: weight " + shape_str(w) + " must map " +
                       std::to_string(c) + " channels to at most as many");
    }
  }
  return SpatialStreams{parts.apply(tape, x_gcn), body.apply(tape, x_gcn),
                        gate.apply(tape, x_gcn)};
}

Var part_wise_scan(Var x_p, const PartPartition& partition, const std::vector<PartScanVars>& ssms,
                   Var mix, std::size_t chunk) {
  const Shape& s = x_p.shape();
  if (s.size() != 3 || s[0] != partition.joints()) {
    throw ShapeError("part_wise_scan: input " + shape_str(s) + " does not match a partition of " +
                     std::to_string(partition.joints()) + " joints");
  }
  if (ssms.size() != partition.parts().size()) {
    throw std::invalid_argument("part_wise_scan: " + std::to_string(ssms.size()) +
                                " SSM pairs for " + std::to_string(partition.parts().size()) +
                                " parts");
  }
  std::vector<Var> outputs;
  outputs.reserve(ssms.size());
  for (std::size_t p = 0; p < ssms.size(); ++p) {
    // [|part|, T, C'] -> frames as the batch axis, joints as the scan axis.
    Var seq = swap_leading_axes(select_leading(x_p, partition.parts()[p].joints));
    Var scanned = bidirectional_scan(seq, ssms[p].fwd, ssms[p].bwd, chunk);
    outputs.push_back(swap_leading_axes(scanned));
  }
  // Rows of the concatenation follow the partition's scan order; put every
  // joint back at its canonical index.
  const auto order = partition.scan_order();
  std::vector<std::size_t> position(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) position[order[i]] = i;
  Var reassembled = select_leading(concat_leading(outputs), position);
  return pointwise_conv1d(reassembled, mix);
}

Var body_scan(Var x_s, const SsmVars& fwd, const SsmVars& bwd, std::size_t chunk) {
  if (x_s.value().rank() != 3) {
    throw ShapeError("body_scan: expected [V, T, C'], got " + shape_str(x_s.shape()));
  }
  return swap_leading_axes(bidirectional_scan(swap_leading_axes(x_s), fwd, bwd, chunk));
}

Var gate_stream(Var x_g) { return relu(x_g); }

}  // namespace partsmamba
