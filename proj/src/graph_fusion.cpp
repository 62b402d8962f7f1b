#include "partsmamba/graph_fusion.hpp"

#include "partsmamba/ops.hpp"

namespace partsmamba {

Var topology_preactivation(Var x, Var a, Var alpha) {
  return add(scale(alpha, joint_mix(a, x)), x);
}

Var topology_aggregate(Var x, Var a, Var alpha, Var gamma, Var beta) {
  return layer_norm(topology_preactivation(x, a, alpha), gamma, beta);
}

TopologyLayer TopologyLayer::create(ParamStore& store, const std::string& prefix,
                                    const Tensor& init, std::size_t channels) {
  TopologyLayer l;
  l.a = &store.add(prefix + ".A", init);
  l.alpha = &store.add(prefix + ".alpha", Tensor::scalar(0.0));
  l.gamma = &store.add(prefix + ".norm.gamma", Tensor({channels}, 1.0));
  l.beta = &store.add(prefix + ".norm.beta", Tensor({channels}, 0.0));
  return l;
}

Var TopologyLayer::apply(Tape& tape, Var x) const {
  return topology_aggregate(x, tape.param(*a), tape.param(*alpha), tape.param(*gamma),
                            tape.param(*beta));
}

Var gated_fusion(const FusionInputs& in, Var w_f, const FusionProbe& probe) {
  const Shape& s = in.x_p.shape();
  for (Var v : {in.x_s, in.x_p_graph, in.x_s_graph, in.x_g}) {
    if (v.shape() != s) {
      throw ShapeError("gated_fusion: inputs " + shape_str(s) + " and " + shape_str(v.shape()) +
                       " differ");
    }
  }
  if (probe.parts_gate_only) return linear_map(mul(in.x_p, in.x_g), w_f);
  Var f_self = add(mul(in.x_p, in.x_g), mul(in.x_s, in.x_g));
  Var f_cross = add(mul(in.x_p_graph, in.x_s), mul(in.x_p, in.x_s_graph));
  return linear_map(add(f_self, f_cross), w_f);
}

}  // namespace partsmamba
