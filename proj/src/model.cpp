#include "partsmamba/model.hpp"

#include "partsmamba/ops.hpp"

namespace partsmamba {

Var GcnHead::apply(Tape& tape, Var x) const {
  Var a = tape.constant(adjacency);
  Var h = relu(linear_map(joint_mix(a, x), tape.param(*w1)));
  h = relu(linear_map(joint_mix(a, h), tape.param(*w2)));
  return relu(temporal_conv(h, tape.param(*temporal)));
}

Var SpatialFusionBlock::apply(Tape& tape, Var x, const PartPartition& partition,
                              std::size_t chunk, const FusionProbe& probe) const {
  SpatialStreams streams = project_streams(tape, x, proj_parts, proj_body, proj_gate);

  std::vector<PartScanVars> parts;
  parts.reserve(part_ssms.size());
  for (const auto& p : part_ssms) {
    parts.push_back({SsmVars::bind(tape, p.fwd), SsmVars::bind(tape, p.bwd)});
  }
  Var x_p = part_wise_scan(streams.x_p, partition, parts, tape.param(*mix), chunk);
  Var x_s = body_scan(streams.x_s, SsmVars::bind(tape, body_ssm.fwd),
                      SsmVars::bind(tape, body_ssm.bwd), chunk);
  Var x_g = gate_stream(streams.x_g);

  FusionInputs in{x_p, x_s, topo_parts.apply(tape, x_p), topo_body.apply(tape, x_s), x_g};
  return add(x, gated_fusion(in, tape.param(*w_f), probe));
}

Model::Model(ModelConfig config, PartPartition partition, SkeletonGraph graph)
    : config_(std::move(config)), partition_(std::move(partition)), graph_(std::move(graph)) {
  config_.validate();
  if (partition_.joints() != config_.joints || graph_.joints() != config_.joints) {
    throw ConfigError("partition/adjacency joint count does not match joints = " +
                      std::to_string(config_.joints));
  }
  Rng rng(config_.seed);
  const std::size_t c = config_.channels;
  const std::size_t ci = config_.inner();
  const std::size_t s = config_.state_size;

  head_.adjacency = graph_.row_normalized();
  head_.w1 = &params_.add("head.gcn1.weight", init_projection(3, c, rng));
  head_.w2 = &params_.add("head.gcn2.weight", init_projection(c, c, rng));
  head_.temporal = &params_.add(
      "head.tconv.weight", init_projection(GcnHead::kTemporalWidth, c, rng));

  const Tensor topo_init = graph_.symmetric_normalized();
  std::vector<std::size_t> section_order;
  if (config_.grouping == SectionGrouping::Parts) section_order = partition_.scan_order();

  for (std::size_t k = 0; k < config_.blocks; ++k) {
    const std::string pre = "block" + std::to_string(k) + ".spatial";
    SpatialFusionBlock b;
    b.proj_parts = NormedProjection::create(params_, pre + ".proj_parts", c, ci, rng);
    b.proj_body = NormedProjection::create(params_, pre + ".proj_body", c, ci, rng);
    b.proj_gate = config_.tie_gate_projection
                      ? NormedProjection::sharing_weight(params_, pre + ".proj_gate", b.proj_body)
                      : NormedProjection::create(params_, pre + ".proj_gate", c, ci, rng);
    for (const auto& part : partition_.parts()) {
      b.part_ssms.push_back(BiSsmLayer::create(params_, pre + ".parts." + part.name, ci, s,
                                               config_.tie_direction_weights, rng));
    }
    b.mix = &params_.add(pre + ".parts.mix", init_projection(ci, ci, rng));
    b.body_ssm =
        BiSsmLayer::create(params_, pre + ".body", ci, s, config_.tie_direction_weights, rng);
    b.topo_parts = TopologyLayer::create(params_, pre + ".topo_parts", topo_init, ci);
    b.topo_body = TopologyLayer::create(params_, pre + ".topo_body", topo_init, ci);
    b.w_f = &params_.add(pre + ".w_f", init_projection(ci, c, rng));
    spatial_.push_back(std::move(b));

    temporal_.push_back(TemporalLayer::create(params_, "block" + std::to_string(k) + ".temporal",
                                              config_.joints, c, config_.sections, s,
                                              section_order, rng));
  }
  classifier_ =
      &params_.add("classifier.weight", init_projection(c, config_.num_classes, rng));
  round_to_dtype();
}

Var Model::features(Tape& tape, Var clip, const ForwardProbe& probe) const {
  const Shape expected{config_.joints, config_.window, 3};
  if (clip.shape() != expected) {
    throw ShapeError("model input: expected " + shape_str(expected) + ", got " +
                     shape_str(clip.shape()));
  }
  Var h = head_.apply(tape, clip);
  for (std::size_t k = 0; k < spatial_.size(); ++k) {
    h = spatial_[k].apply(tape, h, partition_, config_.scan_chunk, probe.fusion);
    h = partsmamba::temporal_block(tape, h, temporal_[k], config_.scan_chunk);
  }
  return h;
}

Var Model::forward(Tape& tape, const Tensor& clip, const ForwardProbe& probe) const {
  if (!clip.all_finite()) throw NumericError("model input contains non-finite values");
  Var h = features(tape, tape.constant(clip), probe);
  return linear_map(mean_pool(h), tape.param(*classifier_));
}

Tensor Model::logits(const Tensor& clip) const {
  Tape tape(false);
  return forward(tape, clip).value();
}

void Model::round_to_dtype() {
  if (config_.dtype != DType::F32) return;
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].value.round_to_float();
}

std::size_t Model::copy_matching(const Model& other) {
  std::size_t copied = 0;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = params_[i];
    if (!other.params().contains(p.name)) continue;
    const Param& q = other.params().get(p.name);
    require_shape(q.value, p.value.shape(), p.name.c_str());
    p.value = q.value;
    ++copied;
  }
  round_to_dtype();
  return copied;
}

std::uint64_t scan_step_flops(std::uint64_t ch, std::uint64_t st) {
  const std::uint64_t selection = 2 * ch * st + 3 * ch;  // B, C projections; Δ affine + softplus
  const std::uint64_t discretize = 2 * ch * st;          // exp(ΔA), ΔB
  const std::uint64_t update = 2 * st * ch;              // a·h + b·x
  const std::uint64_t readout = st * ch + ch;            // C·h + D·x
  return selection + discretize + update + readout;
}

FlopCount flops_estimate(const ModelConfig& cfg) {
  const std::uint64_t v = cfg.joints, t = cfg.window, c = cfg.channels, ci = cfg.inner(),
                      s = cfg.state_size, n = cfg.sections ? cfg.sections : 1;
  const std::uint64_t pos = v * t;
  constexpr std::uint64_t kNorm = 5;  // mean, variance, center, scale, affine

  FlopCount f;
  f.head = v * v * t * 3 + pos * 3 * c + pos * c          // layer 1 + ReLU
           + v * v * t * c + pos * c * c + pos * c        // layer 2 + ReLU
           + pos * c * GcnHead::kTemporalWidth + pos * c;  // temporal conv + ReLU

  const std::uint64_t spatial =
      3 * pos * c * ci + 3 * kNorm * pos * ci  // three projected streams
      + 4 * pos * scan_step_flops(ci, s)       // parts and body, both directions
      + 2 * pos * ci                           // direction sums
      + pos * ci * ci                          // channel mix
      + pos * ci                               // gate
      + 2 * (v * v * t * ci + 2 * pos * ci + kNorm * pos * ci)  // topology aggregation
      + 7 * pos * ci + pos * ci * c            // fusion products and W_f
      + pos * c;                               // residual
  const std::uint64_t tokens = t * n, token_dim = (v / n) * c, inner = 2 * c;
  const std::uint64_t temporal = tokens * token_dim * inner + tokens * scan_step_flops(inner, s) +
                                 tokens * inner * token_dim + pos * c;
  f.spatial = cfg.blocks * spatial;
  f.temporal = cfg.blocks * temporal;
  f.classifier = pos * c + c * cfg.num_classes;
  return f;
}

}  // namespace partsmamba
