#include "partsmamba/verify.hpp"

#include <cstdio>
#include <functional>
#include <sstream>

#include "partsmamba/checkpoint.hpp"
#include "partsmamba/grad_check.hpp"
#include "partsmamba/model.hpp"
#include "partsmamba/occlusion.hpp"
#include "partsmamba/ops.hpp"
#include "partsmamba/skeleton_data.hpp"
#include "partsmamba/ssm.hpp"

namespace partsmamba {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

CheckResult scan_equivalence(Rng& rng) {
  constexpr int kInstances = 200;
  double worst = 0.0;
  bool chunk1_exact = true;
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t l = std::uniform_int_distribution<std::size_t>(1, 128)(rng);
    const std::size_t c = std::uniform_int_distribution<std::size_t>(1, 16)(rng);
    const std::size_t s = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
    const SsmParams p = SsmParams::init(c, s, rng);
    const Tensor x = Tensor::uniform({l, c}, -1.0, 1.0, rng);
    const Tensor ref = selective_scan_seq(x, p);
    for (std::size_t chunk : {std::size_t{1}, std::size_t{2}, std::size_t{7}, l}) {
      const Tensor y = selective_scan_parallel(x, p, chunk);
      worst = std::max(worst, max_rel_error(y, ref, 1e-8));
      if (chunk == 1 && !bit_identical(y, ref)) chunk1_exact = false;
    }
  }
  const bool ok = worst <= 1e-5 && chunk1_exact;
  return {"scan_equivalence", ok,
          fmt("max rel err %.3g", worst) + (chunk1_exact ? "" : ", chunk 1 not bit-identical")};
}

CheckResult scan_causality(Rng& rng) {
  std::size_t violations = 0;
  for (int probe = 0; probe < 20; ++probe) {
    const std::size_t l = 32, c = 4, s = 3;
    const SsmParams p = SsmParams::init(c, s, rng);
    const Tensor x = Tensor::uniform({l, c}, -1.0, 1.0, rng);
    const std::size_t t = std::uniform_int_distribution<std::size_t>(1, l - 1)(rng);
    Tensor x2 = x;
    for (std::size_t k = 0; k < c; ++k) x2.at(t, k) += 0.5;
    const Tensor y1 = selective_scan_seq(x, p), y2 = selective_scan_seq(x2, p);
    for (std::size_t i = 0; i < t * c; ++i) violations += y1[i] != y2[i] ? 1 : 0;
  }
  return {"scan_causality", violations == 0, std::to_string(violations) + " violations"};
}

CheckResult op_gradients(Rng& rng) {
  ParamStore ps;
  Param& w = ps.add("w", Tensor::uniform({3, 5}, -1.0, 1.0, rng));
  Param& gamma = ps.add("gamma", Tensor::uniform({5}, 0.5, 1.5, rng));
  Param& beta = ps.add("beta", Tensor::uniform({5}, -0.5, 0.5, rng));
  Param& k = ps.add("k", Tensor::uniform({5, 4}, -1.0, 1.0, rng));
  const Tensor x = Tensor::uniform({4, 3, 3}, -1.0, 1.0, rng);
  const Tensor r = Tensor::uniform({4, 3, 4}, -1.0, 1.0, rng);
  auto f = [&](Tape& t) {
    Var h = layer_norm(linear_map(t.constant(x), t.param(w)), t.param(gamma), t.param(beta));
    Var y = pointwise_conv1d(reverse_axis(relu(h), 0), t.param(k));
    return sum(mul(y, t.constant(r)));
  };
  const auto rep = grad_check(f, {&w, &gamma, &beta, &k});
  return {"grad_check_ops", rep.passed, fmt("max rel err %.3g", rep.max_rel_error)};
}

CheckResult model_gradients(std::uint64_t seed) {
  MicroSetup m = micro_setup(seed);
  Model model(m.config, m.partition, m.graph);
  Rng rng(seed + 1);
  std::vector<Param*> params;
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    Param& p = model.params()[i];
    for (auto& v : p.value.data()) v += std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
    params.push_back(&p);
  }
  const Tensor clip = Tensor::uniform({6, 4, 3}, -1.0, 1.0, rng);
  auto f = [&](Tape& t) { return cross_entropy(model.forward(t, clip), 1); };
  const auto rep = grad_check(f, params);
  return {"grad_check_model", rep.passed,
          fmt("max rel err %.3g", rep.max_rel_error) + " at " + rep.worst_param + rep.failure};
}

CheckResult part_locality(Rng& rng) {
  const PartPartition parts = PartPartition::ntu25();
  const std::size_t v = 25, t = 3, c = 4, s = 2;
  std::vector<SsmParams> fwd, bwd;
  for (std::size_t i = 0; i < parts.parts().size(); ++i) {
    fwd.push_back(SsmParams::init(c, s, rng));
    bwd.push_back(SsmParams::init(c, s, rng));
  }
  const Tensor mix = Tensor::uniform({c, c}, -1.0, 1.0, rng);
  auto run = [&](const Tensor& x) {
    Tape tape(false);
    std::vector<PartScanVars> vars;
    for (std::size_t i = 0; i < fwd.size(); ++i) {
      vars.push_back({SsmVars::constants(tape, fwd[i]), SsmVars::constants(tape, bwd[i])});
    }
    return part_wise_scan(tape.constant(x), parts, vars, tape.constant(mix), 4).value();
  };
  std::size_t violations = 0;
  for (int probe = 0; probe < 10; ++probe) {
    const Tensor x = Tensor::uniform({v, t, c}, -1.0, 1.0, rng);
    const std::size_t j = std::uniform_int_distribution<std::size_t>(0, v - 1)(rng);
    Tensor x2 = x;
    for (std::size_t f = 0; f < t; ++f) x2.at(j, f, 0) += 1.0;
    const Tensor y1 = run(x), y2 = run(x2);
    for (std::size_t u = 0; u < v; ++u) {
      if (parts.part_of(u) == parts.part_of(j)) continue;
      for (std::size_t i = 0; i < t * c; ++i) violations += y1[u * t * c + i] != y2[u * t * c + i];
    }
  }
  return {"part_locality", violations == 0, std::to_string(violations) + " violations"};
}

CheckResult temporal_causality(Rng& rng) {
  std::size_t violations = 0;
  for (std::size_t n : {std::size_t{1}, std::size_t{2}}) {
    ParamStore ps;
    const std::size_t v = 4, t = 8, c = 3;
    const TemporalLayer layer = TemporalLayer::create(ps, "tmp", v, c, n, 2, {}, rng);
    for (int probe = 0; probe < 5; ++probe) {
      const Tensor x = Tensor::uniform({v, t, c}, -1.0, 1.0, rng);
      const std::size_t f = std::uniform_int_distribution<std::size_t>(1, t - 1)(rng);
      Tensor x2 = x;
      for (std::size_t j = 0; j < v; ++j) x2.at(j, f, 1) -= 0.7;
      auto run = [&](const Tensor& in) {
        Tape tape(false);
        return temporal_block(tape, tape.constant(in), layer, 3).value();
      };
      const Tensor y1 = run(x), y2 = run(x2);
      for (std::size_t j = 0; j < v; ++j) {
        for (std::size_t g = 0; g < f; ++g) {
          for (std::size_t k = 0; k < c; ++k) violations += y1.at(j, g, k) != y2.at(j, g, k);
        }
      }
    }
  }
  return {"temporal_causality", violations == 0, std::to_string(violations) + " violations"};
}

CheckResult st_round_trip(Rng& rng) {
  bool ok = true;
  for (std::size_t n : {std::size_t{1}, std::size_t{5}, std::size_t{25}}) {
    const Tensor x = Tensor::uniform({6, 25, 3}, -1.0, 1.0, rng);
    ok = ok && bit_identical(st_restore(st_reorder(x, n), n, 3), x);
  }
  return {"st_round_trip", ok, ok ? "bit-exact" : "mismatch"};
}

CheckResult checkpoint_round_trip(std::uint64_t seed) {
  MicroSetup m = micro_setup(seed);
  m.config.dtype = DType::F32;
  Model model(m.config, m.partition, m.graph);
  Rng rng(seed + 2);
  const Tensor clip = Tensor::uniform({6, 4, 3}, -1.0, 1.0, rng);
  std::stringstream buf;
  write_checkpoint(buf, model, "hybrid");
  const LoadedCheckpoint loaded = read_checkpoint(buf);
  const bool ok = bit_identical(model.logits(clip), loaded.model.logits(clip)) &&
                  loaded.stage == "hybrid";
  return {"checkpoint_round_trip", ok, ok ? "bit-exact" : "forward differs after reload"};
}

CheckResult mask_round_trip(Rng& rng) {
  const OcclusionTable table = OcclusionTable::ntu25();
  const Tensor x = Tensor::uniform({25, 64, 3}, -1.0, 1.0, rng);
  const OcclusionMask a = mask_parts("left_arm", table, 25, 64);
  const OcclusionMask b = mask_temporal(0.3, TemporalStart::Random, 25, 64, rng());
  const Tensor once = apply_mask(x, a);
  const bool idem = bit_identical(apply_mask(once, a), once);
  const bool commute = bit_identical(apply_mask(once, b), apply_mask(x, mask_intersection(a, b)));
  const auto mid = mask_temporal(0.5, TemporalStart::Middle, 25, 64, 0).hidden_frames();
  const bool middle = mid.size() == 32 && mid.front() == 16 && mid.back() == 47;
  const bool ok = idem && commute && middle;
  return {"mask_protocol", ok, ok ? "idempotent, commutes, middle = frames 16-47" : "mismatch"};
}

CheckResult parse_round_trip(Rng& rng) {
  NtuBody body{72057594037931101ULL, Tensor::uniform({25, 3, 3}, -2.0, 2.0, rng), {true, true, true}};
  std::stringstream first;
  write_ntu_skeleton(first, {body}, 3);
  const SkeletonClip a = parse_ntu_skeleton(first, "S001C001P001R001A007.skeleton");
  std::stringstream second;
  write_ntu_skeleton(second, {NtuBody{body.id, a.joints, body.present}}, 3);
  const SkeletonClip b = parse_ntu_skeleton(second, "S001C001P001R001A007.skeleton");

  std::stringstream native;
  write_dataset(native, {a});
  const auto back = read_dataset(native);
  const bool ok = bit_identical(a.joints, body.joints) && bit_identical(b.joints, a.joints) &&
                  a.label == 6 && back.size() == 1 && bit_identical(back[0].joints, a.joints);
  return {"parse_round_trip", ok, ok ? "bit-exact" : "mismatch"};
}

CheckResult flops_linearity() {
  ModelConfig cfg;
  const double base = static_cast<double>(flops_estimate(cfg).total());
  cfg.window *= 2;
  const double ratio = static_cast<double>(flops_estimate(cfg).total()) / base;
  return {"flops_linearity", ratio >= 1.9 && ratio <= 2.1, fmt("total(2T)/total(T) = %.4f", ratio)};
}

}  // namespace

MicroSetup micro_setup(std::uint64_t seed) {
  ModelConfig c;
  c.joints = 6;
  c.window = 4;
  c.channels = 8;
  c.inner_channels = 4;
  c.state_size = 2;
  c.blocks = 1;
  c.sections = 2;
  c.num_classes = 3;
  c.scan_chunk = 2;
  c.seed = seed;
  c.dtype = DType::F64;
  PartPartition parts({{"upper", {0, 1, 2}}, {"lower", {3, 4, 5}}}, 6);
  return MicroSetup{c, std::move(parts), SkeletonGraph::chain(6)};
}

std::vector<CheckResult> run_checks(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckResult> out;
  auto guarded = [&](const char* name, const std::function<CheckResult()>& fn) {
    try {
      out.push_back(fn());
    } catch (const std::exception& e) {
      out.push_back({name, false, std::string("threw: ") + e.what()});
    }
  };
  guarded("scan_equivalence", [&] { return scan_equivalence(rng); });
  guarded("scan_causality", [&] { return scan_causality(rng); });
  guarded("grad_check_ops", [&] { return op_gradients(rng); });
  guarded("grad_check_model", [&] { return model_gradients(seed); });
  guarded("part_locality", [&] { return part_locality(rng); });
  guarded("temporal_causality", [&] { return temporal_causality(rng); });
  guarded("st_round_trip", [&] { return st_round_trip(rng); });
  guarded("checkpoint_round_trip", [&] { return checkpoint_round_trip(seed); });
  guarded("mask_protocol", [&] { return mask_round_trip(rng); });
  guarded("parse_round_trip", [&] { return parse_round_trip(rng); });
  guarded("flops_linearity", [&] { return flops_linearity(); });
  return out;
}

std::string format_report(const std::vector<CheckResult>& results) {
  std::size_t width = 5;
  for (const auto& r : results) width = std::max(width, r.name.size());
  std::ostringstream os;
  std::size_t failed = 0;
  for (const auto& r : results) {
    os << (r.passed ? "PASS  " : "FAIL  ") << r.name << std::string(width - r.name.size() + 2, ' ')
       << r.detail << '\n';
    failed += r.passed ? 0 : 1;
  }
  os << results.size() - failed << '/' << results.size() << " checks passed\n";
  return os.str();
}

}  // namespace partsmamba
