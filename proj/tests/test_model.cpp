#include <algorithm>
#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include "partsmamba/checkpoint.hpp"
#include "partsmamba/grad_check.hpp"
#include "partsmamba/model.hpp"
#include "partsmamba/ops.hpp"
#include "partsmamba/verify.hpp"

using namespace partsmamba;

namespace {

Model micro_model(std::uint64_t seed = 0) {
  MicroSetup m = micro_setup(seed);
  return Model(m.config, m.partition, m.graph);
}

Tensor head_value(const Model& model, const Tensor& clip) {
  Tape tape(false);
  return model.head().apply(tape, tape.constant(clip)).value();
}

Tensor head_oracle(const GcnHead& h, const Tensor& x) {
  const std::size_t v = x.extent(0), t = x.extent(1);
  auto layer = [&](const Tensor& in, const Tensor& w) {
    const std::size_t ci = in.extent(2), co = w.extent(1);
    Tensor out({v, t, co});
    for (std::size_t a = 0; a < v; ++a) {
      for (std::size_t b = 0; b < t; ++b) {
        for (std::size_t j = 0; j < co; ++j) {
          double acc = 0;
          for (std::size_t u = 0; u < v; ++u) {
            for (std::size_t i = 0; i < ci; ++i) {
              acc += h.adjacency.at(a, u) * in.at(u, b, i) * w.at(i, j);
            }
          }
          out.at(a, b, j) = std::max(acc, 0.0);
        }
      }
    }
    return out;
  };
  const Tensor h2 = layer(layer(x, h.w1->value), h.w2->value);
  const Tensor& k = h.temporal->value;
  const std::size_t c = h2.extent(2);
  Tensor out(h2.shape());
  for (std::size_t a = 0; a < v; ++a) {
    for (std::size_t b = 0; b < t; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (std::size_t w = 0; w < 5; ++w) {
          const long src = static_cast<long>(b) + static_cast<long>(w) - 2;
          if (src < 0 || src >= static_cast<long>(t)) continue;
          acc += k.at(w, ch) * h2.at(a, static_cast<std::size_t>(src), ch);
        }
        out.at(a, b, ch) = std::max(acc, 0.0);
      }
    }
  }
  return out;
}

}  // namespace

TEST(GcnHead, ZeroInputZeroOutput) {
  const Model m = micro_model();
  EXPECT_EQ(head_value(m, Tensor({6, 4, 3})), Tensor({6, 4, 8}));
}

TEST(GcnHead, RowNormalizedAdjacencyKeepsEqualJoints) {
  const Model m = micro_model();
  const Tensor& a = m.head().adjacency;
  for (std::size_t r = 0; r < 6; ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < 6; ++c) sum += a.at(r, c);
    EXPECT_NEAR(sum, 1.0, 1e-15);
  }
  // Every joint carrying the same features is a fixed point of Â·X.
  Tensor x({6, 4, 3});
  for (std::size_t j = 0; j < 6; ++j) {
    for (std::size_t t = 0; t < 4; ++t) {
      for (std::size_t c = 0; c < 3; ++c) x.at(j, t, c) = 0.1 * t - 0.2 * c + 0.05;
    }
  }
  Tape tape(false);
  const Tensor y = joint_mix(tape.constant(a), tape.constant(x)).value();
  EXPECT_LE(max_abs_diff(y, x), 1e-15);
}

TEST(GcnHead, MatchesNaiveOracle) {
  const Model m = micro_model(3);
  Rng rng(4);
  const Tensor x = Tensor::uniform({6, 4, 3}, -1, 1, rng);
  EXPECT_LE(max_abs_diff(head_value(m, x), head_oracle(m.head(), x)), 1e-12);
}

TEST(SpatialBlock, ZeroInputStaysZero) {
  const Model m = micro_model(5);
  Tape tape(false);
  const Tensor y =
      m.spatial_block(0).apply(tape, tape.constant(Tensor({6, 4, 8})), m.partition(), 2).value();
  EXPECT_EQ(y, Tensor({6, 4, 8}));
}

TEST(SpatialBlock, PartsGateProbeIsPartLocal) {
  const Model m = micro_model(6);
  Rng rng(7);
  FusionProbe probe{true};
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = Tensor::uniform({6, 4, 8}, -1, 1, rng);
    const std::size_t j = std::uniform_int_distribution<std::size_t>(0, 5)(rng);
    Tensor x2 = x;
    x2.at(j, 2, 3) += 0.5;
    Tape tape(false);
    const Tensor y1 = m.spatial_block(0).apply(tape, tape.constant(x), m.partition(), 2, probe).value();
    const Tensor y2 = m.spatial_block(0).apply(tape, tape.constant(x2), m.partition(), 2, probe).value();
    for (std::size_t u = 0; u < 6; ++u) {
      if (m.partition().part_of(u) == m.partition().part_of(j)) continue;
      for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t c = 0; c < 8; ++c) ASSERT_EQ(y1.at(u, t, c), y2.at(u, t, c));
      }
    }
  }
}

TEST(Model, ParameterNamesAndShapes) {
  const Model m = micro_model();
  const ParamStore& ps = m.params();
  EXPECT_EQ(ps.get("head.gcn1.weight").value.shape(), (Shape{3, 8}));
  EXPECT_EQ(ps.get("head.tconv.weight").value.shape(), (Shape{5, 8}));
  EXPECT_EQ(ps.get("block0.spatial.proj_parts.weight").value.shape(), (Shape{8, 4}));
  EXPECT_EQ(ps.get("block0.spatial.w_f").value.shape(), (Shape{4, 8}));
  EXPECT_EQ(ps.get("block0.spatial.topo_parts.alpha").value, Tensor::scalar(0.0));
  EXPECT_EQ(ps.get("block0.temporal.w_in").value.shape(), (Shape{24, 16}));
  EXPECT_EQ(ps.get("classifier.weight").value.shape(), (Shape{8, 3}));
  EXPECT_FALSE(ps.contains("classifier.bias"));
}

TEST(Model, ForwardShapeAndDeterminism) {
  const Model a = micro_model(8), b = micro_model(8);
  Rng rng(9);
  const Tensor clip = Tensor::uniform({6, 4, 3}, -1, 1, rng);
  const Tensor la = a.logits(clip);
  EXPECT_EQ(la.shape(), (Shape{3}));
  EXPECT_TRUE(bit_identical(la, b.logits(clip)));
  EXPECT_TRUE(bit_identical(la, a.logits(clip)));
}

TEST(Model, RejectsBadInput) {
  const Model m = micro_model();
  EXPECT_THROW(m.logits(Tensor({6, 5, 3})), ShapeError);
  Tensor bad({6, 4, 3});
  bad[7] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(m.logits(bad), NumericError);
}

TEST(Model, PermutingClassifierColumnsPermutesLogits) {
  Model m = micro_model(10);
  Rng rng(11);
  const Tensor clip = Tensor::uniform({6, 4, 3}, -1, 1, rng);
  const Tensor before = m.logits(clip);
  Tensor& w = m.params().get("classifier.weight").value;
  for (std::size_t r = 0; r < w.extent(0); ++r) std::swap(w.at(r, 0), w.at(r, 2));
  const Tensor after = m.logits(clip);
  EXPECT_EQ(after[0], before[2]);
  EXPECT_EQ(after[2], before[0]);
  EXPECT_EQ(after[1], before[1]);
}

TEST(Model, GcnOnlyModelHasNoBlocks) {
  MicroSetup s = micro_setup();
  s.config.blocks = 0;
  const Model m(s.config, s.partition, s.graph);
  EXPECT_FALSE(m.params().contains("block0.spatial.w_f"));
  Model hybrid = micro_model();
  EXPECT_EQ(hybrid.copy_matching(m), m.params().size());
  EXPECT_EQ(hybrid.params().get("head.gcn1.weight").value, m.params().get("head.gcn1.weight").value);
}

TEST(Model, F32StorageRoundsParameters) {
  MicroSetup s = micro_setup();
  s.config.dtype = DType::F32;
  const Model m(s.config, s.partition, s.graph);
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    for (double v : m.params()[i].value.data()) {
      ASSERT_EQ(v, static_cast<double>(static_cast<float>(v))) << m.params()[i].name;
    }
  }
}

TEST(Model, MicroGradientCheck) {
  Model m = micro_model(12);
  Rng rng(13);
  std::vector<Param*> params;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    Param& p = m.params()[i];
    for (auto& v : p.value.data()) v += std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
    params.push_back(&p);
  }
  const Tensor clip = Tensor::uniform({6, 4, 3}, -1, 1, rng);
  const auto rep = grad_check([&](Tape& t) { return cross_entropy(m.forward(t, clip), 2); }, params);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error << " at " << rep.worst_param << rep.failure;
  EXPECT_EQ(rep.entries_checked, m.params().scalar_count());
}

TEST(Flops, LinearInWindow) {
  ModelConfig c;
  c.window = 64;
  const FlopCount a = flops_estimate(c);
  c.window = 128;
  const FlopCount b = flops_estimate(c);
  EXPECT_EQ(b.head, 2 * a.head);
  EXPECT_EQ(b.spatial, 2 * a.spatial);
  EXPECT_EQ(b.temporal, 2 * a.temporal);
  const double ratio = static_cast<double>(b.total()) / static_cast<double>(a.total());
  EXPECT_GE(ratio, 1.9);
  EXPECT_LE(ratio, 2.1);
}

TEST(Flops, BlocksScaleSpatialAndTemporal) {
  ModelConfig c;
  c.blocks = 0;
  const FlopCount none = flops_estimate(c);
  EXPECT_EQ(none.spatial, 0u);
  EXPECT_EQ(none.temporal, 0u);
  c.blocks = 3;
  const FlopCount three = flops_estimate(c);
  EXPECT_EQ(three.head, none.head);
  c.blocks = 1;
  EXPECT_EQ(three.spatial, 3 * flops_estimate(c).spatial);
}

TEST(Flops, ScanStepCount) {
  // selection 2CS+3C, discretization 2CS, update 2CS, readout CS+C.
  EXPECT_EQ(scan_step_flops(4, 2), 16u + 12u + 16u + 16u + 12u);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  for (DType d : {DType::F32, DType::F64}) {
    MicroSetup s = micro_setup(14);
    s.config.dtype = d;
    Model m(s.config, s.partition, s.graph);
    Rng rng(15);
    for (std::size_t i = 0; i < m.params().size(); ++i) {
      for (auto& v : m.params()[i].value.data()) v += std::uniform_real_distribution<double>(-1, 1)(rng);
    }
    m.round_to_dtype();
    std::stringstream buf;
    write_checkpoint(buf, m, "hybrid");
    const LoadedCheckpoint back = read_checkpoint(buf);
    EXPECT_EQ(back.stage, "hybrid");
    ASSERT_EQ(back.model.params().size(), m.params().size());
    for (std::size_t i = 0; i < m.params().size(); ++i) {
      EXPECT_EQ(back.model.params()[i].name, m.params()[i].name);
      EXPECT_TRUE(bit_identical(back.model.params()[i].value, m.params()[i].value));
    }
    const Tensor clip = Tensor::uniform({6, 4, 3}, -1, 1, rng);
    EXPECT_TRUE(bit_identical(back.model.logits(clip), m.logits(clip)));
  }
}

TEST(Checkpoint, RejectsCorruptInput) {
  const Model m = micro_model();
  std::stringstream buf;
  write_checkpoint(buf, m, "gcn");
  const std::string full = buf.str();

  std::stringstream truncated(full.substr(0, full.size() - 9));
  EXPECT_THROW(read_checkpoint(truncated), std::runtime_error);

  std::string wrong_magic = full;
  wrong_magic[0] = 'x';
  std::stringstream bad(wrong_magic);
  EXPECT_THROW(read_checkpoint(bad), ParseError);

  std::string wrong_version = full;
  wrong_version.replace(wrong_version.find(" 1\n"), 3, " 7\n");
  std::stringstream later(wrong_version);
  EXPECT_THROW(read_checkpoint(later), ParseError);
}
