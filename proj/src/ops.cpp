#include "partsmamba/ops.hpp"

#include <algorithm>
#include <cmath>

namespace partsmamba {

namespace {

// C[rows, n] += A[rows, k] * B[k, n]
void gemm_acc(const double* a, const double* b, double* c, std::size_t rows, std::size_t k,
              std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* crow = c + r * n;
    const double* arow = a + r * k;
    for (std::size_t i = 0; i < k; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      const double* brow = b + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[rows, k] += G[rows, n] * B[k, n]^T
void gemm_acc_bt(const double* g, const double* b, double* c, std::size_t rows, std::size_t k,
                 std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* grow = g + r * n;
    double* crow = c + r * k;
    for (std::size_t i = 0; i < k; ++i) {
      const double* brow = b + i * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      crow[i] += acc;
    }
  }
}

// C[k, n] += A[rows, k]^T * G[rows, n]
void gemm_acc_at(const double* a, const double* g, double* c, std::size_t rows, std::size_t k,
                 std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* arow = a + r * k;
    const double* grow = g + r * n;
    for (std::size_t i = 0; i < k; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": operand shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.extent(1) != b.extent(0)) {
    throw ShapeError("matmul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " do not chain");
  }
  Tensor out({a.extent(0), b.extent(1)});
  gemm_acc(a.data().data(), b.data().data(), out.data().data(), a.extent(0), a.extent(1),
           b.extent(1));
  return out;
}

Var linear_map(Var x, Var w) {
  Tape& tape = *x.tape;
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (wv.rank() != 2 || xv.rank() == 0 || xv.shape().back() != wv.extent(0)) {
    throw ShapeError("linear_map: input " + shape_str(xv.shape()) + " incompatible with weight " +
                     shape_str(wv.shape()));
  }
  const std::size_t cin = wv.extent(0);
  const std::size_t cout = wv.extent(1);
  const std::size_t rows = xv.numel() / cin;
  Shape out_shape = xv.shape();
  out_shape.back() = cout;
  Tensor out(out_shape);
  gemm_acc(xv.data().data(), wv.data().data(), out.data().data(), rows, cin, cout);

  Tape::Backward bw;
  if (tape.needs_grad({x, w})) {
    bw = [x, w, rows, cin, cout](const Tensor& g, Tape& t) {
      const Tensor& xv = t.value(x);
      const Tensor& wv = t.value(w);
      if (t.requires_grad(x)) {
        Tensor gx(xv.shape());
        gemm_acc_bt(g.data().data(), wv.data().data(), gx.data().data(), rows, cin, cout);
        t.accumulate(x.id, gx);
      }
      if (t.requires_grad(w)) {
        Tensor gw(wv.shape());
        gemm_acc_at(xv.data().data(), g.data().data(), gw.data().data(), rows, cin, cout);
        t.accumulate(w.id, gw);
      }
    };
  }
  return tape.record("linear_map", std::move(out), std::move(bw));
}

Var pointwise_conv1d(Var x, Var k) {
  require_rank(x.value(), 3, "pointwise_conv1d");
  if (k.value().rank() != 2) {
    throw ShapeError("pointwise_conv1d: kernel must be [Cin, Cout] (width 1), got " +
                     shape_str(k.shape()));
  }
  return linear_map(x, k);
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  if (eps < 0.0) throw std::invalid_argument("layer_norm: eps must be non-negative");
  Tape& tape = *x.tape;
  const Tensor& xv = x.value();
  const std::size_t c = xv.shape().back();
  require_shape(gamma.value(), {c}, "layer_norm gamma");
  require_shape(beta.value(), {c}, "layer_norm beta");
  const std::size_t rows = xv.numel() / c;
  const auto& gv = gamma.value();
  const auto& bv = beta.value();

  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* v = xv.data().data() + r * c;
    double mean = 0.0;
    for (std::size_t i = 0; i < c; ++i) mean += v[i];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t i = 0; i < c; ++i) var += (v[i] - mean) * (v[i] - mean);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t i = 0; i < c; ++i) {
      const double h = (v[i] - mean) * is;
      xhat[r * c + i] = h;
      out[r * c + i] = h * gv[i] + bv[i];
    }
  }

  Tape::Backward bw;
  if (tape.needs_grad({x, gamma, beta})) {
    bw = [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, c](
             const Tensor& g, Tape& t) {
      const auto& gv = t.value(gamma);
      Tensor gg({c}), gb({c});
      Tensor gx(t.value(x).shape());
      const bool want_x = t.requires_grad(x);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* go = g.data().data() + r * c;
        const double* h = xhat.data().data() + r * c;
        double mean_gh = 0.0, mean_ghh = 0.0;
        for (std::size_t i = 0; i < c; ++i) {
          gg[i] += go[i] * h[i];
          gb[i] += go[i];
          const double gh = go[i] * gv[i];
          mean_gh += gh;
          mean_ghh += gh * h[i];
        }
        if (!want_x) continue;
        mean_gh /= static_cast<double>(c);
        mean_ghh /= static_cast<double>(c);
        for (std::size_t i = 0; i < c; ++i) {
          const double gh = go[i] * gv[i];
          gx[r * c + i] = inv_std[r] * (gh - mean_gh - h[i] * mean_ghh);
        }
      }
      if (want_x) t.accumulate(x.id, gx);
      t.accumulate(gamma.id, gg);
      t.accumulate(beta.id, gb);
    };
  }
  return tape.record("layer_norm", std::move(out), std::move(bw));
}

Var relu(Var x) {
  Tape& tape = *x.tape;
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  Tape::Backward bw;
  if (tape.needs_grad({x})) {
    bw = [x](const Tensor& g, Tape& t) {
      const Tensor& xv = t.value(x);
      Tensor gx(xv.shape());
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] = xv[i] > 0.0 ? g[i] : 0.0;
      t.accumulate(x.id, gx);
    };
  }
  return tape.record("relu", std::move(out), std::move(bw));
}

Var add(Var a, Var b) {
  Tape& tape = *a.tape;
  require_same(a.value(), b.value(), "add");
  Tensor out = a.value() + b.value();
  Tape::Backward bw;
  if (tape.needs_grad({a, b})) {
    bw = [a, b](const Tensor& g, Tape& t) {
      t.accumulate(a.id, g);
      t.accumulate(b.id, g);
    };
  }
  return tape.record("add", std::move(out), std::move(bw));
}

Var mul(Var a, Var b) {
  Tape& tape = *a.tape;
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same(av, bv, "mul");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  Tape::Backward bw;
  if (tape.needs_grad({a, b})) {
    bw = [a, b](const Tensor& g, Tape& t) {
      const Tensor& av = t.value(a);
      const Tensor& bv = t.value(b);
      if (t.requires_grad(a)) {
        Tensor ga(av.shape());
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] = g[i] * bv[i];
        t.accumulate(a.id, ga);
      }
      if (t.requires_grad(b)) {
        Tensor gb(bv.shape());
        for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] = g[i] * av[i];
        t.accumulate(b.id, gb);
      }
    };
  }
  return tape.record("mul", std::move(out), std::move(bw));
}

Var scale(Var s, Var x) {
  Tape& tape = *x.tape;
  if (s.value().numel() != 1) {
    throw ShapeError("scale: factor must hold one element, got " + shape_str(s.shape()));
  }
  const double sv = s.value()[0];
  Tensor out = x.value() * sv;
  Tape::Backward bw;
  if (tape.needs_grad({s, x})) {
    bw = [s, x](const Tensor& g, Tape& t) {
      const Tensor& xv = t.value(x);
      double gs = 0.0;
      for (std::size_t i = 0; i < xv.numel(); ++i) gs += g[i] * xv[i];
      t.accumulate(s.id, 0, gs);
      if (t.requires_grad(x)) t.accumulate(x.id, g * t.value(s)[0]);
    };
  }
  return tape.record("scale", std::move(out), std::move(bw));
}

Var sum(Var x) {
  Tape& tape = *x.tape;
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  Tape::Backward bw;
  if (tape.needs_grad({x})) {
    bw = [x](const Tensor& g, Tape& t) { t.accumulate(x.id, Tensor(t.value(x).shape(), g[0])); };
  }
  return tape.record("sum", Tensor::scalar(acc), std::move(bw));
}

Var gather(Var x, std::vector<std::size_t> indices, Shape out_shape, const char* op) {
  Tape& tape = *x.tape;
  const Tensor& xv = x.value();
  if (shape_numel(out_shape) != indices.size()) {
    throw ShapeError(std::string(op) + ": index count " + std::to_string(indices.size()) +
                     " does not match output shape " + shape_str(out_shape));
  }
  Tensor out(std::move(out_shape));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= xv.numel()) {
      throw ShapeError(std::string(op) + ": index out of range for " + shape_str(xv.shape()));
    }
    out[i] = xv[indices[i]];
  }
  Tape::Backward bw;
  if (tape.needs_grad({x})) {
    bw = [x, indices = std::move(indices)](const Tensor& g, Tape& t) {
      Tensor gx(t.value(x).shape());
      for (std::size_t i = 0; i < indices.size(); ++i) gx[indices[i]] += g[i];
      t.accumulate(x.id, gx);
    };
  }
  return tape.record(op, std::move(out), std::move(bw));
}

std::vector<std::size_t> reverse_axis_indices(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("reverse_axis: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];
  std::vector<std::size_t> idx(shape_numel(shape));
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t i = 0; i < inner; ++i) {
        idx[(o * n + a) * inner + i] = (o * n + (n - 1 - a)) * inner + i;
      }
    }
  }
  return idx;
}

std::vector<std::size_t> swap_leading_indices(const Shape& shape) {
  if (shape.size() < 2) throw ShapeError("swap_leading_axes: rank must be at least 2");
  const std::size_t a = shape[0], b = shape[1];
  const std::size_t inner = shape_numel(shape) / (a * b);
  std::vector<std::size_t> idx(shape_numel(shape));
  for (std::size_t j = 0; j < b; ++j) {
    for (std::size_t i = 0; i < a; ++i) {
      for (std::size_t k = 0; k < inner; ++k) {
        idx[(j * a + i) * inner + k] = (i * b + j) * inner + k;
      }
    }
  }
  return idx;
}

Tensor reverse_axis(const Tensor& x, std::size_t axis) {
  const auto idx = reverse_axis_indices(x.shape(), axis);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = x[idx[i]];
  return out;
}

Var reverse_axis(Var x, std::size_t axis) {
  return gather(x, reverse_axis_indices(x.shape(), axis), x.shape(), "reverse_axis");
}

Var swap_leading_axes(Var x) {
  Shape s = x.shape();
  auto idx = swap_leading_indices(s);
  std::swap(s[0], s[1]);
  return gather(x, std::move(idx), std::move(s), "swap_leading_axes");
}

Var concat_leading(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_leading: no inputs");
  Tape& tape = *parts.front().tape;
  Shape tail(parts.front().shape().begin() + 1, parts.front().shape().end());
  std::size_t lead = 0;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (t != tail) throw ShapeError("concat_leading: trailing extents differ");
    lead += p.shape()[0];
  }
  Shape out_shape = tail;
  out_shape.insert(out_shape.begin(), lead);
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + offset);
    offset += p.value().numel();
  }
  Tape::Backward bw;
  if (tape.needs_grad(parts)) {
    bw = [parts](const Tensor& g, Tape& t) {
      std::size_t offset = 0;
      for (const auto& p : parts) {
        const std::size_t n = t.value(p).numel();
        if (t.requires_grad(p)) {
          Tensor gp(t.value(p).shape());
          std::copy(g.data().begin() + offset, g.data().begin() + offset + n, gp.data().begin());
          t.accumulate(p.id, gp);
        }
        offset += n;
      }
    };
  }
  return tape.record("concat_leading", std::move(out), std::move(bw));
}

Var select_leading(Var x, const std::vector<std::size_t>& rows) {
  const Shape& s = x.shape();
  const std::size_t inner = x.value().numel() / s[0];
  std::vector<std::size_t> idx;
  idx.reserve(rows.size() * inner);
  for (auto r : rows) {
    if (r >= s[0]) throw ShapeError("select_leading: row out of range for " + shape_str(s));
    for (std::size_t i = 0; i < inner; ++i) idx.push_back(r * inner + i);
  }
  Shape out = s;
  out[0] = rows.size();
  return gather(x, std::move(idx), std::move(out), "select_leading");
}

Var joint_mix(Var a, Var x) {
  Tape& tape = *x.tape;
  const Tensor& av = a.value();
  const Tensor& xv = x.value();
  const std::size_t v = xv.shape()[0];
  if (av.shape() != Shape{v, v}) {
    throw ShapeError("joint_mix: matrix " + shape_str(av.shape()) + " incompatible with input " +
                     shape_str(xv.shape()));
  }
  const std::size_t inner = xv.numel() / v;
  Tensor out(xv.shape());
  gemm_acc(av.data().data(), xv.data().data(), out.data().data(), v, v, inner);
  Tape::Backward bw;
  if (tape.needs_grad({a, x})) {
    bw = [a, x, v, inner](const Tensor& g, Tape& t) {
      if (t.requires_grad(a)) {
        // ga[v, u] = sum_k g[v, k] x[u, k]
        Tensor ga({v, v});
        gemm_acc_bt(g.data().data(), t.value(x).data().data(), ga.data().data(), v, v, inner);
        t.accumulate(a.id, ga);
      }
      if (t.requires_grad(x)) {
        // gx[u, k] = sum_v a[v, u] g[v, k]
        Tensor gx(t.value(x).shape());
        gemm_acc_at(t.value(a).data().data(), g.data().data(), gx.data().data(), v, v, inner);
        t.accumulate(x.id, gx);
      }
    };
  }
  return tape.record("joint_mix", std::move(out), std::move(bw));
}

Var temporal_conv(Var x, Var k) {
  Tape& tape = *x.tape;
  const Tensor& xv = x.value();
  const Tensor& kv = k.value();
  require_rank(xv, 3, "temporal_conv");
  const std::size_t nv = xv.extent(0), nt = xv.extent(1), nc = xv.extent(2);
  if (kv.rank() != 2 || kv.extent(1) != nc || kv.extent(0) % 2 == 0) {
    throw ShapeError("temporal_conv: kernel " + shape_str(kv.shape()) +
                     " must be [odd width, " + std::to_string(nc) + "]");
  }
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(kv.extent(0) / 2);
  const std::ptrdiff_t width = static_cast<std::ptrdiff_t>(kv.extent(0));
  const std::ptrdiff_t tn = static_cast<std::ptrdiff_t>(nt);
  Tensor out(xv.shape());
  for (std::size_t v = 0; v < nv; ++v) {
    for (std::ptrdiff_t t = 0; t < tn; ++t) {
      double* o = &out.at(v, t, 0);
      for (std::ptrdiff_t w = 0; w < width; ++w) {
        const std::ptrdiff_t src = t + w - half;
        if (src < 0 || src >= tn) continue;
        const double* xi = xv.data().data() + (v * nt + static_cast<std::size_t>(src)) * nc;
        const double* kw = kv.data().data() + static_cast<std::size_t>(w) * nc;
        for (std::size_t c = 0; c < nc; ++c) o[c] += kw[c] * xi[c];
      }
    }
  }
  Tape::Backward bw;
  if (tape.needs_grad({x, k})) {
    bw = [x, k, nv, nt, tn, nc, half, width](const Tensor& g, Tape& t) {
      const Tensor& xv = t.value(x);
      const Tensor& kv = t.value(k);
      Tensor gx(xv.shape()), gk(kv.shape());
      for (std::size_t v = 0; v < nv; ++v) {
        for (std::ptrdiff_t tt = 0; tt < tn; ++tt) {
          const double* go = g.data().data() + (v * nt + static_cast<std::size_t>(tt)) * nc;
          for (std::ptrdiff_t w = 0; w < width; ++w) {
            const std::ptrdiff_t src = tt + w - half;
            if (src < 0 || src >= tn) continue;
            const double* xi = xv.data().data() + (v * nt + static_cast<std::size_t>(src)) * nc;
            double* gxi = &gx.at(v, src, 0);
            const double* kw = kv.data().data() + static_cast<std::size_t>(w) * nc;
            double* gkw = &gk.at(w, 0);
            for (std::size_t c = 0; c < nc; ++c) {
              gxi[c] += kw[c] * go[c];
              gkw[c] += xi[c] * go[c];
            }
          }
        }
      }
      t.accumulate(x.id, gx);
      t.accumulate(k.id, gk);
    };
  }
  return tape.record("temporal_conv", std::move(out), std::move(bw));
}

Var mean_pool(Var x) {
  Tape& tape = *x.tape;
  const Tensor& xv = x.value();
  require_rank(xv, 3, "mean_pool");
  const std::size_t rows = xv.extent(0) * xv.extent(1);
  const std::size_t nc = xv.extent(2);
  Tensor out({nc});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < nc; ++c) out[c] += xv[r * nc + c];
  }
  out *= 1.0 / static_cast<double>(rows);
  Tape::Backward bw;
  if (tape.needs_grad({x})) {
    bw = [x, rows, nc](const Tensor& g, Tape& t) {
      Tensor gx(t.value(x).shape());
      const double inv = 1.0 / static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < nc; ++c) gx[r * nc + c] = g[c] * inv;
      }
      t.accumulate(x.id, gx);
    };
  }
  return tape.record("mean_pool", std::move(out), std::move(bw));
}

Var cross_entropy(Var logits, std::size_t label) {
  Tape& tape = *logits.tape;
  const Tensor& lv = logits.value();
  require_rank(lv, 1, "cross_entropy");
  if (label >= lv.numel()) {
    throw std::out_of_range("cross_entropy: label " + std::to_string(label) + " out of range");
  }
  const double mx = *std::max_element(lv.data().begin(), lv.data().end());
  double z = 0.0;
  for (double v : lv.data()) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  Tape::Backward bw;
  if (tape.needs_grad({logits})) {
    bw = [logits, label, lse](const Tensor& g, Tape& t) {
      const Tensor& lv = t.value(logits);
      Tensor gl(lv.shape());
      for (std::size_t i = 0; i < lv.numel(); ++i) {
        gl[i] = g[0] * (std::exp(lv[i] - lse) - (i == label ? 1.0 : 0.0));
      }
      t.accumulate(logits.id, gl);
    };
  }
  return tape.record("cross_entropy", Tensor::scalar(lse - lv[label]), std::move(bw));
}

}  // namespace partsmamba
