// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#include "icllab/ndiff/ops.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <limits>
#include <numbers>
#include <string_view>

#include "icllab/errors.hpp"
#include "vecmath.hpp"

namespace icllab::ndiff {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

CMatMap cmap(const Tensor& t) { return CMatMap(t.ptr(), t.rows(), t.cols()); }
MatMap map(Tensor& t) { return MatMap(t.ptr(), t.rows(), t.cols()); }

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

void require_same_graph(Var a, Var b) {
  if (&a.graph() != &b.graph()) throw ShapeError("operands belong to different graphs");
}

enum class Bcast { none, a_scalar, b_scalar };

Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::none;
  if (a.numel() == 1) return Bcast::a_scalar;
  if (b.numel() == 1) return Bcast::b_scalar;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

double sum_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;


// In-place stabilised softmax over the first `n` entries of a row; entries
// with keep == 0 are set to exactly 0.
void softmax_row(double* row, std::size_t n, const std::uint8_t* keep) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j)
    if (!keep || keep[j]) mx = std::max(mx, row[j]);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (!keep || keep[j]) {
      row[j] = std::exp(row[j] - mx);
      total += row[j];
    } else {
      row[j] = 0.0;
    }
  }
  const double inv = 1.0 / total;
  for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner extents differ " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  Tensor out = Tensor::uninitialized({av.rows(), bv.cols()});
  map(out).noalias() = cmap(av) * cmap(bv);
  Graph* g = &a.graph();
  const auto ia = a.id(), ib = b.id();
  return g->record(std::move(out), {ia, ib}, [g, ia, ib](const Tensor& go, GradBuffers& grads) {
    if (Tensor* ga = grads.sink(ia)) map(*ga).noalias() += cmap(go) * cmap(g->value(ib)).transpose();
    if (Tensor* gb = grads.sink(ib)) map(*gb).noalias() += cmap(g->value(ia)).transpose() * cmap(go);
  });
}

Var linear(Var x, Var w, Var bias) {
  require_same_graph(x, w);
  require_same_graph(x, bias);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require_rank2(xv, "linear");
  require_rank2(wv, "linear");
  if (xv.cols() != wv.rows()) {
    throw ShapeError("linear: inner extents differ " + shape_str(xv.shape()) + " x " + shape_str(wv.shape()));
  }
  const std::size_t m = xv.rows(), n = wv.cols();
  if (bias.value().numel() != n) throw ShapeError("linear: bias length does not match columns");
  Tensor out = Tensor::uninitialized({m, n});
  map(out).noalias() = cmap(xv) * cmap(wv);
  map(out).rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().ptr(), n);
  Graph* g = &x.graph();
  const auto ix = x.id(), iw = w.id(), ib = bias.id();
  return g->record(std::move(out), {ix, iw, ib}, [g, ix, iw, ib, m, n](const Tensor& go, GradBuffers& grads) {
    if (Tensor* gx = grads.sink(ix)) map(*gx).noalias() += cmap(go) * cmap(g->value(iw)).transpose();
    if (Tensor* gw = grads.sink(iw)) map(*gw).noalias() += cmap(g->value(ix)).transpose() * cmap(go);
    if (Tensor* gb = grads.sink(ib)) MatMap(gb->ptr(), 1, n) += CMatMap(go.ptr(), m, n).colwise().sum();
  });
}

Var transpose(Var a) {
  require_rank2(a.value(), "transpose");
  const auto ia = a.id();
  return a.graph().record(a.value().transposed(), {ia}, [ia](const Tensor& go, GradBuffers& grads) {
    if (Tensor* ga = grads.sink(ia)) map(*ga) += cmap(go).transpose();
  });
}

namespace {

template <class Fwd>
Var binary(Var a, Var b, const char* name, Fwd fwd, bool is_mul) {
  require_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Bcast kind = broadcast_kind(av, bv, name);
  const Tensor& big = kind == Bcast::a_scalar ? bv : av;
  Tensor out = Tensor::uninitialized(big.shape());
  const std::size_t n = out.numel();
  if (kind == Bcast::none) {
    const double* x = av.ptr();
    const double* y = bv.ptr();
    double* o = out.ptr();
    for (std::size_t i = 0; i < n; ++i) o[i] = fwd(x[i], y[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double x = kind == Bcast::a_scalar ? av[0] : av[i];
      const double y = kind == Bcast::b_scalar ? bv[0] : bv[i];
      out[i] = fwd(x, y);
    }
  }
  Graph* g = &a.graph();
  const auto ia = a.id(), ib = b.id();
  // d/dx and d/dy of x+y, x-y, x*y.
  const double sign_b = std::string_view(name) == "sub" ? -1.0 : 1.0;
  return g->record(std::move(out), {ia, ib}, [=](const Tensor& go, GradBuffers& grads) {
    const Tensor& x = g->value(ia);
    const Tensor& y = g->value(ib);
    if (kind == Bcast::none) {
      const double* gp = go.ptr();
      if (Tensor* ga = grads.sink(ia)) {
        double* o = ga->ptr();
        if (is_mul) for (std::size_t i = 0; i < n; ++i) o[i] += gp[i] * y[i];
        else for (std::size_t i = 0; i < n; ++i) o[i] += gp[i];
      }
      if (Tensor* gb = grads.sink(ib)) {
        double* o = gb->ptr();
        if (is_mul) for (std::size_t i = 0; i < n; ++i) o[i] += gp[i] * x[i];
        else for (std::size_t i = 0; i < n; ++i) o[i] += sign_b * gp[i];
      }
      return;
    }
    if (Tensor* ga = grads.sink(ia)) {
      for (std::size_t i = 0; i < n; ++i) {
        const double yi = kind == Bcast::b_scalar ? y[0] : y[i];
        const double d = is_mul ? go[i] * yi : go[i];
        if (kind == Bcast::a_scalar) (*ga)[0] += d; else (*ga)[i] += d;
      }
    }
    if (Tensor* gb = grads.sink(ib)) {
      for (std::size_t i = 0; i < n; ++i) {
        const double xi = kind == Bcast::a_scalar ? x[0] : x[i];
        const double d = is_mul ? go[i] * xi : sign_b * go[i];
        if (kind == Bcast::b_scalar) (*gb)[0] += d; else (*gb)[i] += d;
      }
    }
  });
}

template <class Fwd, class Slope>
Var unary(Var a, Fwd fwd, Slope slope) {
  const Tensor& av = a.value();
  Tensor out = Tensor::uninitialized(av.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
  Graph* g = &a.graph();
  const auto ia = a.id();
  return g->record(std::move(out), {ia}, [=](const Tensor& go, GradBuffers& grads) {
    if (Tensor* ga = grads.sink(ia)) {
      const Tensor& x = g->value(ia);
      for (std::size_t i = 0; i < n; ++i) (*ga)[i] += go[i] * slope(x[i]);
    }
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary(a, b, "add", [](double x, double y) { return x + y; }, false);
}
Var sub(Var a, Var b) {
  return binary(a, b, "sub", [](double x, double y) { return x - y; }, false);
}
Var mul(Var a, Var b) {
  return binary(a, b, "mul", [](double x, double y) { return x * y; }, true);
}

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return factor * x; }, [factor](double) { return factor; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var gelu(Var a) {
  const Tensor& av = a.value();
  const std::size_t n = av.numel();
  Tensor out = Tensor::uninitialized(av.shape());
  // Phi(x) is kept for the backward pass: gelu'(x) = Phi(x) + x phi(x).
  auto cdf = std::make_shared<std::vector<double>>(n);
  double* c = cdf->data();
  for (std::size_t i = 0; i < n; ++i) c[i] = av[i] * kInvSqrt2;
  detail::erf_array(c, c, n);
  for (std::size_t i = 0; i < n; ++i) {
    c[i] = 0.5 * (1.0 + c[i]);
    out[i] = av[i] * c[i];
  }
  Graph* g = &a.graph();
  const auto ia = a.id();
  return g->record(std::move(out), {ia}, [g, ia, n, cdf](const Tensor& go, GradBuffers& grads) {
    if (Tensor* ga = grads.sink(ia)) {
      const Tensor& x = g->value(ia);
      std::vector<double> pdf(n);
      for (std::size_t i = 0; i < n; ++i) pdf[i] = -0.5 * x[i] * x[i];
      detail::exp_array(pdf.data(), pdf.data(), n);
      for (std::size_t i = 0; i < n; ++i) (*ga)[i] += go[i] * ((*cdf)[i] + x[i] * kInvSqrt2Pi * pdf[i]);
    }
  });
}

Var sum(Var a) {
  const auto ia = a.id();
  return a.graph().record(Tensor::scalar(sum_of(a.value().data())), {ia},
                          [ia](const Tensor& go, GradBuffers& grads) {
                            if (Tensor* ga = grads.sink(ia))
                              for (double& v : ga->data()) v += go[0];
                          });
}

Var mean(Var a) {
  const std::size_t n = a.value().numel();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  const auto ia = a.id();
  return a.graph().record(Tensor::scalar(sum_of(a.value().data()) / static_cast<double>(n)), {ia},
                          [ia, n](const Tensor& go, GradBuffers& grads) {
                            if (Tensor* ga = grads.sink(ia)) {
                              const double d = go[0] / static_cast<double>(n);
                              for (double& v : ga->data()) v += d;
                            }
                          });
}

Var elementwise(Elementwise kind, std::span<const Var> operands, double factor) {
  auto need = [&](std::size_t n) {
    if (operands.size() != n) throw ShapeError("elementwise: wrong operand count");
  };
  switch (kind) {
    case Elementwise::add: need(2); return add(operands[0], operands[1]);
    case Elementwise::sub: need(2); return sub(operands[0], operands[1]);
    case Elementwise::mul: need(2); return mul(operands[0], operands[1]);
    case Elementwise::scale: need(1); return scale(operands[0], factor);
    case Elementwise::gelu: need(1); return gelu(operands[0]);
    case Elementwise::square: need(1); return square(operands[0]);
    case Elementwise::mean: need(1); return mean(operands[0]);
  }
  throw ShapeError("elementwise: unknown kind");
}

Mask Mask::causal(std::size_t n) {
  Mask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c <= r; ++c) m.keep[r * n + c] = 1;
  return m;
}

Var softmax_rows(Var t, const Mask* mask) {
  const Tensor& tv = t.value();
  require_rank2(tv, "softmax_rows");
  const std::size_t m = tv.rows(), n = tv.cols();
  if (mask) {
    if (mask->rows != m || mask->cols != n || mask->keep.size() != m * n) throw ShapeError("softmax_rows: mask shape");
    for (std::size_t r = 0; r < m; ++r) {
      if (std::none_of(mask->keep.begin() + r * n, mask->keep.begin() + (r + 1) * n, [](auto k) { return k != 0; })) {
        throw MaskError("softmax_rows: row " + std::to_string(r) + " is fully masked");
      }
    }
  }
  Tensor out = tv;
  for (std::size_t r = 0; r < m; ++r) softmax_row(out.ptr() + r * n, n, mask ? mask->keep.data() + r * n : nullptr);
  Graph* g = &t.graph();
  const auto it = t.id();
  const auto self = g->size();
  return g->record(std::move(out), {it}, [g, it, self, m, n](const Tensor& go, GradBuffers& grads) {
    Tensor* gt = grads.sink(it);
    if (!gt) return;
    const Tensor& p = g->value(self);
    for (std::size_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += go(r, c) * p(r, c);
      for (std::size_t c = 0; c < n; ++c) (*gt)(r, c) += p(r, c) * (go(r, c) - dot);
    }
  });
}

Var add_row(Var a, Var bias) {
  require_same_graph(a, bias);
  const Tensor& av = a.value();
  require_rank2(av, "add_row");
  const std::size_t m = av.rows(), n = av.cols();
  if (bias.value().numel() != n) throw ShapeError("add_row: bias length does not match columns");
  Tensor out = av;
  map(out).rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().ptr(), n);
  const auto ia = a.id(), ib = bias.id();
  return a.graph().record(std::move(out), {ia, ib}, [ia, ib, m, n](const Tensor& go, GradBuffers& grads) {
    if (Tensor* ga = grads.sink(ia)) map(*ga) += cmap(go);
    if (Tensor* gb = grads.sink(ib)) MatMap(gb->ptr(), 1, n) += CMatMap(go.ptr(), m, n).colwise().sum();
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.value();
  require_rank2(xv, "layer_norm");
  const std::size_t m = xv.rows(), n = xv.cols();
  if (gamma.value().numel() != n || beta.value().numel() != n) throw ShapeError("layer_norm: affine length");
  auto xhat = std::make_shared<Tensor>(Tensor::uninitialized({m, n}));
  auto rstd = std::make_shared<std::vector<double>>(m);
  Tensor out = Tensor::uninitialized({m, n});
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = xv.ptr() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += row[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(n);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (row[c] - mu) * rs;
      (*xhat)(r, c) = h;
      out(r, c) = h * gv[c] + bv[c];
    }
  }
  Graph* g = &x.graph();
  const auto ix = x.id(), ig = gamma.id(), ib = beta.id();
  return g->record(std::move(out), {ix, ig, ib}, [=](const Tensor& go, GradBuffers& grads) {
    const double* gop = go.ptr();
    const double* xh = xhat->ptr();
    if (Tensor* gg = grads.sink(ig))
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) gg->ptr()[c] += gop[r * n + c] * xh[r * n + c];
    if (Tensor* gb = grads.sink(ib))
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) gb->ptr()[c] += gop[r * n + c];
    if (Tensor* gx = grads.sink(ix)) {
      const double* gam = g->value(ig).ptr();
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t r = 0; r < m; ++r) {
        const double* gr = gop + r * n;
        const double* hr = xh + r * n;
        double* out_r = gx->ptr() + r * n;
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          const double dh = gr[c] * gam[c];
          s1 += dh;
          s2 += dh * hr[c];
        }
        s1 *= inv_n;
        s2 *= inv_n;
        const double rs = (*rstd)[r];
        for (std::size_t c = 0; c < n; ++c) out_r[c] += rs * (gr[c] * gam[c] - s1 - hr[c] * s2);
      }
    }
  });
}

Var reshape(Var a, Shape shape) {
  const auto ia = a.id();
  return a.graph().record(a.value().reshaped(std::move(shape)), {ia}, [ia](const Tensor& go, GradBuffers& grads) {
    if (Tensor* ga = grads.sink(ia))
      for (std::size_t i = 0; i < go.numel(); ++i) (*ga)[i] += go[i];
  });
}

Var select_rows(Var a, std::vector<std::size_t> index) {
  const Tensor& av = a.value();
  require_rank2(av, "select_rows");
  const std::size_t n = av.cols();
  Tensor out = Tensor::uninitialized({index.size(), n});
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= av.rows()) throw ShapeError("select_rows: index out of range");
    std::copy_n(av.ptr() + index[r] * n, n, out.ptr() + r * n);
  }
  const auto ia = a.id();
  return a.graph().record(std::move(out), {ia}, [ia, n, index = std::move(index)](const Tensor& go, GradBuffers& grads) {
    if (Tensor* ga = grads.sink(ia))
      for (std::size_t r = 0; r < index.size(); ++r)
        for (std::size_t c = 0; c < n; ++c) (*ga)[index[r] * n + c] += go[r * n + c];
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const std::size_t n = parts[0].value().cols();
  std::size_t m = 0;
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    require_same_graph(parts[0], p);
    require_rank2(p.value(), "concat_rows");
    if (p.value().cols() != n) throw ShapeError("concat_rows: column counts differ");
    ids.push_back(p.id());
    offsets.push_back(m);
    m += p.value().rows();
  }
  Tensor out = Tensor::uninitialized({m, n});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    std::copy(v.data().begin(), v.data().end(), out.ptr() + offsets[k] * n);
  }
  return parts[0].graph().record(std::move(out), ids, [ids, offsets, n](const Tensor& go, GradBuffers& grads) {
    for (std::size_t k = 0; k < ids.size(); ++k)
      if (Tensor* gp = grads.sink(ids[k]))
        for (std::size_t i = 0; i < gp->numel(); ++i) (*gp)[i] += go[offsets[k] * n + i];
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const std::size_t m = parts[0].value().rows();
  std::size_t n = 0;
  std::vector<std::size_t> ids, offsets, widths;
  for (const Var& p : parts) {
    require_same_graph(parts[0], p);
    require_rank2(p.value(), "concat_cols");
    if (p.value().rows() != m) throw ShapeError("concat_cols: row counts differ");
    ids.push_back(p.id());
    offsets.push_back(n);
    widths.push_back(p.value().cols());
    n += p.value().cols();
  }
  Tensor out = Tensor::uninitialized({m, n});
  for (std::size_t k = 0; k < parts.size(); ++k)
    map(out).middleCols(offsets[k], widths[k]) = cmap(parts[k].value());
  return parts[0].graph().record(std::move(out), ids, [ids, offsets, widths](const Tensor& go, GradBuffers& grads) {
    for (std::size_t k = 0; k < ids.size(); ++k)
      if (Tensor* gp = grads.sink(ids[k])) map(*gp) += cmap(go).middleCols(offsets[k], widths[k]);
  });
}

Var sum_rows(Var a) {
  const Tensor& av = a.value();
  require_rank2(av, "sum_rows");
  const std::size_t m = av.rows();
  Tensor out = Tensor::uninitialized({m, 1});
  map(out) = cmap(av).rowwise().sum();
  const auto ia = a.id();
  return a.graph().record(std::move(out), {ia}, [ia](const Tensor& go, GradBuffers& grads) {
    if (Tensor* ga = grads.sink(ia)) map(*ga).colwise() += Eigen::Map<const Eigen::VectorXd>(go.ptr(), go.numel());
  });
}

Var causal_attention(Var qkv, std::size_t batch, std::size_t seq, std::size_t heads) {
  const Tensor& in = qkv.value();
  require_rank2(in, "causal_attention");
  if (in.rows() != batch * seq || in.cols() % 3 != 0) throw ShapeError("causal_attention: qkv shape");
  const std::size_t width = in.cols() / 3;
  if (heads == 0 || width % heads != 0) throw ShapeError("causal_attention: width not divisible by heads");
  const std::size_t hd = width / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
  const auto stride = static_cast<Eigen::Index>(3 * width);
  const auto ostride = static_cast<Eigen::Index>(width);

  auto probs = std::make_shared<std::vector<double>>(batch * heads * seq * seq, 0.0);
  Tensor out = Tensor::uninitialized({batch * seq, width});
  RowMat scores(seq, seq);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* base = in.ptr() + b * seq * 3 * width;
    for (std::size_t h = 0; h < heads; ++h) {
      CStridedMap q(base + h * hd, seq, hd, Eigen::OuterStride<>(stride));
      CStridedMap k(base + width + h * hd, seq, hd, Eigen::OuterStride<>(stride));
      CStridedMap v(base + 2 * width + h * hd, seq, hd, Eigen::OuterStride<>(stride));
      scores.noalias() = sc * (q * k.transpose());
      double* p = probs->data() + (b * heads + h) * seq * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        std::copy_n(scores.data() + i * seq, i + 1, p + i * seq);
        softmax_row(p + i * seq, i + 1, nullptr);
      }
      StridedMap o(out.ptr() + b * seq * width + h * hd, seq, hd, Eigen::OuterStride<>(ostride));
      o.noalias() = CMatMap(p, seq, seq) * v;
    }
  }
  Graph* g = &qkv.graph();
  const auto iq = qkv.id();
  return g->record(std::move(out), {iq}, [=](const Tensor& go, GradBuffers& grads) {
    Tensor* gin = grads.sink(iq);
    if (!gin) return;
    const Tensor& x = g->value(iq);
    RowMat dp(seq, seq);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* base = x.ptr() + b * seq * 3 * width;
      double* gbase = gin->ptr() + b * seq * 3 * width;
      for (std::size_t h = 0; h < heads; ++h) {
        CStridedMap q(base + h * hd, seq, hd, Eigen::OuterStride<>(stride));
        CStridedMap k(base + width + h * hd, seq, hd, Eigen::OuterStride<>(stride));
        CStridedMap v(base + 2 * width + h * hd, seq, hd, Eigen::OuterStride<>(stride));
        StridedMap gq(gbase + h * hd, seq, hd, Eigen::OuterStride<>(stride));
        StridedMap gk(gbase + width + h * hd, seq, hd, Eigen::OuterStride<>(stride));
        StridedMap gv(gbase + 2 * width + h * hd, seq, hd, Eigen::OuterStride<>(stride));
        CStridedMap gout(go.ptr() + b * seq * width + h * hd, seq, hd, Eigen::OuterStride<>(ostride));
        CMatMap p(probs->data() + (b * heads + h) * seq * seq, seq, seq);
        gv.noalias() += p.transpose() * gout;
        dp.noalias() = gout * v.transpose();
        for (std::size_t i = 0; i < seq; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j <= i; ++j) dot += dp(i, j) * p(i, j);
          for (std::size_t j = 0; j < seq; ++j) dp(i, j) = j <= i ? sc * p(i, j) * (dp(i, j) - dot) : 0.0;
        }
        gq.noalias() += dp * k;
        gk.noalias() += dp.transpose() * q;
      }
    }
  });
}

Var solve_spd(Var a, Var b) {
  require_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "solve_spd");
  require_rank2(bv, "solve_spd");
  if (av.rows() != av.cols() || av.rows() != bv.rows()) throw ShapeError("solve_spd: shapes");
  auto llt = std::make_shared<Eigen::LLT<RowMat>>(RowMat(cmap(av)));
  if (llt->info() != Eigen::Success) throw IllConditioned("solve_spd: matrix is not positive definite");
  Tensor out = Tensor::uninitialized(bv.shape());
  map(out) = llt->solve(cmap(bv));
  Graph* g = &a.graph();
  const auto ia = a.id(), ib = b.id();
  const auto self = g->size();
  return g->record(std::move(out), {ia, ib}, [=](const Tensor& go, GradBuffers& grads) {
    Tensor* ga = grads.sink(ia);
    Tensor* gb = grads.sink(ib);
    if (!ga && !gb) return;
    const RowMat adj = llt->solve(cmap(go));
    if (gb) map(*gb) += adj;
    if (ga) map(*ga).noalias() -= adj * cmap(g->value(self)).transpose();
  });
}

}  // namespace icllab::ndiff
