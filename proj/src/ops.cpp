#include "vaegan/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace vaegan {
namespace {

struct Broadcast {
  enum Kind { same, scalar, channel } kind = same;
  std::size_t channels = 1;
  std::size_t inner = 1;

  std::size_t index(std::size_t i) const {
    switch (kind) {
      case same: return i;
      case scalar: return 0;
      case channel: return (i / inner) % channels;
    }
    return i;
  }
};

Broadcast broadcast_rule(const Shape& a, const Shape& b) {
  if (a == b) return {};
  if (shape_numel(b) == 1) return {Broadcast::scalar};
  if (b.size() == 1 && a.size() >= 2 && a[1] == b[0]) {
    std::size_t inner = 1;
    for (std::size_t i = 2; i < a.size(); ++i) inner *= a[i];
    return {Broadcast::channel, b[0], inner};
  }
  throw ShapeError("cannot broadcast " + shape_str(b) + " against " + shape_str(a));
}

// Sum a full-shaped gradient down to the broadcast operand's shape.
Tensor reduce_to(const Tensor& g, const Broadcast& bc, const Shape& target) {
  if (bc.kind == Broadcast::same) return g;
  Tensor out(target);
  for (std::size_t i = 0; i < g.numel(); ++i) out[bc.index(i)] += g[i];
  return out;
}

template <typename F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
  return out;
}

Var binary(ElementwiseKind kind, Var a, Var b) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast bc = broadcast_rule(av.shape(), bv.shape());
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) {
    const double x = av[i];
    const double y = bv[bc.index(i)];
    switch (kind) {
      case ElementwiseKind::add: out[i] = x + y; break;
      case ElementwiseKind::sub: out[i] = x - y; break;
      case ElementwiseKind::mul: out[i] = x * y; break;
      case ElementwiseKind::div: out[i] = x / y; break;
      default: throw std::logic_error("not a binary op");
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  const char* name = kind == ElementwiseKind::add   ? "add"
                     : kind == ElementwiseKind::sub ? "sub"
                     : kind == ElementwiseKind::mul ? "mul"
                                                    : "div";
  return g.record(name, {a, b}, std::move(out), [kind, ia, ib, bc](Graph& gr, const Tensor& go) {
    const Tensor& av = gr.value(ia);
    const Tensor& bv = gr.value(ib);
    if (gr.wants_grad(ia)) {
      Tensor ga(av.shape());
      for (std::size_t i = 0; i < go.numel(); ++i) {
        switch (kind) {
          case ElementwiseKind::add:
          case ElementwiseKind::sub: ga[i] = go[i]; break;
          case ElementwiseKind::mul: ga[i] = go[i] * bv[bc.index(i)]; break;
          default: ga[i] = go[i] / bv[bc.index(i)]; break;
        }
      }
      gr.accumulate(ia, std::move(ga));
    }
    if (gr.wants_grad(ib)) {
      Tensor full(av.shape());
      for (std::size_t i = 0; i < go.numel(); ++i) {
        switch (kind) {
          case ElementwiseKind::add: full[i] = go[i]; break;
          case ElementwiseKind::sub: full[i] = -go[i]; break;
          case ElementwiseKind::mul: full[i] = go[i] * av[i]; break;
          default: {
            const double y = bv[bc.index(i)];
            full[i] = -go[i] * av[i] / (y * y);
          }
        }
      }
      gr.accumulate(ib, reduce_to(full, bc, bv.shape()));
    }
  });
}

Var unary(ElementwiseKind kind, Var a) {
  const Tensor& av = a.value();
  Tensor out;
  const char* name = "";
  switch (kind) {
    case ElementwiseKind::neg: out = map_unary(av, [](double x) { return -x; }); name = "neg"; break;
    case ElementwiseKind::exp: out = map_unary(av, [](double x) { return std::exp(x); }); name = "exp"; break;
    case ElementwiseKind::log: out = map_unary(av, [](double x) { return std::log(x); }); name = "log"; break;
    case ElementwiseKind::sigmoid:
      out = map_unary(av, [](double x) {
        // Split by sign so exp never overflows.
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
      name = "sigmoid";
      break;
    case ElementwiseKind::tanh: out = map_unary(av, [](double x) { return std::tanh(x); }); name = "tanh"; break;
    case ElementwiseKind::relu: out = map_unary(av, [](double x) { return x > 0 ? x : 0.0; }); name = "relu"; break;
    case ElementwiseKind::square: out = map_unary(av, [](double x) { return x * x; }); name = "square"; break;
    default: throw std::logic_error("not a unary op");
  }
  const std::size_t ia = a.id();
  Graph& g = a.graph();
  const std::size_t self = g.size();
  return g.record(name, {a}, std::move(out), [kind, ia, self](Graph& gr, const Tensor& go) {
    const Tensor& x = gr.value(ia);
    const Tensor& y = gr.value(self);
    Tensor ga(x.shape());
    for (std::size_t i = 0; i < go.numel(); ++i) {
      switch (kind) {
        case ElementwiseKind::neg: ga[i] = -go[i]; break;
        case ElementwiseKind::exp: ga[i] = go[i] * y[i]; break;
        case ElementwiseKind::log: ga[i] = go[i] / x[i]; break;
        case ElementwiseKind::sigmoid: ga[i] = go[i] * y[i] * (1.0 - y[i]); break;
        case ElementwiseKind::tanh: ga[i] = go[i] * (1.0 - y[i] * y[i]); break;
        case ElementwiseKind::relu: ga[i] = x[i] > 0 ? go[i] : 0.0; break;
        case ElementwiseKind::square: ga[i] = go[i] * 2.0 * x[i]; break;
        default: break;
      }
    }
    gr.accumulate(ia, std::move(ga));
  });
}

void check_same_graph(Var a, Var b) {
  if (&a.graph() != &b.graph()) throw std::logic_error("operands belong to different graphs");
}

}  // namespace

Var elementwise(ElementwiseKind kind, Var a, std::optional<Var> b) {
  switch (kind) {
    case ElementwiseKind::add:
    case ElementwiseKind::sub:
    case ElementwiseKind::mul:
    case ElementwiseKind::div:
      if (!b) throw std::invalid_argument("binary elementwise op needs two operands");
      check_same_graph(a, *b);
      return binary(kind, a, *b);
    default:
      if (b) throw std::invalid_argument("unary elementwise op takes one operand");
      return unary(kind, a);
  }
}

Var add(Var a, Var b) { return elementwise(ElementwiseKind::add, a, b); }
Var sub(Var a, Var b) { return elementwise(ElementwiseKind::sub, a, b); }
Var mul(Var a, Var b) { return elementwise(ElementwiseKind::mul, a, b); }
Var div(Var a, Var b) { return elementwise(ElementwiseKind::div, a, b); }
Var neg(Var a) { return elementwise(ElementwiseKind::neg, a); }
Var exp(Var a) { return elementwise(ElementwiseKind::exp, a); }
Var log(Var a) { return elementwise(ElementwiseKind::log, a); }
Var sigmoid(Var a) { return elementwise(ElementwiseKind::sigmoid, a); }
Var tanh(Var a) { return elementwise(ElementwiseKind::tanh, a); }
Var relu(Var a) { return elementwise(ElementwiseKind::relu, a); }
Var square(Var a) { return elementwise(ElementwiseKind::square, a); }

Var add_scalar(Var a, double s) {
  Tensor out = map_unary(a.value(), [s](double x) { return x + s; });
  const std::size_t ia = a.id();
  return a.graph().record("add_scalar", {a}, std::move(out),
                          [ia](Graph& gr, const Tensor& go) { gr.accumulate(ia, go); });
}

Var mul_scalar(Var a, double s) {
  Tensor out = map_unary(a.value(), [s](double x) { return x * s; });
  const std::size_t ia = a.id();
  return a.graph().record("mul_scalar", {a}, std::move(out), [ia, s](Graph& gr, const Tensor& go) {
    gr.accumulate(ia, map_unary(go, [s](double v) { return v * s; }));
  });
}

Var clamp(Var a, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp with lo > hi");
  Tensor out = map_unary(a.value(), [lo, hi](double x) { return std::min(std::max(x, lo), hi); });
  const std::size_t ia = a.id();
  return a.graph().record("clamp", {a}, std::move(out), [ia, lo, hi](Graph& gr, const Tensor& go) {
    const Tensor& x = gr.value(ia);
    Tensor ga(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) ga[i] = (x[i] >= lo && x[i] <= hi) ? go[i] : 0.0;
    gr.accumulate(ia, std::move(ga));
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return a.graph().record("sum", {a}, Tensor::scalar(s), [ia](Graph& gr, const Tensor& go) {
    gr.accumulate(ia, Tensor(gr.value(ia).shape(), go.item()));
  });
}

namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul needs rank-2 operands");
  const std::size_t m = transpose_a ? a.dim(1) : a.dim(0);
  const std::size_t k = transpose_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = transpose_b ? b.dim(1) : b.dim(0);
  const std::size_t n = transpose_b ? b.dim(0) : b.dim(1);
  if (k != kb)
    throw ShapeError("matmul inner dimension mismatch: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  Tensor out({m, n});
  const double* A = a.ptr();
  const double* B = b.ptr();
  double* C = out.ptr();
  // C[i][j] accumulates over p in increasing order, matching a textbook
  // triple loop exactly.
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = transpose_a ? A[p * m + i] : A[i * k + p];
      if (transpose_b) {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * B[j * k + p];
      } else {
        const double* brow = B + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  return out;
}

Shape conv2d_output_shape(const Shape& x, const Shape& kernel, std::size_t stride, std::size_t pad) {
  if (x.size() != 4 || kernel.size() != 4)
    throw ShapeError("conv2d expects N x C x H x W input and F x C x kh x kw kernel");
  if (x[1] != kernel[1])
    throw ShapeError("conv2d channel mismatch: input " + shape_str(x) + ", kernel " + shape_str(kernel));
  if (stride == 0) throw std::invalid_argument("conv2d stride must be >= 1");
  if (kernel[2] > x[2] + 2 * pad || kernel[3] > x[3] + 2 * pad)
    throw ShapeError("conv2d output extent would be non-positive for input " + shape_str(x) +
                     " and kernel " + shape_str(kernel));
  return {x[0], kernel[0], (x[2] + 2 * pad - kernel[2]) / stride + 1,
          (x[3] + 2 * pad - kernel[3]) / stride + 1};
}

namespace {

// Output positions o in [lo, hi) such that o*stride + k - pad lies in [0, extent).
std::pair<std::size_t, std::size_t> valid_range(std::size_t k, std::size_t pad, std::size_t stride,
                                                std::size_t extent, std::size_t out_extent) {
  const long long kk = static_cast<long long>(k), pp = static_cast<long long>(pad),
                  ss = static_cast<long long>(stride), ee = static_cast<long long>(extent);
  long long lo = 0;
  if (pp - kk > 0) lo = (pp - kk + ss - 1) / ss;
  long long hi = (ee - 1 + pp - kk);
  hi = hi < 0 ? 0 : hi / ss + 1;
  if (hi > static_cast<long long>(out_extent)) hi = static_cast<long long>(out_extent);
  if (lo > hi) lo = hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

struct ConvGeom {
  std::size_t N, C, H, W, F, KH, KW, HO, WO, stride, pad;
  std::size_t ckk() const { return C * KH * KW; }
  std::size_t plane() const { return HO * WO; }
  // Images per lowered chunk, keeping the column buffer near 4M values.
  std::size_t chunk() const { return std::max<std::size_t>(1, (std::size_t{1} << 22) / (ckk() * plane())); }
};

ConvGeom geometry(const Shape& x, const Shape& k, const Shape& o, std::size_t stride, std::size_t pad) {
  return {x[0], x[1], x[2], x[3], k[0], k[2], k[3], o[2], o[3], stride, pad};
}

// Lowers images [n0, n1) to a (C*KH*KW) x ((n1-n0)*HO*WO) matrix; taps that
// fall into the padding are zero.
void im2col(const ConvGeom& g, const double* X, std::size_t n0, std::size_t n1, std::vector<double>& col) {
  const std::size_t P = g.plane(), NP = (n1 - n0) * P;
  col.assign(g.ckk() * NP, 0.0);
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t ky = 0; ky < g.KH; ++ky) {
      const auto [oy0, oy1] = valid_range(ky, g.pad, g.stride, g.H, g.HO);
      for (std::size_t kx = 0; kx < g.KW; ++kx) {
        const auto [ox0, ox1] = valid_range(kx, g.pad, g.stride, g.W, g.WO);
        double* dst = col.data() + ((c * g.KH + ky) * g.KW + kx) * NP;
        for (std::size_t n = n0; n < n1; ++n) {
          const double* xplane = X + (n * g.C + c) * g.H * g.W;
          double* d = dst + (n - n0) * P;
          for (std::size_t oy = oy0; oy < oy1; ++oy) {
            const double* xrow = xplane + (oy * g.stride + ky - g.pad) * g.W + kx - g.pad;
            for (std::size_t ox = ox0; ox < ox1; ++ox) d[oy * g.WO + ox] = xrow[ox * g.stride];
          }
        }
      }
    }
}

// Adds a lowered gradient back onto images [n0, n1).
void col2im(const ConvGeom& g, const std::vector<double>& col, std::size_t n0, std::size_t n1, double* GI) {
  const std::size_t P = g.plane(), NP = (n1 - n0) * P;
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t ky = 0; ky < g.KH; ++ky) {
      const auto [oy0, oy1] = valid_range(ky, g.pad, g.stride, g.H, g.HO);
      for (std::size_t kx = 0; kx < g.KW; ++kx) {
        const auto [ox0, ox1] = valid_range(kx, g.pad, g.stride, g.W, g.WO);
        const double* src = col.data() + ((c * g.KH + ky) * g.KW + kx) * NP;
        for (std::size_t n = n0; n < n1; ++n) {
          double* iplane = GI + (n * g.C + c) * g.H * g.W;
          const double* s = src + (n - n0) * P;
          for (std::size_t oy = oy0; oy < oy1; ++oy) {
            double* irow = iplane + (oy * g.stride + ky - g.pad) * g.W + kx - g.pad;
            for (std::size_t ox = ox0; ox < ox1; ++ox) irow[ox * g.stride] += s[oy * g.WO + ox];
          }
        }
      }
    }
}

// Gathers grad_out images [n0, n1) into an F x ((n1-n0)*HO*WO) matrix.
void gather_rows(const ConvGeom& g, const double* G, std::size_t n0, std::size_t n1, std::vector<double>& m) {
  const std::size_t P = g.plane(), NP = (n1 - n0) * P;
  m.resize(g.F * NP);
  for (std::size_t n = n0; n < n1; ++n)
    for (std::size_t f = 0; f < g.F; ++f)
      std::copy_n(G + (n * g.F + f) * P, P, m.data() + f * NP + (n - n0) * P);
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t pad) {
  const Shape os = conv2d_output_shape(x.shape(), kernel.shape(), stride, pad);
  const ConvGeom g = geometry(x.shape(), kernel.shape(), os, stride, pad);
  Tensor out(os);
  const double* K = kernel.ptr();
  double* O = out.ptr();
  const std::size_t P = g.plane(), CKK = g.ckk();
  std::vector<double> col, acc;
  for (std::size_t n0 = 0; n0 < g.N; n0 += g.chunk()) {
    const std::size_t n1 = std::min(g.N, n0 + g.chunk()), NP = (n1 - n0) * P;
    im2col(g, x.ptr(), n0, n1, col);
    acc.assign(NP, 0.0);
    for (std::size_t f = 0; f < g.F; ++f) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t k = 0; k < CKK; ++k) {
        const double w = K[f * CKK + k];
        const double* crow = col.data() + k * NP;
        for (std::size_t j = 0; j < NP; ++j) acc[j] += crow[j] * w;
      }
      for (std::size_t n = n0; n < n1; ++n) std::copy_n(acc.data() + (n - n0) * P, P, O + (n * g.F + f) * P);
    }
  }
  return out;
}

Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& kernel, std::size_t stride,
                         std::size_t pad, const Shape& input_shape) {
  const Shape os = conv2d_output_shape(input_shape, kernel.shape(), stride, pad);
  if (os != grad_out.shape())
    throw ShapeError("conv2d input-gradient shape mismatch: " + shape_str(grad_out.shape()) +
                     " vs expected " + shape_str(os));
  const ConvGeom g = geometry(input_shape, kernel.shape(), os, stride, pad);
  Tensor gi(input_shape);
  const double* K = kernel.ptr();
  const std::size_t P = g.plane(), CKK = g.ckk();
  std::vector<double> gm, gcol;
  for (std::size_t n0 = 0; n0 < g.N; n0 += g.chunk()) {
    const std::size_t n1 = std::min(g.N, n0 + g.chunk()), NP = (n1 - n0) * P;
    gather_rows(g, grad_out.ptr(), n0, n1, gm);
    gcol.assign(CKK * NP, 0.0);
    for (std::size_t k = 0; k < CKK; ++k) {
      double* dst = gcol.data() + k * NP;
      for (std::size_t f = 0; f < g.F; ++f) {
        const double w = K[f * CKK + k];
        const double* grow = gm.data() + f * NP;
        for (std::size_t j = 0; j < NP; ++j) dst[j] += grow[j] * w;
      }
    }
    col2im(g, gcol, n0, n1, gi.ptr());
  }
  return gi;
}

Tensor conv2d_kernel_grad(const Tensor& x, const Tensor& grad_out, std::size_t stride,
                          std::size_t pad, const Shape& kernel_shape) {
  const Shape os = conv2d_output_shape(x.shape(), kernel_shape, stride, pad);
  if (os != grad_out.shape())
    throw ShapeError("conv2d kernel-gradient shape mismatch: " + shape_str(grad_out.shape()) +
                     " vs expected " + shape_str(os));
  const ConvGeom g = geometry(x.shape(), kernel_shape, os, stride, pad);
  Tensor gk(kernel_shape);
  double* GK = gk.ptr();
  const std::size_t P = g.plane(), CKK = g.ckk();
  std::vector<double> col, gm;
  for (std::size_t n0 = 0; n0 < g.N; n0 += g.chunk()) {
    const std::size_t n1 = std::min(g.N, n0 + g.chunk()), NP = (n1 - n0) * P;
    im2col(g, x.ptr(), n0, n1, col);
    gather_rows(g, grad_out.ptr(), n0, n1, gm);
    for (std::size_t f = 0; f < g.F; ++f) {
      const double* grow = gm.data() + f * NP;
      for (std::size_t k = 0; k < CKK; ++k) {
        const double* crow = col.data() + k * NP;
        // Four interleaved partial sums break the add dependency chain.
        double s[4] = {0.0, 0.0, 0.0, 0.0};
        std::size_t j = 0;
        for (; j + 4 <= NP; j += 4)
          for (std::size_t l = 0; l < 4; ++l) s[l] += grow[j + l] * crow[j + l];
        for (; j < NP; ++j) s[0] += grow[j] * crow[j];
        GK[f * CKK + k] += (s[0] + s[1]) + (s[2] + s[3]);
      }
    }
  }
  return gk;
}

}  // namespace kernels

Var matmul(Var a, Var b) {
  check_same_graph(a, b);
  Tensor out = kernels::matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record("matmul", {a, b}, std::move(out), [ia, ib](Graph& gr, const Tensor& go) {
    if (gr.wants_grad(ia)) gr.accumulate(ia, kernels::matmul(go, gr.value(ib), false, true));
    if (gr.wants_grad(ib)) gr.accumulate(ib, kernels::matmul(gr.value(ia), go, true, false));
  });
}

Var conv2d(Var x, Var kernel, std::size_t stride, std::size_t pad) {
  check_same_graph(x, kernel);
  Tensor out = kernels::conv2d_forward(x.value(), kernel.value(), stride, pad);
  const std::size_t ix = x.id(), ik = kernel.id();
  return x.graph().record("conv2d", {x, kernel}, std::move(out),
                          [ix, ik, stride, pad](Graph& gr, const Tensor& go) {
                            const Tensor& xv = gr.value(ix);
                            const Tensor& kv = gr.value(ik);
                            if (gr.wants_grad(ix))
                              gr.accumulate(ix, kernels::conv2d_input_grad(go, kv, stride, pad, xv.shape()));
                            if (gr.wants_grad(ik))
                              gr.accumulate(ik, kernels::conv2d_kernel_grad(xv, go, stride, pad, kv.shape()));
                          });
}

Var conv2d_transpose(Var x, Var kernel, std::size_t stride, std::size_t pad,
                     std::size_t output_padding) {
  check_same_graph(x, kernel);
  const Tensor& xv = x.value();
  const Tensor& kv = kernel.value();
  if (stride == 0) throw std::invalid_argument("conv2d_transpose stride must be >= 1");
  if (xv.rank() != 4 || kv.rank() != 4) throw ShapeError("conv2d_transpose expects rank-4 operands");
  if (xv.dim(1) != kv.dim(0))
    throw ShapeError("conv2d_transpose channel mismatch: input " + shape_str(xv.shape()) +
                     ", kernel " + shape_str(kv.shape()));
  if (output_padding >= stride) throw std::invalid_argument("output_padding must be < stride");
  auto extent = [&](std::size_t in, std::size_t k) -> std::size_t {
    const long long e = static_cast<long long>((in - 1) * stride + k + output_padding) -
                        2 * static_cast<long long>(pad);
    if (e <= 0) throw ShapeError("conv2d_transpose output extent would be non-positive");
    return static_cast<std::size_t>(e);
  };
  const Shape out_shape{xv.dim(0), kv.dim(1), extent(xv.dim(2), kv.dim(2)), extent(xv.dim(3), kv.dim(3))};
  const Shape back = kernels::conv2d_output_shape(out_shape, kv.shape(), stride, pad);
  if (back[2] != xv.dim(2) || back[3] != xv.dim(3))
    throw ShapeError("conv2d_transpose geometry is not the adjoint of a conv2d");
  Tensor out = kernels::conv2d_input_grad(xv, kv, stride, pad, out_shape);
  const std::size_t ix = x.id(), ik = kernel.id();
  return x.graph().record("conv2d_transpose", {x, kernel}, std::move(out),
                          [ix, ik, stride, pad](Graph& gr, const Tensor& go) {
                            const Tensor& xv = gr.value(ix);
                            const Tensor& kv = gr.value(ik);
                            if (gr.wants_grad(ix))
                              gr.accumulate(ix, kernels::conv2d_forward(go, kv, stride, pad));
                            if (gr.wants_grad(ik))
                              gr.accumulate(ik, kernels::conv2d_kernel_grad(go, xv, stride, pad, kv.shape()));
                          });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.graph().record("reshape", {a}, std::move(out), [ia](Graph& gr, const Tensor& go) {
    gr.accumulate(ia, go.reshaped(gr.value(ia).shape()));
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  if (axis > 1) throw ShapeError("concat supports axis 0 or 1");
  const Shape& s0 = parts[0].shape();
  if (s0.size() <= axis) throw ShapeError("concat axis out of range");
  Shape out_shape = s0;
  out_shape[axis] = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    check_same_graph(parts[0], p);
    const Shape& s = p.shape();
    if (s.size() != s0.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != s0[d])
        throw ShapeError("concat extent mismatch: " + shape_str(s) + " vs " + shape_str(s0));
    out_shape[axis] += s[axis];
    ids.push_back(p.id());
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
  for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];
  for (const Var& p : parts) widths.push_back(p.shape()[axis] * inner);
  const std::size_t row = out_shape[axis] * inner;

  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const double* src = parts[k].value().ptr() + o * widths[k];
      std::copy(src, src + widths[k], out.ptr() + o * row + offset);
      offset += widths[k];
    }
  }
  return parts[0].graph().record(
      "concat", parts, std::move(out), [ids, widths, outer, row](Graph& gr, const Tensor& go) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (gr.wants_grad(ids[k])) {
            Tensor gk(gr.value(ids[k]).shape());
            for (std::size_t o = 0; o < outer; ++o) {
              const double* src = go.ptr() + o * row + offset;
              std::copy(src, src + widths[k], gk.ptr() + o * widths[k]);
            }
            gr.accumulate(ids[k], std::move(gk));
          }
          offset += widths[k];
        }
      });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  Tensor out = a.value().slice_rows(begin, end);
  const std::size_t ia = a.id();
  return a.graph().record("slice_rows", {a}, std::move(out), [ia, begin](Graph& gr, const Tensor& go) {
    Tensor ga(gr.value(ia).shape());
    const std::size_t row = ga.numel() / ga.dim(0);
    std::copy(go.ptr(), go.ptr() + go.numel(), ga.ptr() + begin * row);
    gr.accumulate(ia, std::move(ga));
  });
}

Var stop_gradient(Var v) { return v.graph().stop_gradient(v); }

namespace {

struct ChannelLayout {
  std::size_t n, c, inner;
};

ChannelLayout channel_layout(const Shape& s) {
  if (s.size() != 2 && s.size() != 4) throw ShapeError("batch_norm expects N x C or N x C x H x W");
  return {s[0], s[1], s.size() == 4 ? s[2] * s[3] : 1};
}

void check_channel_param(const Tensor& p, std::size_t c, const char* what) {
  if (p.rank() != 1 || p.dim(0) != c)
    throw ShapeError(std::string("batch_norm ") + what + " must have shape [" + std::to_string(c) +
                     "], got " + shape_str(p.shape()));
}

}  // namespace

Var batch_norm_train(Var x, Var gamma, Var beta, double eps, BatchStats* stats) {
  check_same_graph(x, gamma);
  check_same_graph(x, beta);
  const Tensor& xv = x.value();
  const auto L = channel_layout(xv.shape());
  check_channel_param(gamma.value(), L.c, "gain");
  check_channel_param(beta.value(), L.c, "bias");
  if (L.n < 2) throw std::invalid_argument("batch_norm in train mode needs batch size >= 2");
  const std::size_t m = L.n * L.inner;

  Tensor mean({L.c}), var({L.c}), invstd({L.c});
  for (std::size_t c = 0; c < L.c; ++c) {
    double s = 0.0;
    for (std::size_t n = 0; n < L.n; ++n) {
      const double* p = xv.ptr() + (n * L.c + c) * L.inner;
      for (std::size_t i = 0; i < L.inner; ++i) s += p[i];
    }
    const double mu = s / static_cast<double>(m);
    double v = 0.0;
    for (std::size_t n = 0; n < L.n; ++n) {
      const double* p = xv.ptr() + (n * L.c + c) * L.inner;
      for (std::size_t i = 0; i < L.inner; ++i) v += (p[i] - mu) * (p[i] - mu);
    }
    mean[c] = mu;
    var[c] = v / static_cast<double>(m);
    invstd[c] = 1.0 / std::sqrt(var[c] + eps);
  }

  Tensor xhat(xv.shape()), out(xv.shape());
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t n = 0; n < L.n; ++n)
    for (std::size_t c = 0; c < L.c; ++c) {
      const std::size_t base = (n * L.c + c) * L.inner;
      for (std::size_t i = 0; i < L.inner; ++i) {
        const double h = (xv[base + i] - mean[c]) * invstd[c];
        xhat[base + i] = h;
        out[base + i] = gv[c] * h + bv[c];
      }
    }
  if (stats) *stats = BatchStats{mean, var, m};

  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.graph().record(
      "batch_norm_train", {x, gamma, beta}, std::move(out),
      [ix, ig, ib, L, m, xhat = std::move(xhat), invstd = std::move(invstd)](Graph& gr, const Tensor& go) {
        const Tensor& gv = gr.value(ig);
        Tensor dgamma({L.c}), dbeta({L.c});
        for (std::size_t c = 0; c < L.c; ++c) {
          double sg = 0.0, sgh = 0.0;
          for (std::size_t n = 0; n < L.n; ++n) {
            const std::size_t base = (n * L.c + c) * L.inner;
            for (std::size_t i = 0; i < L.inner; ++i) {
              sg += go[base + i];
              sgh += go[base + i] * xhat[base + i];
            }
          }
          dbeta[c] = sg;
          dgamma[c] = sgh;
        }
        if (gr.wants_grad(ix)) {
          Tensor dx(go.shape());
          const double md = static_cast<double>(m);
          for (std::size_t c = 0; c < L.c; ++c) {
            // With dxhat = g * gamma: dx = invstd/m * (m*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat)).
            const double sum_dxhat = gv[c] * dbeta[c];
            const double sum_dxhat_xhat = gv[c] * dgamma[c];
            for (std::size_t n = 0; n < L.n; ++n) {
              const std::size_t base = (n * L.c + c) * L.inner;
              for (std::size_t i = 0; i < L.inner; ++i) {
                const double dxhat = go[base + i] * gv[c];
                dx[base + i] =
                    invstd[c] / md * (md * dxhat - sum_dxhat - xhat[base + i] * sum_dxhat_xhat);
              }
            }
          }
          gr.accumulate(ix, std::move(dx));
        }
        if (gr.wants_grad(ig)) gr.accumulate(ig, std::move(dgamma));
        if (gr.wants_grad(ib)) gr.accumulate(ib, std::move(dbeta));
      });
}

Var batch_norm_fixed(Var x, Var gamma, Var beta, const Tensor& mean, const Tensor& variance,
                     double eps) {
  check_same_graph(x, gamma);
  check_same_graph(x, beta);
  const Tensor& xv = x.value();
  const auto L = channel_layout(xv.shape());
  check_channel_param(gamma.value(), L.c, "gain");
  check_channel_param(beta.value(), L.c, "bias");
  check_channel_param(mean, L.c, "mean");
  check_channel_param(variance, L.c, "variance");
  Tensor invstd({L.c});
  for (std::size_t c = 0; c < L.c; ++c) invstd[c] = 1.0 / std::sqrt(variance[c] + eps);
  Tensor xhat(xv.shape()), out(xv.shape());
  for (std::size_t n = 0; n < L.n; ++n)
    for (std::size_t c = 0; c < L.c; ++c) {
      const std::size_t base = (n * L.c + c) * L.inner;
      for (std::size_t i = 0; i < L.inner; ++i) {
        const double h = (xv[base + i] - mean[c]) * invstd[c];
        xhat[base + i] = h;
        out[base + i] = gamma.value()[c] * h + beta.value()[c];
      }
    }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.graph().record(
      "batch_norm_fixed", {x, gamma, beta}, std::move(out),
      [ix, ig, ib, L, xhat = std::move(xhat), invstd = std::move(invstd)](Graph& gr, const Tensor& go) {
        const Tensor& gv = gr.value(ig);
        if (gr.wants_grad(ix)) {
          Tensor dx(go.shape());
          for (std::size_t n = 0; n < L.n; ++n)
            for (std::size_t c = 0; c < L.c; ++c) {
              const std::size_t base = (n * L.c + c) * L.inner;
              for (std::size_t i = 0; i < L.inner; ++i) dx[base + i] = go[base + i] * gv[c] * invstd[c];
            }
          gr.accumulate(ix, std::move(dx));
        }
        if (gr.wants_grad(ig) || gr.wants_grad(ib)) {
          Tensor dgamma({L.c}), dbeta({L.c});
          for (std::size_t n = 0; n < L.n; ++n)
            for (std::size_t c = 0; c < L.c; ++c) {
              const std::size_t base = (n * L.c + c) * L.inner;
              for (std::size_t i = 0; i < L.inner; ++i) {
                dbeta[c] += go[base + i];
                dgamma[c] += go[base + i] * xhat[base + i];
              }
            }
          gr.accumulate(ig, std::move(dgamma));
          gr.accumulate(ib, std::move(dbeta));
        }
      });
}

}  // namespace vaegan
