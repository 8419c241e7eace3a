#include "pvgc/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "kernels.hpp"
#include "pvgc/detail/op_support.hpp"
#include "pvgc/parallel.hpp"

namespace pvgc {

namespace kernels {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const RowMat>;
  const auto mi = static_cast<Eigen::Index>(m);
  const auto ni = static_cast<Eigen::Index>(n);
  const auto ki = static_cast<Eigen::Index>(k);
  Eigen::Map<RowMat> cm(c, mi, ni);
  if (!accumulate) cm.setZero();
  if (m == 0 || n == 0 || k == 0) return;
  if (!trans_a && !trans_b) {
    cm.noalias() += ConstMap(a, mi, ki) * ConstMap(b, ki, ni);
  } else if (!trans_a && trans_b) {
    cm.noalias() += ConstMap(a, mi, ki) * ConstMap(b, ni, ki).transpose();
  } else if (trans_a && !trans_b) {
    cm.noalias() += ConstMap(a, ki, mi).transpose() * ConstMap(b, ki, ni);
  } else {
    cm.noalias() += ConstMap(a, ki, mi).transpose() * ConstMap(b, ni, ki).transpose();
  }
}

}  // namespace kernels

namespace detail {

bool verification_mode() { return precision() == Precision::f64; }

Tensor make_output(std::string_view kind, Shape shape, std::vector<double> values) {
  round_to_precision(values);
  if (verification_mode()) {
    for (double v : values) {
      if (!std::isfinite(v)) {
        throw NumericError("non-finite value produced by '" + std::string(kind) + "'");
      }
    }
  }
  return Tensor(std::move(shape), std::move(values));
}

Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = active_tape();
  if (tape == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t && tape->participates(*t)) return tape;
  }
  return nullptr;
}

Tape* recording_tape(std::span<const Tensor> inputs) {
  Tape* tape = active_tape();
  if (tape == nullptr) return nullptr;
  for (const Tensor& t : inputs) {
    if (tape->participates(t)) return tape;
  }
  return nullptr;
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t d = shape.size(); d-- > 1;) s[d - 1] = s[d] * shape[d];
  return s;
}

}  // namespace detail

using detail::make_output;
using detail::needs_grad;
using detail::record;
using detail::recording_tape;
using detail::strides_of;

namespace {

// Calls f(flat, mapped) for every row-major index of `shape`, where mapped is
// the dot product of the multi-index with `mapped_strides`.
template <class F>
void for_each_mapped(const Shape& shape, const std::vector<std::size_t>& mapped_strides, F&& f) {
  const std::size_t rank = shape.size();
  if (rank == 0) {
    f(std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t n = shape_numel(shape);
  const std::size_t last = shape[rank - 1];
  const std::size_t last_stride = mapped_strides[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t mapped = 0;
  for (std::size_t flat = 0; flat < n; flat += last) {
    for (std::size_t j = 0; j < last; ++j) f(flat + j, mapped + j * last_stride);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      mapped += mapped_strides[d];
      if (idx[d] < shape[d]) break;
      mapped -= idx[d] * mapped_strides[d];
      idx[d] = 0;
    }
  }
}

// Strides that map an index of `a_shape` onto the broadcast operand `b_shape`.
std::vector<std::size_t> broadcast_strides(const Shape& a_shape, const Shape& b_shape) {
  auto fail = [&] {
    throw ShapeError("incompatible shapes " + shape_str(a_shape) + " and " + shape_str(b_shape) +
                     " for broadcasting");
  };
  if (b_shape.size() > a_shape.size()) fail();
  std::vector<std::size_t> out(a_shape.size(), 0);
  auto b_strides = strides_of(b_shape);
  const std::size_t offset = a_shape.size() - b_shape.size();
  for (std::size_t d = 0; d < b_shape.size(); ++d) {
    std::size_t ae = a_shape[offset + d];
    std::size_t be = b_shape[d];
    if (be == ae) {
      out[offset + d] = b_strides[d];
    } else if (be != 1) {
      fail();
    }
  }
  return out;
}

// Sums `g` (shaped like a) down to b's shape.
Tensor reduce_to(const Tensor& g, const Shape& b_shape, const std::vector<std::size_t>& strides,
                 double scale) {
  std::vector<double> out(shape_numel(b_shape), 0.0);
  auto gv = g.values();
  for_each_mapped(g.shape(), strides, [&](std::size_t flat, std::size_t m) { out[m] += gv[flat]; });
  if (scale != 1.0) {
    for (auto& v : out) v *= scale;
  }
  return Tensor(b_shape, std::move(out));
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

const char* unary_name(UnaryKind kind) {
  switch (kind) {
    case UnaryKind::gelu: return "gelu";
    case UnaryKind::relu: return "relu";
    case UnaryKind::exp: return "exp";
    case UnaryKind::log: return "log";
    case UnaryKind::sqrt: return "sqrt";
    case UnaryKind::negate: return "negate";
  }
  return "unary";
}

const char* binary_name(BinaryKind kind) {
  switch (kind) {
    case BinaryKind::add: return "add";
    case BinaryKind::sub: return "sub";
    case BinaryKind::mul: return "mul";
  }
  return "binary";
}

const char* reduce_name(ReduceKind kind) {
  switch (kind) {
    case ReduceKind::sum: return "reduce_sum";
    case ReduceKind::mean: return "reduce_mean";
    case ReduceKind::max: return "reduce_max";
  }
  return "reduce";
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Tensor apply_binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const bool same = a.shape() == b.shape();
  std::vector<std::size_t> bstr = same ? strides_of(a.shape()) : broadcast_strides(a.shape(), b.shape());
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(a.numel());
  auto op = [kind](double x, double y) {
    switch (kind) {
      case BinaryKind::add: return x + y;
      case BinaryKind::sub: return x - y;
      case BinaryKind::mul: return x * y;
    }
    return 0.0;
  };
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = op(av[i], bv[i]);
  } else {
    for_each_mapped(a.shape(), bstr, [&](std::size_t i, std::size_t j) { out[i] = op(av[i], bv[j]); });
  }
  Tensor result = make_output(binary_name(kind), a.shape(), std::move(out));
  if (Tape* tape = recording_tape({&a, &b})) {
    const bool ga = needs_grad(tape, a);
    const bool gb = needs_grad(tape, b);
    record(tape, result, binary_name(kind), {&a, &b},
           [a, b, kind, same, bstr, ga, gb](const Tensor& g) {
             std::vector<Tensor> grads(2);
             auto gv = g.values();
             if (kind == BinaryKind::mul) {
               auto av = a.values();
               auto bv = b.values();
               if (ga) {
                 std::vector<double> da(g.numel());
                 if (same) {
                   for (std::size_t i = 0; i < da.size(); ++i) da[i] = gv[i] * bv[i];
                 } else {
                   for_each_mapped(a.shape(), bstr,
                                   [&](std::size_t i, std::size_t j) { da[i] = gv[i] * bv[j]; });
                 }
                 grads[0] = Tensor(a.shape(), std::move(da));
               }
               if (gb) {
                 std::vector<double> db(b.numel(), 0.0);
                 if (same) {
                   for (std::size_t i = 0; i < db.size(); ++i) db[i] = gv[i] * av[i];
                 } else {
                   for_each_mapped(a.shape(), bstr,
                                   [&](std::size_t i, std::size_t j) { db[j] += gv[i] * av[i]; });
                 }
                 grads[1] = Tensor(b.shape(), std::move(db));
               }
               return grads;
             }
             if (ga) grads[0] = g;
             if (gb) {
               const double sign = kind == BinaryKind::sub ? -1.0 : 1.0;
               if (same) {
                 std::vector<double> db(gv.begin(), gv.end());
                 if (sign < 0) {
                   for (auto& v : db) v = -v;
                 }
                 grads[1] = Tensor(b.shape(), std::move(db));
               } else {
                 grads[1] = reduce_to(g, b.shape(), bstr, sign);
               }
             }
             return grads;
           });
  }
  return result;
}

Tensor add_scalar(const Tensor& a, double c) { return add(a, Tensor::scalar(c)); }
Tensor mul_scalar(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }

Tensor apply_unary(const Tensor& x, UnaryKind kind) {
  auto xv = x.values();
  std::vector<double> out(x.numel());
  if (detail::verification_mode()) {
    if (kind == UnaryKind::log) {
      for (double v : xv) {
        if (!(v > 0.0)) throw NumericError("log domain violation: input " + std::to_string(v));
      }
    } else if (kind == UnaryKind::sqrt) {
      for (double v : xv) {
        if (!(v >= 0.0)) throw NumericError("sqrt domain violation: input " + std::to_string(v));
      }
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    switch (kind) {
      case UnaryKind::gelu: out[i] = gelu_value(v); break;
      case UnaryKind::relu: out[i] = v > 0.0 ? v : 0.0; break;
      case UnaryKind::exp: out[i] = std::exp(v); break;
      case UnaryKind::log: out[i] = std::log(v); break;
      case UnaryKind::sqrt: out[i] = std::sqrt(v); break;
      case UnaryKind::negate: out[i] = -v; break;
    }
  }
  Tensor result = make_output(unary_name(kind), x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    Tensor y = result.detach();
    record(tape, result, unary_name(kind), {&x}, [x, y, kind](const Tensor& g) {
      auto gv = g.values();
      auto xv = x.values();
      auto yv = y.values();
      std::vector<double> dx(g.numel());
      for (std::size_t i = 0; i < dx.size(); ++i) {
        double d = 0.0;
        switch (kind) {
          case UnaryKind::gelu: d = gelu_derivative(xv[i]); break;
          case UnaryKind::relu: d = xv[i] > 0.0 ? 1.0 : 0.0; break;
          case UnaryKind::exp: d = yv[i]; break;
          case UnaryKind::log: d = 1.0 / xv[i]; break;
          case UnaryKind::sqrt: d = 0.5 / yv[i]; break;
          case UnaryKind::negate: d = -1.0; break;
        }
        dx[i] = gv[i] * d;
      }
      return std::vector<Tensor>{Tensor(x.shape(), std::move(dx))};
    });
  }
  return result;
}

// ------------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " · " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::gemm(false, false, m, n, k, a.values().data(), b.values().data(), out.data(), false);
  Tensor result = make_output("matmul", {m, n}, std::move(out));
  if (Tape* tape = recording_tape({&a, &b})) {
    const bool ga = needs_grad(tape, a);
    const bool gb = needs_grad(tape, b);
    record(tape, result, "matmul", {&a, &b}, [a, b, m, n, k, ga, gb](const Tensor& g) {
      std::vector<Tensor> grads(2);
      if (ga) {
        std::vector<double> da(m * k);
        kernels::gemm(false, true, m, k, n, g.values().data(), b.values().data(), da.data(), false);
        grads[0] = Tensor({m, k}, std::move(da));
      }
      if (gb) {
        std::vector<double> db(k * n);
        kernels::gemm(true, false, k, n, m, a.values().data(), g.values().data(), db.data(), false);
        grads[1] = Tensor({k, n}, std::move(db));
      }
      return grads;
    });
  }
  return result;
}

// ------------------------------------------------------------------- conv2d

namespace {

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t out_channels, kh, kw, stride, padding;
  std::size_t out_h, out_w;

  std::size_t patch() const { return channels * kh * kw; }
  std::size_t positions() const { return out_h * out_w; }
};

void im2col(const ConvGeometry& g, const double* x, double* cols) {
  const std::size_t p = g.positions();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((c * g.kh + i) * g.kw + j) * p;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.padding);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) &&
                                ix < static_cast<long>(g.width);
            row[oy * g.out_w + ox] = inside ? x[(c * g.height + iy) * g.width + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* cols, double* x) {
  const std::size_t p = g.positions();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((c * g.kh + i) * g.kw + j) * p;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.padding);
            if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
            x[(c * g.height + iy) * g.width + ix] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw ShapeError("conv2d expects B×C×H×W input and O×C×kh×kw weight, got " + shape_str(x.shape()) +
                     " and " + shape_str(w.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d stride must be positive");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), stride, padding, 0, 0};
  if (w.dim(1) != g.channels) {
    throw ShapeError("conv2d channel mismatch: input " + shape_str(x.shape()) + ", weight " +
                     shape_str(w.shape()));
  }
  if (g.kh > g.height + 2 * padding || g.kw > g.width + 2 * padding) {
    throw ShapeError("conv2d kernel " + shape_str(w.shape()) + " larger than padded input " +
                     shape_str(x.shape()) + " with padding " + std::to_string(padding));
  }
  if (bias.defined() && bias.shape() != Shape{g.out_channels}) {
    throw ShapeError("conv2d bias must have shape [" + std::to_string(g.out_channels) + "], got " +
                     shape_str(bias.shape()));
  }
  g.out_h = (g.height + 2 * padding - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kw) / stride + 1;

  const std::size_t in_plane = g.channels * g.height * g.width;
  const std::size_t out_plane = g.out_channels * g.positions();
  std::vector<double> out(g.batch * out_plane);
  const double* xv = x.values().data();
  const double* wv = w.values().data();
  parallel_for(g.batch, [&](std::size_t begin, std::size_t end) {
    std::vector<double> cols(g.patch() * g.positions());
    for (std::size_t b = begin; b < end; ++b) {
      im2col(g, xv + b * in_plane, cols.data());
      double* ob = out.data() + b * out_plane;
      kernels::gemm(false, false, g.out_channels, g.positions(), g.patch(), wv, cols.data(), ob, false);
      if (bias.defined()) {
        auto bv = bias.values();
        for (std::size_t o = 0; o < g.out_channels; ++o) {
          for (std::size_t p = 0; p < g.positions(); ++p) ob[o * g.positions() + p] += bv[o];
        }
      }
    }
  });
  Tensor result = make_output("conv2d", {g.batch, g.out_channels, g.out_h, g.out_w}, std::move(out));
  if (Tape* tape = recording_tape({&x, &w, &bias})) {
    const bool gx = needs_grad(tape, x);
    const bool gw = needs_grad(tape, w);
    const bool gbias = bias.defined() && needs_grad(tape, bias);
    record(tape, result, "conv2d", {&x, &w, &bias}, [x, w, g, gx, gw, gbias](const Tensor& grad) {
      std::vector<Tensor> grads(3);
      const std::size_t in_plane = g.channels * g.height * g.width;
      const std::size_t out_plane = g.out_channels * g.positions();
      const double* gv = grad.values().data();
      if (gx) {
        std::vector<double> dx(x.numel(), 0.0);
        const double* wv = w.values().data();
        parallel_for(g.batch, [&](std::size_t begin, std::size_t end) {
          std::vector<double> dcols(g.patch() * g.positions());
          for (std::size_t b = begin; b < end; ++b) {
            kernels::gemm(true, false, g.patch(), g.positions(), g.out_channels, wv, gv + b * out_plane,
                          dcols.data(), false);
            col2im(g, dcols.data(), dx.data() + b * in_plane);
          }
        });
        grads[0] = Tensor(x.shape(), std::move(dx));
      }
      if (gw) {
        std::vector<double> dw(w.numel(), 0.0);
        std::vector<double> cols(g.patch() * g.positions());
        const double* xv = x.values().data();
        for (std::size_t b = 0; b < g.batch; ++b) {
          im2col(g, xv + b * in_plane, cols.data());
          kernels::gemm(false, true, g.out_channels, g.patch(), g.positions(), gv + b * out_plane, cols.data(),
                        dw.data(), true);
        }
        grads[1] = Tensor(w.shape(), std::move(dw));
      }
      if (gbias) {
        std::vector<double> db(g.out_channels, 0.0);
        for (std::size_t b = 0; b < g.batch; ++b) {
          for (std::size_t o = 0; o < g.out_channels; ++o) {
            const double* row = gv + b * out_plane + o * g.positions();
            for (std::size_t p = 0; p < g.positions(); ++p) db[o] += row[p];
          }
        }
        grads[2] = Tensor({g.out_channels}, std::move(db));
      }
      return grads;
    });
  }
  return result;
}

// ------------------------------------------------------------------- reduce

Tensor reduce(const Tensor& x, ReduceKind kind, std::vector<std::size_t> axes) {
  const std::size_t rank = x.rank();
  std::vector<bool> reduced(rank, axes.empty());
  for (auto axis : axes) {
    if (axis >= rank) {
      throw ShapeError("reduce axis " + std::to_string(axis) + " invalid for shape " + shape_str(x.shape()));
    }
    if (reduced[axis]) throw ShapeError("reduce axis " + std::to_string(axis) + " listed twice");
    reduced[axis] = true;
  }
  Shape out_shape;
  for (std::size_t d = 0; d < rank; ++d) {
    if (!reduced[d]) out_shape.push_back(x.dim(d));
  }
  const auto out_strides = strides_of(out_shape);
  std::vector<std::size_t> mapped(rank, 0);
  for (std::size_t d = 0, o = 0; d < rank; ++d) {
    if (!reduced[d]) mapped[d] = out_strides[o++];
  }
  const std::size_t out_n = shape_numel(out_shape);
  const std::size_t count = x.numel() / out_n;
  auto xv = x.values();
  std::vector<double> out(out_n, 0.0);
  std::vector<std::size_t> argmax;
  if (kind == ReduceKind::max) {
    argmax.assign(out_n, std::numeric_limits<std::size_t>::max());
    for_each_mapped(x.shape(), mapped, [&](std::size_t i, std::size_t m) {
      if (argmax[m] == std::numeric_limits<std::size_t>::max() || xv[i] > out[m]) {
        out[m] = xv[i];
        argmax[m] = i;
      }
    });
  } else {
    for_each_mapped(x.shape(), mapped, [&](std::size_t i, std::size_t m) { out[m] += xv[i]; });
    if (kind == ReduceKind::mean) {
      for (auto& v : out) v /= static_cast<double>(count);
    }
  }
  Tensor result = make_output(reduce_name(kind), out_shape, std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    record(tape, result, reduce_name(kind), {&x},
           [shape = x.shape(), mapped, kind, count, argmax = std::move(argmax)](const Tensor& g) {
             auto gv = g.values();
             std::vector<double> dx(shape_numel(shape), 0.0);
             if (kind == ReduceKind::max) {
               for (std::size_t m = 0; m < argmax.size(); ++m) dx[argmax[m]] = gv[m];
             } else {
               const double scale = kind == ReduceKind::mean ? 1.0 / static_cast<double>(count) : 1.0;
               for_each_mapped(shape, mapped, [&](std::size_t i, std::size_t m) { dx[i] = gv[m] * scale; });
             }
             return std::vector<Tensor>{Tensor(shape, std::move(dx))};
           });
  }
  return result;
}

// --------------------------------------------------------------- batch norm

BatchNormState BatchNormState::fresh(std::size_t channels) {
  return BatchNormState{Tensor::zeros({channels}), Tensor::full({channels}, 1.0)};
}

Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                    const BatchNormOptions& options) {
  if (x.rank() != 2 && x.rank() != 4) {
    throw ShapeError("batch_norm2d expects B×C×H×W or R×C input, got " + shape_str(x.shape()));
  }
  const std::size_t outer = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t inner = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  const Shape cshape{channels};
  if (gamma.shape() != cshape || beta.shape() != cshape || state.running_mean.shape() != cshape ||
      state.running_var.shape() != cshape) {
    throw ShapeError("batch_norm2d parameters must have shape " + shape_str(cshape) + " for input " +
                     shape_str(x.shape()));
  }
  const std::size_t count = outer * inner;
  const bool train = options.mode == NormMode::train;
  if (train && count < 2) {
    throw DegenerateBatchError("batch_norm2d in train mode needs at least 2 values per channel, input " +
                               shape_str(x.shape()));
  }
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  std::vector<double> mean(channels, 0.0), inv_std(channels, 0.0);
  if (train) {
    std::vector<double> var(channels, 0.0);
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* p = xv.data() + (o * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      mean[c] = s / static_cast<double>(count);
      double q = 0.0;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* p = xv.data() + (o * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = p[i] - mean[c];
          q += d * d;
        }
      }
      var[c] = q / static_cast<double>(count);
      inv_std[c] = 1.0 / std::sqrt(var[c] + options.eps);
    }
    if (options.update_running_stats) {
      auto rm = state.running_mean.mutable_values();
      auto rv = state.running_var.mutable_values();
      const double unbias = static_cast<double>(count) / static_cast<double>(count - 1);
      for (std::size_t c = 0; c < channels; ++c) {
        rm[c] = (1.0 - options.momentum) * rm[c] + options.momentum * mean[c];
        rv[c] = (1.0 - options.momentum) * rv[c] + options.momentum * var[c] * unbias;
      }
      round_to_precision(rm);
      round_to_precision(rv);
    }
  } else {
    auto rm = state.running_mean.values();
    auto rv = state.running_var.values();
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = rm[c];
      inv_std[c] = 1.0 / std::sqrt(rv[c] + options.eps);
    }
  }
  std::vector<double> xhat(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (o * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const double h = (xv[base + i] - mean[c]) * inv_std[c];
        xhat[base + i] = h;
        out[base + i] = gv[c] * h + bv[c];
      }
    }
  }
  Tensor result = make_output("batch_norm2d", x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x, &gamma, &beta})) {
    const bool gx = needs_grad(tape, x);
    const bool gg = needs_grad(tape, gamma);
    const bool gb = needs_grad(tape, beta);
    record(tape, result, "batch_norm2d", {&x, &gamma, &beta},
           [shape = x.shape(), gamma, xhat = std::move(xhat), inv_std = std::move(inv_std), outer, channels,
            inner, count, train, gx, gg, gb](const Tensor& g) {
             auto gvals = g.values();
             auto gam = gamma.values();
             std::vector<double> dgamma(channels, 0.0), dbeta(channels, 0.0);
             for (std::size_t o = 0; o < outer; ++o) {
               for (std::size_t c = 0; c < channels; ++c) {
                 const std::size_t base = (o * channels + c) * inner;
                 for (std::size_t i = 0; i < inner; ++i) {
                   dbeta[c] += gvals[base + i];
                   dgamma[c] += gvals[base + i] * xhat[base + i];
                 }
               }
             }
             std::vector<Tensor> grads(3);
             if (gx) {
               std::vector<double> dx(shape_numel(shape));
               const double n = static_cast<double>(count);
               for (std::size_t o = 0; o < outer; ++o) {
                 for (std::size_t c = 0; c < channels; ++c) {
                   const std::size_t base = (o * channels + c) * inner;
                   const double scale = gam[c] * inv_std[c];
                   for (std::size_t i = 0; i < inner; ++i) {
                     const double gi = gvals[base + i];
                     dx[base + i] = train ? scale * (gi - dbeta[c] / n - xhat[base + i] * dgamma[c] / n)
                                          : scale * gi;
                   }
                 }
               }
               grads[0] = Tensor(shape, std::move(dx));
             }
             if (gg) grads[1] = Tensor({channels}, std::move(dgamma));
             if (gb) grads[2] = Tensor({channels}, std::move(dbeta));
             return grads;
           });
  }
  return result;
}

// ------------------------------------------------------------------- layout

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  auto xv = x.values();
  Tensor result = make_output("reshape", shape, std::vector<double>(xv.begin(), xv.end()));
  if (Tape* tape = recording_tape({&x})) {
    record(tape, result, "reshape", {&x}, [in_shape = x.shape()](const Tensor& g) {
      auto gv = g.values();
      return std::vector<Tensor>{Tensor(in_shape, std::vector<double>(gv.begin(), gv.end()))};
    });
  }
  return result;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t rank = x.rank();
  if (axes.size() != rank) throw ShapeError("permute needs " + std::to_string(rank) + " axes");
  std::vector<bool> seen(rank, false);
  for (auto a : axes) {
    if (a >= rank || seen[a]) throw ShapeError("permute axes are not a permutation");
    seen[a] = true;
  }
  const auto in_strides = strides_of(x.shape());
  Shape out_shape(rank);
  std::vector<std::size_t> mapped(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = x.dim(axes[i]);
    mapped[i] = in_strides[axes[i]];
  }
  auto xv = x.values();
  std::vector<double> out(x.numel());
  for_each_mapped(out_shape, mapped, [&](std::size_t i, std::size_t j) { out[i] = xv[j]; });
  Tensor result = make_output("permute", out_shape, std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    record(tape, result, "permute", {&x}, [in_shape = x.shape(), out_shape, mapped](const Tensor& g) {
      auto gv = g.values();
      std::vector<double> dx(shape_numel(in_shape));
      for_each_mapped(out_shape, mapped, [&](std::size_t i, std::size_t j) { dx[j] = gv[i]; });
      return std::vector<Tensor>{Tensor(in_shape, std::move(dx))};
    });
  }
  return result;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || length == 0 || start + length > x.dim(axis)) {
    throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") on axis " +
                     std::to_string(axis) + " invalid for shape " + shape_str(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.dim(d);
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const std::size_t extent = x.dim(axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  auto xv = x.values();
  std::vector<double> out(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv.data() + (o * extent + start) * inner, length * inner, out.data() + o * length * inner);
  }
  Tensor result = make_output("slice", out_shape, std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    record(tape, result, "slice", {&x},
           [in_shape = x.shape(), outer, inner, extent, start, length](const Tensor& g) {
             auto gv = g.values();
             std::vector<double> dx(shape_numel(in_shape), 0.0);
             for (std::size_t o = 0; o < outer; ++o) {
               std::copy_n(gv.data() + o * length * inner, length * inner,
                           dx.data() + (o * extent + start) * inner);
             }
             return std::vector<Tensor>{Tensor(in_shape, std::move(dx))};
           });
  }
  return result;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range for " + shape_str(first));
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) throw ShapeError("concat shape mismatch: " + shape_str(first) + " vs " + shape_str(s));
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<double> out(outer * total * inner);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.dim(axis);
    auto pv = p.values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data() + o * len * inner, len * inner, out.data() + (o * total + offset) * inner);
    }
    offsets.push_back(offset);
    offset += len;
  }
  Tensor result = make_output("concat", out_shape, std::move(out));
  if (Tape* tape = recording_tape(parts)) {
    std::vector<const Tensor*> inputs;
    std::vector<bool> need;
    std::vector<Shape> shapes;
    for (const auto& p : parts) {
      inputs.push_back(&p);
      need.push_back(tape->participates(p));
      shapes.push_back(p.shape());
    }
    tape->attach(result, "concat", inputs,
                 [shapes, need, offsets, outer, inner, total, axis](const Tensor& g) {
                   auto gv = g.values();
                   std::vector<Tensor> grads(shapes.size());
                   for (std::size_t k = 0; k < shapes.size(); ++k) {
                     if (!need[k]) continue;
                     const std::size_t len = shapes[k][axis];
                     std::vector<double> d(outer * len * inner);
                     for (std::size_t o = 0; o < outer; ++o) {
                       std::copy_n(gv.data() + (o * total + offsets[k]) * inner, len * inner,
                                   d.data() + o * len * inner);
                     }
                     grads[k] = Tensor(shapes[k], std::move(d));
                   }
                   return grads;
                 });
  }
  return result;
}

Tensor index_rows(const Tensor& x, std::span<const std::size_t> rows) {
  if (x.rank() != 2) throw ShapeError("index_rows expects a rank-2 tensor, got " + shape_str(x.shape()));
  if (rows.empty()) throw ShapeError("index_rows with no indices");
  const std::size_t n = x.dim(0), d = x.dim(1);
  auto xv = x.values();
  std::vector<double> out(rows.size() * d);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) {
      throw ShapeError("index_rows index " + std::to_string(rows[r]) + " out of range for " +
                       std::to_string(n) + " rows");
    }
    std::copy_n(xv.data() + rows[r] * d, d, out.data() + r * d);
  }
  Tensor result = make_output("index_rows", {rows.size(), d}, std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    record(tape, result, "index_rows", {&x},
           [in_shape = x.shape(), idx = std::vector<std::size_t>(rows.begin(), rows.end()), d](const Tensor& g) {
             auto gv = g.values();
             std::vector<double> dx(shape_numel(in_shape), 0.0);
             for (std::size_t r = 0; r < idx.size(); ++r) {
               for (std::size_t k = 0; k < d; ++k) dx[idx[r] * d + k] += gv[r * d + k];
             }
             return std::vector<Tensor>{Tensor(in_shape, std::move(dx))};
           });
  }
  return result;
}

// ------------------------------------------------------------ softmax family

Tensor softmax_last(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("softmax_last needs rank ≥ 1");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * width;
    double* o = out.data() + r * width;
    const double mx = *std::max_element(in, in + width);
    double s = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      o[j] = std::exp(in[j] - mx);
      s += o[j];
    }
    for (std::size_t j = 0; j < width; ++j) o[j] /= s;
  }
  Tensor result = make_output("softmax", x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    Tensor y = result.detach();
    record(tape, result, "softmax", {&x}, [y, rows, width](const Tensor& g) {
      auto gv = g.values();
      auto yv = y.values();
      std::vector<double> dx(y.numel());
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < width; ++j) dot += gv[r * width + j] * yv[r * width + j];
        for (std::size_t j = 0; j < width; ++j) {
          dx[r * width + j] = yv[r * width + j] * (gv[r * width + j] - dot);
        }
      }
      return std::vector<Tensor>{Tensor(y.shape(), std::move(dx))};
    });
  }
  return result;
}

Tensor log_softmax_last(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("log_softmax_last needs rank ≥ 1");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  auto xv = x.values();
  std::vector<double> out(x.numel());
  std::vector<double> probs(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * width;
    const double mx = *std::max_element(in, in + width);
    double s = 0.0;
    for (std::size_t j = 0; j < width; ++j) s += std::exp(in[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < width; ++j) {
      out[r * width + j] = in[j] - lse;
      probs[r * width + j] = std::exp(in[j] - lse);
    }
  }
  Tensor result = make_output("log_softmax", x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    record(tape, result, "log_softmax", {&x},
           [shape = x.shape(), probs = std::move(probs), rows, width](const Tensor& g) {
             auto gv = g.values();
             std::vector<double> dx(probs.size());
             for (std::size_t r = 0; r < rows; ++r) {
               double s = 0.0;
               for (std::size_t j = 0; j < width; ++j) s += gv[r * width + j];
               for (std::size_t j = 0; j < width; ++j) {
                 dx[r * width + j] = gv[r * width + j] - probs[r * width + j] * s;
               }
             }
             return std::vector<Tensor>{Tensor(shape, std::move(dx))};
           });
  }
  return result;
}

}  // namespace pvgc
