#include "mgpvae/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "mgpvae/errors.hpp"

namespace mgpvae::ad {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

// Eigen picks its vectorization split from the operand addresses, so products
// over arbitrary std::vector storage can round differently from run to run.
// Operands are copied into aligned matrices first.
RowMat aligned(const float* p, std::size_t rows, std::size_t cols) {
  return ConstRowMap(p, rows, cols);
}

void add_into(float* dst, const RowMat& m) {
  RowMap(dst, m.rows(), m.cols()).array() += m.array();
}

using detail::Node;

bool wants_grad(const Node& n, std::size_t i) { return n.inputs[i]->requires_grad; }

std::vector<float>& grad_of(Node& n, std::size_t i) { return n.inputs[i]->grad_buffer(); }
const std::vector<float>& value_of(const Node& n, std::size_t i) { return n.inputs[i]->value; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
}

// Geometry of one (optionally batched) volume tensor.
struct VolumeDims {
  std::size_t batch = 1, channels = 0, d = 0, h = 0, w = 0;
  bool batched = false;
  std::size_t spatial() const { return d * h * w; }
  std::size_t per_sample() const { return channels * spatial(); }
};

VolumeDims volume_dims(const Tensor& t, const char* op) {
  VolumeDims v;
  const auto& s = t.shape();
  if (s.size() == 4) {
    v.channels = s[0], v.d = s[1], v.h = s[2], v.w = s[3];
  } else if (s.size() == 5) {
    v.batched = true;
    v.batch = s[0], v.channels = s[1], v.d = s[2], v.h = s[3], v.w = s[4];
  } else {
    throw ShapeError(std::string(op) + ": expected [C,D,H,W] or [B,C,D,H,W], got " +
                     to_string(s));
  }
  return v;
}

Shape volume_shape(const VolumeDims& v) {
  if (v.batched) return {v.batch, v.channels, v.d, v.h, v.w};
  return {v.channels, v.d, v.h, v.w};
}

struct ConvGeometry {
  VolumeDims in, out;
  int stride = 1;
  std::size_t patch() const { return in.channels * 27; }
};

// cols[(c*27 + kd*9 + kh*3 + kw), o] = padded input under output voxel o.
void im2col(const float* x, const ConvGeometry& g, float* cols) {
  const auto& in = g.in;
  const auto& out = g.out;
  const std::size_t ospatial = out.spatial();
  const long s = g.stride;
  for (std::size_t c = 0; c < in.channels; ++c) {
    const float* xc = x + c * in.spatial();
    for (int kd = 0; kd < 3; ++kd)
      for (int kh = 0; kh < 3; ++kh)
        for (int kw = 0; kw < 3; ++kw) {
          float* row = cols + (c * 27 + kd * 9 + kh * 3 + kw) * ospatial;
          for (std::size_t od = 0; od < out.d; ++od) {
            long id = static_cast<long>(od) * s + kd - 1;
            float* plane = row + od * out.h * out.w;
            if (id < 0 || id >= static_cast<long>(in.d)) {
              std::fill(plane, plane + out.h * out.w, 0.0f);
              continue;
            }
            for (std::size_t oh = 0; oh < out.h; ++oh) {
              long ih = static_cast<long>(oh) * s + kh - 1;
              float* line = plane + oh * out.w;
              if (ih < 0 || ih >= static_cast<long>(in.h)) {
                std::fill(line, line + out.w, 0.0f);
                continue;
              }
              const float* src = xc + (id * in.h + ih) * in.w;
              for (std::size_t ow = 0; ow < out.w; ++ow) {
                long iw = static_cast<long>(ow) * s + kw - 1;
                line[ow] = (iw < 0 || iw >= static_cast<long>(in.w)) ? 0.0f : src[iw];
              }
            }
          }
        }
  }
}

void col2im_add(const float* cols, const ConvGeometry& g, float* dx) {
  const auto& in = g.in;
  const auto& out = g.out;
  const std::size_t ospatial = out.spatial();
  const long s = g.stride;
  for (std::size_t c = 0; c < in.channels; ++c) {
    float* dxc = dx + c * in.spatial();
    for (int kd = 0; kd < 3; ++kd)
      for (int kh = 0; kh < 3; ++kh)
        for (int kw = 0; kw < 3; ++kw) {
          const float* row = cols + (c * 27 + kd * 9 + kh * 3 + kw) * ospatial;
          for (std::size_t od = 0; od < out.d; ++od) {
            long id = static_cast<long>(od) * s + kd - 1;
            if (id < 0 || id >= static_cast<long>(in.d)) continue;
            for (std::size_t oh = 0; oh < out.h; ++oh) {
              long ih = static_cast<long>(oh) * s + kh - 1;
              if (ih < 0 || ih >= static_cast<long>(in.h)) continue;
              const float* line = row + (od * out.h + oh) * out.w;
              float* dst = dxc + (id * in.h + ih) * in.w;
              for (std::size_t ow = 0; ow < out.w; ++ow) {
                long iw = static_cast<long>(ow) * s + kw - 1;
                if (iw >= 0 && iw < static_cast<long>(in.w)) dst[iw] += line[ow];
              }
            }
          }
        }
  }
}

// F is called with float for bulk data and with double for one-element inputs.
template <typename F, typename DF>
Tensor unary(const Tensor& x, F f, DF df, const char* op) {
  auto backward = [df](Node& self) {
    const auto& xin = value_of(self, 0);
    auto& gx = grad_of(self, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * df(xin[i], self.value[i]);
  };
  if (x.size() == 1 && x.rank() == 1) return make_scalar_result(f(x.item()), {x}, backward, op);
  const auto& xv = x.data();
  std::vector<float> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  return make_result(x.shape(), std::move(y), {x}, backward, op);
}

template <typename T>
T softplus_value(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

float sigmoid_value(float x) {
  if (x >= 0) return 1.0f / (1.0f + std::exp(-x));
  float e = std::exp(x);
  return e / (1.0f + e);
}

}  // namespace

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride) {
  if (stride != 1 && stride != 2) throw ShapeError("conv3d: stride must be 1 or 2");
  ConvGeometry g;
  g.stride = stride;
  g.in = volume_dims(input, "conv3d");
  const auto& ws = weight.shape();
  if (ws.size() != 5 || ws[2] != 3 || ws[3] != 3 || ws[4] != 3)
    throw ShapeError("conv3d: weight must be [C_out,C_in,3,3,3], got " + to_string(ws));
  if (ws[1] != g.in.channels)
    throw ShapeError("conv3d: weight expects " + std::to_string(ws[1]) +
                     " input channels but input " + to_string(input.shape()) + " has " +
                     std::to_string(g.in.channels));
  if (bias.shape() != Shape{ws[0]})
    throw ShapeError("conv3d: bias must be [" + std::to_string(ws[0]) + "], got " +
                     to_string(bias.shape()));
  g.out = g.in;
  g.out.channels = ws[0];
  g.out.d = (g.in.d - 1) / stride + 1;
  g.out.h = (g.in.h - 1) / stride + 1;
  g.out.w = (g.in.w - 1) / stride + 1;

  const std::size_t cout = g.out.channels;
  const std::size_t patch = g.patch();
  const std::size_t ospatial = g.out.spatial();
  std::vector<float> out(g.out.batch * g.out.per_sample());
  {
    const float* x = input.data().data();
    const RowMat wmat = aligned(weight.data().data(), cout, patch);
    const float* b = bias.data().data();
#pragma omp parallel for schedule(static) num_threads(num_threads())
    for (std::size_t n = 0; n < g.in.batch; ++n) {
      RowMat cols(patch, ospatial);
      im2col(x + n * g.in.per_sample(), g, cols.data());
      RowMat y(cout, ospatial);
      y.noalias() = wmat * cols;
      for (std::size_t c = 0; c < cout; ++c) y.row(c).array() += b[c];
      RowMap(out.data() + n * g.out.per_sample(), cout, ospatial) = y;
    }
  }

  return make_result(
      volume_shape(g.out), std::move(out), {input, weight, bias},
      [g](Node& self) {
        const std::size_t cout = g.out.channels;
        const std::size_t patch = g.patch();
        const std::size_t ospatial = g.out.spatial();
        const std::size_t batch = g.in.batch;
        const bool need_x = wants_grad(self, 0);
        const bool need_w = wants_grad(self, 1);
        const bool need_b = wants_grad(self, 2);
        const float* x = value_of(self, 0).data();
        const RowMat wmat = aligned(value_of(self, 1).data(), cout, patch);
        float* dx = need_x ? grad_of(self, 0).data() : nullptr;
        // Per-sample partials reduced in fixed order keep results independent of thread count.
        std::vector<float> dw_parts(need_w ? batch * cout * patch : 0);
        std::vector<float> db_parts(need_b ? batch * cout : 0);
#pragma omp parallel for schedule(static) num_threads(num_threads())
        for (std::size_t n = 0; n < batch; ++n) {
          const RowMat dy = aligned(self.grad.data() + n * g.out.per_sample(), cout, ospatial);
          if (need_w) {
            RowMat cols(patch, ospatial);
            im2col(x + n * g.in.per_sample(), g, cols.data());
            RowMat dw(cout, patch);
            dw.noalias() = dy * cols.transpose();
            RowMap(dw_parts.data() + n * cout * patch, cout, patch) = dw;
          }
          if (need_b)
            for (std::size_t c = 0; c < cout; ++c) db_parts[n * cout + c] = dy.row(c).sum();
          if (need_x) {
            RowMat dcols(patch, ospatial);
            dcols.noalias() = wmat.transpose() * dy;
            col2im_add(dcols.data(), g, dx + n * g.in.per_sample());
          }
        }
        if (need_w) {
          auto& dw = grad_of(self, 1);
          for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += dw_parts[n * dw.size() + i];
        }
        if (need_b) {
          auto& db = grad_of(self, 2);
          for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t c = 0; c < cout; ++c) db[c] += db_parts[n * cout + c];
        }
      },
      "conv3d");
}

Tensor upsample_nearest3d(const Tensor& input) {
  VolumeDims in = volume_dims(input, "upsample_nearest3d");
  VolumeDims out = in;
  out.d *= 2, out.h *= 2, out.w *= 2;
  const std::size_t planes = in.batch * in.channels;
  std::vector<float> y(planes * out.spatial());
  const float* x = input.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = x + p * in.spatial();
    float* dst = y.data() + p * out.spatial();
    for (std::size_t d = 0; d < out.d; ++d)
      for (std::size_t h = 0; h < out.h; ++h)
        for (std::size_t w = 0; w < out.w; ++w)
          dst[(d * out.h + h) * out.w + w] = src[((d / 2) * in.h + h / 2) * in.w + w / 2];
  }
  return make_result(volume_shape(out), std::move(y), {input},
                     [in, out, planes](Node& self) {
                       auto& gx = grad_of(self, 0);
                       for (std::size_t p = 0; p < planes; ++p) {
                         const float* gy = self.grad.data() + p * out.spatial();
                         float* dst = gx.data() + p * in.spatial();
                         for (std::size_t d = 0; d < out.d; ++d)
                           for (std::size_t h = 0; h < out.h; ++h)
                             for (std::size_t w = 0; w < out.w; ++w)
                               dst[((d / 2) * in.h + h / 2) * in.w + w / 2] +=
                                   gy[(d * out.h + h) * out.w + w];
                       }
                     },
                     "upsample_nearest3d");
}

Tensor elu(const Tensor& input) {
  return unary(
      input, [](auto x) { return x > 0 ? x : std::expm1(x); },
      [](float x, float y) { return x > 0.0f ? 1.0f : y + 1.0f; }, "elu");
}

Tensor softplus(const Tensor& input) {
  return unary(
      input, [](auto x) { return softplus_value(x); },
      [](float x, float) { return sigmoid_value(x); },
               "softplus");
}

Tensor exp(const Tensor& input) {
  return unary(
      input, [](auto x) { return std::exp(x); }, [](float, float y) { return y; }, "exp");
}

Tensor log(const Tensor& input) {
  for (float v : input.data())
    if (!(v > 0.0f)) throw NumericalError("log: non-positive argument");
  return unary(
      input, [](auto x) { return std::log(x); }, [](float x, float) { return 1.0f / x; },
      "log");
}

Tensor square(const Tensor& input) {
  return unary(
      input, [](auto x) { return x * x; }, [](float x, float) { return 2.0f * x; }, "square");
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  const auto& is = input.shape();
  const auto& ws = weight.shape();
  if (ws.size() != 2) throw ShapeError("dense: weight must be [F_out,F_in], got " + to_string(ws));
  const std::size_t fout = ws[0], fin = ws[1];
  std::size_t batch;
  Shape out_shape;
  if (is.size() == 1 && is[0] == fin) {
    batch = 1;
    out_shape = {fout};
  } else if (is.size() == 2 && is[1] == fin) {
    batch = is[0];
    out_shape = {batch, fout};
  } else {
    throw ShapeError("dense: input " + to_string(is) + " incompatible with weight " +
                     to_string(ws));
  }
  if (bias.shape() != Shape{fout})
    throw ShapeError("dense: bias must be [" + std::to_string(fout) + "], got " +
                     to_string(bias.shape()));

  const RowMat xm = aligned(input.data().data(), batch, fin);
  const RowMat wm = aligned(weight.data().data(), fout, fin);
  RowMat ym(batch, fout);
  ym.noalias() = xm * wm.transpose();
  ym.rowwise() += Eigen::RowVectorXf(aligned(bias.data().data(), 1, fout));
  std::vector<float> y(ym.data(), ym.data() + ym.size());

  return make_result(out_shape, std::move(y), {input, weight, bias},
                     [batch, fin, fout](Node& self) {
                       const RowMat dy = aligned(self.grad.data(), batch, fout);
                       if (wants_grad(self, 0)) {
                         RowMat dx = dy * aligned(value_of(self, 1).data(), fout, fin);
                         add_into(grad_of(self, 0).data(), dx);
                       }
                       if (wants_grad(self, 1)) {
                         RowMat dw = dy.transpose() * aligned(value_of(self, 0).data(), batch, fin);
                         add_into(grad_of(self, 1).data(), dw);
                       }
                       if (wants_grad(self, 2)) {
                         RowMat db = dy.colwise().sum();
                         add_into(grad_of(self, 2).data(), db);
                       }
                     },
                     "dense");
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[1])
    throw ShapeError("matmul_nt: incompatible shapes " + to_string(as) + " and " + to_string(bs));
  const std::size_t m = as[0], n = bs[0], k = as[1];
  RowMat ym = aligned(a.data().data(), m, k) * aligned(b.data().data(), n, k).transpose();
  std::vector<float> y(ym.data(), ym.data() + ym.size());
  return make_result({m, n}, std::move(y), {a, b},
                     [m, n, k](Node& self) {
                       const RowMat dy = aligned(self.grad.data(), m, n);
                       if (wants_grad(self, 0)) {
                         RowMat da = dy * aligned(value_of(self, 1).data(), n, k);
                         add_into(grad_of(self, 0).data(), da);
                       }
                       if (wants_grad(self, 1)) {
                         RowMat db = dy.transpose() * aligned(value_of(self, 0).data(), m, k);
                         add_into(grad_of(self, 1).data(), db);
                       }
                     },
                     "matmul_nt");
}

Tensor lower_factor(const Tensor& raw) {
  const auto& s = raw.shape();
  if (s.size() != 2 || s[0] != s[1])
    throw ShapeError("lower_factor: expected square matrix, got " + to_string(s));
  const std::size_t m = s[0];
  const auto& r = raw.data();
  std::vector<float> y(m * m, 0.0f);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j <= i; ++j)
      y[i * m + j] = (i == j) ? softplus_value(r[i * m + j]) : r[i * m + j];
  return make_result(s, std::move(y), {raw},
                     [m](Node& self) {
                       const auto& rv = value_of(self, 0);
                       auto& g = grad_of(self, 0);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j <= i; ++j) {
                           float d = self.grad[i * m + j];
                           g[i * m + j] += (i == j) ? d * sigmoid_value(rv[i * m + j]) : d;
                         }
                     },
                     "lower_factor");
}

Tensor reshape(const Tensor& input, Shape shape) {
  if (numel(shape) != input.size())
    throw ShapeError("reshape: cannot view " + to_string(input.shape()) + " as " +
                     to_string(shape));
  std::vector<float> y(input.data().begin(), input.data().end());
  return make_result(std::move(shape), std::move(y), {input},
                     [](Node& self) {
                       auto& g = grad_of(self, 0);
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                     },
                     "reshape");
}

Tensor slice_cols(const Tensor& input, std::size_t begin, std::size_t end) {
  const auto& s = input.shape();
  if (s.size() != 2 || begin >= end || end > s[1])
    throw ShapeError("slice_cols: bad range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") for " + to_string(s));
  const std::size_t rows = s[0], cols = s[1], width = end - begin;
  std::vector<float> y(rows * width);
  const auto& x = input.data();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.begin() + r * cols + begin, width, y.begin() + r * width);
  return make_result({rows, width}, std::move(y), {input},
                     [rows, cols, width, begin](Node& self) {
                       auto& g = grad_of(self, 0);
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < width; ++c)
                           g[r * cols + begin + c] += self.grad[r * width + c];
                     },
                     "slice_cols");
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto backward = [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants_grad(self, k)) continue;
      auto& g = grad_of(self, k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  };
  if (a.size() == 1 && a.rank() == 1)
    return make_scalar_result(a.item() + b.item(), {a, b}, backward, "add");
  std::vector<float> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(y), {a, b}, backward, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto backward = [](Node& self) {
    if (wants_grad(self, 0)) {
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(self, 1)) {
      auto& g = grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  };
  if (a.size() == 1 && a.rank() == 1)
    return make_scalar_result(a.item() - b.item(), {a, b}, backward, "sub");
  std::vector<float> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(y), {a, b}, backward, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto backward = [](Node& self) {
    const auto& av = value_of(self, 0);
    const auto& bv = value_of(self, 1);
    if (wants_grad(self, 0)) {
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (wants_grad(self, 1)) {
      auto& g = grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  };
  if (a.size() == 1 && a.rank() == 1)
    return make_scalar_result(a.item() * b.item(), {a, b}, backward, "mul");
  std::vector<float> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(y), {a, b}, backward, "mul");
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](auto x) { return decltype(x)(factor) * x; },
      [factor](float, float) { return static_cast<float>(factor); }, "scale");
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary(
      a, [offset](auto x) { return x + decltype(x)(offset); }, [](float, float) { return 1.0f; },
      "add_scalar");
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  return make_scalar_result(acc, {a},
                     [](Node& self) {
                       auto& g = grad_of(self, 0);
                       const float d = self.grad[0];
                       for (auto& v : g) v += d;
                     },
                     "sum");
}

}  // namespace mgpvae::ad
