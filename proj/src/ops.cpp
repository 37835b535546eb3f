#include "segpl/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "segpl/error.hpp"

namespace segpl::ops {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

struct Kernel {
  int kd, kh, kw;
  int taps() const { return kd * kh * kw; }
};

Kernel kernel_of(const Tensor& weight) {
  if (weight.rank() != 5) throw ShapeError("conv weight must be rank 5, got " + shape_string(weight.shape()));
  Kernel k{weight.dim(2), weight.dim(3), weight.dim(4)};
  if (k.kd % 2 == 0 || k.kh % 2 == 0 || k.kw % 2 == 0) throw ShapeError("conv kernel sizes must be odd");
  return k;
}

// Rows are (in_channel, kz, ky, kx); columns are output voxels.
void im2col(const double* x, const Dims& d, const Kernel& k, double* col) {
  const int S = d.spatial();
  const int pd = k.kd / 2, ph = k.kh / 2, pw = k.kw / 2;
  for (int c = 0; c < d.channels; ++c) {
    const double* xc = x + static_cast<std::size_t>(c) * S;
    for (int kz = 0; kz < k.kd; ++kz)
      for (int ky = 0; ky < k.kh; ++ky)
        for (int kx = 0; kx < k.kw; ++kx) {
          double* row = col + (static_cast<std::size_t>(((c * k.kd + kz) * k.kh + ky) * k.kw + kx)) * S;
          const int x_lo = std::max(0, pw - kx);
          const int x_hi = std::min(d.width, d.width + pw - kx);
          for (int z = 0; z < d.depth; ++z) {
            const int sz = z + kz - pd;
            for (int y = 0; y < d.height; ++y) {
              double* out = row + (static_cast<std::size_t>(z) * d.height + y) * d.width;
              const int sy = y + ky - ph;
              if (sz < 0 || sz >= d.depth || sy < 0 || sy >= d.height || x_lo >= x_hi) {
                std::fill(out, out + d.width, 0.0);
                continue;
              }
              const double* src = xc + (static_cast<std::size_t>(sz) * d.height + sy) * d.width + (kx - pw);
              std::fill(out, out + x_lo, 0.0);
              std::memcpy(out + x_lo, src + x_lo, sizeof(double) * static_cast<std::size_t>(x_hi - x_lo));
              std::fill(out + x_hi, out + d.width, 0.0);
            }
          }
        }
  }
}

void col2im_add(const double* col, const Dims& d, const Kernel& k, double* x) {
  const int S = d.spatial();
  const int pd = k.kd / 2, ph = k.kh / 2, pw = k.kw / 2;
  for (int c = 0; c < d.channels; ++c) {
    double* xc = x + static_cast<std::size_t>(c) * S;
    for (int kz = 0; kz < k.kd; ++kz)
      for (int ky = 0; ky < k.kh; ++ky)
        for (int kx = 0; kx < k.kw; ++kx) {
          const double* row =
              col + (static_cast<std::size_t>(((c * k.kd + kz) * k.kh + ky) * k.kw + kx)) * S;
          const int x_lo = std::max(0, pw - kx);
          const int x_hi = std::min(d.width, d.width + pw - kx);
          for (int z = 0; z < d.depth; ++z) {
            const int sz = z + kz - pd;
            if (sz < 0 || sz >= d.depth) continue;
            for (int y = 0; y < d.height; ++y) {
              const int sy = y + ky - ph;
              if (sy < 0 || sy >= d.height) continue;
              const double* in = row + (static_cast<std::size_t>(z) * d.height + y) * d.width;
              double* dst = xc + (static_cast<std::size_t>(sz) * d.height + sy) * d.width + (kx - pw);
              for (int i = x_lo; i < x_hi; ++i) dst[i] += in[i];
            }
          }
        }
  }
}

}  // namespace

Dims dims_of(const Tensor& t) {
  if (t.rank() != 5) throw ShapeError("expected 5-D activation, got " + shape_string(t.shape()));
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3), t.dim(4)};
}

Tensor conv_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const Dims d = dims_of(x);
  const Kernel k = kernel_of(weight);
  const int out_c = weight.dim(0);
  if (weight.dim(1) != d.channels) {
    throw ShapeError("conv expects " + std::to_string(weight.dim(1)) + " input channels, got " +
                     std::to_string(d.channels));
  }
  const int S = d.spatial();
  const int rows = d.channels * k.taps();
  Tensor y({d.batch, out_c, d.depth, d.height, d.width});
  ConstMatrixMap w(weight.data(), out_c, rows);
  AlignedBuffer col;
  if (k.taps() > 1) col.resize(static_cast<std::size_t>(rows) * S);
  for (int b = 0; b < d.batch; ++b) {
    const double* xb = x.data() + static_cast<std::size_t>(b) * d.channels * S;
    const double* cols = xb;
    if (k.taps() > 1) {
      im2col(xb, d, k, col.data());
      cols = col.data();
    }
    MatrixMap yb(y.data() + static_cast<std::size_t>(b) * out_c * S, out_c, S);
    yb.noalias() = w * ConstMatrixMap(cols, rows, S);
    if (!bias.empty()) {
      for (int o = 0; o < out_c; ++o) yb.row(o).array() += bias[static_cast<std::size_t>(o)];
    }
  }
  return y;
}

void conv_backward(const Tensor& x, const Tensor& weight, const Tensor& d_y, Tensor& d_weight,
                   Tensor& d_bias, Tensor* d_x) {
  const Dims d = dims_of(x);
  const Kernel k = kernel_of(weight);
  const int out_c = weight.dim(0);
  const int S = d.spatial();
  const int rows = d.channels * k.taps();
  ConstMatrixMap w(weight.data(), out_c, rows);
  MatrixMap dw(d_weight.data(), out_c, rows);
  AlignedBuffer col, dcol;
  if (k.taps() > 1) col.resize(static_cast<std::size_t>(rows) * S);
  if (d_x) {
    *d_x = Tensor(x.shape());
    if (k.taps() > 1) dcol.resize(col.size());
  }
  for (int b = 0; b < d.batch; ++b) {
    const double* xb = x.data() + static_cast<std::size_t>(b) * d.channels * S;
    const double* cols = xb;
    if (k.taps() > 1) {
      im2col(xb, d, k, col.data());
      cols = col.data();
    }
    ConstMatrixMap dyb(d_y.data() + static_cast<std::size_t>(b) * out_c * S, out_c, S);
    dw.noalias() += dyb * ConstMatrixMap(cols, rows, S).transpose();
    if (!d_bias.empty()) {
      for (int o = 0; o < out_c; ++o) d_bias[static_cast<std::size_t>(o)] += dyb.row(o).sum();
    }
    if (d_x) {
      double* dxb = d_x->data() + static_cast<std::size_t>(b) * d.channels * S;
      if (k.taps() > 1) {
        MatrixMap dc(dcol.data(), rows, S);
        dc.noalias() = w.transpose() * dyb;
        col2im_add(dcol.data(), d, k, dxb);
      } else {
        MatrixMap(dxb, rows, S).noalias() = w.transpose() * dyb;
      }
    }
  }
}

Tensor instance_norm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                             NormCache& cache, double eps) {
  const Dims d = dims_of(x);
  const int S = d.spatial();
  cache.normalized = Tensor(x.shape());
  cache.inv_std.assign(static_cast<std::size_t>(d.batch) * d.channels, 0.0);
  Tensor y(x.shape());
  for (int b = 0; b < d.batch; ++b)
    for (int c = 0; c < d.channels; ++c) {
      const std::size_t plane = static_cast<std::size_t>(b) * d.channels + c;
      const double* src = x.data() + plane * S;
      double mean = 0.0;
      for (int i = 0; i < S; ++i) mean += src[i];
      mean /= S;
      double var = 0.0;
      for (int i = 0; i < S; ++i) var += (src[i] - mean) * (src[i] - mean);
      var /= S;
      const double inv = 1.0 / std::sqrt(var + eps);
      cache.inv_std[plane] = inv;
      double* xh = cache.normalized.data() + plane * S;
      double* out = y.data() + plane * S;
      const double g = gamma[static_cast<std::size_t>(c)], sh = beta[static_cast<std::size_t>(c)];
      for (int i = 0; i < S; ++i) {
        xh[i] = (src[i] - mean) * inv;
        out[i] = g * xh[i] + sh;
      }
    }
  return y;
}

Tensor instance_norm_backward(const Tensor& d_y, const Tensor& gamma, const NormCache& cache,
                              Tensor& d_gamma, Tensor& d_beta) {
  const Dims d = dims_of(d_y);
  const int S = d.spatial();
  Tensor d_x(d_y.shape());
  for (int b = 0; b < d.batch; ++b)
    for (int c = 0; c < d.channels; ++c) {
      const std::size_t plane = static_cast<std::size_t>(b) * d.channels + c;
      const double* dy = d_y.data() + plane * S;
      const double* xh = cache.normalized.data() + plane * S;
      double sum_dy = 0.0, sum_dy_xh = 0.0;
      for (int i = 0; i < S; ++i) {
        sum_dy += dy[i];
        sum_dy_xh += dy[i] * xh[i];
      }
      d_beta[static_cast<std::size_t>(c)] += sum_dy;
      d_gamma[static_cast<std::size_t>(c)] += sum_dy_xh;
      const double g = gamma[static_cast<std::size_t>(c)];
      const double mean_dxh = g * sum_dy / S;
      const double mean_dxh_xh = g * sum_dy_xh / S;
      const double inv = cache.inv_std[plane];
      double* dx = d_x.data() + plane * S;
      for (int i = 0; i < S; ++i) dx[i] = inv * (g * dy[i] - mean_dxh - xh[i] * mean_dxh_xh);
    }
  return d_x;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] < 0.0 ? 0.0 : x[i];
  return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& d_y) {
  Tensor d_x(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) d_x[i] = y[i] > 0.0 ? d_y[i] : 0.0;
  return d_x;
}

Tensor max_pool_forward(const Tensor& x, Factors f, std::vector<int>& argmax) {
  const Dims d = dims_of(x);
  if (d.depth % f[0] || d.height % f[1] || d.width % f[2]) {
    throw ShapeError("pooling input " + shape_string(x.shape()) + " not divisible by pool factors");
  }
  const int od = d.depth / f[0], oh = d.height / f[1], ow = d.width / f[2];
  Tensor y({d.batch, d.channels, od, oh, ow});
  argmax.assign(y.size(), 0);
  const int S = d.spatial();
  std::size_t o = 0;
  for (int p = 0; p < d.batch * d.channels; ++p) {
    const double* src = x.data() + static_cast<std::size_t>(p) * S;
    for (int z = 0; z < od; ++z)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          int best_i = 0;
          for (int a = 0; a < f[0]; ++a)
            for (int b = 0; b < f[1]; ++b)
              for (int c = 0; c < f[2]; ++c) {
                const int i = ((z * f[0] + a) * d.height + yy * f[1] + b) * d.width + xx * f[2] + c;
                if (src[i] > best) {
                  best = src[i];
                  best_i = i;
                }
              }
          y[o] = best;
          argmax[o] = best_i;
        }
  }
  return y;
}

Tensor max_pool_backward(const Tensor& d_y, const Dims& input, const std::vector<int>& argmax) {
  Tensor d_x({input.batch, input.channels, input.depth, input.height, input.width});
  const Dims od = dims_of(d_y);
  const int S = input.spatial();
  const int OS = od.spatial();
  for (int p = 0; p < input.batch * input.channels; ++p)
    for (int i = 0; i < OS; ++i) {
      const std::size_t o = static_cast<std::size_t>(p) * OS + i;
      d_x[static_cast<std::size_t>(p) * S + argmax[o]] += d_y[o];
    }
  return d_x;
}

Tensor upsample_nearest_forward(const Tensor& x, Factors f) {
  const Dims d = dims_of(x);
  const int nd = d.depth * f[0], nh = d.height * f[1], nw = d.width * f[2];
  Tensor y({d.batch, d.channels, nd, nh, nw});
  const int S = d.spatial(), NS = nd * nh * nw;
  for (int p = 0; p < d.batch * d.channels; ++p) {
    const double* src = x.data() + static_cast<std::size_t>(p) * S;
    double* dst = y.data() + static_cast<std::size_t>(p) * NS;
    for (int z = 0; z < nd; ++z)
      for (int yy = 0; yy < nh; ++yy)
        for (int xx = 0; xx < nw; ++xx)
          dst[(z * nh + yy) * nw + xx] = src[((z / f[0]) * d.height + yy / f[1]) * d.width + xx / f[2]];
  }
  return y;
}

Tensor upsample_nearest_backward(const Tensor& d_y, Factors f) {
  const Dims d = dims_of(d_y);
  const int od = d.depth / f[0], oh = d.height / f[1], ow = d.width / f[2];
  Tensor d_x({d.batch, d.channels, od, oh, ow});
  const int S = d.spatial(), OS = od * oh * ow;
  for (int p = 0; p < d.batch * d.channels; ++p) {
    const double* src = d_y.data() + static_cast<std::size_t>(p) * S;
    double* dst = d_x.data() + static_cast<std::size_t>(p) * OS;
    for (int z = 0; z < d.depth; ++z)
      for (int yy = 0; yy < d.height; ++yy)
        for (int xx = 0; xx < d.width; ++xx)
          dst[((z / f[0]) * oh + yy / f[1]) * ow + xx / f[2]] += src[(z * d.height + yy) * d.width + xx];
  }
  return d_x;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Dims da = dims_of(a), db = dims_of(b);
  if (da.batch != db.batch || da.depth != db.depth || da.height != db.height || da.width != db.width) {
    throw ShapeError("channel concat of " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  Tensor y({da.batch, da.channels + db.channels, da.depth, da.height, da.width});
  const std::size_t sa = a.batch_stride(), sb = b.batch_stride();
  for (int n = 0; n < da.batch; ++n) {
    double* dst = y.data() + n * (sa + sb);
    std::copy_n(a.data() + n * sa, sa, dst);
    std::copy_n(b.data() + n * sb, sb, dst + sa);
  }
  return y;
}

void split_channels(const Tensor& d_y, int channels_a, Tensor& d_a, Tensor& d_b) {
  const Dims d = dims_of(d_y);
  d_a = Tensor({d.batch, channels_a, d.depth, d.height, d.width});
  d_b = Tensor({d.batch, d.channels - channels_a, d.depth, d.height, d.width});
  const std::size_t sa = d_a.batch_stride(), sb = d_b.batch_stride();
  for (int n = 0; n < d.batch; ++n) {
    const double* src = d_y.data() + n * (sa + sb);
    std::copy_n(src, sa, d_a.data() + n * sa);
    std::copy_n(src + sa, sb, d_b.data() + n * sb);
  }
}

double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& logits) {
  Tensor p(logits.shape());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = sigmoid(logits[i]);
  return p;
}

Tensor sigmoid_backward(const Tensor& probabilities, const Tensor& d_probabilities) {
  Tensor d(probabilities.shape());
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = d_probabilities[i] * probabilities[i] * (1.0 - probabilities[i]);
  }
  return d;
}

}  // namespace segpl::ops
