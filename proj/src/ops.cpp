#include "mammoseg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

#include "mammoseg/threading.hpp"

namespace mammoseg {
namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;
template <typename T>
using CMapVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

struct ConvGeom {
  int N, Ci, H, W;   // input image stack
  int Co, k, s, p;   // kernel geometry
  int Ho, Wo;        // sliding-window grid
};

int out_extent(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

// col is (C*k*k) x (Ho*Wo) row-major; out-of-image positions read as zero.
template <typename T>
void im2col(const T* x, int C, int H, int W, int k, int s, int p, int Ho, int Wo, T* col) {
  const std::int64_t plane = std::int64_t(Ho) * Wo;
  for (int ci = 0; ci < C; ++ci) {
    const T* xc = x + std::int64_t(ci) * H * W;
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        T* dst = col + (std::int64_t(ci * k + kh) * k + kw) * plane;
        const int off = kw - p;
        int ow0 = off < 0 ? (-off + s - 1) / s : 0;
        int ow1 = Wo;
        if (off + std::int64_t(Wo - 1) * s >= W) ow1 = off >= W ? 0 : (W - 1 - off) / s + 1;
        if (ow1 < ow0) ow1 = ow0;
        for (int oh = 0; oh < Ho; ++oh, dst += Wo) {
          const int ih = oh * s - p + kh;
          if (ih < 0 || ih >= H) {
            std::fill(dst, dst + Wo, T(0));
            continue;
          }
          const T* src = xc + std::int64_t(ih) * W + off;
          std::fill(dst, dst + ow0, T(0));
          if (s == 1) {
            std::copy(src + ow0, src + ow1, dst + ow0);
          } else {
            for (int ow = ow0; ow < ow1; ++ow) dst[ow] = src[std::int64_t(ow) * s];
          }
          std::fill(dst + ow1, dst + Wo, T(0));
        }
      }
    }
  }
}

// Scatter-add transpose of im2col.
template <typename T>
void col2im_add(const T* col, int C, int H, int W, int k, int s, int p, int Ho, int Wo, T* x) {
  const std::int64_t plane = std::int64_t(Ho) * Wo;
  for (int ci = 0; ci < C; ++ci) {
    T* xc = x + std::int64_t(ci) * H * W;
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        const T* src = col + (std::int64_t(ci * k + kh) * k + kw) * plane;
        const int off = kw - p;
        int ow0 = off < 0 ? (-off + s - 1) / s : 0;
        int ow1 = Wo;
        if (off + std::int64_t(Wo - 1) * s >= W) ow1 = off >= W ? 0 : (W - 1 - off) / s + 1;
        if (ow1 < ow0) ow1 = ow0;
        for (int oh = 0; oh < Ho; ++oh, src += Wo) {
          const int ih = oh * s - p + kh;
          if (ih < 0 || ih >= H) continue;
          T* dstrow = xc + std::int64_t(ih) * W + off;
          for (int ow = ow0; ow < ow1; ++ow) dstrow[std::int64_t(ow) * s] += src[ow];
        }
      }
    }
  }
}

template <typename T>
void conv_forward(const T* x, const T* w, const T* bias, const ConvGeom& g, T* y) {
  const std::int64_t rows = std::int64_t(g.Ci) * g.k * g.k;
  const std::int64_t plane = std::int64_t(g.Ho) * g.Wo;
  CMapRM<T> W(w, g.Co, rows);
  parallel_for(0, g.N, [&](std::int64_t n0, std::int64_t n1) {
    std::vector<T> col(std::size_t(rows * plane));
    for (std::int64_t n = n0; n < n1; ++n) {
      im2col(x + n * g.Ci * g.H * g.W, g.Ci, g.H, g.W, g.k, g.s, g.p, g.Ho, g.Wo, col.data());
      CMapRM<T> C(col.data(), rows, plane);
      MapRM<T> Y(y + n * g.Co * plane, g.Co, plane);
      Y.noalias() = W * C;
      if (bias) Y.colwise() += CMapVec<T>(bias, g.Co);
    }
  });
}

template <typename T>
void conv_grad_input(const T* gy, const T* w, const ConvGeom& g, T* gx) {
  const std::int64_t rows = std::int64_t(g.Ci) * g.k * g.k;
  const std::int64_t plane = std::int64_t(g.Ho) * g.Wo;
  CMapRM<T> W(w, g.Co, rows);
  parallel_for(0, g.N, [&](std::int64_t n0, std::int64_t n1) {
    std::vector<T> col(std::size_t(rows * plane));
    for (std::int64_t n = n0; n < n1; ++n) {
      CMapRM<T> GY(gy + n * g.Co * plane, g.Co, plane);
      MapRM<T> C(col.data(), rows, plane);
      C.noalias() = W.transpose() * GY;
      col2im_add(col.data(), g.Ci, g.H, g.W, g.k, g.s, g.p, g.Ho, g.Wo,
                 gx + n * g.Ci * g.H * g.W);
    }
  });
}

// Samples accumulate sequentially; each sample's product is split over weight
// rows, which keeps every element's reduction order fixed for any thread count.
template <typename T>
void conv_grad_weight(const T* x, const T* gy, const ConvGeom& g, T* gw) {
  const std::int64_t rows = std::int64_t(g.Ci) * g.k * g.k;
  const std::int64_t plane = std::int64_t(g.Ho) * g.Wo;
  std::vector<T> col(std::size_t(rows * plane));
  MapRM<T> GW(gw, g.Co, rows);
  for (std::int64_t n = 0; n < g.N; ++n) {
    im2col(x + n * g.Ci * g.H * g.W, g.Ci, g.H, g.W, g.k, g.s, g.p, g.Ho, g.Wo, col.data());
    CMapRM<T> C(col.data(), rows, plane);
    CMapRM<T> GY(gy + n * g.Co * plane, g.Co, plane);
    parallel_for(0, g.Co, [&](std::int64_t r0, std::int64_t r1) {
      GW.middleRows(r0, r1 - r0).noalias() += GY.middleRows(r0, r1 - r0) * C.transpose();
    });
  }
}

template <typename T>
void sum_per_channel_add(const T* gy, std::int64_t n, std::int64_t c, std::int64_t plane, T* gb) {
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* row = gy + (i * c + ch) * plane;
      T acc = T(0);
      for (std::int64_t j = 0; j < plane; ++j) acc += row[j];
      gb[ch] += acc;
    }
}

template <typename T>
ConvGeom conv_geometry(const Tensor<T>& x, const Tensor<T>& w, int stride, int padding,
                       bool transpose) {
  if (x.rank() != 4) throw ContractError("conv input must be rank 4, got " + x.shape_str());
  if (w.rank() != 4 || w.size(2) != w.size(3))
    throw ContractError("conv weight must be (a,b,k,k), got " + w.shape_str());
  if (stride < 1 || padding < 0) throw ContractError("conv stride/padding out of range");
  ConvGeom g{};
  g.k = static_cast<int>(w.size(2));
  g.s = stride;
  g.p = padding;
  g.N = static_cast<int>(x.size(0));
  if (!transpose) {
    if (x.size(1) != w.size(1))
      throw ContractError("conv2d channel mismatch: input " + x.shape_str() + " weight " +
                          w.shape_str());
    g.Ci = static_cast<int>(w.size(1));
    g.Co = static_cast<int>(w.size(0));
    g.H = static_cast<int>(x.size(2));
    g.W = static_cast<int>(x.size(3));
    g.Ho = out_extent(g.H, g.k, g.s, g.p);
    g.Wo = out_extent(g.W, g.k, g.s, g.p);
    if (g.Ho < 1 || g.Wo < 1)
      throw ConfigError("conv2d output extent is non-positive for input " + x.shape_str());
  } else {
    if (x.size(1) != w.size(0))
      throw ContractError("conv_transpose2d channel mismatch: input " + x.shape_str() +
                          " weight " + w.shape_str());
    // For the adjoint the (Ho, Wo) grid is the *input* of the transposed conv.
    g.Ci = static_cast<int>(w.size(0));
    g.Co = static_cast<int>(w.size(1));
    g.Ho = static_cast<int>(x.size(2));
    g.Wo = static_cast<int>(x.size(3));
    g.H = (g.Ho - 1) * g.s - 2 * g.p + g.k;
    g.W = (g.Wo - 1) * g.s - 2 * g.p + g.k;
    if (g.H < 1 || g.W < 1)
      throw ConfigError("conv_transpose2d output extent is non-positive for input " +
                        x.shape_str());
  }
  return g;
}

template <typename T>
void check_bias(const Tensor<T>& b, std::int64_t channels, const char* who) {
  if (b.rank() != 1 || b.size(0) != channels)
    throw ContractError(std::string(who) + " bias must be rank 1 of length " +
                        std::to_string(channels) + ", got " + b.shape_str());
}

}  // namespace

template <typename T>
Var conv2d(Tape<T>& tape, Var xv, Var wv, std::optional<Var> bv, int stride, int padding) {
  const Tensor<T>& x = tape.value(xv);
  const Tensor<T>& w = tape.value(wv);
  ConvGeom g = conv_geometry(x, w, stride, padding, /*transpose=*/false);
  const T* bias = nullptr;
  if (bv) {
    check_bias(tape.value(*bv), g.Co, "conv2d");
    bias = tape.value(*bv).data();
  }
  Tensor<T> out({g.N, g.Co, g.Ho, g.Wo});
  conv_forward(x.data(), w.data(), bias, g, out.data());
  bool ng = tape.needs_grad(xv) || tape.needs_grad(wv) || (bv && tape.needs_grad(*bv));
  Var ov = tape.node(std::move(out), ng);
  if (ng) {
    tape.record([=](Tape<T>& t) {
      const T* gy = t.grad(ov).data();
      const std::int64_t plane = std::int64_t(g.Ho) * g.Wo;
      if (t.needs_grad(xv)) conv_grad_input(gy, t.value(wv).data(), g, t.grad(xv).data());
      if (t.needs_grad(wv)) conv_grad_weight(t.value(xv).data(), gy, g, t.grad(wv).data());
      if (bv && t.needs_grad(*bv)) sum_per_channel_add(gy, g.N, g.Co, plane, t.grad(*bv).data());
    });
  }
  return ov;
}

template <typename T>
Var conv_transpose2d(Tape<T>& tape, Var xv, Var wv, std::optional<Var> bv, int stride,
                     int padding) {
  const Tensor<T>& x = tape.value(xv);
  const Tensor<T>& w = tape.value(wv);
  ConvGeom g = conv_geometry(x, w, stride, padding, /*transpose=*/true);
  const std::int64_t rows = std::int64_t(g.Ci) * g.k * g.k;        // == Ci_transposed * k * k
  const std::int64_t wcols = std::int64_t(g.Co) * g.k * g.k;       // weight viewed (Ci x Co*k*k)
  const std::int64_t grid = std::int64_t(g.Ho) * g.Wo;             // input sites
  (void)rows;
  Tensor<T> out({g.N, g.Co, g.H, g.W});
  {
    CMapRM<T> A(w.data(), g.Ci, wcols);
    T* y = out.data();
    const T* xp = x.data();
    parallel_for(0, g.N, [&](std::int64_t n0, std::int64_t n1) {
      std::vector<T> col(std::size_t(wcols * grid));
      for (std::int64_t n = n0; n < n1; ++n) {
        CMapRM<T> X(xp + n * g.Ci * grid, g.Ci, grid);
        MapRM<T> C(col.data(), wcols, grid);
        C.noalias() = A.transpose() * X;
        T* yn = y + n * g.Co * g.H * g.W;
        col2im_add(col.data(), g.Co, g.H, g.W, g.k, g.s, g.p, g.Ho, g.Wo, yn);
      }
    });
    if (bv) {
      check_bias(tape.value(*bv), g.Co, "conv_transpose2d");
      const T* b = tape.value(*bv).data();
      const std::int64_t plane = std::int64_t(g.H) * g.W;
      for (std::int64_t n = 0; n < g.N; ++n)
        for (std::int64_t c = 0; c < g.Co; ++c) {
          T* row = y + (n * g.Co + c) * plane;
          for (std::int64_t j = 0; j < plane; ++j) row[j] += b[c];
        }
    }
  }
  bool ng = tape.needs_grad(xv) || tape.needs_grad(wv) || (bv && tape.needs_grad(*bv));
  Var ov = tape.node(std::move(out), ng);
  if (ng) {
    tape.record([=](Tape<T>& t) {
      const T* gy = t.grad(ov).data();
      const std::int64_t plane = std::int64_t(g.H) * g.W;
      if (t.needs_grad(xv)) {
        // d/dx of the adjoint is the plain convolution over gy.
        CMapRM<T> A(t.value(wv).data(), g.Ci, wcols);
        T* gx = t.grad(xv).data();
        parallel_for(0, g.N, [&](std::int64_t n0, std::int64_t n1) {
          std::vector<T> col(std::size_t(wcols * grid));
          for (std::int64_t n = n0; n < n1; ++n) {
            im2col(gy + n * g.Co * plane, g.Co, g.H, g.W, g.k, g.s, g.p, g.Ho, g.Wo, col.data());
            CMapRM<T> C(col.data(), wcols, grid);
            MapRM<T> GX(gx + n * g.Ci * grid, g.Ci, grid);
            GX.noalias() += A * C;
          }
        });
      }
      if (t.needs_grad(wv)) {
        MapRM<T> GA(t.grad(wv).data(), g.Ci, wcols);
        const T* xp = t.value(xv).data();
        std::vector<T> col(std::size_t(wcols * grid));
        for (std::int64_t n = 0; n < g.N; ++n) {
          im2col(gy + n * g.Co * plane, g.Co, g.H, g.W, g.k, g.s, g.p, g.Ho, g.Wo, col.data());
          CMapRM<T> C(col.data(), wcols, grid);
          CMapRM<T> X(xp + n * g.Ci * grid, g.Ci, grid);
          parallel_for(0, g.Ci, [&](std::int64_t r0, std::int64_t r1) {
            GA.middleRows(r0, r1 - r0).noalias() += X.middleRows(r0, r1 - r0) * C.transpose();
          });
        }
      }
      if (bv && t.needs_grad(*bv)) sum_per_channel_add(gy, g.N, g.Co, plane, t.grad(*bv).data());
    });
  }
  return ov;
}

template <typename T>
Var batchnorm2d(Tape<T>& tape, Var xv, Var gv, Var bv, bool train, BatchNormStats<T>& stats,
                T eps, T momentum) {
  const Tensor<T>& x = tape.value(xv);
  if (x.rank() != 4) throw ContractError("batchnorm input must be rank 4, got " + x.shape_str());
  const std::int64_t N = x.size(0), C = x.size(1), plane = x.size(2) * x.size(3);
  const std::int64_t m = N * plane;
  const Tensor<T>& gamma = tape.value(gv);
  const Tensor<T>& beta = tape.value(bv);
  if (gamma.rank() != 1 || gamma.size(0) != C || beta.rank() != 1 || beta.size(0) != C)
    throw ContractError("batchnorm gamma/beta must have one entry per channel");
  if (stats.mean.size(0) != C) throw ContractError("batchnorm running stats channel mismatch");
  if (train && m < 2) throw ContractError("batchnorm train mode requires batch*H*W >= 2");

  std::vector<T> mu(static_cast<std::size_t>(C));
  std::vector<T> invstd(static_cast<std::size_t>(C));
  if (train) {
    for (std::int64_t c = 0; c < C; ++c) {
      T s = 0;
      for (std::int64_t n = 0; n < N; ++n) {
        const T* row = x.data() + (n * C + c) * plane;
        for (std::int64_t j = 0; j < plane; ++j) s += row[j];
      }
      T mean_c = s / T(m);
      T v = 0;
      for (std::int64_t n = 0; n < N; ++n) {
        const T* row = x.data() + (n * C + c) * plane;
        for (std::int64_t j = 0; j < plane; ++j) {
          T d = row[j] - mean_c;
          v += d * d;
        }
      }
      T var_c = v / T(m);
      mu[std::size_t(c)] = mean_c;
      invstd[std::size_t(c)] = T(1) / std::sqrt(var_c + eps);
      stats.mean[c] = (T(1) - momentum) * stats.mean[c] + momentum * mean_c;
      stats.var[c] = (T(1) - momentum) * stats.var[c] + momentum * var_c;
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      mu[std::size_t(c)] = stats.mean[c];
      invstd[std::size_t(c)] = T(1) / std::sqrt(stats.var[c] + eps);
    }
  }

  Tensor<T> out(x.shape());
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const T* src = x.data() + (n * C + c) * plane;
      T* dst = out.data() + (n * C + c) * plane;
      const T a = gamma[c] * invstd[std::size_t(c)];
      const T b = beta[c] - a * mu[std::size_t(c)];
      for (std::int64_t j = 0; j < plane; ++j) dst[j] = a * src[j] + b;
    }

  bool ng = tape.needs_grad(xv) || tape.needs_grad(gv) || tape.needs_grad(bv);
  Var ov = tape.node(std::move(out), ng);
  if (ng) {
    tape.record([=, mu = std::move(mu), invstd = std::move(invstd)](Tape<T>& t) {
      const Tensor<T>& gy = t.grad(ov);
      const Tensor<T>& xval = t.value(xv);
      const T* gamma_p = t.value(gv).data();
      for (std::int64_t c = 0; c < C; ++c) {
        const T mu_c = mu[std::size_t(c)];
        const T is_c = invstd[std::size_t(c)];
        T sum_gy = 0, sum_gy_xhat = 0;
        for (std::int64_t n = 0; n < N; ++n) {
          const T* gr = gy.data() + (n * C + c) * plane;
          const T* xr = xval.data() + (n * C + c) * plane;
          for (std::int64_t j = 0; j < plane; ++j) {
            sum_gy += gr[j];
            sum_gy_xhat += gr[j] * (xr[j] - mu_c) * is_c;
          }
        }
        if (t.needs_grad(bv)) t.grad(bv)[c] += sum_gy;
        if (t.needs_grad(gv)) t.grad(gv)[c] += sum_gy_xhat;
        if (t.needs_grad(xv)) {
          for (std::int64_t n = 0; n < N; ++n) {
            const T* gr = gy.data() + (n * C + c) * plane;
            const T* xr = xval.data() + (n * C + c) * plane;
            T* gx = t.grad(xv).data() + (n * C + c) * plane;
            if (train) {
              const T scale = gamma_p[c] * is_c / T(m);
              for (std::int64_t j = 0; j < plane; ++j) {
                T xhat = (xr[j] - mu_c) * is_c;
                gx[j] += scale * (T(m) * gr[j] - sum_gy - xhat * sum_gy_xhat);
              }
            } else {
              const T a = gamma_p[c] * is_c;
              for (std::int64_t j = 0; j < plane; ++j) gx[j] += a * gr[j];
            }
          }
        }
      }
    });
  }
  return ov;
}

template <typename T>
Var activation(Tape<T>& tape, Var xv, Act kind, T leak_slope) {
  const Tensor<T>& x = tape.value(xv);
  Tensor<T> out(x.shape());
  const std::int64_t n = x.numel();
  switch (kind) {
    case Act::relu:
      for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    case Act::leaky_relu:
      for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : leak_slope * x[i];
      break;
    case Act::tanh:
      for (std::int64_t i = 0; i < n; ++i) out[i] = std::tanh(x[i]);
      break;
    case Act::sigmoid:
      for (std::int64_t i = 0; i < n; ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
      break;
    case Act::softmax_rows: {
      if (x.rank() != 2) throw ContractError("softmax_rows requires a (batch, class) tensor");
      const std::int64_t rows = x.size(0), cols = x.size(1);
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* src = x.data() + r * cols;
        T* dst = out.data() + r * cols;
        T mx = src[0];
        for (std::int64_t j = 1; j < cols; ++j) mx = std::max(mx, src[j]);
        T denom = 0;
        for (std::int64_t j = 0; j < cols; ++j) {
          dst[j] = std::exp(src[j] - mx);
          denom += dst[j];
        }
        for (std::int64_t j = 0; j < cols; ++j) dst[j] /= denom;
      }
      break;
    }
  }
  bool ng = tape.needs_grad(xv);
  Var ov = tape.node(std::move(out), ng);
  if (ng) {
    tape.record([=](Tape<T>& t) {
      const Tensor<T>& gy = t.grad(ov);
      const Tensor<T>& y = t.value(ov);
      const Tensor<T>& xval = t.value(xv);
      Tensor<T>& gx = t.grad(xv);
      switch (kind) {
        case Act::relu:
          for (std::int64_t i = 0; i < n; ++i) gx[i] += xval[i] > T(0) ? gy[i] : T(0);
          break;
        case Act::leaky_relu:
          for (std::int64_t i = 0; i < n; ++i)
            gx[i] += xval[i] > T(0) ? gy[i] : leak_slope * gy[i];
          break;
        case Act::tanh:
          for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i] * (T(1) - y[i] * y[i]);
          break;
        case Act::sigmoid:
          for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i] * y[i] * (T(1) - y[i]);
          break;
        case Act::softmax_rows: {
          const std::int64_t rows = y.size(0), cols = y.size(1);
          for (std::int64_t r = 0; r < rows; ++r) {
            const T* yr = y.data() + r * cols;
            const T* gr = gy.data() + r * cols;
            T dot = 0;
            for (std::int64_t j = 0; j < cols; ++j) dot += gr[j] * yr[j];
            T* gxr = gx.data() + r * cols;
            for (std::int64_t j = 0; j < cols; ++j) gxr[j] += yr[j] * (gr[j] - dot);
          }
          break;
        }
      }
    });
  }
  return ov;
}

template <typename T>
Var maxpool2d(Tape<T>& tape, Var xv, int k, int stride) {
  const Tensor<T>& x = tape.value(xv);
  if (x.rank() != 4) throw ContractError("maxpool input must be rank 4, got " + x.shape_str());
  if (k < 1 || stride < 1) throw ContractError("maxpool window/stride out of range");
  const std::int64_t N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  if (H < k || W < k)
    throw ContractError("maxpool window exceeds input extent " + x.shape_str());
  const std::int64_t Ho = (H - k) / stride + 1, Wo = (W - k) / stride + 1;
  Tensor<T> out({N, C, Ho, Wo});
  std::vector<std::int64_t> argmax(std::size_t(out.numel()));
  std::int64_t o = 0;
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const T* src = x.data() + (n * C + c) * H * W;
      for (std::int64_t oh = 0; oh < Ho; ++oh)
        for (std::int64_t ow = 0; ow < Wo; ++ow, ++o) {
          T best = src[(oh * stride) * W + ow * stride];
          std::int64_t best_at = (oh * stride) * W + ow * stride;
          for (int kh = 0; kh < k; ++kh)
            for (int kw = 0; kw < k; ++kw) {
              std::int64_t at = (oh * stride + kh) * W + ow * stride + kw;
              if (src[at] > best) {  // strict: first occurrence wins ties
                best = src[at];
                best_at = at;
              }
            }
          out[o] = best;
          argmax[std::size_t(o)] = (n * C + c) * H * W + best_at;
        }
    }
  bool ng = tape.needs_grad(xv);
  Var ov = tape.node(std::move(out), ng);
  if (ng) {
    tape.record([=, argmax = std::move(argmax)](Tape<T>& t) {
      const Tensor<T>& gy = t.grad(ov);
      Tensor<T>& gx = t.grad(xv);
      for (std::int64_t i = 0; i < gy.numel(); ++i) gx[argmax[std::size_t(i)]] += gy[i];
    });
  }
  return ov;
}

template <typename T>
Var dropout(Tape<T>& tape, Var xv, T p, Rng& rng, bool active) {
  if (!(p >= T(0) && p < T(1))) throw ContractError("dropout probability must be in [0, 1)");
  const Tensor<T>& x = tape.value(xv);
  if (!active || p == T(0)) {
    Tensor<T> out = x;
    bool ng = tape.needs_grad(xv);
    Var ov = tape.node(std::move(out), ng);
    if (ng)
      tape.record([=](Tape<T>& t) {
        const Tensor<T>& gy = t.grad(ov);
        Tensor<T>& gx = t.grad(xv);
        for (std::int64_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i];
      });
    return ov;
  }
  const T keep_scale = T(1) / (T(1) - p);
  Tensor<T> factors(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i)
    factors[i] = rng.uniform() < double(p) ? T(0) : keep_scale;
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] * factors[i];
  bool ng = tape.needs_grad(xv);
  Var ov = tape.node(std::move(out), ng);
  if (ng) {
    tape.record([=, factors = std::move(factors)](Tape<T>& t) {
      const Tensor<T>& gy = t.grad(ov);
      Tensor<T>& gx = t.grad(xv);
      for (std::int64_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i] * factors[i];
    });
  }
  return ov;
}

template <typename T>
Var dense(Tape<T>& tape, Var xv, Var wv, Var bv) {
  const Tensor<T>& x = tape.value(xv);
  const Tensor<T>& w = tape.value(wv);
  const Tensor<T>& b = tape.value(bv);
  if (x.rank() != 2) throw ContractError("dense input must be rank 2, got " + x.shape_str());
  if (w.rank() != 2 || w.size(1) != x.size(1))
    throw ContractError("dense weight must be (out, in=" + std::to_string(x.size(1)) +
                        "), got " + w.shape_str());
  const std::int64_t N = x.size(0), In = x.size(1), Out = w.size(0);
  check_bias(b, Out, "dense");
  Tensor<T> out({N, Out});
  {
    CMapRM<T> X(x.data(), N, In), W(w.data(), Out, In);
    MapRM<T> Y(out.data(), N, Out);
    Y.noalias() = X * W.transpose();
    Y.rowwise() += CMapVec<T>(b.data(), Out).transpose();
  }
  bool ng = tape.needs_grad(xv) || tape.needs_grad(wv) || tape.needs_grad(bv);
  Var ov = tape.node(std::move(out), ng);
  if (ng) {
    tape.record([=](Tape<T>& t) {
      CMapRM<T> GY(t.grad(ov).data(), N, Out);
      if (t.needs_grad(xv)) {
        CMapRM<T> W(t.value(wv).data(), Out, In);
        MapRM<T> GX(t.grad(xv).data(), N, In);
        GX.noalias() += GY * W;
      }
      if (t.needs_grad(wv)) {
        CMapRM<T> X(t.value(xv).data(), N, In);
        MapRM<T> GW(t.grad(wv).data(), Out, In);
        GW.noalias() += GY.transpose() * X;
      }
      if (t.needs_grad(bv)) {
        Tensor<T>& gb = t.grad(bv);
        for (std::int64_t i = 0; i < N; ++i)
          for (std::int64_t o = 0; o < Out; ++o) gb[o] += GY(i, o);
      }
    });
  }
  return ov;
}

template <typename T>
Var concat_channels(Tape<T>& tape, Var av, Var bv) {
  const Tensor<T>& a = tape.value(av);
  const Tensor<T>& b = tape.value(bv);
  if (a.rank() != 4 || b.rank() != 4 || a.size(0) != b.size(0) || a.size(2) != b.size(2) ||
      a.size(3) != b.size(3))
    throw ContractError("concat_channels needs matching (N,*,H,W): " + a.shape_str() + " vs " +
                        b.shape_str());
  const std::int64_t N = a.size(0), Ca = a.size(1), Cb = b.size(1),
                     plane = a.size(2) * a.size(3);
  Tensor<T> out({N, Ca + Cb, a.size(2), a.size(3)});
  for (std::int64_t n = 0; n < N; ++n) {
    std::copy(a.data() + n * Ca * plane, a.data() + (n + 1) * Ca * plane,
              out.data() + n * (Ca + Cb) * plane);
    std::copy(b.data() + n * Cb * plane, b.data() + (n + 1) * Cb * plane,
              out.data() + (n * (Ca + Cb) + Ca) * plane);
  }
  bool ng = tape.needs_grad(av) || tape.needs_grad(bv);
  Var ov = tape.node(std::move(out), ng);
  if (ng) {
    tape.record([=](Tape<T>& t) {
      const Tensor<T>& gy = t.grad(ov);
      for (std::int64_t n = 0; n < N; ++n) {
        if (t.needs_grad(av)) {
          T* ga = t.grad(av).data() + n * Ca * plane;
          const T* src = gy.data() + n * (Ca + Cb) * plane;
          for (std::int64_t i = 0; i < Ca * plane; ++i) ga[i] += src[i];
        }
        if (t.needs_grad(bv)) {
          T* gb = t.grad(bv).data() + n * Cb * plane;
          const T* src = gy.data() + (n * (Ca + Cb) + Ca) * plane;
          for (std::int64_t i = 0; i < Cb * plane; ++i) gb[i] += src[i];
        }
      }
    });
  }
  return ov;
}

template <typename T>
Var flatten2(Tape<T>& tape, Var xv) {
  const Tensor<T>& x = tape.value(xv);
  if (x.rank() < 2) throw ContractError("flatten2 input must have rank >= 2");
  Tensor<T> out({x.size(0), x.numel() / x.size(0)});
  std::copy(x.data(), x.data() + x.numel(), out.data());
  bool ng = tape.needs_grad(xv);
  Var ov = tape.node(std::move(out), ng);
  if (ng)
    tape.record([=](Tape<T>& t) {
      const Tensor<T>& gy = t.grad(ov);
      Tensor<T>& gx = t.grad(xv);
      for (std::int64_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i];
    });
  return ov;
}

template <typename T>
Var affine(Tape<T>& tape, Var xv, T scale, T shift) {
  const Tensor<T>& x = tape.value(xv);
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = scale * x[i] + shift;
  bool ng = tape.needs_grad(xv);
  Var ov = tape.node(std::move(out), ng);
  if (ng)
    tape.record([=](Tape<T>& t) {
      const Tensor<T>& gy = t.grad(ov);
      Tensor<T>& gx = t.grad(xv);
      for (std::int64_t i = 0; i < gy.numel(); ++i) gx[i] += scale * gy[i];
    });
  return ov;
}

template <typename T>
Var add(Tape<T>& tape, Var av, Var bv) {
  const Tensor<T>& a = tape.value(av);
  const Tensor<T>& b = tape.value(bv);
  if (!a.same_shape(b))
    throw ContractError("add shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  bool ng = tape.needs_grad(av) || tape.needs_grad(bv);
  Var ov = tape.node(std::move(out), ng);
  if (ng)
    tape.record([=](Tape<T>& t) {
      const Tensor<T>& gy = t.grad(ov);
      if (t.needs_grad(av)) {
        Tensor<T>& ga = t.grad(av);
        for (std::int64_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i];
      }
      if (t.needs_grad(bv)) {
        Tensor<T>& gb = t.grad(bv);
        for (std::int64_t i = 0; i < gy.numel(); ++i) gb[i] += gy[i];
      }
    });
  return ov;
}

template <typename T>
Var mul(Tape<T>& tape, Var av, Var bv) {
  const Tensor<T>& a = tape.value(av);
  const Tensor<T>& b = tape.value(bv);
  if (!a.same_shape(b))
    throw ContractError("mul shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  bool ng = tape.needs_grad(av) || tape.needs_grad(bv);
  Var ov = tape.node(std::move(out), ng);
  if (ng)
    tape.record([=](Tape<T>& t) {
      const Tensor<T>& gy = t.grad(ov);
      if (t.needs_grad(av)) {
        Tensor<T>& ga = t.grad(av);
        const Tensor<T>& bval = t.value(bv);
        for (std::int64_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i] * bval[i];
      }
      if (t.needs_grad(bv)) {
        Tensor<T>& gb = t.grad(bv);
        const Tensor<T>& aval = t.value(av);
        for (std::int64_t i = 0; i < gy.numel(); ++i) gb[i] += gy[i] * aval[i];
      }
    });
  return ov;
}

template <typename T>
Var sum(Tape<T>& tape, Var xv) {
  const Tensor<T>& x = tape.value(xv);
  T s = 0;
  for (std::int64_t i = 0; i < x.numel(); ++i) s += x[i];
  bool ng = tape.needs_grad(xv);
  Var ov = tape.node(Tensor<T>::scalar(s), ng);
  if (ng)
    tape.record([=](Tape<T>& t) {
      const T g = t.grad(ov)[0];
      Tensor<T>& gx = t.grad(xv);
      for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
  return ov;
}

template <typename T>
Var mean(Tape<T>& tape, Var xv) {
  const Tensor<T>& x = tape.value(xv);
  const T inv_n = T(1) / T(x.numel());
  T s = 0;
  for (std::int64_t i = 0; i < x.numel(); ++i) s += x[i];
  bool ng = tape.needs_grad(xv);
  Var ov = tape.node(Tensor<T>::scalar(s * inv_n), ng);
  if (ng)
    tape.record([=](Tape<T>& t) {
      const T g = t.grad(ov)[0] * inv_n;
      Tensor<T>& gx = t.grad(xv);
      for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
  return ov;
}

template <typename T>
Var s_div(Tape<T>& tape, Var av, Var bv) {
  const Tensor<T>& a = tape.value(av);
  const Tensor<T>& b = tape.value(bv);
  if (a.numel() != 1 || b.numel() != 1) throw ContractError("s_div expects scalar operands");
  bool ng = tape.needs_grad(av) || tape.needs_grad(bv);
  Var ov = tape.node(Tensor<T>::scalar(a[0] / b[0]), ng);
  if (ng)
    tape.record([=](Tape<T>& t) {
      const T g = t.grad(ov)[0];
      const T aval = t.value(av)[0], bval = t.value(bv)[0];
      if (t.needs_grad(av)) t.grad(av)[0] += g / bval;
      if (t.needs_grad(bv)) t.grad(bv)[0] -= g * aval / (bval * bval);
    });
  return ov;
}

template <typename T>
Var neg_mean_log(Tape<T>& tape, Var xv, T eps) {
  const Tensor<T>& x = tape.value(xv);
  const std::int64_t n = x.numel();
  T s = 0;
  for (std::int64_t i = 0; i < n; ++i) s -= std::log(x[i] + eps);
  bool ng = tape.needs_grad(xv);
  Var ov = tape.node(Tensor<T>::scalar(s / T(n)), ng);
  if (ng)
    tape.record([=](Tape<T>& t) {
      const T g = t.grad(ov)[0] / T(n);
      const Tensor<T>& xval = t.value(xv);
      Tensor<T>& gx = t.grad(xv);
      for (std::int64_t i = 0; i < n; ++i) gx[i] -= g / (xval[i] + eps);
    });
  return ov;
}

template <typename T>
Var mean_abs_diff(Tape<T>& tape, Var av, Var bv) {
  const Tensor<T>& a = tape.value(av);
  const Tensor<T>& b = tape.value(bv);
  if (!a.same_shape(b))
    throw ContractError("mean_abs_diff shape mismatch: " + a.shape_str() + " vs " +
                        b.shape_str());
  const std::int64_t n = a.numel();
  T s = 0;
  for (std::int64_t i = 0; i < n; ++i) s += std::abs(a[i] - b[i]);
  bool ng = tape.needs_grad(av) || tape.needs_grad(bv);
  Var ov = tape.node(Tensor<T>::scalar(s / T(n)), ng);
  if (ng)
    tape.record([=](Tape<T>& t) {
      const T g = t.grad(ov)[0] / T(n);
      const Tensor<T>& aval = t.value(av);
      const Tensor<T>& bval = t.value(bv);
      for (std::int64_t i = 0; i < n; ++i) {
        T d = aval[i] - bval[i];
        T sg = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
        if (t.needs_grad(av)) t.grad(av)[i] += g * sg;
        if (t.needs_grad(bv)) t.grad(bv)[i] -= g * sg;
      }
    });
  return ov;
}

template <typename T>
Var weighted_nll(Tape<T>& tape, Var pv, const std::vector<int>& labels,
                 const std::vector<T>& class_weights, T eps) {
  const Tensor<T>& p = tape.value(pv);
  if (p.rank() != 2) throw ContractError("weighted_nll expects (batch, class) probabilities");
  const std::int64_t N = p.size(0), C = p.size(1);
  if (std::int64_t(labels.size()) != N) throw ContractError("weighted_nll label count mismatch");
  if (std::int64_t(class_weights.size()) != C)
    throw ContractError("weighted_nll class weight count mismatch");
  T s = 0;
  for (std::int64_t i = 0; i < N; ++i) {
    int l = labels[std::size_t(i)];
    if (l < 0 || l >= C) throw ContractError("weighted_nll label out of range");
    s -= class_weights[std::size_t(l)] * std::log(p[i * C + l] + eps);
  }
  bool ng = tape.needs_grad(pv);
  Var ov = tape.node(Tensor<T>::scalar(s / T(N)), ng);
  if (ng)
    tape.record([=](Tape<T>& t) {
      const T g = t.grad(ov)[0] / T(N);
      const Tensor<T>& pval = t.value(pv);
      Tensor<T>& gp = t.grad(pv);
      for (std::int64_t i = 0; i < N; ++i) {
        int l = labels[std::size_t(i)];
        gp[i * C + l] -= g * class_weights[std::size_t(l)] / (pval[i * C + l] + eps);
      }
    });
  return ov;
}

template <typename T>
Var dice_loss(Tape<T>& tape, Var target, Var pred, T eps) {
  const Tensor<T>& y = tape.value(target);
  const Tensor<T>& g = tape.value(pred);
  if (!y.same_shape(g))
    throw ContractError("dice_loss shape mismatch: " + y.shape_str() + " vs " + g.shape_str());
  T sy = 0, sg = 0;
  for (std::int64_t i = 0; i < y.numel(); ++i) {
    sy += y[i];
    sg += g[i];
  }
  // Empty-vs-empty is a perfect match.
  if (sy + sg == T(0)) return tape.input(Tensor<T>::scalar(T(0)));
  Var num = sum(tape, mul(tape, target, pred));
  Var den = affine(tape, add(tape, sum(tape, target), sum(tape, pred)), T(1), eps);
  return affine(tape, s_div(tape, num, den), T(-2), T(1));
}

#define MAMMOSEG_INSTANTIATE_OPS(T)                                                          \
  template Var conv2d<T>(Tape<T>&, Var, Var, std::optional<Var>, int, int);                  \
  template Var conv_transpose2d<T>(Tape<T>&, Var, Var, std::optional<Var>, int, int);        \
  template Var batchnorm2d<T>(Tape<T>&, Var, Var, Var, bool, BatchNormStats<T>&, T, T);      \
  template Var activation<T>(Tape<T>&, Var, Act, T);                                         \
  template Var maxpool2d<T>(Tape<T>&, Var, int, int);                                        \
  template Var dropout<T>(Tape<T>&, Var, T, Rng&, bool);                                     \
  template Var dense<T>(Tape<T>&, Var, Var, Var);                                            \
  template Var concat_channels<T>(Tape<T>&, Var, Var);                                       \
  template Var flatten2<T>(Tape<T>&, Var);                                                   \
  template Var affine<T>(Tape<T>&, Var, T, T);                                               \
  template Var add<T>(Tape<T>&, Var, Var);                                                   \
  template Var mul<T>(Tape<T>&, Var, Var);                                                   \
  template Var sum<T>(Tape<T>&, Var);                                                        \
  template Var mean<T>(Tape<T>&, Var);                                                       \
  template Var s_div<T>(Tape<T>&, Var, Var);                                                 \
  template Var neg_mean_log<T>(Tape<T>&, Var, T);                                            \
  template Var mean_abs_diff<T>(Tape<T>&, Var, Var);                                         \
  template Var weighted_nll<T>(Tape<T>&, Var, const std::vector<int>&, const std::vector<T>&, \
                               T);                                                           \
  template Var dice_loss<T>(Tape<T>&, Var, Var, T);

MAMMOSEG_INSTANTIATE_OPS(float)
MAMMOSEG_INSTANTIATE_OPS(double)

#undef MAMMOSEG_INSTANTIATE_OPS

}  // namespace mammoseg
