#include "ascnet/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <random>

#include "ascnet/errors.hpp"
#include "ascnet/parallel.hpp"
#include "ascnet/rng.hpp"

namespace ascnet::nn {

std::string Shape4::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

template <typename T>
bool Tensor4<T>::all_finite() const {
  for (T v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

// Rows ordered (ci, ky, kx); columns (y, x). Zero padding of k/2. Rows of
// `col` are `ld` apart so several samples can sit side by side.
template <typename T>
void im2col(const T* x, int channels, int h, int w, int k, T* col, std::size_t ld) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ci = 0; ci < channels; ++ci) {
    const T* src = x + ci * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * ld;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx);
        const int x_hi = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          T* row = dst + static_cast<std::size_t>(y) * w;
          if (sy < 0 || sy >= h) {
            std::fill(row, row + w, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(sy) * w;
          for (int xx = 0; xx < x_lo; ++xx) row[xx] = T(0);
          for (int xx = x_lo; xx < x_hi; ++xx) row[xx] = srow[xx + dx];
          for (int xx = std::max(x_hi, x_lo); xx < w; ++xx) row[xx] = T(0);
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::size_t ld, int channels, int h, int w, int k, T* x) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::fill(x, x + channels * hw, T(0));
  for (int ci = 0; ci < channels; ++ci) {
    T* dst = x + ci * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * ld;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx);
        const int x_hi = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const T* row = src + static_cast<std::size_t>(y) * w;
          T* drow = dst + static_cast<std::size_t>(sy) * w;
          for (int xx = x_lo; xx < x_hi; ++xx) drow[xx + dx] += row[xx];
        }
      }
    }
  }
}

template <typename T>
void check_conv_shapes(const Tensor4<T>& x, const Tensor4<T>& weight) {
  require(weight.h == weight.w && (weight.h == 1 || weight.h == 3),
          "conv2d supports 1x1 and 3x3 kernels, got " + weight.shape().str());
  require(x.c == weight.c, "conv2d input channels " + std::to_string(x.c) +
                               " do not match kernel " + weight.shape().str());
}

// Small feature maps make thin GEMMs; samples are grouped so each product
// has at least this many columns. Depends only on the shape, never on threads.
constexpr std::size_t kMinGemmColumns = 2048;

int conv_group(int n, std::size_t hw) {
  return static_cast<int>(std::clamp<std::size_t>((kMinGemmColumns + hw - 1) / hw, 1, std::max(n, 1)));
}

}  // namespace

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>& bias) {
  check_conv_shapes(x, weight);
  require(bias.size() == static_cast<std::size_t>(weight.n), "conv2d bias length mismatch");
  const int cout = weight.n;
  const int k = weight.h;
  const int rows = x.c * k * k;
  const std::size_t hw = x.plane();
  Tensor4<T> out(x.n, cout, x.h, x.w);
  Eigen::Map<const Mat<T>> wm(weight.data.data(), cout, rows);
  const int group = conv_group(x.n, hw);
  const int groups = (x.n + group - 1) / group;
  parallel_for(groups, [&](int gi) {
    const int n0 = gi * group;
    const int cnt = std::min(group, x.n - n0);
    const std::size_t cols = cnt * hw;
    Mat<T> col(rows, static_cast<Eigen::Index>(cols));
    for (int j = 0; j < cnt; ++j) im2col(x.sample(n0 + j).data(), x.c, x.h, x.w, k, col.data() + j * hw, cols);
    const Mat<T> o = wm * col;
    for (int j = 0; j < cnt; ++j) {
      for (int co = 0; co < cout; ++co) {
        const T* src = o.data() + co * cols + j * hw;
        T* dst = out.channel(n0 + j, co);
        const T b = bias.data[co];
        for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] + b;
      }
    }
  });
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const Tensor4<T>& weight,
                             const Tensor4<T>& grad_out, bool need_input_grad) {
  check_conv_shapes(x, weight);
  require(grad_out.n == x.n && grad_out.c == weight.n && grad_out.h == x.h && grad_out.w == x.w,
          "conv2d grad_out shape " + grad_out.shape().str() + " inconsistent with input " +
              x.shape().str());
  const int cout = weight.n;
  const int k = weight.h;
  const int rows = x.c * k * k;
  const auto hw = static_cast<Eigen::Index>(x.plane());

  ConvGrads<T> g{need_input_grad ? Tensor4<T>(x.shape()) : Tensor4<T>(),
                 Tensor4<T>(weight.shape()), Tensor4<T>(1, cout, 1, 1)};
  Eigen::Map<const Mat<T>> wm(weight.data.data(), cout, rows);

  // Per-group weight gradients are summed in group order afterwards so the
  // result does not depend on how groups are scheduled.
  const int group = conv_group(x.n, static_cast<std::size_t>(hw));
  const int groups = (x.n + group - 1) / group;
  std::vector<Mat<T>> dw(groups);
  parallel_for(groups, [&](int gi) {
    const int n0 = gi * group;
    const int cnt = std::min(group, x.n - n0);
    const std::size_t cols = cnt * static_cast<std::size_t>(hw);
    Mat<T> col(rows, static_cast<Eigen::Index>(cols));
    Mat<T> gm(cout, static_cast<Eigen::Index>(cols));
    for (int j = 0; j < cnt; ++j) {
      im2col(x.sample(n0 + j).data(), x.c, x.h, x.w, k, col.data() + j * hw, cols);
      for (int co = 0; co < cout; ++co) {
        std::copy_n(grad_out.channel(n0 + j, co), hw, gm.data() + co * cols + j * hw);
      }
    }
    dw[gi].noalias() = gm * col.transpose();
    if (need_input_grad) {
      col.noalias() = wm.transpose() * gm;
      for (int j = 0; j < cnt; ++j) {
        col2im(col.data() + j * hw, cols, x.c, x.h, x.w, k, g.input.sample(n0 + j).data());
      }
    }
  });
  Eigen::Map<Mat<T>> gw(g.weight.data.data(), cout, rows);
  gw.setZero();
  for (const Mat<T>& d : dw) gw += d;

  for (int co = 0; co < cout; ++co) {
    double acc = 0.0;
    for (int n = 0; n < x.n; ++n) {
      const T* p = grad_out.channel(n, co);
      for (std::size_t i = 0; i < grad_out.plane(); ++i) acc += p[i];
    }
    g.bias.data[co] = static_cast<T>(acc);
  }
  return g;
}

template <typename T>
Tensor4<T> batch_norm_train(const Tensor4<T>& x, const Tensor4<T>& gamma, const Tensor4<T>& beta,
                            Tensor4<T>& running_mean, Tensor4<T>& running_var,
                            const BatchNormOptions& opt, BatchNormCache<T>* cache) {
  const std::size_t c = static_cast<std::size_t>(x.c);
  require(gamma.size() == c && beta.size() == c && running_mean.size() == c && running_var.size() == c,
          "batch_norm parameter length does not match " + std::to_string(x.c) + " channels");
  Tensor4<T> out(x.shape());
  BatchNormCache<T> local;
  BatchNormCache<T>& cc = cache ? *cache : local;
  cc.xhat = Tensor4<T>(x.shape());
  cc.inv_std.assign(c, T(0));
  const double m = static_cast<double>(x.n) * x.plane();
  for (int ch = 0; ch < x.c; ++ch) {
    double sum = 0.0;
    for (int n = 0; n < x.n; ++n) {
      const T* p = x.channel(n, ch);
      for (std::size_t i = 0; i < x.plane(); ++i) sum += p[i];
    }
    const double mean = sum / m;
    double sq = 0.0;
    for (int n = 0; n < x.n; ++n) {
      const T* p = x.channel(n, ch);
      for (std::size_t i = 0; i < x.plane(); ++i) {
        const double d = p[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / m;
    const double inv = 1.0 / std::sqrt(var + opt.eps);
    cc.inv_std[ch] = static_cast<T>(inv);
    const double gm = gamma.data[ch];
    const double bt = beta.data[ch];
    for (int n = 0; n < x.n; ++n) {
      const T* p = x.channel(n, ch);
      T* xh = cc.xhat.channel(n, ch);
      T* o = out.channel(n, ch);
      for (std::size_t i = 0; i < x.plane(); ++i) {
        const double v = (p[i] - mean) * inv;
        xh[i] = static_cast<T>(v);
        o[i] = static_cast<T>(gm * v + bt);
      }
    }
    running_mean.data[ch] =
        static_cast<T>(opt.momentum * running_mean.data[ch] + (1.0 - opt.momentum) * mean);
    running_var.data[ch] =
        static_cast<T>(opt.momentum * running_var.data[ch] + (1.0 - opt.momentum) * var);
  }
  return out;
}

template <typename T>
Tensor4<T> batch_norm_infer(const Tensor4<T>& x, const Tensor4<T>& gamma, const Tensor4<T>& beta,
                            const Tensor4<T>& running_mean, const Tensor4<T>& running_var,
                            const BatchNormOptions& opt) {
  const std::size_t c = static_cast<std::size_t>(x.c);
  require(gamma.size() == c && beta.size() == c && running_mean.size() == c && running_var.size() == c,
          "batch_norm parameter length does not match " + std::to_string(x.c) + " channels");
  Tensor4<T> out(x.shape());
  for (int ch = 0; ch < x.c; ++ch) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(running_var.data[ch]) + opt.eps);
    const double scale = gamma.data[ch] * inv;
    const double shift = beta.data[ch] - running_mean.data[ch] * scale;
    for (int n = 0; n < x.n; ++n) {
      const T* p = x.channel(n, ch);
      T* o = out.channel(n, ch);
      for (std::size_t i = 0; i < x.plane(); ++i) o[i] = static_cast<T>(p[i] * scale + shift);
    }
  }
  return out;
}

template <typename T>
BatchNormGrads<T> batch_norm_backward(const BatchNormCache<T>& cache, const Tensor4<T>& gamma,
                                      const Tensor4<T>& grad_out) {
  const Tensor4<T>& xhat = cache.xhat;
  require(grad_out.shape() == xhat.shape(), "batch_norm grad_out shape mismatch");
  BatchNormGrads<T> g{Tensor4<T>(xhat.shape()), Tensor4<T>(1, xhat.c, 1, 1),
                      Tensor4<T>(1, xhat.c, 1, 1)};
  const double m = static_cast<double>(xhat.n) * xhat.plane();
  for (int ch = 0; ch < xhat.c; ++ch) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int n = 0; n < xhat.n; ++n) {
      const T* dy = grad_out.channel(n, ch);
      const T* xh = xhat.channel(n, ch);
      for (std::size_t i = 0; i < xhat.plane(); ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += static_cast<double>(dy[i]) * xh[i];
      }
    }
    g.beta.data[ch] = static_cast<T>(sum_dy);
    g.gamma.data[ch] = static_cast<T>(sum_dy_xhat);
    // dx = gamma * inv_std / m * (m dy - sum(dy) - xhat sum(dy xhat))
    const double k = gamma.data[ch] * static_cast<double>(cache.inv_std[ch]) / m;
    for (int n = 0; n < xhat.n; ++n) {
      const T* dy = grad_out.channel(n, ch);
      const T* xh = xhat.channel(n, ch);
      T* dx = g.input.channel(n, ch);
      for (std::size_t i = 0; i < xhat.plane(); ++i) {
        dx[i] = static_cast<T>(k * (m * dy[i] - sum_dy - xh[i] * sum_dy_xhat));
      }
    }
  }
  return g;
}

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x) {
  Tensor4<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
  return out;
}

template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& grad_out) {
  require(x.shape() == grad_out.shape(), "relu grad_out shape mismatch");
  Tensor4<T> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g.data[i] = x.data[i] > T(0) ? grad_out.data[i] : T(0);
  return g;
}

template <typename T>
Tensor4<T> maxpool2(const Tensor4<T>& x, std::vector<std::uint32_t>* argmax) {
  require(x.h % 2 == 0 && x.w % 2 == 0, "maxpool2 needs even spatial dims, got " + x.shape().str());
  Tensor4<T> out(x.n, x.c, x.h / 2, x.w / 2);
  if (argmax) argmax->assign(out.size(), 0);
  std::size_t o = 0;
  for (int n = 0; n < x.n; ++n) {
    for (int c = 0; c < x.c; ++c) {
      for (int y = 0; y < out.h; ++y) {
        for (int xx = 0; xx < out.w; ++xx, ++o) {
          std::size_t best = x.index(n, c, 2 * y, 2 * xx);
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t i = x.index(n, c, 2 * y + dy, 2 * xx + dx);
              if (x.data[i] > x.data[best]) best = i;
            }
          }
          out.data[o] = x.data[best];
          if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor4<T> maxpool2_backward(const std::vector<std::uint32_t>& argmax, Shape4 input_shape,
                             const Tensor4<T>& grad_out) {
  require(argmax.size() == grad_out.size(), "maxpool2 grad_out does not match saved indices");
  Tensor4<T> g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) g.data[argmax[i]] += grad_out.data[i];
  return g;
}

namespace {

struct Tap {
  int i0, i1;
  double f;  // weight of i1
};

std::vector<Tap> upsample_taps(int in, int out) {
  std::vector<Tap> taps(out);
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) / 2.0 - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in - 1);
    taps[i] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor4<T> upsample2_bilinear(const Tensor4<T>& x) {
  Tensor4<T> out(x.n, x.c, 2 * x.h, 2 * x.w);
  const auto ty = upsample_taps(x.h, out.h);
  const auto tx = upsample_taps(x.w, out.w);
  for (int n = 0; n < x.n; ++n) {
    for (int c = 0; c < x.c; ++c) {
      const T* src = x.channel(n, c);
      T* dst = out.channel(n, c);
      for (int y = 0; y < out.h; ++y) {
        const Tap& a = ty[y];
        const T* r0 = src + static_cast<std::size_t>(a.i0) * x.w;
        const T* r1 = src + static_cast<std::size_t>(a.i1) * x.w;
        for (int xx = 0; xx < out.w; ++xx) {
          const Tap& b = tx[xx];
          const double top = r0[b.i0] * (1.0 - b.f) + r0[b.i1] * b.f;
          const double bot = r1[b.i0] * (1.0 - b.f) + r1[b.i1] * b.f;
          dst[static_cast<std::size_t>(y) * out.w + xx] = static_cast<T>(top * (1.0 - a.f) + bot * a.f);
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor4<T> upsample2_bilinear_backward(Shape4 input_shape, const Tensor4<T>& grad_out) {
  require(grad_out.n == input_shape.n && grad_out.c == input_shape.c &&
              grad_out.h == 2 * input_shape.h && grad_out.w == 2 * input_shape.w,
          "upsample grad_out shape mismatch");
  Tensor4<T> g(input_shape);
  const auto ty = upsample_taps(input_shape.h, grad_out.h);
  const auto tx = upsample_taps(input_shape.w, grad_out.w);
  for (int n = 0; n < g.n; ++n) {
    for (int c = 0; c < g.c; ++c) {
      const T* src = grad_out.channel(n, c);
      T* dst = g.channel(n, c);
      for (int y = 0; y < grad_out.h; ++y) {
        const Tap& a = ty[y];
        T* r0 = dst + static_cast<std::size_t>(a.i0) * g.w;
        T* r1 = dst + static_cast<std::size_t>(a.i1) * g.w;
        for (int xx = 0; xx < grad_out.w; ++xx) {
          const Tap& b = tx[xx];
          const double v = src[static_cast<std::size_t>(y) * grad_out.w + xx];
          r0[b.i0] += static_cast<T>(v * (1.0 - a.f) * (1.0 - b.f));
          r0[b.i1] += static_cast<T>(v * (1.0 - a.f) * b.f);
          r1[b.i0] += static_cast<T>(v * a.f * (1.0 - b.f));
          r1[b.i1] += static_cast<T>(v * a.f * b.f);
        }
      }
    }
  }
  return g;
}

template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
  require(a.n == b.n && a.h == b.h && a.w == b.w,
          "concat_channels shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor4<T> out(a.n, a.c + b.c, a.h, a.w);
  for (int n = 0; n < a.n; ++n) {
    auto sa = a.sample(n);
    auto sb = b.sample(n);
    auto so = out.sample(n);
    std::copy(sa.begin(), sa.end(), so.begin());
    std::copy(sb.begin(), sb.end(), so.begin() + sa.size());
  }
  return out;
}

template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> split_channels(const Tensor4<T>& g, int channels_a) {
  require(channels_a >= 0 && channels_a <= g.c, "split_channels index out of range");
  Tensor4<T> a(g.n, channels_a, g.h, g.w);
  Tensor4<T> b(g.n, g.c - channels_a, g.h, g.w);
  for (int n = 0; n < g.n; ++n) {
    auto s = g.sample(n);
    auto sa = a.sample(n);
    std::copy(s.begin(), s.begin() + sa.size(), sa.begin());
    std::copy(s.begin() + sa.size(), s.end(), b.sample(n).begin());
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
double mse_loss(const Tensor4<T>& pred, const Tensor4<T>& target) {
  require(pred.shape() == target.shape(), "mse_loss shape mismatch " + pred.shape().str() +
                                              " vs " + target.shape().str());
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - target.data[i];
    acc += d * d;
  }
  return pred.size() ? acc / static_cast<double>(pred.size()) : 0.0;
}

template <typename T>
Tensor4<T> mse_loss_grad(const Tensor4<T>& pred, const Tensor4<T>& target) {
  require(pred.shape() == target.shape(), "mse_loss shape mismatch");
  Tensor4<T> g(pred.shape());
  const double k = 2.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    g.data[i] = static_cast<T>(k * (static_cast<double>(pred.data[i]) - target.data[i]));
  }
  return g;
}

template <typename T>
Tensor4<T> init_truncated_normal(Shape4 shape, std::uint64_t seed, double mean, double std) {
  if (!(std > 0.0)) throw DomainError("init std must be positive");
  Tensor4<T> out(shape);
  SplitMix64 gen(seed);
  std::normal_distribution<double> dist(mean, std);
  for (T& v : out.data) {
    double s;
    do {
      s = dist(gen);
    } while (std::abs(s - mean) > 2.0 * std);
    v = static_cast<T>(s);
  }
  return out;
}

template <typename T>
void rmsprop_step(std::span<T> theta, std::span<const T> grad, std::span<T> v,
                  const RmsPropConfig& cfg) {
  if (theta.size() != grad.size() || theta.size() != v.size()) {
    throw ShapeError("rmsprop_step: parameter, gradient and state sizes differ");
  }
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    const double vi = cfg.rho * v[i] + (1.0 - cfg.rho) * g * g;
    v[i] = static_cast<T>(vi);
    theta[i] = static_cast<T>(theta[i] - cfg.learning_rate * g / (std::sqrt(vi) + cfg.eps));
  }
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void no_saved_state(const std::string& layer) {
  throw ContractError(layer + ": backward called without a matching train-mode forward");
}

void check_grad_shape(const std::string& layer, Shape4 expected, Shape4 got) {
  if (expected != got) {
    throw ContractError(layer + ": grad_out " + got.str() + " does not match saved forward output " +
                        expected.str());
  }
}

}  // namespace

template <typename T>
Conv2d<T>::Conv2d(std::string name, int in_channels, int out_channels, int kernel) {
  weight = {name + ".weight", Tensor4<T>(out_channels, in_channels, kernel, kernel),
            Tensor4<T>(out_channels, in_channels, kernel, kernel), true};
  bias = {name + ".bias", Tensor4<T>(1, out_channels, 1, 1), Tensor4<T>(1, out_channels, 1, 1), true};
}

template <typename T>
Tensor4<T> Conv2d<T>::forward(const Tensor4<T>& x, Mode mode) {
  Tensor4<T> out = conv2d(x, weight.value, bias.value);
  if (mode == Mode::Train) {
    saved_input_ = x;
    saved_out_ = out.shape();
  } else {
    saved_input_.reset();
  }
  return out;
}

template <typename T>
Tensor4<T> Conv2d<T>::backward(const Tensor4<T>& grad_out, bool need_input_grad) {
  if (!saved_input_) no_saved_state(weight.name);
  check_grad_shape(weight.name, saved_out_, grad_out.shape());
  ConvGrads<T> g = conv2d_backward(*saved_input_, weight.value, grad_out, need_input_grad);
  saved_input_.reset();
  for (std::size_t i = 0; i < g.weight.size(); ++i) weight.grad.data[i] += g.weight.data[i];
  for (std::size_t i = 0; i < g.bias.size(); ++i) bias.grad.data[i] += g.bias.data[i];
  return std::move(g.input);
}

template <typename T>
BatchNorm<T>::BatchNorm(std::string name, int channels, BatchNormOptions opt) : options(opt) {
  gamma = {name + ".gamma", Tensor4<T>(1, channels, 1, 1, T(1)), Tensor4<T>(1, channels, 1, 1), true};
  beta = {name + ".beta", Tensor4<T>(1, channels, 1, 1), Tensor4<T>(1, channels, 1, 1), true};
  running_mean = {name + ".running_mean", Tensor4<T>(1, channels, 1, 1), {}, false};
  running_var = {name + ".running_var", Tensor4<T>(1, channels, 1, 1, T(1)), {}, false};
}

template <typename T>
Tensor4<T> BatchNorm<T>::forward(const Tensor4<T>& x, Mode mode) {
  if (mode == Mode::Infer) {
    cache_.reset();
    return batch_norm_infer(x, gamma.value, beta.value, running_mean.value, running_var.value, options);
  }
  BatchNormCache<T> c;
  Tensor4<T> out = batch_norm_train(x, gamma.value, beta.value, running_mean.value, running_var.value,
                                    options, &c);
  cache_ = std::move(c);
  return out;
}

template <typename T>
Tensor4<T> BatchNorm<T>::backward(const Tensor4<T>& grad_out) {
  if (!cache_) no_saved_state(gamma.name);
  check_grad_shape(gamma.name, cache_->xhat.shape(), grad_out.shape());
  BatchNormGrads<T> g = batch_norm_backward(*cache_, gamma.value, grad_out);
  cache_.reset();
  for (std::size_t i = 0; i < g.gamma.size(); ++i) gamma.grad.data[i] += g.gamma.data[i];
  for (std::size_t i = 0; i < g.beta.size(); ++i) beta.grad.data[i] += g.beta.data[i];
  return std::move(g.input);
}

template <typename T>
Tensor4<T> ReLU<T>::forward(const Tensor4<T>& x, Mode mode) {
  if (mode == Mode::Train) {
    saved_input_ = x;
  } else {
    saved_input_.reset();
  }
  return relu(x);
}

template <typename T>
Tensor4<T> ReLU<T>::backward(const Tensor4<T>& grad_out) {
  if (!saved_input_) no_saved_state("relu");
  check_grad_shape("relu", saved_input_->shape(), grad_out.shape());
  Tensor4<T> g = relu_backward(*saved_input_, grad_out);
  saved_input_.reset();
  return g;
}

template <typename T>
Tensor4<T> MaxPool2<T>::forward(const Tensor4<T>& x, Mode mode) {
  if (mode == Mode::Infer) {
    argmax_.reset();
    return maxpool2<T>(x, nullptr);
  }
  std::vector<std::uint32_t> idx;
  Tensor4<T> out = maxpool2(x, &idx);
  argmax_ = std::move(idx);
  in_shape_ = x.shape();
  out_shape_ = out.shape();
  return out;
}

template <typename T>
Tensor4<T> MaxPool2<T>::backward(const Tensor4<T>& grad_out) {
  if (!argmax_) no_saved_state("maxpool2");
  check_grad_shape("maxpool2", out_shape_, grad_out.shape());
  Tensor4<T> g = maxpool2_backward(*argmax_, in_shape_, grad_out);
  argmax_.reset();
  return g;
}

template <typename T>
Tensor4<T> Upsample2<T>::forward(const Tensor4<T>& x, Mode mode) {
  if (mode == Mode::Train) {
    in_shape_ = x.shape();
  } else {
    in_shape_.reset();
  }
  return upsample2_bilinear(x);
}

template <typename T>
Tensor4<T> Upsample2<T>::backward(const Tensor4<T>& grad_out) {
  if (!in_shape_) no_saved_state("upsample2");
  const Shape4 s = *in_shape_;
  check_grad_shape("upsample2", Shape4{s.n, s.c, 2 * s.h, 2 * s.w}, grad_out.shape());
  in_shape_.reset();
  return upsample2_bilinear_backward(s, grad_out);
}

#define ASCNET_INSTANTIATE(T)                                                                      \
  template struct Tensor4<T>;                                                                      \
  template Tensor4<T> conv2d(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&);             \
  template ConvGrads<T> conv2d_backward(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&,   \
                                        bool);                                                     \
  template Tensor4<T> batch_norm_train(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&,    \
                                       Tensor4<T>&, Tensor4<T>&, const BatchNormOptions&,          \
                                       BatchNormCache<T>*);                                        \
  template Tensor4<T> batch_norm_infer(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&,    \
                                       const Tensor4<T>&, const Tensor4<T>&,                       \
                                       const BatchNormOptions&);                                   \
  template BatchNormGrads<T> batch_norm_backward(const BatchNormCache<T>&, const Tensor4<T>&,      \
                                                 const Tensor4<T>&);                               \
  template Tensor4<T> relu(const Tensor4<T>&);                                                     \
  template Tensor4<T> relu_backward(const Tensor4<T>&, const Tensor4<T>&);                         \
  template Tensor4<T> maxpool2(const Tensor4<T>&, std::vector<std::uint32_t>*);                    \
  template Tensor4<T> maxpool2_backward(const std::vector<std::uint32_t>&, Shape4,                 \
                                        const Tensor4<T>&);                                        \
  template Tensor4<T> upsample2_bilinear(const Tensor4<T>&);                                       \
  template Tensor4<T> upsample2_bilinear_backward(Shape4, const Tensor4<T>&);                      \
  template Tensor4<T> concat_channels(const Tensor4<T>&, const Tensor4<T>&);                       \
  template std::pair<Tensor4<T>, Tensor4<T>> split_channels(const Tensor4<T>&, int);               \
  template double mse_loss(const Tensor4<T>&, const Tensor4<T>&);                                  \
  template Tensor4<T> mse_loss_grad(const Tensor4<T>&, const Tensor4<T>&);                         \
  template Tensor4<T> init_truncated_normal(Shape4, std::uint64_t, double, double);                \
  template void rmsprop_step(std::span<T>, std::span<const T>, std::span<T>,                       \
                             const RmsPropConfig&);                                                \
  template class Conv2d<T>;                                                                        \
  template class BatchNorm<T>;                                                                     \
  template class ReLU<T>;                                                                          \
  template class MaxPool2<T>;                                                                      \
  template class Upsample2<T>;

ASCNET_INSTANTIATE(float)
ASCNET_INSTANTIATE(double)

}  // namespace ascnet::nn
