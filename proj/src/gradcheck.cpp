#include "ascnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "ascnet/nn.hpp"
#include "ascnet/rng.hpp"
#include "ascnet/unet.hpp"

namespace ascnet {

using nn::Mode;
using nn::Tensor4;
using T4 = Tensor4<double>;

// Tensors whose true gradient vanishes (conv biases feeding BN) are
// compared on this absolute scale instead of their own rounding noise.
constexpr double kGradFloor = 1e-6;

double max_normalized_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / std::max(scale, kGradFloor);
}

namespace {

T4 random_tensor(nn::Shape4 s, SplitMix64& g, double lo = -1.0, double hi = 1.0) {
  T4 t(s);
  for (double& v : t.data) v = lo + (hi - lo) * uniform01(g);
  return t;
}

double weighted_sum(const T4& out, const T4& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out.data[i] * weights.data[i];
  return s;
}

// Central differences of `loss` with respect to the entries `idx` of `target`.
std::vector<double> numeric_grad(std::vector<double>& target, const std::vector<std::size_t>& idx,
                                 double h, const std::function<double()>& loss) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) {
    const double saved = target[i];
    target[i] = saved + h;
    const double up = loss();
    target[i] = saved - h;
    const double down = loss();
    target[i] = saved;
    out.push_back((up - down) / (2.0 * h));
  }
  return out;
}

// Same, but a probe whose +/- h evaluations land on a different ReLU/max-pool
// pattern than the base point straddles a kink; shrink h until it does not.
std::vector<double> numeric_grad_smooth(std::vector<double>& target, const std::vector<std::size_t>& idx,
                                        double h0, const std::function<double()>& loss,
                                        const std::function<std::vector<std::uint32_t>()>& pattern) {
  loss();
  const std::vector<std::uint32_t> base = pattern();
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) {
    const double saved = target[i];
    double d = 0.0;
    for (double h = h0; h >= 1e-10; h *= 0.1) {
      target[i] = saved + h;
      const double up = loss();
      const bool same_up = pattern() == base;
      target[i] = saved - h;
      const double down = loss();
      const bool same_down = pattern() == base;
      d = (up - down) / (2.0 * h);
      if (same_up && same_down) break;
    }
    target[i] = saved;
    out.push_back(d);
  }
  return out;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

std::vector<double> pick(const std::vector<double>& v, const std::vector<std::size_t>& idx) {
  std::vector<double> out;
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

struct Accumulator {
  std::vector<double> analytic, numeric;
  void add(const std::vector<double>& a, const std::vector<double>& n) {
    analytic.insert(analytic.end(), a.begin(), a.end());
    numeric.insert(numeric.end(), n.begin(), n.end());
  }
};

GradCheckRow finish(const std::string& name, std::vector<Accumulator> parts, double tol) {
  GradCheckRow row{name, 0.0, 0, true};
  for (const auto& p : parts) {
    row.max_rel_error = std::max(row.max_rel_error, max_normalized_error(p.analytic, p.numeric));
    row.checked += p.analytic.size();
  }
  row.pass = row.max_rel_error < tol;
  return row;
}

GradCheckRow check_conv(int k, const GradCheckOptions& opt, SplitMix64& g) {
  const nn::Shape4 xs{2, 3, 8, 8};
  T4 x = random_tensor(xs, g);
  T4 w = random_tensor({4, 3, k, k}, g);
  T4 b = random_tensor({1, 4, 1, 1}, g);
  const T4 r = random_tensor({2, 4, 8, 8}, g);
  auto loss = [&] { return weighted_sum(nn::conv2d(x, w, b), r); };
  nn::ConvGrads<double> an = nn::conv2d_backward(x, w, r);
  if (opt.corrupt_conv_backward) {
    for (double& v : an.weight.data) v *= 1.05;
  }
  Accumulator ax, aw, ab;
  ax.add(an.input.data, numeric_grad(x.data, all_indices(x.size()), opt.layer_step, loss));
  aw.add(an.weight.data, numeric_grad(w.data, all_indices(w.size()), opt.layer_step, loss));
  ab.add(an.bias.data, numeric_grad(b.data, all_indices(b.size()), opt.layer_step, loss));
  return finish("conv" + std::to_string(k) + "x" + std::to_string(k), {ax, aw, ab}, opt.tolerance);
}

GradCheckRow check_batch_norm(const GradCheckOptions& opt, SplitMix64& g) {
  T4 x = random_tensor({2, 3, 8, 8}, g, -2.0, 3.0);
  T4 gamma = random_tensor({1, 3, 1, 1}, g, 0.5, 1.5);
  T4 beta = random_tensor({1, 3, 1, 1}, g);
  T4 rm(1, 3, 1, 1), rv(1, 3, 1, 1, 1.0);
  const T4 r = random_tensor({2, 3, 8, 8}, g);
  auto loss = [&] {
    return weighted_sum(nn::batch_norm_train<double>(x, gamma, beta, rm, rv, nn::BatchNormOptions{}, nullptr), r);
  };
  nn::BatchNormCache<double> cache;
  nn::batch_norm_train(x, gamma, beta, rm, rv, nn::BatchNormOptions{}, &cache);
  const auto an = nn::batch_norm_backward(cache, gamma, r);
  Accumulator ax, ag, ab;
  ax.add(an.input.data, numeric_grad(x.data, all_indices(x.size()), opt.layer_step, loss));
  ag.add(an.gamma.data, numeric_grad(gamma.data, all_indices(3), opt.layer_step, loss));
  ab.add(an.beta.data, numeric_grad(beta.data, all_indices(3), opt.layer_step, loss));
  return finish("batch_norm", {ax, ag, ab}, opt.tolerance);
}

GradCheckRow check_relu(const GradCheckOptions& opt, SplitMix64& g) {
  // Keep inputs away from the kink so central differences stay one-sided-free.
  T4 x = random_tensor({2, 3, 8, 8}, g);
  for (double& v : x.data) v = v >= 0 ? v + 0.05 : v - 0.05;
  const T4 r = random_tensor(x.shape(), g);
  auto loss = [&] { return weighted_sum(nn::relu(x), r); };
  Accumulator a;
  a.add(nn::relu_backward(x, r).data, numeric_grad(x.data, all_indices(x.size()), opt.layer_step, loss));
  return finish("relu", {a}, opt.tolerance);
}

GradCheckRow check_maxpool(const GradCheckOptions& opt, SplitMix64& g) {
  // Distinct values 0.01 apart so no block maximum changes under +/- h.
  T4 x(2, 3, 8, 8);
  std::vector<std::size_t> perm = all_indices(x.size());
  std::shuffle(perm.begin(), perm.end(), g);
  for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = 0.01 * static_cast<double>(perm[i]) - 1.0;
  const T4 r = random_tensor({2, 3, 4, 4}, g);
  auto loss = [&] { return weighted_sum(nn::maxpool2<double>(x, nullptr), r); };
  std::vector<std::uint32_t> idx;
  nn::maxpool2(x, &idx);
  Accumulator a;
  a.add(nn::maxpool2_backward(idx, x.shape(), r).data,
        numeric_grad(x.data, all_indices(x.size()), opt.layer_step, loss));
  return finish("maxpool2", {a}, opt.tolerance);
}

GradCheckRow check_upsample(const GradCheckOptions& opt, SplitMix64& g) {
  T4 x = random_tensor({2, 3, 8, 8}, g);
  const T4 r = random_tensor({2, 3, 16, 16}, g);
  auto loss = [&] { return weighted_sum(nn::upsample2_bilinear(x), r); };
  Accumulator a;
  a.add(nn::upsample2_bilinear_backward(x.shape(), r).data,
        numeric_grad(x.data, all_indices(x.size()), opt.layer_step, loss));
  return finish("upsample2_bilinear", {a}, opt.tolerance);
}

GradCheckRow check_concat(const GradCheckOptions& opt, SplitMix64& g) {
  T4 a = random_tensor({2, 3, 8, 8}, g);
  T4 b = random_tensor({2, 2, 8, 8}, g);
  const T4 r = random_tensor({2, 5, 8, 8}, g);
  auto loss = [&] { return weighted_sum(nn::concat_channels(a, b), r); };
  auto [ga, gb] = nn::split_channels(r, 3);
  Accumulator aa, ab;
  aa.add(ga.data, numeric_grad(a.data, all_indices(a.size()), opt.layer_step, loss));
  ab.add(gb.data, numeric_grad(b.data, all_indices(b.size()), opt.layer_step, loss));
  return finish("concat_channels", {aa, ab}, opt.tolerance);
}

GradCheckRow check_mse(const GradCheckOptions& opt, SplitMix64& g) {
  T4 p = random_tensor({2, 3, 8, 8}, g);
  const T4 t = random_tensor({2, 3, 8, 8}, g);
  auto loss = [&] { return nn::mse_loss(p, t); };
  Accumulator a;
  a.add(nn::mse_loss_grad(p, t).data, numeric_grad(p.data, all_indices(p.size()), opt.layer_step, loss));
  return finish("mse_loss", {a}, opt.tolerance);
}

GradCheckRow check_network(const GradCheckOptions& opt, SplitMix64& g) {
  UNetConfig cfg;
  UNet<double> model(cfg, opt.seed);
  // Move off the initial point: with zero betas, a BN channel that sees a
  // single value (1x1 bottleneck, batch 1) feeds exactly 0 into its ReLU,
  // where the network is not differentiable.
  for (nn::Param<double>* p : model.tensors()) {
    if (!p->trainable) continue;
    if (p->name.ends_with(".gamma")) {
      for (double& v : p->value.data) v = 0.8 + 0.4 * uniform01(g);
    } else if (p->name.ends_with(".beta") || p->name.ends_with(".bias")) {
      for (double& v : p->value.data) v = 0.2 * uniform01(g) - 0.1;
    }
  }
  const int n = opt.network_size;
  T4 x = random_tensor({1, 1, n, n}, g, 0.0, 2.0);
  const T4 r = random_tensor({1, 1, n, n}, g);
  auto loss = [&] { return weighted_sum(model.forward(x, Mode::Train), r); };
  auto pattern = [&] { return model.activation_pattern(); };
  auto numeric = [&](std::vector<double>& target, const std::vector<std::size_t>& idx) {
    return numeric_grad_smooth(target, idx, opt.network_step, loss, pattern);
  };

  model.zero_grad();
  model.forward(x, Mode::Train);
  const T4 gx = model.backward(r);

  std::vector<Accumulator> parts;
  Accumulator ax;
  ax.add(gx.data, numeric(x.data, all_indices(x.size())));
  parts.push_back(ax);

  for (nn::Param<double>* p : model.tensors()) {
    if (!p->trainable) continue;
    std::vector<std::size_t> idx = all_indices(p->value.size());
    if (idx.size() > static_cast<std::size_t>(opt.samples_per_tensor)) {
      std::shuffle(idx.begin(), idx.end(), g);
      idx.resize(opt.samples_per_tensor);
      std::sort(idx.begin(), idx.end());
    }
    Accumulator a;
    const std::vector<double> analytic = pick(p->grad.data, idx);
    if (opt.corrupt_conv_backward && p->name.ends_with(".weight")) {
      std::vector<double> bad = analytic;
      for (double& v : bad) v *= 1.05;
      a.add(bad, numeric(p->value.data, idx));
    } else {
      a.add(analytic, numeric(p->value.data, idx));
    }
    parts.push_back(a);
  }
  return finish("unet_" + std::to_string(n) + "x" + std::to_string(n), parts, opt.tolerance);
}

}  // namespace

std::vector<GradCheckRow> run_gradcheck(const GradCheckOptions& opt) {
  SplitMix64 g(derive_seed(opt.seed, {0x67726164}));
  std::vector<GradCheckRow> rows;
  rows.push_back(check_conv(3, opt, g));
  rows.push_back(check_conv(1, opt, g));
  rows.push_back(check_batch_norm(opt, g));
  rows.push_back(check_relu(opt, g));
  rows.push_back(check_maxpool(opt, g));
  rows.push_back(check_upsample(opt, g));
  rows.push_back(check_concat(opt, g));
  rows.push_back(check_mse(opt, g));
  rows.push_back(check_network(opt, g));
  return rows;
}

}  // namespace ascnet
