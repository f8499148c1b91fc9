#include <cmath>
#include <vector>

#include "ascnet/errors.hpp"
#include "ascnet/gradcheck.hpp"
#include "ascnet/nn.hpp"
#include "doctest.h"

using namespace ascnet;
using namespace ascnet::nn;
using T4 = Tensor4<float>;

namespace {

T4 from(int n, int c, int h, int w, std::vector<float> v) {
  T4 t(n, c, h, w);
  REQUIRE(v.size() == t.size());
  t.data = std::move(v);
  return t;
}

}  // namespace

TEST_CASE("conv2d hand examples") {
  const T4 x = from(1, 1, 2, 2, {1, 2, 3, 4});
  T4 w(1, 1, 3, 3);
  T4 b(1, 1, 1, 1);

  w.at(0, 0, 1, 1) = 1;
  CHECK(conv2d(x, w, b).data == x.data);

  std::fill(w.data.begin(), w.data.end(), 1.0f);
  for (float v : conv2d(x, w, b).data) CHECK(v == 10.0f);

  std::fill(w.data.begin(), w.data.end(), 0.0f);
  b.data[0] = 5;
  for (float v : conv2d(x, w, b).data) CHECK(v == 5.0f);

  CHECK_THROWS_AS(conv2d(x, T4(1, 2, 3, 3), b), ShapeError);
}

TEST_CASE("conv2d is cross-correlation") {
  // Impulse at (0,0) of the kernel picks the up-left neighbour.
  const T4 x = from(1, 1, 2, 2, {1, 2, 3, 4});
  T4 w(1, 1, 3, 3), b(1, 1, 1, 1);
  w.at(0, 0, 0, 0) = 1;
  CHECK(conv2d(x, w, b).data == std::vector<float>{0, 0, 0, 1});
}

TEST_CASE("identity-kernel conv backward passes the gradient through") {
  const T4 x = from(1, 1, 2, 2, {1, 2, 3, 4});
  T4 w(1, 1, 3, 3);
  w.at(0, 0, 1, 1) = 1;
  const T4 g = from(1, 1, 2, 2, {0.5f, -1, 2, 3});
  const auto grads = conv2d_backward(x, w, g);
  CHECK(grads.input.data == g.data);
  CHECK(grads.bias.data[0] == doctest::Approx(4.5));
  CHECK(grads.weight.at(0, 0, 1, 1) == doctest::Approx(0.5 - 2 + 6 + 12));
}

TEST_CASE("batch norm examples") {
  T4 gamma(1, 1, 1, 1, 1.0f), beta(1, 1, 1, 1), rm(1, 1, 1, 1), rv(1, 1, 1, 1, 1.0f);
  const T4 x = from(1, 1, 1, 2, {1, 3});
  const T4 y = batch_norm_train<float>(x, gamma, beta, rm, rv, {}, nullptr);
  const double e = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(y.data[0] == doctest::Approx(-e).epsilon(1e-6));
  CHECK(y.data[1] == doctest::Approx(e).epsilon(1e-6));
  // Running stats: 0.99 * old + 0.01 * batch, biased variance 1.
  CHECK(rm.data[0] == doctest::Approx(0.02));
  CHECK(rv.data[0] == doctest::Approx(1.0));

  SUBCASE("standardized input is nearly unchanged") {
    const T4 z = from(1, 1, 2, 2, {-1, 1, -1, 1});
    const T4 out = batch_norm_train<float>(z, gamma, beta, rm, rv, {}, nullptr);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(out.data[i] - z.data[i]) < 1e-4);
  }
  SUBCASE("gamma zero gives beta") {
    T4 g0(1, 1, 1, 1), b7(1, 1, 1, 1, 7.0f);
    for (float v : batch_norm_train<float>(x, g0, b7, rm, rv, {}, nullptr).data) CHECK(v == 7.0f);
  }
  SUBCASE("infer uses running stats") {
    T4 m(1, 1, 1, 1, 2.0f), v(1, 1, 1, 1, 4.0f);
    const T4 out = batch_norm_infer<float>(x, gamma, beta, m, v, {});
    CHECK(out.data[0] == doctest::Approx(-1.0 / std::sqrt(4.0 + 1e-5)));
  }
  SUBCASE("channel mismatch") {
    CHECK_THROWS_AS(batch_norm_train<float>(x, T4(1, 2, 1, 1), beta, rm, rv, {}, nullptr), ShapeError);
  }
}

TEST_CASE("batch norm train output is standardized per channel") {
  T4 x(3, 2, 4, 4);
  for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = std::sin(0.37f * i) * 5 + (i % 7);
  T4 gamma(1, 2, 1, 1, 1.0f), beta(1, 2, 1, 1), rm(1, 2, 1, 1), rv(1, 2, 1, 1, 1.0f);
  const T4 y = batch_norm_train<float>(x, gamma, beta, rm, rv, {}, nullptr);
  for (int c = 0; c < 2; ++c) {
    double s = 0, ss = 0;
    int k = 0;
    for (int n = 0; n < 3; ++n)
      for (int i = 0; i < 16; ++i, ++k) {
        s += y.channel(n, c)[i];
        ss += y.channel(n, c)[i] * static_cast<double>(y.channel(n, c)[i]);
      }
    const double m = s / k;
    CHECK(std::abs(m) < 1e-4);
    CHECK(std::abs(ss / k - m * m - 1.0) < 1e-3);
  }
}

TEST_CASE("relu") {
  const T4 x = from(1, 1, 1, 2, {-1, 2});
  CHECK(relu(x).data == std::vector<float>{0, 2});
  CHECK(relu(relu(x)).data == relu(x).data);
  const T4 pos = from(1, 1, 1, 3, {0, 1, 2});
  CHECK(relu(pos).data == pos.data);
  CHECK(relu_backward(x, T4(1, 1, 1, 2, 1.0f)).data == std::vector<float>{0, 1});
}

TEST_CASE("maxpool2") {
  std::vector<std::uint32_t> idx;
  CHECK(maxpool2(from(1, 1, 2, 2, {1, 2, 3, 4}), &idx).data == std::vector<float>{4});
  CHECK(idx == std::vector<std::uint32_t>{3});

  for (float v : maxpool2<float>(T4(1, 2, 4, 6, 3.0f), nullptr).data) CHECK(v == 3.0f);

  T4 ramp(1, 1, 4, 4);
  for (int i = 0; i < 16; ++i) ramp.data[i] = static_cast<float>(i);
  CHECK(maxpool2<float>(ramp, nullptr).data == std::vector<float>{5, 7, 13, 15});

  CHECK_THROWS_AS(maxpool2<float>(T4(1, 1, 3, 4), nullptr), ShapeError);
  CHECK_THROWS_AS(maxpool2<float>(T4(1, 1, 4, 5), nullptr), ShapeError);

  const T4 g = maxpool2_backward(idx, {1, 1, 2, 2}, from(1, 1, 1, 1, {2.5f}));
  CHECK(g.data == std::vector<float>{0, 0, 0, 2.5f});
}

TEST_CASE("upsample2_bilinear") {
  const T4 five = upsample2_bilinear(from(1, 1, 1, 1, {5}));
  CHECK(five.shape() == Shape4{1, 1, 2, 2});
  for (float v : five.data) CHECK(v == 5.0f);

  const T4 row = upsample2_bilinear(from(1, 1, 1, 2, {0, 2}));
  REQUIRE(row.shape() == Shape4{1, 1, 2, 4});
  const std::vector<float> expect{0, 0.5f, 1.5f, 2};
  for (int i = 0; i < 4; ++i) {
    CHECK(row.at(0, 0, 0, i) == doctest::Approx(expect[i]));
    CHECK(row.at(0, 0, 1, i) == doctest::Approx(expect[i]));
  }

  const T4 c(1, 2, 4, 4, 1.5f);
  for (float v : maxpool2<float>(upsample2_bilinear(c), nullptr).data) CHECK(v == 1.5f);

  // Backward is the transpose: <up(x), y> == <x, up^T(y)>.
  T4 x(1, 2, 3, 5), y(1, 2, 6, 10);
  for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = std::cos(1.3f * i);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = std::sin(0.7f * i);
  const T4 ux = upsample2_bilinear(x);
  const T4 ty = upsample2_bilinear_backward(x.shape(), y);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += ux.data[i] * static_cast<double>(y.data[i]);
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x.data[i] * static_cast<double>(ty.data[i]);
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
}

TEST_CASE("concat_channels") {
  T4 a(2, 2, 3, 3), b(2, 3, 3, 3, 9.0f);
  for (std::size_t i = 0; i < a.size(); ++i) a.data[i] = static_cast<float>(i);
  const T4 ab = concat_channels(a, b);
  CHECK(ab.shape() == Shape4{2, 5, 3, 3});
  auto [ra, rb] = split_channels(ab, 2);
  CHECK(ra.data == a.data);
  CHECK(rb.data == b.data);
  CHECK(concat_channels(a, T4(2, 0, 3, 3)).data == a.data);
  CHECK_THROWS_AS(concat_channels(a, T4(2, 1, 4, 3)), ShapeError);
  CHECK_THROWS_AS(concat_channels(a, T4(1, 1, 3, 3)), ShapeError);
}

TEST_CASE("mse loss") {
  const T4 p = from(1, 1, 1, 2, {0, 2});
  const T4 t = from(1, 1, 1, 2, {1, 1});
  CHECK(mse_loss(p, p) == 0.0);
  CHECK(mse_loss(p, t) == doctest::Approx(1.0));
  CHECK(mse_loss(p, t) == mse_loss(t, p));
  CHECK(mse_loss_grad(p, t).data == std::vector<float>{-1, 1});
  CHECK_THROWS_AS(mse_loss(p, T4(1, 1, 2, 1)), ShapeError);
}

TEST_CASE("rmsprop") {
  std::vector<float> theta{1.0f, 1.0f, 3.0f}, grad{1.0f, 1.0f, 0.0f}, v{0.0f, 0.0f, 0.5f};
  rmsprop_step<float>(theta, grad, v, {});
  CHECK(v[0] == doctest::Approx(0.1));
  CHECK(theta[0] - 1.0f == doctest::Approx(-0.0031623).epsilon(1e-4));
  CHECK(theta[0] == theta[1]);
  CHECK(v[0] == v[1]);
  CHECK(theta[2] == 3.0f);
  CHECK(v[2] == doctest::Approx(0.45));
}

TEST_CASE("truncated normal init") {
  const T4 a = init_truncated_normal<float>({1000, 1, 1000, 1}, 42);
  const T4 b = init_truncated_normal<float>({1000, 1, 1000, 1}, 42);
  CHECK(a.data == b.data);
  double s = 0, ss = 0;
  float lo = 1, hi = -1;
  for (float v : a.data) {
    s += v;
    ss += static_cast<double>(v) * v;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo >= -0.04f);
  CHECK(hi <= 0.04f);
  const double n = static_cast<double>(a.size());
  const double mean = s / n;
  const double sd = std::sqrt(ss / n - mean * mean);
  CHECK(std::abs(mean) < 1e-3);
  CHECK(sd >= 0.0175);
  CHECK(sd <= 0.0195);
  // +/-2 sigma truncation: sigma * sqrt(1 - 2 * 2 phi(2) / (2 Phi(2) - 1)).
  const double phi2 = std::exp(-2.0) / std::sqrt(2.0 * M_PI);
  const double z = std::erf(2.0 / std::sqrt(2.0));
  CHECK(sd == doctest::Approx(0.02 * std::sqrt(1.0 - 4.0 * phi2 / z)).epsilon(3e-3));
  CHECK(init_truncated_normal<float>({1, 1, 1, 8}, 43).data != init_truncated_normal<float>({1, 1, 1, 8}, 42).data);
}

TEST_CASE("layer backward contract") {
  ReLU<float> r;
  CHECK_THROWS_AS(r.backward(T4(1, 1, 2, 2)), ContractError);
  r.forward(T4(1, 1, 2, 2), Mode::Train);
  CHECK_THROWS_AS(r.backward(T4(1, 1, 4, 4)), ContractError);

  Conv2d<float> c("c", 1, 2, 3);
  c.forward(T4(1, 1, 4, 4), Mode::Train);
  c.backward(T4(1, 2, 4, 4));
  CHECK_THROWS_AS(c.backward(T4(1, 2, 4, 4)), ContractError);

  BatchNorm<float> bn("bn", 2);
  bn.forward(T4(1, 2, 2, 2), Mode::Infer);
  CHECK_THROWS_AS(bn.backward(T4(1, 2, 2, 2)), ContractError);

  MaxPool2<float> mp;
  CHECK_THROWS_AS(mp.backward(T4(1, 1, 1, 1)), ContractError);
}

TEST_CASE("finite-difference check of every layer") {
  GradCheckOptions opt;
  const auto rows = run_gradcheck(opt);
  for (const auto& r : rows) {
    INFO(r.name);
    CHECK(r.pass);
    CHECK(r.max_rel_error < 1e-3);
  }
  const auto again = run_gradcheck(opt);
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].max_rel_error == again[i].max_rel_error);

  opt.corrupt_conv_backward = true;
  bool any_fail = false;
  for (const auto& r : run_gradcheck(opt)) any_fail |= !r.pass;
  CHECK(any_fail);
}
