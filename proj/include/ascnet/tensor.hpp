#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ascnet::nn {

struct Shape4 {
  int n = 0, c = 0, h = 0, w = 0;

  std::size_t count() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

/// Dense N x C x H x W tensor, C order.
template <typename T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}
  explicit Tensor4(Shape4 s, T fill = T(0)) : Tensor4(s.n, s.c, s.h, s.w, fill) {}

  Shape4 shape() const { return {n, c, h, w}; }
  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t index(int in, int ic, int y, int x) const {
    return ((static_cast<std::size_t>(in) * c + ic) * h + y) * w + x;
  }
  T& at(int in, int ic, int y, int x) { return data[index(in, ic, y, x)]; }
  T at(int in, int ic, int y, int x) const { return data[index(in, ic, y, x)]; }

  std::span<T> sample(int in) {
    return {data.data() + static_cast<std::size_t>(in) * c * plane(), static_cast<std::size_t>(c) * plane()};
  }
  std::span<const T> sample(int in) const {
    return {data.data() + static_cast<std::size_t>(in) * c * plane(), static_cast<std::size_t>(c) * plane()};
  }
  T* channel(int in, int ic) { return data.data() + (static_cast<std::size_t>(in) * c + ic) * plane(); }
  const T* channel(int in, int ic) const { return data.data() + (static_cast<std::size_t>(in) * c + ic) * plane(); }

  bool all_finite() const;
};

template <typename To, typename From>
Tensor4<To> tensor_cast(const Tensor4<From>& t) {
  Tensor4<To> out(t.n, t.c, t.h, t.w);
  for (std::size_t i = 0; i < t.size(); ++i) out.data[i] = static_cast<To>(t.data[i]);
  return out;
}

}  // namespace ascnet::nn
