#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace glandscreen::nn {

/// Dense float tensor in NCHW layout. Feature vectors use shape (N, F, 1, 1).
struct Tensor {
  std::array<int, 4> shape{0, 0, 0, 0};
  std::vector<float> data;

  Tensor() = default;
  Tensor(int n, int c, int h, int w, float fill = 0.0f)
      : shape{n, c, h, w}, data(static_cast<std::size_t>(n) * c * h * w, fill) {}

  static Tensor zeros_like(const Tensor& t) { return {t.n(), t.c(), t.h(), t.w()}; }

  int n() const { return shape[0]; }
  int c() const { return shape[1]; }
  int h() const { return shape[2]; }
  int w() const { return shape[3]; }
  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h()) * w(); }

  std::size_t offset(int n_, int c_, int h_ = 0, int w_ = 0) const {
    return ((static_cast<std::size_t>(n_) * c() + c_) * h() + h_) * w() + w_;
  }
  float& at(int n_, int c_, int h_ = 0, int w_ = 0) { return data[offset(n_, c_, h_, w_)]; }
  float at(int n_, int c_, int h_ = 0, int w_ = 0) const { return data[offset(n_, c_, h_, w_)]; }

  float* sample(int n_) { return data.data() + static_cast<std::size_t>(n_) * c() * plane(); }
  const float* sample(int n_) const {
    return data.data() + static_cast<std::size_t>(n_) * c() * plane();
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  std::string shape_string() const;
};

}  // namespace glandscreen::nn
