#include "glandscreen/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Core>

#include "glandscreen/error.hpp"

namespace glandscreen::nn {

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '(' << shape[0] << ", " << shape[1] << ", " << shape[2] << ", " << shape[3] << ')';
  return os.str();
}

namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using VecF = Eigen::Matrix<float, Eigen::Dynamic, 1>;

void require(bool cond, const std::string& what) {
  if (!cond) throw Error(ErrorCode::DimensionMismatch, what);
}

void fill_normal(Tensor& t, Rng& rng, double stddev) {
  for (auto& v : t.data) v = static_cast<float>(rng.normal() * stddev);
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride,
               int padding, int groups, bool bias)
    : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(padding),
      groups_(groups),
      weight_(name + ".weight",
              Tensor(out_channels, groups > 1 ? 1 : in_channels, kernel, kernel)) {
  if (in_ < 1 || out_ < 1 || k_ < 1 || stride_ < 1 || pad_ < 0) {
    throw Error(ErrorCode::InvalidArgument, "invalid convolution geometry for " + name);
  }
  if (groups_ != 1 && !(groups_ == in_ && in_ == out_)) {
    throw Error(ErrorCode::InvalidArgument, "only dense or depthwise convolutions are supported");
  }
  if (bias) bias_.emplace(name + ".bias", Tensor(1, out_channels, 1, 1), false);
}

std::vector<Param*> Conv2d::params() {
  std::vector<Param*> p{&weight_};
  if (bias_) p.push_back(&*bias_);
  return p;
}

void Conv2d::init(Rng& rng) {
  const int fan_in = (depthwise() ? 1 : in_) * k_ * k_;
  fill_normal(weight_.value, rng, std::sqrt(2.0 / fan_in));
  if (bias_) std::fill(bias_->value.data.begin(), bias_->value.data.end(), 0.0f);
}

Tensor Conv2d::forward(const Tensor& x, bool /*training*/) {
  require(x.c() == in_, "conv expects " + std::to_string(in_) + " channels, got " +
                            x.shape_string());
  require(out_size(x.h()) >= 1 && out_size(x.w()) >= 1, "conv input too small");
  input_ = x;
  return depthwise() ? forward_depthwise(x) : forward_dense(x);
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  return depthwise() ? backward_depthwise(grad_out) : backward_dense(grad_out);
}

namespace {

struct Geometry {
  int c, h, w, k, stride, pad, ho, wo;
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

void im2col(const float* x, const Geometry& g, float* col) {
  const int p = g.ho * g.wo;
  for (int c = 0; c < g.c; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        float* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * p;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          float* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0f);
            continue;
          }
          const float* src = x + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const float* col, const Geometry& g, float* dx) {
  const int p = g.ho * g.wo;
  for (int c = 0; c < g.c; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const float* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * p;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          float* dst = dx + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          const float* src = row + oy * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor Conv2d::forward_dense(const Tensor& x) const {
  const Geometry g{in_, x.h(), x.w(), k_, stride_, pad_, out_size(x.h()), out_size(x.w())};
  const int kk = in_ * k_ * k_;
  const int p = g.ho * g.wo;
  Tensor y(x.n(), out_, g.ho, g.wo);
  std::vector<float> col(g.pointwise() ? 0 : static_cast<std::size_t>(kk) * p);
  CMapR w(weight_.value.data.data(), out_, kk);
  for (int n = 0; n < x.n(); ++n) {
    const float* colp = x.sample(n);
    if (!g.pointwise()) {
      im2col(x.sample(n), g, col.data());
      colp = col.data();
    }
    MapR out(y.sample(n), out_, p);
    out.noalias() = w * CMapR(colp, kk, p);
    if (bias_) {
      for (int o = 0; o < out_; ++o) out.row(o).array() += bias_->value.data[o];
    }
  }
  return y;
}

Tensor Conv2d::backward_dense(const Tensor& grad) {
  const Tensor& x = input_;
  const Geometry g{in_, x.h(), x.w(), k_, stride_, pad_, out_size(x.h()), out_size(x.w())};
  require(grad.n() == x.n() && grad.c() == out_ && grad.h() == g.ho && grad.w() == g.wo,
          "conv backward: gradient shape mismatch");
  const int kk = in_ * k_ * k_;
  const int p = g.ho * g.wo;
  Tensor dx = Tensor::zeros_like(x);
  std::vector<float> col(g.pointwise() ? 0 : static_cast<std::size_t>(kk) * p);
  std::vector<float> dcol(static_cast<std::size_t>(kk) * p);
  CMapR w(weight_.value.data.data(), out_, kk);
  MapR dw(weight_.grad.data.data(), out_, kk);
  for (int n = 0; n < x.n(); ++n) {
    const float* colp = x.sample(n);
    if (!g.pointwise()) {
      im2col(x.sample(n), g, col.data());
      colp = col.data();
    }
    CMapR gy(grad.sample(n), out_, p);
    dw.noalias() += gy * CMapR(colp, kk, p).transpose();
    if (bias_) {
      for (int o = 0; o < out_; ++o) bias_->grad.data[o] += gy.row(o).sum();
    }
    if (g.pointwise()) {
      MapR(dx.sample(n), kk, p).noalias() = w.transpose() * gy;
    } else {
      MapR(dcol.data(), kk, p).noalias() = w.transpose() * gy;
      col2im(dcol.data(), g, dx.sample(n));
    }
  }
  return dx;
}

Tensor Conv2d::forward_depthwise(const Tensor& x) const {
  const int ho = out_size(x.h()), wo = out_size(x.w());
  Tensor y(x.n(), out_, ho, wo);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < in_; ++c) {
      const float* src = x.sample(n) + static_cast<std::size_t>(c) * x.plane();
      const float* wk = weight_.value.data.data() + static_cast<std::size_t>(c) * k_ * k_;
      float* dst = y.sample(n) + static_cast<std::size_t>(c) * y.plane();
      const float b = bias_ ? bias_->value.data[c] : 0.0f;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          float acc = b;
          for (int ky = 0; ky < k_; ++ky) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= x.h()) continue;
            for (int kx = 0; kx < k_; ++kx) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= x.w()) continue;
              acc += wk[ky * k_ + kx] * src[iy * x.w() + ix];
            }
          }
          dst[oy * wo + ox] = acc;
        }
      }
    }
  }
  return y;
}

Tensor Conv2d::backward_depthwise(const Tensor& grad) {
  const Tensor& x = input_;
  const int ho = out_size(x.h()), wo = out_size(x.w());
  require(grad.n() == x.n() && grad.c() == out_ && grad.h() == ho && grad.w() == wo,
          "depthwise backward: gradient shape mismatch");
  Tensor dx = Tensor::zeros_like(x);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < in_; ++c) {
      const float* src = x.sample(n) + static_cast<std::size_t>(c) * x.plane();
      float* dsrc = dx.sample(n) + static_cast<std::size_t>(c) * x.plane();
      const float* wk = weight_.value.data.data() + static_cast<std::size_t>(c) * k_ * k_;
      float* dwk = weight_.grad.data.data() + static_cast<std::size_t>(c) * k_ * k_;
      const float* g = grad.sample(n) + static_cast<std::size_t>(c) * grad.plane();
      double db = 0.0;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          const float go = g[oy * wo + ox];
          db += go;
          for (int ky = 0; ky < k_; ++ky) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= x.h()) continue;
            for (int kx = 0; kx < k_; ++kx) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= x.w()) continue;
              dwk[ky * k_ + kx] += go * src[iy * x.w() + ix];
              dsrc[iy * x.w() + ix] += go * wk[ky * k_ + kx];
            }
          }
        }
      }
      if (bias_) bias_->grad.data[c] += static_cast<float>(db);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm2d

BatchNorm2d::BatchNorm2d(std::string name, int channels, float momentum, float eps)
    : name_(std::move(name)), channels_(channels), momentum_(momentum), eps_(eps),
      gamma_(name_ + ".gamma", Tensor(1, channels, 1, 1, 1.0f), false),
      beta_(name_ + ".beta", Tensor(1, channels, 1, 1), false),
      running_mean_(1, channels, 1, 1), running_var_(1, channels, 1, 1, 1.0f) {}

std::vector<std::pair<std::string, Tensor*>> BatchNorm2d::buffers() {
  return {{name_ + ".running_mean", &running_mean_}, {name_ + ".running_var", &running_var_}};
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  require(x.c() == channels_, "batchnorm channel mismatch: " + x.shape_string());
  const std::size_t plane = x.plane();
  const double m = static_cast<double>(x.n()) * plane;
  was_training_ = training && m > 1;
  inv_std_.assign(static_cast<std::size_t>(channels_), 0.0f);
  x_hat_ = Tensor::zeros_like(x);
  Tensor y = Tensor::zeros_like(x);
  for (int c = 0; c < channels_; ++c) {
    double mean, var;
    if (was_training_) {
      double s = 0.0, s2 = 0.0;
      for (int n = 0; n < x.n(); ++n) {
        const float* p = x.sample(n) + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          s += p[i];
          s2 += static_cast<double>(p[i]) * p[i];
        }
      }
      mean = s / m;
      var = std::max(0.0, s2 / m - mean * mean);
      running_mean_.data[c] = static_cast<float>((1.0 - momentum_) * running_mean_.data[c] +
                                                 momentum_ * mean);
      running_var_.data[c] = static_cast<float>((1.0 - momentum_) * running_var_.data[c] +
                                                momentum_ * var * m / (m - 1.0));
    } else {
      mean = running_mean_.data[c];
      var = running_var_.data[c];
    }
    const float inv = static_cast<float>(1.0 / std::sqrt(var + eps_));
    inv_std_[c] = inv;
    const float gm = gamma_.value.data[c], bt = beta_.value.data[c];
    const auto fmean = static_cast<float>(mean);
    for (int n = 0; n < x.n(); ++n) {
      const float* p = x.sample(n) + c * plane;
      float* xh = x_hat_.sample(n) + c * plane;
      float* out = y.sample(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (p[i] - fmean) * inv;
        out[i] = gm * xh[i] + bt;
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad) {
  require(grad.same_shape(x_hat_), "batchnorm backward: gradient shape mismatch");
  const std::size_t plane = grad.plane();
  const double m = static_cast<double>(grad.n()) * plane;
  Tensor dx = Tensor::zeros_like(grad);
  for (int c = 0; c < channels_; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (int n = 0; n < grad.n(); ++n) {
      const float* g = grad.sample(n) + c * plane;
      const float* xh = x_hat_.sample(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += g[i];
        sum_gx += static_cast<double>(g[i]) * xh[i];
      }
    }
    gamma_.grad.data[c] += static_cast<float>(sum_gx);
    beta_.grad.data[c] += static_cast<float>(sum_g);
    const float scale = gamma_.value.data[c] * inv_std_[c];
    const auto mean_g = static_cast<float>(sum_g / m);
    const auto mean_gx = static_cast<float>(sum_gx / m);
    for (int n = 0; n < grad.n(); ++n) {
      const float* g = grad.sample(n) + c * plane;
      const float* xh = x_hat_.sample(n) + c * plane;
      float* d = dx.sample(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        d[i] = was_training_ ? scale * (g[i] - mean_g - xh[i] * mean_gx) : scale * g[i];
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Activations

Tensor ReLU::forward(const Tensor& x, bool) {
  input_ = x;
  Tensor y = x;
  for (auto& v : y.data) v = std::max(v, 0.0f);
  return y;
}

Tensor ReLU::backward(const Tensor& grad) {
  Tensor dx = grad;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (input_.data[i] <= 0.0f) dx.data[i] = 0.0f;
  }
  return dx;
}

Tensor SiLU::forward(const Tensor& x, bool) {
  input_ = x;
  Tensor y = x;
  for (auto& v : y.data) v = v / (1.0f + std::exp(-v));
  return y;
}

Tensor SiLU::backward(const Tensor& grad) {
  Tensor dx = grad;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    const float x = input_.data[i];
    const float s = 1.0f / (1.0f + std::exp(-x));
    dx.data[i] *= s * (1.0f + x * (1.0f - s));
  }
  return dx;
}

Tensor Sigmoid::forward(const Tensor& x, bool) {
  output_ = x;
  for (auto& v : output_.data) v = 1.0f / (1.0f + std::exp(-v));
  return output_;
}

Tensor Sigmoid::backward(const Tensor& grad) {
  Tensor dx = grad;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    dx.data[i] *= output_.data[i] * (1.0f - output_.data[i]);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Pooling, dropout, linear

Tensor GlobalAvgPool::forward(const Tensor& x, bool) {
  in_shape_ = x.shape;
  Tensor y(x.n(), x.c(), 1, 1);
  const std::size_t plane = x.plane();
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const float* p = x.sample(n) + c * plane;
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      y.at(n, c) = static_cast<float>(s / static_cast<double>(plane));
    }
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad) {
  Tensor dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
  require(grad.n() == dx.n() && grad.c() == dx.c(), "pool backward: gradient shape mismatch");
  const std::size_t plane = dx.plane();
  const float inv = 1.0f / static_cast<float>(plane);
  for (int n = 0; n < dx.n(); ++n) {
    for (int c = 0; c < dx.c(); ++c) {
      float* p = dx.sample(n) + c * plane;
      std::fill(p, p + plane, grad.at(n, c) * inv);
    }
  }
  return dx;
}

Tensor Dropout::forward(const Tensor& x, bool training) {
  was_training_ = training && rate_ > 0.0f;
  if (!was_training_) return x;
  const float keep = 1.0f - rate_;
  mask_.resize(x.size());
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) {
    mask_[i] = rng_.uniform() < keep ? 1.0f / keep : 0.0f;
    y.data[i] *= mask_[i];
  }
  return y;
}

Tensor Dropout::backward(const Tensor& grad) {
  if (!was_training_) return grad;
  Tensor dx = grad;
  for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] *= mask_[i];
  return dx;
}

Linear::Linear(std::string name, int in_features, int out_features)
    : in_(in_features), out_(out_features),
      weight_(name + ".weight", Tensor(out_features, in_features, 1, 1)),
      bias_(name + ".bias", Tensor(1, out_features, 1, 1), false) {}

void Linear::init(Rng& rng) {
  fill_normal(weight_.value, rng, std::sqrt(1.0 / in_));
  std::fill(bias_.value.data.begin(), bias_.value.data.end(), 0.0f);
}

Tensor Linear::forward(const Tensor& x, bool) {
  require(x.c() * x.h() * x.w() == in_,
          "linear expects " + std::to_string(in_) + " features, got " + x.shape_string());
  input_ = x;
  Tensor y(x.n(), out_, 1, 1);
  CMapR xin(x.data.data(), x.n(), in_);
  CMapR w(weight_.value.data.data(), out_, in_);
  MapR out(y.data.data(), x.n(), out_);
  out.noalias() = xin * w.transpose();
  for (int n = 0; n < x.n(); ++n) {
    for (int o = 0; o < out_; ++o) out(n, o) += bias_.value.data[o];
  }
  return y;
}

Tensor Linear::backward(const Tensor& grad) {
  require(grad.n() == input_.n() && grad.c() == out_, "linear backward: gradient shape mismatch");
  CMapR g(grad.data.data(), grad.n(), out_);
  CMapR xin(input_.data.data(), input_.n(), in_);
  MapR(weight_.grad.data.data(), out_, in_).noalias() += g.transpose() * xin;
  for (int o = 0; o < out_; ++o) bias_.grad.data[o] += g.col(o).sum();
  Tensor dx = Tensor::zeros_like(input_);
  MapR(dx.data.data(), input_.n(), in_).noalias() =
      g * CMapR(weight_.value.data.data(), out_, in_);
  return dx;
}

// ---------------------------------------------------------------------------
// Containers

Sequential& Sequential::add(std::string name, LayerPtr layer) {
  names_.push_back(std::move(name));
  layers_.push_back(std::move(layer));
  return *this;
}

Tensor Sequential::forward(const Tensor& x, bool training) {
  return forward_range(x, 0, layers_.size(), training);
}

Tensor Sequential::backward(const Tensor& grad) { return backward_range(grad, 0, layers_.size()); }

Tensor Sequential::forward_range(const Tensor& x, std::size_t begin, std::size_t end,
                                 bool training) {
  Tensor h = x;
  for (std::size_t i = begin; i < end; ++i) h = layers_[i]->forward(h, training);
  return h;
}

Tensor Sequential::backward_range(const Tensor& grad, std::size_t begin, std::size_t end) {
  Tensor g = grad;
  for (std::size_t i = end; i > begin; --i) g = layers_[i - 1]->backward(g);
  return g;
}

std::vector<Param*> Sequential::params() {
  std::vector<Param*> out;
  for (auto& l : layers_) {
    auto p = l->params();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> Sequential::buffers() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& l : layers_) {
    auto b = l->buffers();
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

void Sequential::init(Rng& rng) {
  for (auto& l : layers_) l->init(rng);
}

std::size_t Sequential::index_of(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  return static_cast<std::size_t>(it - names_.begin());
}

SqueezeExcite::SqueezeExcite(const std::string& name, int channels, int reduced) {
  gate_.add("pool", std::make_unique<GlobalAvgPool>())
      .add("reduce", std::make_unique<Linear>(name + ".reduce", channels, reduced))
      .add("act", std::make_unique<SiLU>())
      .add("expand", std::make_unique<Linear>(name + ".expand", reduced, channels))
      .add("gate", std::make_unique<Sigmoid>());
}

Tensor SqueezeExcite::forward(const Tensor& x, bool training) {
  input_ = x;
  scale_ = gate_.forward(x, training);
  Tensor y = x;
  const std::size_t plane = x.plane();
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      float* p = y.sample(n) + c * plane;
      const float s = scale_.at(n, c);
      for (std::size_t i = 0; i < plane; ++i) p[i] *= s;
    }
  }
  return y;
}

Tensor SqueezeExcite::backward(const Tensor& grad) {
  const std::size_t plane = grad.plane();
  Tensor dx = grad;
  Tensor dscale(grad.n(), grad.c(), 1, 1);
  for (int n = 0; n < grad.n(); ++n) {
    for (int c = 0; c < grad.c(); ++c) {
      const float* g = grad.sample(n) + c * plane;
      const float* x = input_.sample(n) + c * plane;
      float* d = dx.sample(n) + c * plane;
      const float s = scale_.at(n, c);
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        acc += static_cast<double>(g[i]) * x[i];
        d[i] = g[i] * s;
      }
      dscale.at(n, c) = static_cast<float>(acc);
    }
  }
  const Tensor via_gate = gate_.backward(dscale);
  for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += via_gate.data[i];
  return dx;
}

MBConv::MBConv(const std::string& name, int in_channels, int out_channels, int expand_ratio,
               int kernel, int stride, double se_ratio)
    : residual_(stride == 1 && in_channels == out_channels) {
  const int mid = in_channels * expand_ratio;
  if (expand_ratio != 1) {
    body_.add("expand", std::make_unique<Conv2d>(name + ".expand", in_channels, mid, 1, 1, 0, 1,
                                                 false))
        .add("expand_bn", std::make_unique<BatchNorm2d>(name + ".expand_bn", mid))
        .add("expand_act", std::make_unique<SiLU>());
  }
  body_.add("dw", std::make_unique<Conv2d>(name + ".dw", mid, mid, kernel, stride, kernel / 2, mid,
                                           false))
      .add("dw_bn", std::make_unique<BatchNorm2d>(name + ".dw_bn", mid))
      .add("dw_act", std::make_unique<SiLU>());
  if (se_ratio > 0.0) {
    const int reduced = std::max(1, static_cast<int>(in_channels * se_ratio));
    body_.add("se", std::make_unique<SqueezeExcite>(name + ".se", mid, reduced));
  }
  body_.add("project", std::make_unique<Conv2d>(name + ".project", mid, out_channels, 1, 1, 0, 1,
                                                false))
      .add("project_bn", std::make_unique<BatchNorm2d>(name + ".project_bn", out_channels));
}

Tensor MBConv::forward(const Tensor& x, bool training) {
  Tensor y = body_.forward(x, training);
  if (residual_) {
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += x.data[i];
  }
  return y;
}

Tensor MBConv::backward(const Tensor& grad) {
  Tensor dx = body_.backward(grad);
  if (residual_) {
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += grad.data[i];
  }
  return dx;
}

}  // namespace glandscreen::nn
