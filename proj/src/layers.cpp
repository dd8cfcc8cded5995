#include "cdssl/layers.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

#include "cdssl/errors.hpp"
#include "cdssl/hash.hpp"

namespace cdssl {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.1;

std::uint64_t param_seed(std::uint64_t seed, const std::string& name) {
  return derive_seed(seed, fnv1a64(name));
}

Tensor kaiming_normal(Shape shape, std::size_t fan_in, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : t.values()) v = stddev * rng.normal();
  return t;
}

void require_rank4(const Tensor& x, std::size_t channels, const std::string& who) {
  if (x.rank() != 4 || x.dim(1) != channels) {
    throw ValidationError(who + ": expected input (N," + std::to_string(channels) +
                          ",H,W), got " + shape_to_string(x.shape()));
  }
}

Tensor& grad_of(ParameterSet& grads, const std::string& name) { return grads.at(name); }

// ---- Conv2d ------------------------------------------------------------

class Conv2d final : public Layer {
 public:
  Conv2d(std::string name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
         std::size_t padding, bool bias)
      : name_(std::move(name)), in_(in), out_(out), k_(kernel), stride_(stride), pad_(padding), bias_(bias) {
    if (!in || !out || !kernel || !stride) throw ValidationError(name_ + ": invalid conv geometry");
  }

  void register_parameters(ParameterSet& params, std::uint64_t seed) const override {
    params.add(weight_name(), kaiming_normal({out_, in_, k_, k_}, in_ * k_ * k_, param_seed(seed, weight_name())));
    if (bias_) params.add(bias_name(), Tensor({out_}));
  }

  Tensor forward(const ParameterSet& params, const Tensor& x, LayerCache& cache, ForwardMode,
                 ParameterSet*) const override {
    require_rank4(x, in_, name_);
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    if (h + 2 * pad_ < k_ || w + 2 * pad_ < k_) throw ValidationError(name_ + ": input smaller than kernel");
    const std::size_t ho = out_size(h), wo = out_size(w), positions = ho * wo;
    const std::size_t patch = in_ * k_ * k_;

    const Tensor& weight = params.at(weight_name());
    ConstMapMat wmat(weight.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(patch));
    Tensor y({n, out_, ho, wo});
    RowMat cols(static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(positions));
    for (std::size_t b = 0; b < n; ++b) {
      MapMat ymat(y.data() + b * out_ * positions, static_cast<Eigen::Index>(out_),
                  static_cast<Eigen::Index>(positions));
      if (is_pointwise()) {
        ConstMapMat xmat(x.data() + b * in_ * positions, static_cast<Eigen::Index>(in_),
                         static_cast<Eigen::Index>(positions));
        ymat.noalias() = wmat * xmat;
      } else {
        im2col(x, b, h, w, ho, wo, cols.data());
        ymat.noalias() = wmat * cols;
      }
      if (bias_) {
        const Tensor& bias = params.at(bias_name());
        for (std::size_t c = 0; c < out_; ++c) ymat.row(static_cast<Eigen::Index>(c)).array() += bias[c];
      }
    }
    cache.saved = {x};
    return y;
  }

  Tensor backward(const ParameterSet& params, const Tensor& grad_out, const LayerCache& cache,
                  ForwardMode, ParameterSet& grads) const override {
    const Tensor& x = cache.saved.at(0);
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t ho = out_size(h), wo = out_size(w), positions = ho * wo;
    const std::size_t patch = in_ * k_ * k_;

    const Tensor& weight = params.at(weight_name());
    ConstMapMat wmat(weight.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(patch));
    Tensor& gw = grad_of(grads, weight_name());
    MapMat gwmat(gw.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(patch));
    Tensor dx(x.shape());
    RowMat cols(static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(positions));
    RowMat dcols(static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(positions));
    for (std::size_t b = 0; b < n; ++b) {
      ConstMapMat gy(grad_out.data() + b * out_ * positions, static_cast<Eigen::Index>(out_),
                     static_cast<Eigen::Index>(positions));
      if (bias_) {
        Tensor& gb = grad_of(grads, bias_name());
        for (std::size_t c = 0; c < out_; ++c) gb[c] += gy.row(static_cast<Eigen::Index>(c)).sum();
      }
      if (is_pointwise()) {
        ConstMapMat xmat(x.data() + b * in_ * positions, static_cast<Eigen::Index>(in_),
                         static_cast<Eigen::Index>(positions));
        gwmat.noalias() += gy * xmat.transpose();
        MapMat dxmat(dx.data() + b * in_ * positions, static_cast<Eigen::Index>(in_),
                     static_cast<Eigen::Index>(positions));
        dxmat.noalias() = wmat.transpose() * gy;
      } else {
        im2col(x, b, h, w, ho, wo, cols.data());
        gwmat.noalias() += gy * cols.transpose();
        dcols.noalias() = wmat.transpose() * gy;
        col2im(dcols.data(), b, h, w, ho, wo, dx);
      }
    }
    return dx;
  }

  bool is_convolutional() const override { return true; }

 private:
  std::string weight_name() const { return name_ + ".weight"; }
  std::string bias_name() const { return name_ + ".bias"; }
  std::size_t out_size(std::size_t in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }
  bool is_pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }

  void im2col(const Tensor& x, std::size_t b, std::size_t h, std::size_t w, std::size_t ho,
              std::size_t wo, double* cols) const {
    const double* src = x.data() + b * in_ * h * w;
    std::size_t row = 0;
    for (std::size_t c = 0; c < in_; ++c)
      for (std::size_t ky = 0; ky < k_; ++ky)
        for (std::size_t kx = 0; kx < k_; ++kx, ++row) {
          double* dst = cols + row * ho * wo;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const long iy = static_cast<long>(oy * stride_ + ky) - static_cast<long>(pad_);
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const long ix = static_cast<long>(ox * stride_ + kx) - static_cast<long>(pad_);
              const bool inside = iy >= 0 && iy < static_cast<long>(h) && ix >= 0 && ix < static_cast<long>(w);
              dst[oy * wo + ox] = inside ? src[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] : 0.0;
            }
          }
        }
  }

  void col2im(const double* cols, std::size_t b, std::size_t h, std::size_t w, std::size_t ho,
              std::size_t wo, Tensor& dx) const {
    double* dst = dx.data() + b * in_ * h * w;
    std::size_t row = 0;
    for (std::size_t c = 0; c < in_; ++c)
      for (std::size_t ky = 0; ky < k_; ++ky)
        for (std::size_t kx = 0; kx < k_; ++kx, ++row) {
          const double* src = cols + row * ho * wo;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const long iy = static_cast<long>(oy * stride_ + ky) - static_cast<long>(pad_);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const long ix = static_cast<long>(ox * stride_ + kx) - static_cast<long>(pad_);
              if (ix < 0 || ix >= static_cast<long>(w)) continue;
              dst[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] += src[oy * wo + ox];
            }
          }
        }
  }

  std::string name_;
  std::size_t in_, out_, k_, stride_, pad_;
  bool bias_;
};

// ---- BatchNorm2d -------------------------------------------------------

class BatchNorm2d final : public Layer {
 public:
  BatchNorm2d(std::string name, std::size_t channels) : name_(std::move(name)), channels_(channels) {}

  void register_parameters(ParameterSet& params, std::uint64_t) const override {
    params.add(name_ + ".weight", Tensor({channels_}, 1.0));
    params.add(name_ + ".bias", Tensor({channels_}));
    params.add(name_ + ".running_mean", Tensor({channels_}), false);
    params.add(name_ + ".running_var", Tensor({channels_}, 1.0), false);
  }

  Tensor forward(const ParameterSet& params, const Tensor& x, LayerCache& cache, ForwardMode mode,
                 ParameterSet* running) const override {
    require_rank4(x, channels_, name_);
    const std::size_t n = x.dim(0), plane = x.dim(2) * x.dim(3);
    const double count = static_cast<double>(n * plane);
    const Tensor& gamma = params.at(name_ + ".weight");
    const Tensor& beta = params.at(name_ + ".bias");
    const bool batch_stats = mode.training && !mode.freeze_batch_norm;

    Tensor mean({channels_}), inv_std({channels_});
    if (batch_stats) {
      if (n * plane < 2) throw ValidationError(name_ + ": batch statistics need more than one value");
      Tensor var({channels_});
      for (std::size_t c = 0; c < channels_; ++c) {
        double s = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
          const double* p = x.data() + (b * channels_ + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) s += p[i];
        }
        mean[c] = s / count;
        double v = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
          const double* p = x.data() + (b * channels_ + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) v += (p[i] - mean[c]) * (p[i] - mean[c]);
        }
        var[c] = v / count;
        inv_std[c] = 1.0 / std::sqrt(var[c] + kBatchNormEps);
      }
      if (running) {
        Tensor& rm = running->at(name_ + ".running_mean");
        Tensor& rv = running->at(name_ + ".running_var");
        for (std::size_t c = 0; c < channels_; ++c) {
          rm[c] = (1 - kBatchNormMomentum) * rm[c] + kBatchNormMomentum * mean[c];
          rv[c] = (1 - kBatchNormMomentum) * rv[c] + kBatchNormMomentum * var[c] * count / (count - 1);
        }
      }
    } else {
      const Tensor& rm = params.at(name_ + ".running_mean");
      const Tensor& rv = params.at(name_ + ".running_var");
      for (std::size_t c = 0; c < channels_; ++c) {
        mean[c] = rm[c];
        inv_std[c] = 1.0 / std::sqrt(rv[c] + kBatchNormEps);
      }
    }

    Tensor xhat(x.shape()), y(x.shape());
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t c = 0; c < channels_; ++c) {
        const std::size_t off = (b * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          xhat[off + i] = (x[off + i] - mean[c]) * inv_std[c];
          y[off + i] = gamma[c] * xhat[off + i] + beta[c];
        }
      }
    cache.saved = {std::move(xhat), std::move(inv_std)};
    cache.dims = {batch_stats ? 1u : 0u};
    return y;
  }

  Tensor backward(const ParameterSet& params, const Tensor& grad_out, const LayerCache& cache,
                  ForwardMode, ParameterSet& grads) const override {
    const Tensor& xhat = cache.saved.at(0);
    const Tensor& inv_std = cache.saved.at(1);
    const bool batch_stats = cache.dims.at(0) == 1;
    const std::size_t n = xhat.dim(0), plane = xhat.dim(2) * xhat.dim(3);
    const double count = static_cast<double>(n * plane);
    const Tensor& gamma = params.at(name_ + ".weight");
    Tensor& ggamma = grads.at(name_ + ".weight");
    Tensor& gbeta = grads.at(name_ + ".bias");

    Tensor dx(xhat.shape());
    for (std::size_t c = 0; c < channels_; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy += grad_out[off + i];
          sum_dy_xhat += grad_out[off + i] * xhat[off + i];
        }
      }
      ggamma[c] += sum_dy_xhat;
      gbeta[c] += sum_dy;
      const double scale = gamma[c] * inv_std[c];
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          dx[off + i] = batch_stats
                            ? scale * (grad_out[off + i] - sum_dy / count - xhat[off + i] * sum_dy_xhat / count)
                            : scale * grad_out[off + i];
        }
      }
    }
    return dx;
  }

 private:
  std::string name_;
  std::size_t channels_;
};

// ---- element-wise and pooling --------------------------------------------

class ReLU final : public Layer {
 public:
  void register_parameters(ParameterSet&, std::uint64_t) const override {}

  Tensor forward(const ParameterSet&, const Tensor& x, LayerCache& cache, ForwardMode,
                 ParameterSet*) const override {
    Tensor y = x;
    for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
    cache.saved = {y};
    return y;
  }

  Tensor backward(const ParameterSet&, const Tensor& grad_out, const LayerCache& cache, ForwardMode,
                  ParameterSet&) const override {
    const Tensor& y = cache.saved.at(0);
    Tensor dx = grad_out;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!(y[i] > 0.0)) dx[i] = 0.0;
    return dx;
  }
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(std::size_t kernel, std::size_t stride, std::size_t padding)
      : k_(kernel), stride_(stride), pad_(padding) {}

  void register_parameters(ParameterSet&, std::uint64_t) const override {}

  Tensor forward(const ParameterSet&, const Tensor& x, LayerCache& cache, ForwardMode,
                 ParameterSet*) const override {
    if (x.rank() != 4) throw ValidationError("max pool expects NCHW input");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t ho = (h + 2 * pad_ - k_) / stride_ + 1, wo = (w + 2 * pad_ - k_) / stride_ + 1;
    Tensor y({n, c, ho, wo});
    Tensor argmax({n, c, ho, wo});
    for (std::size_t p = 0; p < n * c; ++p) {
      const double* src = x.data() + p * h * w;
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          for (std::size_t ky = 0; ky < k_; ++ky)
            for (std::size_t kx = 0; kx < k_; ++kx) {
              const long iy = static_cast<long>(oy * stride_ + ky) - static_cast<long>(pad_);
              const long ix = static_cast<long>(ox * stride_ + kx) - static_cast<long>(pad_);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
              const std::size_t idx = static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
              if (src[idx] > best) {
                best = src[idx];
                best_idx = idx;
              }
            }
          y[p * ho * wo + oy * wo + ox] = best;
          argmax[p * ho * wo + oy * wo + ox] = static_cast<double>(best_idx);
        }
    }
    cache.saved = {std::move(argmax)};
    cache.dims = {n, c, h, w};
    return y;
  }

  Tensor backward(const ParameterSet&, const Tensor& grad_out, const LayerCache& cache, ForwardMode,
                  ParameterSet&) const override {
    const Tensor& argmax = cache.saved.at(0);
    const std::size_t n = cache.dims[0], c = cache.dims[1], h = cache.dims[2], w = cache.dims[3];
    const std::size_t per_plane = argmax.dim(2) * argmax.dim(3);
    Tensor dx({n, c, h, w});
    for (std::size_t p = 0; p < n * c; ++p)
      for (std::size_t i = 0; i < per_plane; ++i)
        dx[p * h * w + static_cast<std::size_t>(argmax[p * per_plane + i])] += grad_out[p * per_plane + i];
    return dx;
  }

  bool is_convolutional() const override { return true; }

 private:
  std::size_t k_, stride_, pad_;
};

class GlobalAvgPool final : public Layer {
 public:
  void register_parameters(ParameterSet&, std::uint64_t) const override {}

  Tensor forward(const ParameterSet&, const Tensor& x, LayerCache& cache, ForwardMode,
                 ParameterSet*) const override {
    if (x.rank() != 4) throw ValidationError("global average pool expects NCHW input");
    const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    Tensor y({n, c});
    for (std::size_t p = 0; p < n * c; ++p) {
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += x[p * plane + i];
      y[p] = s / static_cast<double>(plane);
    }
    cache.dims = x.shape();
    return y;
  }

  Tensor backward(const ParameterSet&, const Tensor& grad_out, const LayerCache& cache, ForwardMode,
                  ParameterSet&) const override {
    Tensor dx(cache.dims);
    const std::size_t plane = cache.dims[2] * cache.dims[3];
    for (std::size_t p = 0; p < cache.dims[0] * cache.dims[1]; ++p)
      for (std::size_t i = 0; i < plane; ++i) dx[p * plane + i] = grad_out[p] / static_cast<double>(plane);
    return dx;
  }
};

class Linear final : public Layer {
 public:
  Linear(std::string name, std::size_t in, std::size_t out) : name_(std::move(name)), in_(in), out_(out) {
    if (!in || !out) throw ValidationError(name_ + ": linear dimensions must be positive");
  }

  void register_parameters(ParameterSet& params, std::uint64_t seed) const override {
    params.add(name_ + ".weight", kaiming_normal({out_, in_}, in_, param_seed(seed, name_ + ".weight")));
    params.add(name_ + ".bias", Tensor({out_}));
  }

  Tensor forward(const ParameterSet& params, const Tensor& x, LayerCache& cache, ForwardMode,
                 ParameterSet*) const override {
    if (x.rank() != 2 || x.dim(1) != in_) {
      throw ValidationError(name_ + ": expected input (N," + std::to_string(in_) + "), got " +
                            shape_to_string(x.shape()));
    }
    const auto n = static_cast<Eigen::Index>(x.dim(0));
    const Tensor& w = params.at(name_ + ".weight");
    const Tensor& b = params.at(name_ + ".bias");
    Tensor y({x.dim(0), out_});
    ConstMapMat xm(x.data(), n, static_cast<Eigen::Index>(in_));
    ConstMapMat wm(w.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    MapMat ym(y.data(), n, static_cast<Eigen::Index>(out_));
    ym.noalias() = xm * wm.transpose();
    for (Eigen::Index r = 0; r < n; ++r)
      for (std::size_t c = 0; c < out_; ++c) ym(r, static_cast<Eigen::Index>(c)) += b[c];
    cache.saved = {x};
    return y;
  }

  Tensor backward(const ParameterSet& params, const Tensor& grad_out, const LayerCache& cache,
                  ForwardMode, ParameterSet& grads) const override {
    const Tensor& x = cache.saved.at(0);
    const auto n = static_cast<Eigen::Index>(x.dim(0));
    const Tensor& w = params.at(name_ + ".weight");
    Tensor& gw = grads.at(name_ + ".weight");
    Tensor& gb = grads.at(name_ + ".bias");
    ConstMapMat xm(x.data(), n, static_cast<Eigen::Index>(in_));
    ConstMapMat wm(w.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    ConstMapMat gy(grad_out.data(), n, static_cast<Eigen::Index>(out_));
    MapMat gwm(gw.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    gwm.noalias() += gy.transpose() * xm;
    for (Eigen::Index r = 0; r < n; ++r)
      for (std::size_t c = 0; c < out_; ++c) gb[c] += gy(r, static_cast<Eigen::Index>(c));
    Tensor dx(x.shape());
    MapMat dxm(dx.data(), n, static_cast<Eigen::Index>(in_));
    dxm.noalias() = gy * wm;
    return dx;
  }

 private:
  std::string name_;
  std::size_t in_, out_;
};

class Bottleneck final : public Layer {
 public:
  Bottleneck(std::string name, std::size_t in, std::size_t width, std::size_t out, std::size_t stride) {
    main_.add(make_conv2d(name + ".conv1", in, width, 1, 1, 0, false));
    main_.add(make_batch_norm(name + ".bn1", width));
    main_.add(make_relu());
    main_.add(make_conv2d(name + ".conv2", width, width, 3, stride, 1, false));
    main_.add(make_batch_norm(name + ".bn2", width));
    main_.add(make_relu());
    main_.add(make_conv2d(name + ".conv3", width, out, 1, 1, 0, false));
    main_.add(make_batch_norm(name + ".bn3", out));
    if (stride != 1 || in != out) {
      shortcut_.add(make_conv2d(name + ".down_conv", in, out, 1, stride, 0, false));
      shortcut_.add(make_batch_norm(name + ".bn_down", out));
    }
  }

  void register_parameters(ParameterSet& params, std::uint64_t seed) const override {
    main_.register_parameters(params, seed);
    shortcut_.register_parameters(params, seed);
  }

  Tensor forward(const ParameterSet& params, const Tensor& x, LayerCache& cache, ForwardMode mode,
                 ParameterSet* running) const override {
    cache.children.resize(2);
    Tensor y = main_.forward(params, x, cache.children[0], mode, running);
    const Tensor s = shortcut_.size() ? shortcut_.forward(params, x, cache.children[1], mode, running) : x;
    if (s.shape() != y.shape()) throw ValidationError("bottleneck shortcut shape mismatch");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::max(0.0, y[i] + s[i]);
    cache.saved = {y};
    return y;
  }

  Tensor backward(const ParameterSet& params, const Tensor& grad_out, const LayerCache& cache,
                  ForwardMode mode, ParameterSet& grads) const override {
    const Tensor& y = cache.saved.at(0);
    Tensor g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(y[i] > 0.0)) g[i] = 0.0;
    Tensor dx = main_.backward(params, g, cache.children[0], mode, grads);
    const Tensor ds = shortcut_.size() ? shortcut_.backward(params, g, cache.children[1], mode, grads) : g;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += ds[i];
    return dx;
  }

  bool is_convolutional() const override { return true; }

 private:
  Sequential main_;
  Sequential shortcut_;
};

}  // namespace

LayerPtr make_conv2d(std::string name, std::size_t in_channels, std::size_t out_channels,
                     std::size_t kernel, std::size_t stride, std::size_t padding, bool bias) {
  return std::make_unique<Conv2d>(std::move(name), in_channels, out_channels, kernel, stride, padding, bias);
}
LayerPtr make_batch_norm(std::string name, std::size_t channels) {
  return std::make_unique<BatchNorm2d>(std::move(name), channels);
}
LayerPtr make_relu() { return std::make_unique<ReLU>(); }
LayerPtr make_max_pool(std::size_t kernel, std::size_t stride, std::size_t padding) {
  return std::make_unique<MaxPool2d>(kernel, stride, padding);
}
LayerPtr make_global_avg_pool() { return std::make_unique<GlobalAvgPool>(); }
LayerPtr make_linear(std::string name, std::size_t in_features, std::size_t out_features) {
  return std::make_unique<Linear>(std::move(name), in_features, out_features);
}
LayerPtr make_bottleneck(std::string name, std::size_t in_channels, std::size_t width,
                         std::size_t out_channels, std::size_t stride) {
  return std::make_unique<Bottleneck>(std::move(name), in_channels, width, out_channels, stride);
}

// ---- Sequential --------------------------------------------------------

void Sequential::register_parameters(ParameterSet& params, std::uint64_t seed) const {
  for (const auto& l : layers_) l->register_parameters(params, seed);
}

Tensor Sequential::forward(const ParameterSet& params, const Tensor& x, LayerCache& cache,
                           ForwardMode mode, ParameterSet* running) const {
  cache.children.assign(layers_.size(), {});
  Tensor current = x;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    current = layers_[i]->forward(params, current, cache.children[i], mode, running);
  return current;
}

Tensor Sequential::backward(const ParameterSet& params, const Tensor& grad_out, const LayerCache& cache,
                            ForwardMode mode, ParameterSet& grads) const {
  Tensor g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;)
    g = layers_[i]->backward(params, g, cache.children.at(i), mode, grads);
  return g;
}

bool Sequential::is_convolutional() const {
  return std::any_of(layers_.begin(), layers_.end(), [](const LayerPtr& l) { return l->is_convolutional(); });
}

// ---- losses ------------------------------------------------------------

std::vector<double> softmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t classes = logits.dim(1);
  std::vector<double> p(classes);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < classes; ++c) mx = std::max(mx, logits.at(row, c));
  double total = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    p[c] = std::exp(logits.at(row, c) - mx);
    total += p[c];
  }
  for (double& v : p) v /= total;
  return p;
}

double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets, Tensor* grad) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size() || targets.empty()) {
    throw ValidationError("cross-entropy: logits/targets size mismatch");
  }
  const std::size_t n = logits.dim(0), classes = logits.dim(1);
  if (grad) *grad = Tensor(logits.shape());
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= classes) {
      throw ValidationError("cross-entropy: target " + std::to_string(t) + " out of range");
    }
    const auto p = softmax_row(logits, r);
    loss -= std::log(std::max(p[static_cast<std::size_t>(t)], 1e-300));
    if (grad)
      for (std::size_t c = 0; c < classes; ++c)
        grad->at(r, c) = (p[c] - (static_cast<std::size_t>(t) == c ? 1.0 : 0.0)) / static_cast<double>(n);
  }
  return loss / static_cast<double>(n);
}

}  // namespace cdssl
