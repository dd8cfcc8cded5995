#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "cdssl/parameters.hpp"
#include "cdssl/rng.hpp"
#include "cdssl/tensor.hpp"

namespace cdssl {

struct ForwardMode {
  bool training = false;
  /// Batch norm uses running statistics even when training.
  bool freeze_batch_norm = false;
};

/// Values a layer keeps from forward for its backward pass.
struct LayerCache {
  std::vector<Tensor> saved;
  std::vector<std::size_t> dims;
  std::vector<LayerCache> children;
};

/// Stateless layer; parameters live in a ParameterSet under the layer's name.
///
/// `running` receives batch-norm running-statistic updates during training
/// forward passes and may be null.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual void register_parameters(ParameterSet& params, std::uint64_t seed) const = 0;
  virtual Tensor forward(const ParameterSet& params, const Tensor& x, LayerCache& cache,
                         ForwardMode mode, ParameterSet* running) const = 0;
  /// Accumulates parameter gradients into `grads` and returns d(loss)/d(input).
  virtual Tensor backward(const ParameterSet& params, const Tensor& grad_out,
                          const LayerCache& cache, ForwardMode mode, ParameterSet& grads) const = 0;
  virtual bool is_convolutional() const { return false; }
};

using LayerPtr = std::unique_ptr<Layer>;

LayerPtr make_conv2d(std::string name, std::size_t in_channels, std::size_t out_channels,
                     std::size_t kernel, std::size_t stride, std::size_t padding, bool bias);
LayerPtr make_batch_norm(std::string name, std::size_t channels);
LayerPtr make_relu();
LayerPtr make_max_pool(std::size_t kernel, std::size_t stride, std::size_t padding);
LayerPtr make_global_avg_pool();
LayerPtr make_linear(std::string name, std::size_t in_features, std::size_t out_features);
/// ResNet bottleneck: 1x1 -> 3x3(stride) -> 1x1 expansion, projected shortcut when shapes differ.
LayerPtr make_bottleneck(std::string name, std::size_t in_channels, std::size_t width,
                         std::size_t out_channels, std::size_t stride);

/// Layers run in order; also used as a named block of the encoder trunk.
class Sequential final : public Layer {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<LayerPtr> layers) : layers_(std::move(layers)) {}

  void add(LayerPtr layer) { layers_.push_back(std::move(layer)); }
  std::size_t size() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

  void register_parameters(ParameterSet& params, std::uint64_t seed) const override;
  Tensor forward(const ParameterSet& params, const Tensor& x, LayerCache& cache, ForwardMode mode,
                 ParameterSet* running) const override;
  Tensor backward(const ParameterSet& params, const Tensor& grad_out, const LayerCache& cache,
                  ForwardMode mode, ParameterSet& grads) const override;
  bool is_convolutional() const override;

 private:
  std::vector<LayerPtr> layers_;
};

/// Mean softmax cross-entropy over the batch; `grad` receives d(loss)/d(logits).
double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets, Tensor* grad);

std::vector<double> softmax_row(const Tensor& logits, std::size_t row);

}  // namespace cdssl
