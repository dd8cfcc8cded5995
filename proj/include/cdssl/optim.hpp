#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cdssl/tensor.hpp"

namespace cdssl {

/// Biases and normalization parameters are not trust-ratio adapted.
bool default_lars_exclusion(std::string_view name);

struct LarsHyper {
  double base_lr = 0.79;
  double weight_decay = 1e-6;
  double momentum = 0.9;
  double trust_coefficient = 1e-3;
  double epsilon = 1e-8;
  std::function<bool(std::string_view)> exclude_from_adaptation = default_lars_exclusion;

  /// Pretext defaults used for the binary experiments (lr 0.79, decay 1e-6).
  static LarsHyper binary_defaults();
  /// Pretext defaults used for the multiclass experiments (lr 1e-3, decay 5e-4).
  static LarsHyper multiclass_defaults();

  void validate() const;
};

/// One tensor the optimizer is allowed to update.
struct ParamSlot {
  std::string name;
  Tensor* value = nullptr;
  const Tensor* grad = nullptr;
};

struct OptimizerState {
  std::map<std::string, Tensor> momentum;
  std::uint64_t step = 0;
};

struct StepStats {
  std::vector<double> trust_ratios;  // one per slot, in slot order

  double min_ratio() const;
  double median_ratio() const;
  double max_ratio() const;
};

/// Layer-wise adaptive rate scaling step with coupled weight decay:
///   g' = g + wd*w;  r = tc*|w| / (|g'| + eps)  (1 when excluded or |w| = 0)
///   m  = mu*m + r*lr*g';  w -= m
/// All gradients are checked before anything is modified; a non-finite
/// gradient aborts the whole step with NumericError.
StepStats lars_step(std::span<const ParamSlot> params, OptimizerState& state,
                    const LarsHyper& hyper);

/// Momentum SGD with the same buffer convention as lars_step (r = 1).
StepStats sgd_step(std::span<const ParamSlot> params, OptimizerState& state, double lr,
                   double momentum, double weight_decay);

/// Multiplier in [0, 1] for a cosine decay over `total_steps`.
double cosine_lr_scale(std::uint64_t step, std::uint64_t total_steps);

}  // namespace cdssl
