#include "cdssl/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cdssl/errors.hpp"

namespace cdssl {

bool default_lars_exclusion(std::string_view name) {
  const auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.substr(name.size() - suffix.size()) == suffix;
  };
  return ends_with(".bias") || name.find(".bn") != std::string_view::npos;
}

LarsHyper LarsHyper::binary_defaults() { return LarsHyper{}; }

LarsHyper LarsHyper::multiclass_defaults() {
  LarsHyper h;
  h.base_lr = 1e-3;
  h.weight_decay = 5e-4;
  return h;
}

void LarsHyper::validate() const {
  if (!(base_lr > 0.0)) throw ValidationError("optimizer.base_lr must be positive");
  if (!(weight_decay >= 0.0)) throw ValidationError("optimizer.weight_decay must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw ValidationError("optimizer.momentum must be in [0, 1)");
  if (!(trust_coefficient > 0.0))
    throw ValidationError("optimizer.trust_coefficient must be positive");
  if (!(epsilon > 0.0)) throw ValidationError("optimizer.epsilon must be positive");
}

double StepStats::min_ratio() const {
  return trust_ratios.empty() ? 0.0 : *std::min_element(trust_ratios.begin(), trust_ratios.end());
}

double StepStats::max_ratio() const {
  return trust_ratios.empty() ? 0.0 : *std::max_element(trust_ratios.begin(), trust_ratios.end());
}

double StepStats::median_ratio() const {
  if (trust_ratios.empty()) return 0.0;
  std::vector<double> sorted = trust_ratios;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  return sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
}

namespace {

void check_slots(std::span<const ParamSlot> params) {
  for (const auto& p : params) {
    if (!p.value || !p.grad) throw ValidationError("optimizer slot " + p.name + " is unbound");
    if (p.value->shape() != p.grad->shape()) {
      throw ValidationError("gradient shape " + shape_to_string(p.grad->shape()) +
                            " does not match parameter " + p.name + " " +
                            shape_to_string(p.value->shape()));
    }
    if (!p.grad->all_finite()) {
      throw NumericError("non-finite gradient for " + p.name + "; step aborted");
    }
  }
}

Tensor& momentum_buffer(OptimizerState& state, const ParamSlot& p) {
  auto it = state.momentum.find(p.name);
  if (it == state.momentum.end()) {
    it = state.momentum.emplace(p.name, Tensor(p.value->shape())).first;
  } else if (it->second.shape() != p.value->shape()) {
    throw ValidationError("momentum buffer shape mismatch for " + p.name);
  }
  return it->second;
}

// Shared update: m = mu*m + scale*(g + wd*w); w -= m.
void apply_update(Tensor& w, const Tensor& g, Tensor& m, double scale, double momentum,
                  double weight_decay) {
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double effective = g[i] + weight_decay * w[i];
    m[i] = momentum * m[i] + scale * effective;
    w[i] -= m[i];
  }
}

}  // namespace

StepStats lars_step(std::span<const ParamSlot> params, OptimizerState& state,
                    const LarsHyper& hyper) {
  hyper.validate();
  check_slots(params);
  StepStats stats;
  stats.trust_ratios.reserve(params.size());
  for (const auto& p : params) {
    Tensor& w = *p.value;
    const Tensor& g = *p.grad;
    Tensor& m = momentum_buffer(state, p);

    double ratio = 1.0;
    const bool excluded = hyper.exclude_from_adaptation && hyper.exclude_from_adaptation(p.name);
    if (!excluded) {
      const double w_norm = w.l2_norm();
      if (w_norm > 0.0) {
        double g_sq = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double e = g[i] + hyper.weight_decay * w[i];
          g_sq += e * e;
        }
        ratio = hyper.trust_coefficient * w_norm / (std::sqrt(g_sq) + hyper.epsilon);
      }
    }
    apply_update(w, g, m, ratio * hyper.base_lr, hyper.momentum, hyper.weight_decay);
    stats.trust_ratios.push_back(ratio);
  }
  ++state.step;
  return stats;
}

StepStats sgd_step(std::span<const ParamSlot> params, OptimizerState& state, double lr,
                   double momentum, double weight_decay) {
  if (!(lr >= 0.0)) throw ValidationError("sgd lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("sgd momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw ValidationError("sgd weight_decay must be >= 0");
  check_slots(params);
  StepStats stats;
  for (const auto& p : params) {
    apply_update(*p.value, *p.grad, momentum_buffer(state, p), lr, momentum, weight_decay);
    stats.trust_ratios.push_back(1.0);
  }
  ++state.step;
  return stats;
}

double cosine_lr_scale(std::uint64_t step, std::uint64_t total_steps) {
  if (total_steps == 0) return 1.0;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace cdssl
