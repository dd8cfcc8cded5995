#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "cdssl/errors.hpp"
#include "cdssl/optim.hpp"
#include "support.hpp"

using namespace cdssl;
using cdssl::testing::random_tensor;

namespace {

LarsHyper plain(double lr, double wd, double momentum, double tc) {
  LarsHyper h;
  h.base_lr = lr;
  h.weight_decay = wd;
  h.momentum = momentum;
  h.trust_coefficient = tc;
  return h;
}

}  // namespace

TEST(Lars, DefaultsFollowTheHyperparameterTables) {
  const LarsHyper b = LarsHyper::binary_defaults();
  EXPECT_DOUBLE_EQ(b.base_lr, 0.79);
  EXPECT_DOUBLE_EQ(b.weight_decay, 1e-6);
  const LarsHyper m = LarsHyper::multiclass_defaults();
  EXPECT_DOUBLE_EQ(m.base_lr, 1e-3);
  EXPECT_DOUBLE_EQ(m.weight_decay, 5e-4);
  EXPECT_DOUBLE_EQ(b.momentum, 0.9);
  EXPECT_DOUBLE_EQ(b.trust_coefficient, 1e-3);
}

TEST(Lars, ExclusionRule) {
  EXPECT_TRUE(default_lars_exclusion("encoder.0.conv.bias"));
  EXPECT_TRUE(default_lars_exclusion("encoder.0.bn.weight"));
  EXPECT_TRUE(default_lars_exclusion("encoder.1.bn2.bias"));
  EXPECT_FALSE(default_lars_exclusion("encoder.0.conv.weight"));
  EXPECT_FALSE(default_lars_exclusion("head.0.weight"));
}

TEST(Lars, ZeroGradientZeroDecayIsExactNoOp) {
  Rng rng(1);
  Tensor w = random_tensor(rng, {3, 4});
  const Tensor before = w;
  const Tensor g({3, 4}, 0.0);
  OptimizerState state;
  const ParamSlot slot{"layer.weight", &w, &g};
  lars_step({&slot, 1}, state, plain(0.79, 0.0, 0.9, 1e-3));
  EXPECT_EQ(w, before);
  EXPECT_EQ(state.step, 1u);
}

TEST(Lars, HandComputedTrustRatio) {
  Tensor w({2}, {3, 4});
  const Tensor g({2}, {0, 5});
  OptimizerState state;
  const ParamSlot slot{"layer.weight", &w, &g};
  const auto stats = lars_step({&slot, 1}, state, plain(0.1, 0.0, 0.0, 1.0));
  const double r = 5.0 / (5.0 + 1e-8);
  ASSERT_EQ(stats.trust_ratios.size(), 1u);
  EXPECT_NEAR(stats.trust_ratios[0], r, 1e-15);
  EXPECT_NEAR(w[0], 3.0, 1e-6);
  EXPECT_NEAR(w[1], 4.0 - 0.1 * 5.0, 1e-6);
}

TEST(Lars, CoupledWeightDecayEntersTheNorm) {
  Tensor w({2}, {3, 4});
  const Tensor g({2}, {1, 0});
  OptimizerState state;
  const ParamSlot slot{"layer.weight", &w, &g};
  const double wd = 0.5;
  const double gh0 = 1 + wd * 3, gh1 = wd * 4;
  const double r = 0.01 * 5.0 / (std::hypot(gh0, gh1) + 1e-8);
  lars_step({&slot, 1}, state, plain(0.2, wd, 0.0, 0.01));
  EXPECT_NEAR(w[0], 3 - r * 0.2 * gh0, 1e-12);
  EXPECT_NEAR(w[1], 4 - r * 0.2 * gh1, 1e-12);
}

TEST(Lars, ExcludedTensorUsesUnitRatio) {
  Tensor b({3}, {0.1, 0.2, 0.3});
  const Tensor g({3}, {1, 1, 1});
  OptimizerState state;
  const ParamSlot slot{"layer.bias", &b, &g};
  const auto stats = lars_step({&slot, 1}, state, plain(0.5, 0.0, 0.0, 1e-3));
  EXPECT_EQ(stats.trust_ratios[0], 1.0);
  EXPECT_NEAR(b[0], 0.1 - 0.5, 1e-15);
}

TEST(Lars, ZeroWeightUsesUnitRatio) {
  Tensor w({2}, 0.0);
  const Tensor g({2}, {1, 2});
  OptimizerState state;
  const ParamSlot slot{"layer.weight", &w, &g};
  EXPECT_EQ(lars_step({&slot, 1}, state, plain(0.1, 0.0, 0.0, 1e-3)).trust_ratios[0], 1.0);
}

TEST(Lars, DegenerateTrustReducesToMomentumSgd) {
  Rng rng(4);
  Tensor a = random_tensor(rng, {4, 3}), b = random_tensor(rng, {5});
  Tensor a2 = a, b2 = b;
  OptimizerState s1, s2;
  LarsHyper h = plain(0.05, 1e-3, 0.9, 1e-3);
  h.exclude_from_adaptation = [](std::string_view) { return true; };
  for (int step = 0; step < 25; ++step) {
    const Tensor ga = random_tensor(rng, {4, 3}), gb = random_tensor(rng, {5});
    const ParamSlot l[2] = {{"a.weight", &a, &ga}, {"b.weight", &b, &gb}};
    const ParamSlot s[2] = {{"a.weight", &a2, &ga}, {"b.weight", &b2, &gb}};
    lars_step(l, s1, h);
    sgd_step(s, s2, 0.05, 0.9, 1e-3);
  }
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], a2[i], 1e-9);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(b[i], b2[i], 1e-9);
}

TEST(Lars, QuadraticDecreasesMonotonically) {
  Tensor w({1}, {2.0});
  OptimizerState state;
  double previous = 0.5 * w[0] * w[0];
  for (int step = 0; step < 100; ++step) {
    const Tensor g({1}, {w[0]});
    const ParamSlot slot{"w.weight", &w, &g};
    lars_step({&slot, 1}, state, plain(1.0, 0.0, 0.9, 1e-3));
    const double f = 0.5 * w[0] * w[0];
    EXPECT_LT(f, previous) << "step " << step;
    previous = f;
  }
}

TEST(Lars, OrderEquivariant) {
  Rng rng(8);
  Tensor a = random_tensor(rng, {3}), b = random_tensor(rng, {4});
  Tensor a2 = a, b2 = b;
  const Tensor ga = random_tensor(rng, {3}), gb = random_tensor(rng, {4});
  OptimizerState s1, s2;
  const ParamSlot forward[2] = {{"a.weight", &a, &ga}, {"b.weight", &b, &gb}};
  const ParamSlot reversed[2] = {{"b.weight", &b2, &gb}, {"a.weight", &a2, &ga}};
  const LarsHyper h = LarsHyper::binary_defaults();
  const auto r1 = lars_step(forward, s1, h);
  const auto r2 = lars_step(reversed, s2, h);
  EXPECT_EQ(a, a2);
  EXPECT_EQ(b, b2);
  EXPECT_EQ(r1.trust_ratios[0], r2.trust_ratios[1]);
}

TEST(Lars, NonFiniteGradientAbortsWholeStep) {
  Tensor a({2}, 1.0), b({2}, 1.0);
  const Tensor ga({2}, 1.0);
  const Tensor gb({2}, {1.0, std::numeric_limits<double>::infinity()});
  OptimizerState state;
  const ParamSlot slots[2] = {{"a.weight", &a, &ga}, {"b.weight", &b, &gb}};
  EXPECT_THROW(lars_step(slots, state, LarsHyper::binary_defaults()), NumericError);
  EXPECT_EQ(a, Tensor({2}, 1.0));
  EXPECT_EQ(state.step, 0u);
  EXPECT_TRUE(state.momentum.empty());
}

TEST(Lars, ShapeMismatchRejected) {
  Tensor a({2}, 1.0);
  const Tensor g({3}, 1.0);
  OptimizerState state;
  const ParamSlot slot{"a.weight", &a, &g};
  EXPECT_THROW(lars_step({&slot, 1}, state, LarsHyper::binary_defaults()), ValidationError);
}

TEST(Lars, InvalidHyperRejected) {
  EXPECT_THROW(plain(0.0, 0, 0.9, 1e-3).validate(), ValidationError);
  EXPECT_THROW(plain(0.1, -1, 0.9, 1e-3).validate(), ValidationError);
  EXPECT_THROW(plain(0.1, 0, 1.0, 1e-3).validate(), ValidationError);
  EXPECT_THROW(plain(0.1, 0, 0.9, 0.0).validate(), ValidationError);
}

TEST(Sgd, Arithmetic) {
  Tensor w({1}, {1.0});
  const Tensor g({1}, {0.5});
  OptimizerState state;
  const ParamSlot slot{"w", &w, &g};
  sgd_step({&slot, 1}, state, 0.1, 0.0, 0.0);
  EXPECT_NEAR(w[0], 0.95, 1e-15);
}

TEST(Sgd, ZeroLrLeavesParameters) {
  Tensor w({2}, {1.0, -2.0});
  const Tensor g({2}, {3.0, 4.0});
  OptimizerState state;
  const ParamSlot slot{"w", &w, &g};
  sgd_step({&slot, 1}, state, 0.0, 0.9, 0.1);
  EXPECT_EQ(w, Tensor({2}, {1.0, -2.0}));
}

TEST(Sgd, MomentumSecondStepIsOnePointNineTimesFirst) {
  Tensor w({1}, {0.0});
  const Tensor g({1}, {1.0});
  OptimizerState state;
  const ParamSlot slot{"w", &w, &g};
  sgd_step({&slot, 1}, state, 0.1, 0.9, 0.0);
  const double first = -w[0];
  sgd_step({&slot, 1}, state, 0.1, 0.9, 0.0);
  const double second = -w[0] - first;
  EXPECT_NEAR(second / first, 1.9, 1e-12);
}

TEST(CosineSchedule, EndpointsAndMidpoint) {
  EXPECT_DOUBLE_EQ(cosine_lr_scale(0, 100), 1.0);
  EXPECT_NEAR(cosine_lr_scale(50, 100), 0.5, 1e-12);
  EXPECT_NEAR(cosine_lr_scale(100, 100), 0.0, 1e-12);
}
