#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cdssl/errors.hpp"
#include "cdssl/objective.hpp"
#include "support.hpp"

using namespace cdssl;
using cdssl::testing::random_tensor;

namespace {

// Plain transcription of the per-anchor formula; shares no code with the library.
double reference_loss(const Tensor& z, double temperature) {
  const std::size_t rows = z.dim(0), d = z.dim(1);
  auto sim = [&](std::size_t a, std::size_t b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t k = 0; k < d; ++k) {
      dot += z.at(a, k) * z.at(b, k);
      na += z.at(a, k) * z.at(a, k);
      nb += z.at(b, k) * z.at(b, k);
    }
    return dot / std::sqrt(na * nb);
  };
  double total = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t j = (i % 2 == 0) ? i + 1 : i - 1;
    double denom = 0;
    for (std::size_t k = 0; k < rows; ++k)
      if (k != i) denom += std::exp(sim(i, k) / temperature);
    total += -std::log(std::exp(sim(i, j) / temperature) / denom);
  }
  return total / static_cast<double>(rows);
}

EmbeddingBatch batch_of(Tensor z, double t = 0.5) {
  EmbeddingBatch b;
  b.embeddings = std::move(z);
  b.temperature = t;
  return b;
}

}  // namespace

TEST(CosineSimilarity, HandExamples) {
  const Tensor s = cosine_similarity_matrix(Tensor({2, 2}, {1, 0, 0, 1}));
  EXPECT_DOUBLE_EQ(s.at(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(s.at(0, 1), 0.0);
  EXPECT_NEAR(cosine_similarity_matrix(Tensor({2, 2}, {1, 0, 2, 0})).at(0, 1), 1.0, 1e-15);
  EXPECT_NEAR(cosine_similarity_matrix(Tensor({2, 2}, {1, 0, 1, 1})).at(0, 1), 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(CosineSimilarity, SymmetricWithUnitDiagonal) {
  Rng rng(3);
  const Tensor s = cosine_similarity_matrix(random_tensor(rng, {6, 5}));
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(s.at(i, i), 1.0, 1e-12);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_DOUBLE_EQ(s.at(i, j), s.at(j, i));
  }
}

TEST(CosineSimilarity, ZeroRowRejected) {
  EXPECT_THROW(cosine_similarity_matrix(Tensor({2, 2}, {1, 1, 0, 0})), ValidationError);
}

TEST(NtXent, SinglePairIsZero) {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    EXPECT_EQ(nt_xent_loss(batch_of(random_tensor(rng, {2, 5}), 0.3)).total, 0.0);
  }
}

TEST(NtXent, IdenticalEmbeddingsGiveLogThree) {
  for (double t : {0.1, 0.5, 1.0}) {
    const Tensor z({4, 3}, {1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3});
    EXPECT_NEAR(nt_xent_loss(batch_of(z, t)).total, std::log(3.0), 1e-9) << "T=" << t;
    EXPECT_NEAR(nt_xent_oracle(batch_of(z, t)).total, std::log(3.0), 1e-9);
  }
}

TEST(NtXent, WorkedOrthogonalPairs) {
  const Tensor z({4, 2}, {1, 0, 1, 0, 0, 1, 0, 1});
  const LossValue v = nt_xent_loss(batch_of(z, 0.5));
  EXPECT_NEAR(v.total, std::log(1.0 + 2.0 * std::exp(-2.0)), 1e-9);
  ASSERT_EQ(v.per_anchor.size(), 4u);
  EXPECT_NEAR(std::accumulate(v.per_anchor.begin(), v.per_anchor.end(), 0.0) / 4.0, v.total, 1e-15);
}

TEST(NtXent, MatchesReferenceOnRandomBatches) {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(7), d = 2 + rng.below(15);
    const double t = rng.uniform(0.1, 1.0);
    const Tensor z = random_tensor(rng, {2 * n, d});
    const double expected = reference_loss(z, t);
    EXPECT_NEAR(nt_xent_loss(batch_of(z, t)).total, expected, 1e-6);
    EXPECT_NEAR(nt_xent_oracle(batch_of(z, t)).total, expected, 1e-6);
  }
}

TEST(NtXent, PairPermutationInvariant) {
  Rng rng(5);
  const Tensor z = random_tensor(rng, {8, 4});
  Tensor p({8, 4});
  const std::size_t order[4] = {2, 0, 3, 1};
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t v = 0; v < 2; ++v)
      for (std::size_t c = 0; c < 4; ++c) p.at(2 * k + v, c) = z.at(2 * order[k] + v, c);
  EXPECT_NEAR(nt_xent_loss(batch_of(z)).total, nt_xent_loss(batch_of(p)).total, 1e-9);
}

TEST(NtXent, ScaleInvariant) {
  Rng rng(6);
  const Tensor z = random_tensor(rng, {6, 5});
  for (double c : {0.01, 3.0, 250.0}) {
    Tensor s = z;
    for (double& v : s.values()) v *= c;
    EXPECT_NEAR(nt_xent_loss(batch_of(z)).total, nt_xent_loss(batch_of(s)).total, 1e-9);
  }
}

TEST(NtXent, RotatingPositiveAwayIncreasesAnchorLoss) {
  double previous = -1.0;
  for (int step = 0; step <= 8; ++step) {
    const double a = step * 0.15;
    const Tensor z({4, 2}, {1, 0, std::cos(a), std::sin(a), 0, 1, 0, 1});
    const double anchor = nt_xent_loss(batch_of(z)).per_anchor[0];
    EXPECT_GT(anchor, previous);
    previous = anchor;
  }
}

TEST(NtXent, EqualSimilaritiesGiveLogTwoNMinusOne) {
  for (std::size_t n : {2u, 3u, 5u}) {
    for (double t : {0.05, 0.7, 4.0}) {
      Tensor z({2 * n, 2}, 1.0);
      EXPECT_NEAR(nt_xent_loss(batch_of(z, t)).total, std::log(2.0 * n - 1.0), 1e-9);
    }
  }
}

TEST(NtXent, RejectsBadInput) {
  EXPECT_THROW(nt_xent_loss(batch_of(Tensor({2, 2}, {1, 0, 0, 1}), 0.0)), ValidationError);
  EXPECT_THROW(nt_xent_loss(batch_of(Tensor({3, 2}, 1.0))), ValidationError);
  EXPECT_THROW(nt_xent_loss(batch_of(Tensor({0, 2}))), ValidationError);
  EXPECT_THROW(nt_xent_loss(batch_of(Tensor({2, 2}, {1, 0, 0, 0}))), ValidationError);
}

TEST(GradientCheck, NtXentAnalyticGradient) {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.below(3), d = 2 + rng.below(5);
    const double t = rng.uniform(0.2, 1.0);
    const GradientFunction fn = [t](const Tensor& x, Tensor* g) { return nt_xent_loss(batch_of(x, t), g).total; };
    const auto result = finite_difference_check(fn, random_tensor(rng, {2 * n, d}), 1e-5);
    EXPECT_TRUE(result.passed(1e-4)) << "max relative error " << result.max_relative_error;
  }
}

TEST(GradientCheck, ConstantFunctionPasses) {
  const GradientFunction fn = [](const Tensor& x, Tensor* g) {
    if (g) *g = Tensor(x.shape(), 0.0);
    return 4.2;
  };
  EXPECT_TRUE(finite_difference_check(fn, Tensor({3, 2}, 1.0), 1e-5).passed(1e-4));
}

TEST(GradientCheck, CorruptedGradientFails) {
  Rng rng(9);
  const GradientFunction fn = [](const Tensor& x, Tensor* g) {
    const double v = nt_xent_loss(batch_of(x), g).total;
    if (g) (*g)[3] *= 2.0;
    return v;
  };
  const auto result = finite_difference_check(fn, random_tensor(rng, {4, 4}), 1e-5);
  EXPECT_GT(result.max_relative_error, 0.3);
  EXPECT_FALSE(result.passed(1e-4));
  EXPECT_EQ(result.worst_index, 3u);
}

TEST(GradientCheck, NonFiniteProbeRejected) {
  const GradientFunction fn = [](const Tensor& x, Tensor* g) {
    if (g) *g = Tensor(x.shape(), 0.0);
    return x[0] > 0.5 ? std::nan("") : 0.0;
  };
  EXPECT_THROW(finite_difference_check(fn, Tensor({1, 1}, 0.5), 1e-3), NumericError);
}
