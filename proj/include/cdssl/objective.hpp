#pragma once

#include <functional>
#include <vector>

#include "cdssl/tensor.hpp"

namespace cdssl {

/// Embeddings of 2n views, rows (2k, 2k+1) being the two views of image k.
struct EmbeddingBatch {
  Tensor embeddings;  // (2n, D)
  double temperature = 0.5;

  std::size_t images() const { return embeddings.rank() == 2 ? embeddings.dim(0) / 2 : 0; }
};

struct LossValue {
  double total = 0.0;
  std::vector<double> per_anchor;
};

/// Row index of the positive partner of anchor `i`.
constexpr std::size_t positive_partner(std::size_t i) { return i ^ std::size_t{1}; }

/// Pairwise cosine similarities of the rows of `z`. Throws on a zero-norm row.
Tensor cosine_similarity_matrix(const Tensor& z);

/// NT-Xent over all 2n anchors, averaged. When `grad` is non-null it receives
/// d(total)/d(embeddings) with the shape of the embeddings.
LossValue nt_xent_loss(const EmbeddingBatch& batch, Tensor* grad = nullptr);

/// Reference NT-Xent written as plain double loops; intended for n <= 16.
LossValue nt_xent_oracle(const EmbeddingBatch& batch);

/// A scalar function that can also report its analytic gradient.
using GradientFunction = std::function<double(const Tensor& x, Tensor* grad)>;

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  bool passed(double tolerance) const { return max_relative_error < tolerance; }
};

/// Compares the analytic gradient of `fn` at `x` with central differences,
/// elementwise, using max(|analytic|, |numeric|, 1e-8) as denominator.
GradientCheckResult finite_difference_check(const GradientFunction& fn, const Tensor& x,
                                            double step);

}  // namespace cdssl
