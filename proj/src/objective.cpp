#include "cdssl/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cdssl/errors.hpp"

namespace cdssl {

namespace {

void validate(const EmbeddingBatch& batch) {
  const Tensor& z = batch.embeddings;
  if (!(batch.temperature > 0.0) || !std::isfinite(batch.temperature)) {
    throw ValidationError("NT-Xent temperature must be positive, got " +
                          std::to_string(batch.temperature));
  }
  if (z.rank() != 2 || z.dim(0) == 0) {
    throw ValidationError("NT-Xent needs at least one image (2 rows)");
  }
  if (z.dim(0) % 2 != 0) {
    throw ValidationError("NT-Xent needs an even number of rows, got " + std::to_string(z.dim(0)));
  }
  if (!z.all_finite()) throw NumericError("NT-Xent embeddings contain non-finite values");
}

std::vector<double> row_norms(const Tensor& z) {
  const std::size_t rows = z.dim(0), cols = z.dim(1);
  std::vector<double> norms(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    double acc = 0.0;
    for (std::size_t d = 0; d < cols; ++d) acc += z.at(i, d) * z.at(i, d);
    norms[i] = std::sqrt(acc);
    if (norms[i] == 0.0) {
      throw ValidationError("embedding row " + std::to_string(i) + " has zero norm");
    }
  }
  return norms;
}

}  // namespace

Tensor cosine_similarity_matrix(const Tensor& z) {
  if (z.rank() != 2) throw ValidationError("similarity input must be a matrix");
  const std::size_t rows = z.dim(0), cols = z.dim(1);
  const std::vector<double> norms = row_norms(z);
  Tensor unit({rows, cols});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t d = 0; d < cols; ++d) unit.at(i, d) = z.at(i, d) / norms[i];

  Tensor s({rows, rows});
  for (std::size_t i = 0; i < rows; ++i) {
    s.at(i, i) = 1.0;
    for (std::size_t j = i + 1; j < rows; ++j) {
      double dot = 0.0;
      for (std::size_t d = 0; d < cols; ++d) dot += unit.at(i, d) * unit.at(j, d);
      s.at(i, j) = dot;
      s.at(j, i) = dot;
    }
  }
  return s;
}

LossValue nt_xent_loss(const EmbeddingBatch& batch, Tensor* grad) {
  validate(batch);
  const Tensor& z = batch.embeddings;
  const std::size_t rows = z.dim(0), cols = z.dim(1);
  const double inv_t = 1.0 / batch.temperature;

  const std::vector<double> norms = row_norms(z);
  Tensor unit({rows, cols});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t d = 0; d < cols; ++d) unit.at(i, d) = z.at(i, d) / norms[i];
  const Tensor sim = cosine_similarity_matrix(z);

  LossValue out;
  out.per_anchor.resize(rows);
  // Row-wise softmax over k != i; probs(i, i) stays 0.
  Tensor probs({rows, rows});
  for (std::size_t i = 0; i < rows; ++i) {
    double row_max = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < rows; ++k)
      if (k != i) row_max = std::max(row_max, sim.at(i, k) * inv_t);
    double denom = 0.0;
    for (std::size_t k = 0; k < rows; ++k) {
      if (k == i) continue;
      probs.at(i, k) = std::exp(sim.at(i, k) * inv_t - row_max);
      denom += probs.at(i, k);
    }
    for (std::size_t k = 0; k < rows; ++k) probs.at(i, k) /= denom;
    const double log_denom = row_max + std::log(denom);
    out.per_anchor[i] = log_denom - sim.at(i, positive_partner(i)) * inv_t;
    // Clamp the rounding residue of the single-pair case, where the terms cancel exactly.
    if (out.per_anchor[i] < 0.0) out.per_anchor[i] = 0.0;
  }
  double total = 0.0;
  for (double v : out.per_anchor) total += v;
  out.total = total / static_cast<double>(rows);

  if (grad) {
    // dL/dS(i,k) = (P(i,k) - [k = partner(i)]) / (2n T); S = U U^T.
    const double scale = inv_t / static_cast<double>(rows);
    Tensor g_sim({rows, rows});
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t k = 0; k < rows; ++k) {
        if (k == i) continue;
        g_sim.at(i, k) = scale * (probs.at(i, k) - (k == positive_partner(i) ? 1.0 : 0.0));
      }
    *grad = Tensor({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) {
      std::vector<double> g_unit(cols, 0.0);
      for (std::size_t k = 0; k < rows; ++k) {
        const double w = g_sim.at(i, k) + g_sim.at(k, i);
        if (w == 0.0) continue;
        for (std::size_t d = 0; d < cols; ++d) g_unit[d] += w * unit.at(k, d);
      }
      double radial = 0.0;
      for (std::size_t d = 0; d < cols; ++d) radial += g_unit[d] * unit.at(i, d);
      for (std::size_t d = 0; d < cols; ++d)
        grad->at(i, d) = (g_unit[d] - radial * unit.at(i, d)) / norms[i];
    }
  }
  return out;
}

LossValue nt_xent_oracle(const EmbeddingBatch& batch) {
  validate(batch);
  const Tensor& z = batch.embeddings;
  const std::size_t rows = z.dim(0), cols = z.dim(1);

  auto cosine = [&](std::size_t a, std::size_t b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t d = 0; d < cols; ++d) {
      dot += z.at(a, d) * z.at(b, d);
      na += z.at(a, d) * z.at(a, d);
      nb += z.at(b, d) * z.at(b, d);
    }
    if (na == 0.0 || nb == 0.0) throw ValidationError("embedding row has zero norm");
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };

  LossValue out;
  out.per_anchor.resize(rows);
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t j = (i % 2 == 0) ? i + 1 : i - 1;
    const double numerator = std::exp(cosine(i, j) / batch.temperature);
    double denominator = 0.0;
    for (std::size_t k = 0; k < rows; ++k) {
      if (k == i) continue;
      denominator += std::exp(cosine(i, k) / batch.temperature);
    }
    out.per_anchor[i] = -std::log(numerator / denominator);
    total += out.per_anchor[i];
  }
  out.total = total / static_cast<double>(rows);
  return out;
}

GradientCheckResult finite_difference_check(const GradientFunction& fn, const Tensor& x,
                                            double step) {
  if (!(step > 0.0)) throw ValidationError("finite-difference step must be positive");
  Tensor analytic;
  const double base = fn(x, &analytic);
  if (!std::isfinite(base)) throw NumericError("non-finite loss at the probe point");
  if (analytic.size() != x.size()) {
    throw ValidationError("analytic gradient has " + std::to_string(analytic.size()) +
                          " entries, expected " + std::to_string(x.size()));
  }

  GradientCheckResult result;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + step;
    const double plus = fn(probe, nullptr);
    probe[i] = original - step;
    const double minus = fn(probe, nullptr);
    probe[i] = original;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NumericError("non-finite loss while probing coordinate " + std::to_string(i));
    }
    const double numeric = (plus - minus) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    const double err = std::abs(analytic[i] - numeric) / denom;
    if (err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_index = i;
    }
  }
  return result;
}

}  // namespace cdssl
