#pragma once

#include <Eigen/Core>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "patchforge/error.hpp"

namespace patchforge {

// N x K, one sample embedding per row.
template <typename Scalar>
using EmbeddingMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EmbeddingMatrixf = EmbeddingMatrix<float>;
using EmbeddingMatrixd = EmbeddingMatrix<double>;

// Stabilizer added to the normalized singular values inside the log.
inline constexpr double kRankMeEpsilon = 1e-7;

namespace detail {

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& z) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      if (!std::isfinite(static_cast<double>(z(i, j)))) {
        throw ValidationError("non-finite embedding value at (row " + std::to_string(i) +
                              ", col " + std::to_string(j) + ")");
      }
    }
  }
}

}  // namespace detail

// Rows centered and scaled to unit norm, in double precision. Rows with no
// variance become zero so they correlate with nothing.
template <typename Derived>
Eigen::MatrixXd standardize_rows(const Eigen::MatrixBase<Derived>& z) {
  Eigen::MatrixXd s = z.template cast<double>();
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    auto row = s.row(i);
    const double mean = row.mean();
    const double scale = row.cwiseAbs().maxCoeff();
    row.array() -= mean;
    const double norm = row.norm();
    // Constant rows leave only rounding residue after centering.
    if (norm <= 1e-12 * scale * std::sqrt(static_cast<double>(s.cols())) || norm == 0.0) {
      row.setZero();
    } else {
      row /= norm;
    }
  }
  return s;
}

// Root-mean-square of the off-diagonal Pearson correlations between sample
// embeddings (rows). 0 when samples are uncorrelated, 1 when all are
// perfectly correlated.
template <typename Derived>
double odcorr(const Eigen::MatrixBase<Derived>& z) {
  if (z.rows() < 2) {
    throw ValidationError("odcorr needs at least 2 samples");
  }
  if (z.cols() < 2) {
    throw ValidationError("odcorr needs at least 2 embedding dimensions");
  }
  detail::require_finite(z);
  const Eigen::MatrixXd s = standardize_rows(z);
  Eigen::MatrixXd gram(s.rows(), s.rows());
  gram.setZero();
  gram.template selfadjointView<Eigen::Lower>().rankUpdate(s);
  // Strict lower triangle holds each pair once.
  double sum_sq = 0.0;
  for (Eigen::Index j = 0; j < gram.cols(); ++j) {
    for (Eigen::Index i = j + 1; i < gram.rows(); ++i) {
      const double rho = std::clamp(gram(i, j), -1.0, 1.0);
      sum_sq += rho * rho;
    }
  }
  const double n = static_cast<double>(z.rows());
  return std::clamp(std::sqrt(2.0 * sum_sq / (n * (n - 1.0))), 0.0, 1.0);
}

// Effective rank exp(-sum p_k log(p_k + eps)), p = sigma / sum(sigma),
// clamped to [1, min(N, K)].
template <typename Derived>
double rankme(const Eigen::MatrixBase<Derived>& z, double epsilon = kRankMeEpsilon) {
  if (z.rows() < 1 || z.cols() < 1) {
    throw ValidationError("rankme needs a non-empty matrix");
  }
  detail::require_finite(z);
  const Eigen::MatrixXd zd = z.template cast<double>();
  const Eigen::VectorXd sigma = Eigen::BDCSVD<Eigen::MatrixXd>(zd).singularValues();
  const double total = sigma.sum();
  if (!(total > 0.0)) {
    throw ValidationError("rankme is undefined for an all-zero matrix");
  }
  double entropy = 0.0;
  for (Eigen::Index k = 0; k < sigma.size(); ++k) {
    const double p = sigma[k] / total;
    entropy -= p * std::log(p + epsilon);
  }
  const double upper = static_cast<double>(std::min(z.rows(), z.cols()));
  return std::clamp(std::exp(entropy), 1.0, upper);
}

// ---- KEM1 embedding files ---------------------------------------------------
//
// Little-endian: char[4] "KEM1", u32 N, u32 K, u32 dtype (1 = f32), then
// N * K f32 values row-major.

void write_embeddings(const std::string& path, const EmbeddingMatrixf& z);
// Validates magic, dtype, N >= 2, K >= 1, exact payload length, and finite
// values (reporting the first offending row and column).
EmbeddingMatrixf read_embeddings(const std::string& path);

// Labels sidecar: JSONL {"row": i, "label": <int or string>, "group": <any>}.
struct LabelSet {
  std::vector<int> labels;         // dense class ids, one per row
  std::vector<std::string> groups; // one per row
  std::vector<std::string> class_names;

  std::size_t size() const { return labels.size(); }
  int num_classes() const { return static_cast<int>(class_names.size()); }
};

// Rows must cover 0..n_rows-1 exactly once. Labels (integers or strings) map
// to dense ids in sorted order.
LabelSet read_labels(const std::string& path, std::size_t n_rows);
void write_labels(const std::string& path, const std::vector<int>& labels,
                  const std::vector<std::string>& groups);

}  // namespace patchforge
