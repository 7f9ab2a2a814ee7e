#pragma once

// Within-layer feature-diversity penalties on a batch of latent embeddings.
//
// Columns of the [B,d] embedding matrix (one column per latent unit) are
// centred and scaled to unit norm; K = C^T C is then their d x d correlation
// matrix. All three variants are small when latent units are decorrelated:
//   direct : mean squared off-diagonal entry of K
//   det    : 1 - det(K)
//   logdet : -log det(K + 1e-4 I)

#include <cmath>
#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/LU>
#include <Eigen/SVD>

#include "mocc/errors.hpp"
#include "mocc/tensor.hpp"

namespace mocc {

enum class Regularizer { none, direct, det, logdet };

inline std::string to_string(Regularizer r) {
  switch (r) {
  case Regularizer::none: return "none";
  case Regularizer::direct: return "direct";
  case Regularizer::det: return "det";
  case Regularizer::logdet: return "logdet";
  }
  return "none";
}

inline std::optional<Regularizer> parse_regularizer(std::string_view text) {
  if (text == "none") return Regularizer::none;
  if (text == "direct") return Regularizer::direct;
  if (text == "det") return Regularizer::det;
  if (text == "logdet") return Regularizer::logdet;
  return std::nullopt;
}

inline constexpr double kColumnNormGuard = 1e-8;
inline constexpr double kLogdetRidge = 1e-4;

namespace detail {

using MatrixXd = Eigen::MatrixXd;

// adj(K) through the SVD, well defined for singular K as well.
inline MatrixXd adjugate(const MatrixXd &k, double *det_out) {
  const Eigen::Index d = k.rows();
  Eigen::BDCSVD<MatrixXd> svd(k, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto &sigma = svd.singularValues();
  const double sign = svd.matrixU().determinant() * svd.matrixV().determinant() > 0 ? 1.0 : -1.0;
  Eigen::VectorXd others(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    double prod = 1.0;
    for (Eigen::Index j = 0; j < d; ++j)
      if (j != i)
        prod *= sigma(j);
    others(i) = prod;
  }
  double det = sign;
  for (Eigen::Index j = 0; j < d; ++j)
    det *= sigma(j);
  *det_out = det;
  return sign * svd.matrixV() * others.asDiagonal() * svd.matrixU().transpose();
}

} // namespace detail

// Penalty value for embeddings [B,d]; when `grad` is non-null it receives
// d(penalty)/d(embeddings) with the same shape.
template <typename T>
double wld_penalty(const Tensor<T> &embeddings, Regularizer variant, Tensor<T> *grad = nullptr) {
  if (embeddings.rank() != 2)
    throw DimensionError("wld_penalty expects a [B,d] matrix, got " +
                         shape_str(embeddings.shape()));
  const Eigen::Index batch = static_cast<Eigen::Index>(embeddings.dim(0));
  const Eigen::Index d = static_cast<Eigen::Index>(embeddings.dim(1));
  if (batch < 2)
    throw ParameterError("wld_penalty needs at least 2 samples, got " + std::to_string(batch));
  if (variant == Regularizer::none) {
    if (grad)
      *grad = Tensor<T>(embeddings.shape());
    return 0.0;
  }

  using detail::MatrixXd;
  MatrixXd z(batch, d);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index j = 0; j < d; ++j)
      z(b, j) = static_cast<double>(embeddings[static_cast<std::size_t>(b * d + j)]);
  const MatrixXd u = z.rowwise() - z.colwise().mean();
  const Eigen::VectorXd norms = u.colwise().norm().transpose();
  MatrixXd c = u;
  for (Eigen::Index j = 0; j < d; ++j)
    c.col(j) /= norms(j) + kColumnNormGuard;
  const MatrixXd k = c.transpose() * c;

  double penalty = 0.0;
  MatrixXd dk; // d(penalty)/dK
  switch (variant) {
  case Regularizer::direct: {
    if (d < 2) {
      dk = MatrixXd::Zero(d, d);
      break;
    }
    MatrixXd off = k;
    off.diagonal().setZero();
    const double pairs = static_cast<double>(d) * static_cast<double>(d - 1);
    penalty = off.squaredNorm() / pairs;
    dk = 2.0 * off / pairs;
    break;
  }
  case Regularizer::det: {
    // Centred columns span at most B-1 dimensions; below rank d-1 both the
    // determinant and the adjugate vanish identically.
    if (batch - 1 <= d - 2) {
      penalty = 1.0;
      dk = MatrixXd::Zero(d, d);
    } else {
      double det = 0.0;
      const MatrixXd adj = detail::adjugate(k, &det);
      penalty = 1.0 - det;
      dk = -adj.transpose();
    }
    break;
  }
  case Regularizer::logdet: {
    const MatrixXd ridged = k + kLogdetRidge * MatrixXd::Identity(d, d);
    Eigen::LLT<MatrixXd> llt(ridged);
    if (llt.info() != Eigen::Success)
      throw NumericError("wld_penalty(logdet): correlation matrix is not positive definite");
    const MatrixXd l = llt.matrixL();
    penalty = -2.0 * l.diagonal().array().log().sum();
    dk = -llt.solve(MatrixXd::Identity(d, d));
    break;
  }
  case Regularizer::none:
    break;
  }

  if (grad) {
    const MatrixXd dc = c * (dk + dk.transpose());
    MatrixXd du(batch, d);
    for (Eigen::Index j = 0; j < d; ++j) {
      const double n = norms(j);
      const double denom = n + kColumnNormGuard;
      du.col(j) = dc.col(j) / denom;
      if (n > 0.0)
        du.col(j) -= u.col(j) * (u.col(j).dot(dc.col(j)) / (n * denom * denom));
    }
    const MatrixXd dz = du.rowwise() - du.colwise().mean();
    *grad = Tensor<T>(embeddings.shape());
    for (Eigen::Index b = 0; b < batch; ++b)
      for (Eigen::Index j = 0; j < d; ++j)
        (*grad)[static_cast<std::size_t>(b * d + j)] = static_cast<T>(dz(b, j));
  }
  return penalty;
}

} // namespace mocc
