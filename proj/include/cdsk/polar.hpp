#pragma once

#include <Eigen/Core>
#include <Eigen/LU>
#include <Eigen/SVD>

namespace cdsk {

/// Rotation factor of the polar decomposition, R = U diag(1, 1, det(U V^T)) V^T.
/// R maximizes tr(R^T F) over SO(3). An all-zero F yields the identity and sets
/// *degenerate when provided.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> polar_rotation(const Eigen::Matrix<Scalar, 3, 3>& F, bool* degenerate = nullptr) {
  using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
  if (degenerate) *degenerate = false;
  if (F.isZero(Scalar(0))) {
    if (degenerate) *degenerate = true;
    return Mat3::Identity();
  }
  Eigen::JacobiSVD<Mat3> svd(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& U = svd.matrixU();
  const Mat3& V = svd.matrixV();
  Eigen::Matrix<Scalar, 3, 1> d(Scalar(1), Scalar(1), (U * V.transpose()).determinant() < 0 ? Scalar(-1) : Scalar(1));
  return U * d.asDiagonal() * V.transpose();
}

}  // namespace cdsk
