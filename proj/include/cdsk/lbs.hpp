#pragma once

#include "cdsk/mesh.hpp"

#include <array>

namespace cdsk {

// Column layout of every LBS matrix in this library (rig J and subspace B):
// transforms outer, the 12 affine parameters inner, row-major within each 3x4
// transform. Column 12 b + 4 i + j scales rest coordinate j (j = 3 is the
// homogeneous 1) into output axis i, weighted by w_b.

/// The twelve weight-space skinning Jacobians A_{i,j} = P_i Xbar_j (3n x n),
/// stored in order (i, j) -> 4 i + j, with Xbar_3 = I.
struct WeightSpaceJacobians {
  std::array<SparseMatrix, 12> A;

  const SparseMatrix& operator()(int i, int j) const { return A[static_cast<std::size_t>(4 * i + j)]; }
};

WeightSpaceJacobians weight_space_skinning_jacobians(const TetMesh& mesh);

/// B (3n x 12m) with B vec(T_1..T_m) = sum_b w_ib T_b X_i at every vertex.
MatrixXd lbs_jacobian(const MatrixXd& W, const TetMesh& mesh);

/// Per-vertex evaluation of sum_b w_ib T_b [x_i; 1]; T holds m row-major 3x4
/// transforms back to back. Returns positions/displacements flattened axis-major.
template <typename DerivedW, typename DerivedT>
VectorXd evaluate_lbs(const Eigen::MatrixBase<DerivedW>& W, const Eigen::MatrixX3d& rest,
                      const Eigen::MatrixBase<DerivedT>& T) {
  const Index n = rest.rows();
  VectorXd out = VectorXd::Zero(3 * n);
  for (Index v = 0; v < n; ++v) {
    const Eigen::Vector4d X(rest(v, 0), rest(v, 1), rest(v, 2), 1.0);
    Vector3d u = Vector3d::Zero();
    for (Index b = 0; b < W.cols(); ++b) {
      Eigen::Matrix<double, 3, 4> Tb;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) Tb(i, j) = T(12 * b + 4 * i + j);
      u += W(v, b) * (Tb * X);
    }
    for (int a = 0; a < 3; ++a) out(a * n + v) = u(a);
  }
  return out;
}

/// Applies the same rotation to every vertex of an axis-major 3n vector.
VectorXd rotate_field(const Matrix3d& R, const VectorXd& u);

}  // namespace cdsk
