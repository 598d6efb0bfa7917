#pragma once

#include "cdsk/lbs.hpp"
#include "cdsk/rig.hpp"

namespace cdsk {

/// Sum of the three per-axis diagonal n x n blocks of a 3n x 3n Hessian. This is
/// the weight-space Hessian for the translation-only affine covariance.
SparseMatrix weight_space_hessian(const SparseMatrix& H);

/// Result of stacking cJ^T A_{i,j} (12 p rows) and dropping numerically
/// redundant rows. rows() == rank.
struct WeightSpaceConstraint {
  MatrixXd Jw;
  Index stacked_rows = 0;
};

/// Row removal keeps a maximal independent subset of the stacked rows, chosen by
/// column-pivoted QR with pivot tolerance 1e-10 x largest row norm; surviving
/// rows keep their stacking order.
WeightSpaceConstraint weight_space_constraint(const MatrixXd& cJ, const WeightSpaceJacobians& A);

struct SkinningSubspace {
  MatrixXd W;                    // n x m, W^T M_w W = I
  VectorXd eigenvalues;          // m, ascending
  MatrixXd B;                    // 3n x 12m, filled by attach_lbs
  std::vector<Index> degenerate; // i such that |lambda_{i+1} - lambda_i| < 1e-10 lambda_max

  Index num_modes() const { return W.cols(); }
};

/// m smallest eigenpairs of (H_w, M_w) restricted to null(J_w). Solved on the
/// projected pencil: with S = M_w^{1/2} and N an orthonormal basis of
/// null(J_w S^-1), W = S^-1 N U where U are eigenvectors of N^T S^-1 H_w S^-1 N.
/// This is the same eigenproblem as the bordered (KKT) pencil
/// [H_w J_w^T; J_w 0], [M_w 0; 0 0]; the Lagrange multipliers are not formed.
/// Each column is sign-normalized so that its largest-magnitude entry is positive.
SkinningSubspace solve_constrained_gevp(const SparseMatrix& Hw, const VectorXd& Mw, const MatrixXd& Jw, Index m);

/// Fills subspace.B = lbs_jacobian(W).
void attach_lbs(SkinningSubspace& subspace, const TetMesh& mesh);

/// Largest admissible mode count for a given constraint.
inline Index max_mode_count(const MatrixXd& Jw, Index n) { return n - Jw.rows(); }

/// Baseline: k smallest mass-orthonormal generalized eigenvectors of (H, M).
struct DisplacementModes {
  MatrixXd basis;
  VectorXd eigenvalues;
};
DisplacementModes displacement_modes(const SparseMatrix& H, const VectorXd& mass, Index k);

/// Replaces every per-mode transform T_b in z by R T_b. For any z,
/// rotate_field(R, B z) == B rotate_reduced_coords(R, z).
VectorXd rotate_reduced_coords(const Matrix3d& R, const VectorXd& z);

}  // namespace cdsk
