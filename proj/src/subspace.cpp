#include "cdsk/subspace.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>

namespace cdsk {

namespace {

void normalize_signs(MatrixXd& V) {
  for (Index c = 0; c < V.cols(); ++c) {
    Index arg = 0;
    V.col(c).cwiseAbs().maxCoeff(&arg);
    if (V(arg, c) < 0) V.col(c) *= -1.0;
  }
}

std::vector<Index> degenerate_pairs(const VectorXd& evals, double lambda_max) {
  std::vector<Index> out;
  for (Index i = 0; i + 1 < evals.size(); ++i)
    if (std::abs(evals(i + 1) - evals(i)) < 1e-10 * std::max(lambda_max, 1e-300)) out.push_back(i);
  return out;
}

}  // namespace

SparseMatrix weight_space_hessian(const SparseMatrix& H) {
  if (H.rows() != H.cols() || H.rows() % 3 != 0)
    throw Error("weight_space_hessian expects a square 3n x 3n matrix, got " + std::to_string(H.rows()) + " x " +
                std::to_string(H.cols()));
  const Index n = H.rows() / 3;
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(H.nonZeros()));
  for (Index col = 0; col < H.outerSize(); ++col)
    for (SparseMatrix::InnerIterator it(H, col); it; ++it)
      if (it.row() / n == it.col() / n) trips.emplace_back(it.row() % n, it.col() % n, it.value());
  SparseMatrix Hw(n, n);
  Hw.setFromTriplets(trips.begin(), trips.end());
  return Hw;
}

WeightSpaceConstraint weight_space_constraint(const MatrixXd& cJ, const WeightSpaceJacobians& A) {
  const Index n = A.A[0].cols();
  const Index p = cJ.cols();
  if (cJ.rows() != 3 * n) throw Error("complementarity matrix does not match the weight-space Jacobians");
  WeightSpaceConstraint out;
  out.stacked_rows = 12 * p;
  if (p == 0) {
    out.Jw.resize(0, n);
    return out;
  }
  MatrixXd stacked(12 * p, n);
  for (int q = 0; q < 12; ++q) stacked.middleRows(q * p, p) = (SparseMatrix(A.A[q].transpose()) * cJ).transpose();

  Eigen::ColPivHouseholderQR<MatrixXd> qr(stacked.transpose());
  qr.setThreshold(1e-10);
  const Index rank = qr.rank();
  std::vector<Index> keep(qr.colsPermutation().indices().data(),
                          qr.colsPermutation().indices().data() + rank);
  std::sort(keep.begin(), keep.end());
  out.Jw.resize(rank, n);
  for (Index r = 0; r < rank; ++r) out.Jw.row(r) = stacked.row(keep[static_cast<std::size_t>(r)]);
  return out;
}

SkinningSubspace solve_constrained_gevp(const SparseMatrix& Hw, const VectorXd& Mw, const MatrixXd& Jw, Index m) {
  const Index n = Hw.rows();
  if (Hw.cols() != n || Mw.size() != n || Jw.cols() != n) throw Error("constrained GEVP: inconsistent sizes");
  if (!(Mw.array() > 0).all()) throw Error("constrained GEVP: weight-space mass must be positive");
  const Index bound = n - Jw.rows();
  if (m < 1 || m > bound)
    throw Error("m too large: requested " + std::to_string(m) + " modes but n - rank(J_w) = " +
                std::to_string(n) + " - " + std::to_string(Jw.rows()) + " = " + std::to_string(bound));

  const VectorXd inv_sqrt_m = Mw.cwiseSqrt().cwiseInverse();
  MatrixXd N;
  if (Jw.rows() == 0) {
    N = MatrixXd::Identity(n, n);
  } else {
    const MatrixXd Js_t = inv_sqrt_m.asDiagonal() * Jw.transpose();
    Eigen::HouseholderQR<MatrixXd> qr(Js_t);
    const MatrixXd Q = qr.householderQ() * MatrixXd::Identity(n, n);
    N = Q.rightCols(bound);
  }
  const SparseMatrix Hs = inv_sqrt_m.asDiagonal() * Hw * inv_sqrt_m.asDiagonal();
  MatrixXd P = N.transpose() * (Hs * N);
  P = 0.5 * (P + P.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(P);
  if (eig.info() != Eigen::Success) throw Error("constrained GEVP: eigen solve failed");
  const VectorXd& evals = eig.eigenvalues();
  const double lambda_max = evals.cwiseAbs().maxCoeff();
  if (evals(0) < -1e-10 * std::max(lambda_max, 1.0))
    throw Error("constrained GEVP: weight-space Hessian is not positive semidefinite (lambda_min = " +
                std::to_string(evals(0)) + ")");

  SkinningSubspace out;
  out.W = inv_sqrt_m.asDiagonal() * (N * eig.eigenvectors().leftCols(m));
  normalize_signs(out.W);
  out.eigenvalues = evals.head(m);
  out.degenerate = degenerate_pairs(out.eigenvalues, lambda_max);
  return out;
}

void attach_lbs(SkinningSubspace& subspace, const TetMesh& mesh) { subspace.B = lbs_jacobian(subspace.W, mesh); }

DisplacementModes displacement_modes(const SparseMatrix& H, const VectorXd& mass, Index k) {
  const Index N = H.rows();
  if (H.cols() != N || mass.size() != N) throw Error("displacement modes: inconsistent sizes");
  if (k < 1 || k > N) throw Error("displacement modes: k must lie in [1, 3n]");
  const VectorXd inv_sqrt_m = mass.cwiseSqrt().cwiseInverse();
  MatrixXd P = inv_sqrt_m.asDiagonal() * MatrixXd(H) * inv_sqrt_m.asDiagonal();
  P = 0.5 * (P + P.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(P);
  if (eig.info() != Eigen::Success) throw Error("displacement modes: eigen solve failed");
  DisplacementModes out;
  out.basis = inv_sqrt_m.asDiagonal() * eig.eigenvectors().leftCols(k);
  normalize_signs(out.basis);
  out.eigenvalues = eig.eigenvalues().head(k);
  return out;
}

VectorXd rotate_reduced_coords(const Matrix3d& R, const VectorXd& z) {
  if ((R.transpose() * R - Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-10 ||
      std::abs(R.determinant() - 1.0) > 1e-10)
    throw Error("rotate_reduced_coords: matrix is not a rotation");
  if (z.size() % 12 != 0) throw Error("rotate_reduced_coords: z length must be a multiple of 12");
  VectorXd w(z.size());
  for (Index b = 0; b < z.size() / 12; ++b) {
    const Eigen::Map<const Eigen::Matrix<double, 3, 4, Eigen::RowMajor>> T(z.data() + 12 * b);
    Eigen::Map<Eigen::Matrix<double, 3, 4, Eigen::RowMajor>> out(w.data() + 12 * b);
    out = R * T;
  }
  return w;
}

}  // namespace cdsk
