#include "cdsk/lbs.hpp"

namespace cdsk {

WeightSpaceJacobians weight_space_skinning_jacobians(const TetMesh& mesh) {
  const Index n = mesh.num_vertices();
  WeightSpaceJacobians out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) {
      std::vector<Triplet> trips;
      trips.reserve(static_cast<std::size_t>(n));
      for (Index v = 0; v < n; ++v) trips.emplace_back(i * n + v, v, j < 3 ? mesh.vertices(v, j) : 1.0);
      SparseMatrix A(3 * n, n);
      A.setFromTriplets(trips.begin(), trips.end());
      out.A[static_cast<std::size_t>(4 * i + j)] = std::move(A);
    }
  return out;
}

MatrixXd lbs_jacobian(const MatrixXd& W, const TetMesh& mesh) {
  const Index n = mesh.num_vertices(), m = W.cols();
  if (W.rows() != n) throw Error("weights have " + std::to_string(W.rows()) + " rows, mesh has " +
                                 std::to_string(n) + " vertices");
  MatrixXd B = MatrixXd::Zero(3 * n, 12 * m);
  for (Index b = 0; b < m; ++b)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) {
        auto col = B.col(12 * b + 4 * i + j).segment(i * n, n);
        if (j < 3)
          col = W.col(b).cwiseProduct(mesh.vertices.col(j));
        else
          col = W.col(b);
      }
  return B;
}

VectorXd rotate_field(const Matrix3d& R, const VectorXd& u) {
  const Index n = u.size() / 3;
  VectorXd out(u.size());
  for (int a = 0; a < 3; ++a)
    out.segment(a * n, n) = R(a, 0) * u.segment(0, n) + R(a, 1) * u.segment(n, n) + R(a, 2) * u.segment(2 * n, n);
  return out;
}

}  // namespace cdsk
