#include "cdsk/operators.hpp"

#include <Eigen/LU>

namespace cdsk {

namespace {

// Gradients of the four barycentric basis functions of tet t (rows).
Eigen::Matrix<double, 4, 3> basis_gradients(const TetMesh& mesh, Index t) {
  Matrix3d Dm;
  for (int k = 0; k < 3; ++k)
    Dm.col(k) = (mesh.vertices.row(mesh.tets(t, k + 1)) - mesh.vertices.row(mesh.tets(t, 0))).transpose();
  const Matrix3d Dm_inv = Dm.inverse();
  Eigen::Matrix<double, 4, 3> g;
  g.bottomRows<3>() = Dm_inv;
  g.row(0) = -Dm_inv.colwise().sum();
  return g;
}

}  // namespace

Energy parse_energy(const std::string& name) {
  if (name == "arap") return Energy::arap;
  if (name == "corot") return Energy::corot;
  throw Error("unknown energy '" + name + "' (expected arap or corot)");
}

const char* to_string(Energy e) { return e == Energy::arap ? "arap" : "corot"; }

MaterialField MaterialField::homogeneous(Index num_tets, double mu, double lambda, double density) {
  return {VectorXd::Constant(num_tets, mu), VectorXd::Constant(num_tets, lambda),
          VectorXd::Constant(num_tets, density)};
}

void MaterialField::validate(Index num_tets) const {
  if (mu.size() != num_tets || lambda.size() != num_tets || density.size() != num_tets)
    throw Error("material field sized " + std::to_string(mu.size()) + " but mesh has " +
                std::to_string(num_tets) + " tets");
  if (!(mu.array() > 0).all()) throw Error("material mu must be > 0 on every tet");
  if (!(lambda.array() >= 0).all()) throw Error("material lambda must be >= 0 on every tet");
  if (!(density.array() > 0).all()) throw Error("material density must be > 0 on every tet");
}

SparseMatrix deformation_gradient_operator(const TetMesh& mesh) {
  const Index n = mesh.num_vertices(), t = mesh.num_tets();
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(t) * 36);
  for (Index j = 0; j < t; ++j) {
    const auto g = basis_gradients(mesh, j);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        for (int v = 0; v < 4; ++v)
          trips.emplace_back(9 * j + 3 * a + b, a * n + mesh.tets(j, v), g(v, b));
  }
  SparseMatrix K(9 * t, 3 * n);
  K.setFromTriplets(trips.begin(), trips.end());
  return K;
}

VectorXd lumped_vertex_masses(const TetMesh& mesh, const VectorXd& density) {
  const VectorXd vol = tet_volumes(mesh);
  VectorXd m = VectorXd::Zero(mesh.num_vertices());
  for (Index t = 0; t < mesh.num_tets(); ++t)
    for (int k = 0; k < 4; ++k) m(mesh.tets(t, k)) += 0.25 * density(t) * vol(t);
  return m;
}

SparseMatrix rest_hessian(const TetMesh& mesh, const MaterialField& mat, Energy energy) {
  const Index t = mesh.num_tets();
  const SparseMatrix K = deformation_gradient_operator(mesh);
  const VectorXd vol = tet_volumes(mesh);
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(t) * 21);
  for (Index j = 0; j < t; ++j) {
    const double w = vol(j) * mat.mu(j);
    if (energy == Energy::arap) {
      for (int q = 0; q < 9; ++q) trips.emplace_back(9 * j + q, 9 * j + q, 2.0 * w);
      continue;
    }
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        trips.emplace_back(9 * j + 3 * a + b, 9 * j + 3 * a + b, w);
        trips.emplace_back(9 * j + 3 * a + b, 9 * j + 3 * b + a, w);
      }
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) trips.emplace_back(9 * j + 4 * a, 9 * j + 4 * b, vol(j) * mat.lambda(j));
  }
  SparseMatrix C(9 * t, 9 * t);
  C.setFromTriplets(trips.begin(), trips.end());
  SparseMatrix H = SparseMatrix(K.transpose()) * C * K;
  // Symmetrize away round-off from the triple product.
  SparseMatrix Ht = H.transpose();
  return 0.5 * (H + Ht);
}

FullSpaceOperators assemble_operators(const TetMesh& mesh, const MaterialField& mat, Energy hessian_energy) {
  mat.validate(mesh.num_tets());
  const Index t = mesh.num_tets();
  FullSpaceOperators ops;
  ops.hessian_energy = hessian_energy;
  ops.mass_w = lumped_vertex_masses(mesh, mat.density);
  ops.mass = ops.mass_w.replicate(3, 1);
  ops.K = deformation_gradient_operator(mesh);
  const VectorXd vol = tet_volumes(mesh);
  ops.vol9.resize(9 * t);
  ops.mu9.resize(9 * t);
  for (Index j = 0; j < t; ++j) {
    ops.vol9.segment<9>(9 * j).setConstant(vol(j));
    ops.mu9.segment<9>(9 * j).setConstant(mat.mu(j));
  }
  const VectorXd w = ops.vol9.cwiseProduct(ops.mu9);
  SparseMatrix L = SparseMatrix(ops.K.transpose()) * w.asDiagonal() * ops.K;
  SparseMatrix Lt = L.transpose();
  ops.L = 0.5 * (L + Lt);
  ops.H = hessian_energy == Energy::arap ? SparseMatrix(2.0 * ops.L) : rest_hessian(mesh, mat, hessian_energy);
  return ops;
}

SparseMatrix cotangent_laplacian(const TetMesh& mesh) {
  const VectorXd vol = tet_volumes(mesh);
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(mesh.num_tets()) * 16);
  for (Index j = 0; j < mesh.num_tets(); ++j) {
    const auto g = basis_gradients(mesh, j);
    const Eigen::Matrix4d local = vol(j) * g * g.transpose();
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) trips.emplace_back(mesh.tets(j, a), mesh.tets(j, b), local(a, b));
  }
  SparseMatrix Lc(mesh.num_vertices(), mesh.num_vertices());
  Lc.setFromTriplets(trips.begin(), trips.end());
  return Lc;
}

}  // namespace cdsk
