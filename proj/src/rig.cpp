#include "cdsk/rig.hpp"

#include "cdsk/lbs.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>

namespace cdsk {

RigKind parse_rig_kind(const std::string& name) {
  if (name == "affine_handle") return RigKind::affine_handle;
  if (name == "lbs_skeleton") return RigKind::lbs_skeleton;
  if (name == "null_rig") return RigKind::null_rig;
  throw Error("unknown rig kind '" + name + "'");
}

const char* to_string(RigKind kind) {
  switch (kind) {
    case RigKind::affine_handle: return "affine_handle";
    case RigKind::lbs_skeleton: return "lbs_skeleton";
    case RigKind::null_rig: return "null_rig";
  }
  return "unknown";
}

LinearRig LinearRig::affine_handle(Index n) { return {RigKind::affine_handle, MatrixXd::Ones(n, 1)}; }

LinearRig LinearRig::null_rig(Index n) { return {RigKind::null_rig, MatrixXd(n, 0)}; }

LinearRig LinearRig::lbs_skeleton(MatrixXd weights) {
  if (!weights.allFinite()) throw Error("rig weights must be finite");
  if (weights.cols() == 0) throw Error("lbs_skeleton rig needs at least one bone");
  return {RigKind::lbs_skeleton, std::move(weights)};
}

MatrixXd rig_jacobian(const LinearRig& rig, const TetMesh& mesh) {
  if (rig.weights.rows() != mesh.num_vertices())
    throw Error("rig weights sized " + std::to_string(rig.weights.rows()) + " x " +
                std::to_string(rig.weights.cols()) + " but mesh has " + std::to_string(mesh.num_vertices()) +
                " vertices");
  if (!rig.weights.allFinite()) throw Error("rig weights must be finite");
  return lbs_jacobian(rig.weights, mesh);
}

VectorXd momentum_leak_field(const TetMesh& mesh, const std::optional<VectorXd>& user_field) {
  const Index n = mesh.num_vertices();
  if (user_field) {
    if (user_field->size() != n)
      throw Error("momentum-leak field sized " + std::to_string(user_field->size()) + ", expected " +
                  std::to_string(n));
    return user_field->cwiseMax(0.0).cwiseMin(1.0);
  }

  VectorXd chi = VectorXd::Zero(n);
  for (Index v : surface_vertices(mesh)) chi(v) = 1.0;
  const VectorXd vol_w = lumped_vertex_masses(mesh, VectorXd::Ones(mesh.num_tets()));
  const double edge = mean_edge_length(mesh);
  SparseMatrix A = cotangent_laplacian(mesh) * (edge * edge);
  A += SparseMatrix(vol_w.asDiagonal());
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(A);
  if (ldlt.info() != Eigen::Success) throw Error("momentum-leak diffusion system is singular");
  VectorXd d = ldlt.solve(vol_w.cwiseProduct(chi));

  const double lo = d.minCoeff(), hi = d.maxCoeff();
  if (hi - lo <= 1e-12 * std::max(1.0, std::abs(hi))) return VectorXd::Constant(n, std::clamp(hi, 0.0, 1.0));
  return ((d.array() - lo) / (hi - lo)).matrix();
}

ComplementarityData complementarity_matrix(const LinearRig& rig, const TetMesh& mesh,
                                           const FullSpaceOperators& ops, const VectorXd& leak_per_vertex) {
  const Index n = mesh.num_vertices();
  if (leak_per_vertex.size() != n) throw Error("momentum-leak field has the wrong size");
  if (ops.mass.size() != 3 * n) throw Error("operators do not match the mesh");
  ComplementarityData out;
  out.J = rig_jacobian(rig, mesh);
  out.leak = leak_per_vertex.replicate(3, 1);
  out.cJ = out.leak.cwiseProduct(ops.mass).asDiagonal() * out.J;
  return out;
}

VectorXd uniform_rig_parameters(const LinearRig& rig, const Eigen::Matrix<double, 3, 4>& displacement) {
  VectorXd p(rig.p_dim());
  for (Index b = 0; b < rig.num_bones(); ++b)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) p(12 * b + 4 * i + j) = displacement(i, j);
  return p;
}

}  // namespace cdsk
