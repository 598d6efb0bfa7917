#pragma once

#include "cdsk/mesh.hpp"

namespace cdsk {

enum class Energy { arap, corot };

Energy parse_energy(const std::string& name);
const char* to_string(Energy e);

/// Per-tet Lamé parameters (Pa) and density (kg/m^3).
struct MaterialField {
  VectorXd mu;
  VectorXd lambda;
  VectorXd density;

  static MaterialField homogeneous(Index num_tets, double mu, double lambda, double density);
  /// Throws on size mismatch or mu <= 0, lambda < 0, density <= 0.
  void validate(Index num_tets) const;
};

/// Full-space operators. Diagonal matrices are stored as their diagonals.
struct FullSpaceOperators {
  VectorXd mass;       // 3n, diagonal of M
  VectorXd mass_w;     // n, diagonal of M_w
  SparseMatrix K;      // 9t x 3n deformation gradient operator
  VectorXd vol9;       // 9t, diagonal of Vol
  VectorXd mu9;        // 9t, diagonal of U
  SparseMatrix L;      // 3n x 3n, K^T U Vol K
  SparseMatrix H;      // 3n x 3n rest-state elastic Hessian
  Energy hessian_energy = Energy::arap;
};

/// K such that reshaping K x per tet gives F = Ds Dm^-1 (row-major 3x3 blocks).
SparseMatrix deformation_gradient_operator(const TetMesh& mesh);

/// Quarter-volume lumped weight-space masses (density * vol / 4 per incident tet).
VectorXd lumped_vertex_masses(const TetMesh& mesh, const VectorXd& density);

/// Rest Hessian. ARAP: 2L (Hessian of sum vol mu tr(F^T F)). Corot: exact
/// linearization at F = I, i.e. per tet vol (mu (I + T) + lambda vec(I) vec(I)^T)
/// in F-space, with T the transpose permutation.
SparseMatrix rest_hessian(const TetMesh& mesh, const MaterialField& mat, Energy energy);

FullSpaceOperators assemble_operators(const TetMesh& mesh, const MaterialField& mat,
                                      Energy hessian_energy = Energy::arap);

/// Scalar stiffness (cotangent) Laplacian sum_t vol_t g_t g_t^T, n x n.
SparseMatrix cotangent_laplacian(const TetMesh& mesh);

}  // namespace cdsk
