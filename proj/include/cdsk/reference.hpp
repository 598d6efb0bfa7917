#pragma once

#include "cdsk/solver.hpp"

namespace cdsk {

// Full-space complementary dynamics on small meshes, per tet and without any
// subspace. Used to validate the reduced solver.

struct FullSpaceProblem {
  TetMesh mesh;
  FullSpaceOperators ops;
  MaterialField mat;
  MatrixXd J, cJ;
  VectorXd x0, vol;
  MatrixXd N;  // orthonormal basis of null(cJ^T)
  Eigen::LLT<MatrixXd> factor;  // N^T (L + M / h^2) N
  double h = 0;
};

/// Throws for 3n > 3000.
FullSpaceProblem make_full_space_problem(const TetMesh& mesh, const FullSpaceOperators& ops, const MaterialField& mat,
                                         const MatrixXd& J, const MatrixXd& cJ, double h);

struct FullSpaceState {
  VectorXd u, u_prev, p, p_prev, f_ext;  // u is the complementary displacement

  static FullSpaceState rest(const FullSpaceProblem& prob);
};

struct FullSpaceContext {
  VectorXd p, p_hist, u_hist, f_ext;
};

FullSpaceContext make_full_space_context(const FullSpaceState& state, const VectorXd& p_new);

double full_space_energy(const VectorXd& u, const FullSpaceContext& ctx, const FullSpaceProblem& prob, Energy energy);
VectorXd full_space_gradient(const VectorXd& u, const FullSpaceContext& ctx, const FullSpaceProblem& prob,
                             Energy energy);

/// Local-global from u = 0 with the global step restricted to null(cJ^T).
/// Same stopping rule and line search as simulation_step, with u in place of z.
StepReport full_space_reference_step(FullSpaceState& state, const VectorXd& p_new, const FullSpaceProblem& prob,
                                     const SolverConfig& config);

}  // namespace cdsk
