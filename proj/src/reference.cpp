#include "cdsk/reference.hpp"

#include "cdsk/polar.hpp"

#include <Eigen/QR>

#include <limits>

namespace cdsk {

namespace {

using RowMat3 = Eigen::Matrix<double, 3, 3, Eigen::RowMajor>;

VectorXd positions(const VectorXd& u, const VectorXd& p, const FullSpaceProblem& prob) {
  return prob.x0 + prob.J * p + u;
}

}  // namespace

FullSpaceProblem make_full_space_problem(const TetMesh& mesh, const FullSpaceOperators& ops, const MaterialField& mat,
                                         const MatrixXd& J, const MatrixXd& cJ, double h) {
  const Index n3 = 3 * mesh.num_vertices();
  if (n3 > 3000) throw Error("full-space reference is limited to 3n <= 3000, got " + std::to_string(n3));
  if (!(h > 0)) throw Error("full-space reference: timestep must be positive");
  mat.validate(mesh.num_tets());
  FullSpaceProblem prob{mesh, ops, mat, J, cJ, flatten(mesh.vertices), tet_volumes(mesh), {}, {}, h};

  if (cJ.cols() == 0) {
    prob.N = MatrixXd::Identity(n3, n3);
  } else {
    Eigen::ColPivHouseholderQR<MatrixXd> qr(cJ);
    qr.setThreshold(1e-10);
    const MatrixXd Q = qr.householderQ() * MatrixXd::Identity(n3, n3);
    prob.N = Q.rightCols(n3 - qr.rank());
  }
  const MatrixXd A = MatrixXd(ops.L) + MatrixXd(ops.mass.asDiagonal()) / (h * h);
  MatrixXd R = prob.N.transpose() * A * prob.N;
  prob.factor.compute(0.5 * (R + R.transpose()));
  if (prob.factor.info() != Eigen::Success) throw Error("full-space reference: constrained system is singular");
  return prob;
}

FullSpaceState FullSpaceState::rest(const FullSpaceProblem& prob) {
  FullSpaceState s;
  s.u = s.u_prev = s.f_ext = VectorXd::Zero(prob.x0.size());
  s.p = s.p_prev = VectorXd::Zero(prob.J.cols());
  return s;
}

FullSpaceContext make_full_space_context(const FullSpaceState& state, const VectorXd& p_new) {
  return {p_new, 2 * state.p - state.p_prev, 2 * state.u - state.u_prev, state.f_ext};
}

double full_space_energy(const VectorXd& u, const FullSpaceContext& ctx, const FullSpaceProblem& prob, Energy energy) {
  const VectorXd x = positions(u, ctx.p, prob);
  const VectorXd F = prob.ops.K * x;
  double e = x.dot(prob.ops.L * x);
  for (Index j = 0; j < prob.mesh.num_tets(); ++j) {
    const Matrix3d Fj = Eigen::Map<const RowMat3>(F.data() + 9 * j);
    const double s = (polar_rotation(Fj).transpose() * Fj).trace();
    double psi = prob.mat.mu(j) * (3.0 - 2.0 * s);
    if (energy == Energy::corot) psi += 0.5 * prob.mat.lambda(j) * (s - 3.0) * (s - 3.0);
    e += prob.vol(j) * psi;
  }
  const VectorXd dx = prob.J * (ctx.p - ctx.p_hist) + (u - ctx.u_hist);
  return 0.5 * e + dx.dot(prob.ops.mass.cwiseProduct(dx)) / (2 * prob.h * prob.h) - u.dot(ctx.f_ext);
}

VectorXd full_space_gradient(const VectorXd& u, const FullSpaceContext& ctx, const FullSpaceProblem& prob,
                             Energy energy) {
  const VectorXd x = positions(u, ctx.p, prob);
  const VectorXd F = prob.ops.K * x;
  VectorXd g(F.size());
  for (Index j = 0; j < prob.mesh.num_tets(); ++j) {
    const Matrix3d Fj = Eigen::Map<const RowMat3>(F.data() + 9 * j);
    const Matrix3d R = polar_rotation(Fj);
    RowMat3 G = -prob.vol(j) * prob.mat.mu(j) * R;
    if (energy == Energy::corot)
      G += 0.5 * prob.vol(j) * prob.mat.lambda(j) * ((R.transpose() * Fj).trace() - 3.0) * R;
    Eigen::Map<RowMat3>(g.data() + 9 * j) = G;
  }
  const VectorXd dx = prob.J * (ctx.p - ctx.p_hist) + (u - ctx.u_hist);
  return prob.ops.L * x + prob.ops.K.transpose() * g + prob.ops.mass.cwiseProduct(dx) / (prob.h * prob.h) - ctx.f_ext;
}

StepReport full_space_reference_step(FullSpaceState& state, const VectorXd& p_new, const FullSpaceProblem& prob,
                                     const SolverConfig& config) {
  config.validate();
  const FullSpaceContext ctx = make_full_space_context(state, p_new);
  StepReport rep;
  VectorXd u = config.warm_start_previous ? state.u : VectorXd::Zero(prob.x0.size());
  rep.energy.push_back(full_space_energy(u, ctx, prob, config.energy));
  const double threshold = config.tol * bbox_diagonal(prob.mesh);
  for (int it = 0; it < config.max_iters; ++it) {
    // The gradient at u with R frozen at polar(F(u)) is the exact energy
    // gradient, so one constrained solve is the frozen-rotation minimizer.
    const VectorXd grad = full_space_gradient(u, ctx, prob, config.energy);
    const VectorXd du = -prob.N * prob.factor.solve(prob.N.transpose() * grad);
    VectorXd u_next = u + du;
    bool failed = false;
    if (config.energy == Energy::corot && !du.isZero(0.0)) {
      const double e0 = rep.energy.back();
      const double slope = grad.dot(du);
      const double slack = 8 * std::numeric_limits<double>::epsilon() * std::abs(e0);
      double alpha = 1;
      bool accepted = false;
      for (int k = 0; k <= config.ls_max; ++k) {
        u_next = u + alpha * du;
        if (full_space_energy(u_next, ctx, prob, config.energy) <= e0 + config.ls_c * alpha * slope + slack) {
          accepted = true;
          break;
        }
        alpha *= config.ls_beta;
      }
      if (!accepted || slope > 0) {
        u_next = u;
        failed = true;
        ++rep.line_search_failures;
      }
    }
    rep.energy.push_back(full_space_energy(u_next, ctx, prob, config.energy));
    rep.iterations = it + 1;
    const double change = (u_next - u).cwiseAbs().maxCoeff();
    u = u_next;
    if (change < threshold || failed) {
      rep.converged = !failed;
      break;
    }
  }
  state.u_prev = state.u;
  state.u = u;
  state.p_prev = state.p;
  state.p = ctx.p;
  return rep;
}

}  // namespace cdsk
