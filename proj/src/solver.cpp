#include "cdsk/solver.hpp"

#include "cdsk/polar.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>

namespace cdsk {

namespace {

using RowMat3 = Eigen::Matrix<double, 3, 3, Eigen::RowMajor>;

Matrix3d cluster_matrix(const VectorXd& f, Index c) { return Eigen::Map<const RowMat3>(f.data() + 9 * c); }

MatrixXd symmetrized(const MatrixXd& A) { return 0.5 * (A + A.transpose()); }

}  // namespace

void SolverConfig::validate() const {
  if (!(h > 0) || !std::isfinite(h)) throw Error("solver: timestep h must be positive");
  if (max_iters < 1) throw Error("solver: max_iters must be at least 1");
  if (!(tol >= 0)) throw Error("solver: tol must be nonnegative");
  if (!(ls_beta > 0 && ls_beta < 1)) throw Error("solver: ls_beta must lie in (0, 1)");
  if (!(ls_c > 0 && ls_c < 1)) throw Error("solver: ls_c must lie in (0, 1)");
  if (ls_max < 0) throw Error("solver: ls_max must be nonnegative");
}

SystemSolver::SystemSolver(const MatrixXd& A, bool pseudo_inverse_fallback) {
  if (pseudo_inverse_fallback) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(A);
    if (eig.info() != Eigen::Success) throw Error("reduced system: eigen decomposition failed");
    const VectorXd& ev = eig.eigenvalues();
    const double top = ev.size() ? ev.cwiseAbs().maxCoeff() : 0.0;
    const double cut = 1e-11 * top;
    if (ev.size() && ev.minCoeff() > cut) {
      llt_.compute(A);
      rank_ = A.rows();
      return;
    }
    if (ev.size() && ev.minCoeff() < -cut) throw Error("reduced system matrix is indefinite");
    VectorXd inv = VectorXd::Zero(ev.size());
    for (Index i = 0; i < ev.size(); ++i)
      if (ev(i) > cut) {
        inv(i) = 1.0 / ev(i);
        ++rank_;
      }
    pinv_ = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
    use_pinv_ = true;
    return;
  }
  llt_.compute(A);
  if (llt_.info() != Eigen::Success) throw Error("reduced system matrix is not positive definite");
  rank_ = A.rows();
}

VectorXd SystemSolver::solve(const VectorXd& rhs) const { return use_pinv_ ? VectorXd(pinv_ * rhs) : VectorXd(llt_.solve(rhs)); }

void ReducedOperators::rebuild_system(double new_h, bool pseudo_inverse_fallback) {
  if (!(new_h > 0)) throw Error("reduced system: timestep must be positive");
  h = new_h;
  A_sys = symmetrized(BtLB + BtMB / (h * h));
  system = SystemSolver(A_sys, pseudo_inverse_fallback);
}

ReducedOperators precompute_reduced_operators(const TetMesh& mesh, const FullSpaceOperators& ops,
                                              const MaterialField& mat, const MatrixXd& J, const MatrixXd& cJ,
                                              const MatrixXd& B, const Clustering& clustering,
                                              const SolverConfig& config) {
  config.validate();
  const Index n = mesh.num_vertices(), t = mesh.num_tets();
  mat.validate(t);
  if (ops.mass.size() != 3 * n) throw Error("precompute: operators do not match the mesh");
  if (B.rows() != 3 * n || J.rows() != 3 * n || cJ.rows() != 3 * n || cJ.cols() != J.cols())
    throw Error("precompute: B, J and cJ must have 3n rows and matching rig columns");
  if (clustering.labels.size() != t) throw Error("precompute: clustering does not match the mesh");

  ReducedOperators red;
  const VectorXd x0 = flatten(mesh.vertices);
  const SparseMatrix G9K = clustering.G9 * ops.K;
  red.G9KB = G9K * B;
  red.G9KJ = G9K * J;
  red.f0 = G9K * x0;

  const MatrixXd LB = ops.L * B;
  const MatrixXd LJ = ops.L * J;
  const VectorXd Lx0 = ops.L * x0;
  red.BtLB = symmetrized(B.transpose() * LB);
  red.BtLJ = B.transpose() * LJ;
  red.BtLx0 = B.transpose() * Lx0;
  red.BtMB = symmetrized(B.transpose() * ops.mass.asDiagonal() * B);
  red.BtMJ = B.transpose() * ops.mass.asDiagonal() * J;
  red.BtB = symmetrized(B.transpose() * B);
  red.JtLJ = symmetrized(J.transpose() * LJ);
  red.JtMJ = symmetrized(J.transpose() * ops.mass.asDiagonal() * J);
  red.JtLx0 = J.transpose() * Lx0;
  red.x0Lx0 = x0.dot(Lx0);
  red.cJtB = cJ.transpose() * B;
  red.cJ_norms = cJ.colwise().norm().transpose();

  const VectorXd vol = tet_volumes(mesh);
  red.cluster_mass = VectorXd::Zero(clustering.num_clusters);
  for (Index j = 0; j < t; ++j) red.cluster_mass(clustering.labels(j)) += vol(j);
  red.cluster_mu = clustering.G * mat.mu;
  red.cluster_lambda = clustering.G * mat.lambda;
  red.bbox_diag = bbox_diagonal(mesh);

  red.rebuild_system(config.h, config.pseudo_inverse_fallback);
  return red;
}

SimState SimState::rest(const ReducedOperators& red) {
  SimState s;
  s.z = s.z_prev = s.f_ext = VectorXd::Zero(red.dim());
  s.p = s.p_prev = VectorXd::Zero(red.p_dim());
  return s;
}

StepContext make_step_context(const SimState& state, const VectorXd& p_new) {
  if (p_new.size() != state.p.size())
    throw Error("rig parameters sized " + std::to_string(p_new.size()) + ", expected " +
                std::to_string(state.p.size()));
  StepContext ctx;
  ctx.p = p_new;
  ctx.p_hist = 2 * state.p - state.p_prev;
  ctx.z_hist = 2 * state.z - state.z_prev;
  ctx.f_ext = state.f_ext;
  return ctx;
}

VectorXd cluster_deformation_gradients(const VectorXd& z, const VectorXd& p, const ReducedOperators& red) {
  return red.G9KB * z + red.G9KJ * p + red.f0;
}

VectorXd local_step(const VectorXd& z, const VectorXd& p, const ReducedOperators& red, Energy energy) {
  const VectorXd f = cluster_deformation_gradients(z, p, red);
  if (!f.allFinite()) throw Error("local step: non-finite deformation gradient");
  VectorXd g(f.size());
  for (Index c = 0; c < red.num_clusters(); ++c) {
    const Matrix3d F = cluster_matrix(f, c);
    const Matrix3d R = polar_rotation(F);
    const double m = red.cluster_mass(c);
    RowMat3 G = -m * red.cluster_mu(c) * R;
    if (energy == Energy::corot) G += 0.5 * m * red.cluster_lambda(c) * ((R.transpose() * F).trace() - 3.0) * R;
    Eigen::Map<RowMat3>(g.data() + 9 * c) = G;
  }
  return g;
}

double reduced_elastic_energy(const VectorXd& z, const VectorXd& p, const ReducedOperators& red, Energy energy) {
  const double quad = z.dot(red.BtLB * z) + 2 * z.dot(red.BtLJ * p + red.BtLx0) + p.dot(red.JtLJ * p) +
                      2 * p.dot(red.JtLx0) + red.x0Lx0;
  const VectorXd f = cluster_deformation_gradients(z, p, red);
  double rot = 0;
  for (Index c = 0; c < red.num_clusters(); ++c) {
    const Matrix3d F = cluster_matrix(f, c);
    const double s = (polar_rotation(F).transpose() * F).trace();
    double e = red.cluster_mu(c) * (3.0 - 2.0 * s);
    if (energy == Energy::corot) e += 0.5 * red.cluster_lambda(c) * (s - 3.0) * (s - 3.0);
    rot += red.cluster_mass(c) * e;
  }
  return 0.5 * (quad + rot);
}

double reduced_kinetic_energy(const VectorXd& z, const StepContext& ctx, const ReducedOperators& red) {
  const VectorXd dz = z - ctx.z_hist;
  const VectorXd dp = ctx.p - ctx.p_hist;
  return (dz.dot(red.BtMB * dz) + 2 * dz.dot(red.BtMJ * dp) + dp.dot(red.JtMJ * dp)) / (2 * red.h * red.h);
}

double reduced_energy(const VectorXd& z, const StepContext& ctx, const ReducedOperators& red, Energy energy) {
  return reduced_elastic_energy(z, ctx.p, red, energy) + reduced_kinetic_energy(z, ctx, red) - z.dot(ctx.f_ext);
}

VectorXd assemble_force(const StepContext& ctx, const VectorXd& dPhi_df, const ReducedOperators& red) {
  return red.BtLJ * ctx.p + red.BtLx0 + red.G9KB.transpose() * dPhi_df +
         (red.BtMJ * (ctx.p - ctx.p_hist) - red.BtMB * ctx.z_hist) / (red.h * red.h) - ctx.f_ext;
}

VectorXd reduced_gradient(const VectorXd& z, const StepContext& ctx, const ReducedOperators& red, Energy energy) {
  return assemble_force(ctx, local_step(z, ctx.p, red, energy), red) + red.A_sys * z;
}

VectorXd global_step(const VectorXd& z, const StepContext& ctx, const VectorXd& dPhi_df, const ReducedOperators& red,
                     const SolverConfig& config, GlobalStepReport* report) {
  GlobalStepReport rep;
  const VectorXd grad = assemble_force(ctx, dPhi_df, red) + red.A_sys * z;
  const VectorXd dz = -red.system.solve(grad);
  VectorXd out = z + dz;
  if (config.energy == Energy::corot && !dz.isZero(0.0)) {
    const double e0 = reduced_energy(z, ctx, red, config.energy);
    const double slope = grad.dot(dz);
    // Roundoff floor: near a minimizer the decrease drops below energy precision.
    const double slack = 8 * std::numeric_limits<double>::epsilon() * std::abs(e0);
    double alpha = 1;
    bool accepted = false;
    for (int k = 0; k <= config.ls_max; ++k) {
      out = z + alpha * dz;
      if (reduced_energy(out, ctx, red, config.energy) <= e0 + config.ls_c * alpha * slope + slack) {
        accepted = true;
        break;
      }
      alpha *= config.ls_beta;
      rep.backtracks = k + 1;
    }
    if (!accepted || slope > 0) {
      out = z;
      rep.alpha = 0;
      rep.line_search_failed = true;
    } else {
      rep.alpha = alpha;
    }
  }
  if (report) *report = rep;
  return out;
}

StepReport simulation_step(SimState& state, const VectorXd& p_new, const ReducedOperators& red,
                           const SolverConfig& config) {
  const StepContext ctx = make_step_context(state, p_new);
  StepReport rep;
  VectorXd z = config.warm_start_previous ? state.z : VectorXd::Zero(red.dim());
  rep.energy.push_back(reduced_energy(z, ctx, red, config.energy));
  const double threshold = config.tol * red.bbox_diag;
  for (int it = 0; it < config.max_iters; ++it) {
    const VectorXd g = local_step(z, ctx.p, red, config.energy);
    GlobalStepReport gs;
    const VectorXd z_next = global_step(z, ctx, g, red, config, &gs);
    if (gs.line_search_failed) ++rep.line_search_failures;
    rep.energy.push_back(reduced_energy(z_next, ctx, red, config.energy));
    rep.iterations = it + 1;
    const double change = (z_next - z).cwiseAbs().maxCoeff();
    z = z_next;
    if (change < threshold || gs.line_search_failed) {
      rep.converged = !gs.line_search_failed;
      break;
    }
  }
  state.z_prev = state.z;
  state.z = z;
  state.p_prev = state.p;
  state.p = ctx.p;
  return rep;
}

VectorXd project_full(const VectorXd& z, const VectorXd& p, const VectorXd& x0, const MatrixXd& J, const MatrixXd& B) {
  if (B.cols() != z.size() || J.cols() != p.size() || B.rows() != x0.size() || J.rows() != x0.size())
    throw Error("project_full: inconsistent sizes");
  return x0 + J * p + B * z;
}

double runtime_complementarity_residual(const VectorXd& z, const ReducedOperators& red) {
  const double bz = std::sqrt(std::max(z.dot(red.BtB * z), 0.0));
  if (bz == 0 || red.cJtB.rows() == 0) return 0;
  const VectorXd r = red.cJtB * z;
  double worst = 0;
  for (Index i = 0; i < r.size(); ++i)
    if (red.cJ_norms(i) > 0) worst = std::max(worst, std::abs(r(i)) / (red.cJ_norms(i) * bz));
  return worst;
}

}  // namespace cdsk
