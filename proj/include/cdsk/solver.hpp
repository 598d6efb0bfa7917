#pragma once

#include "cdsk/clusters.hpp"
#include "cdsk/operators.hpp"

#include <Eigen/Cholesky>

namespace cdsk {

struct SolverConfig {
  double h = 1.0 / 60.0;
  Energy energy = Energy::arap;
  int max_iters = 30;
  double tol = 1e-6;  // on max |dz|, relative to the bbox diagonal
  double ls_beta = 0.5;
  double ls_c = 1e-4;
  int ls_max = 20;
  bool warm_start_previous = false;
  // Rank-deficient B (e.g. m = n) makes A_sys singular; solve with its
  // pseudo-inverse instead of failing.
  bool pseudo_inverse_fallback = false;

  void validate() const;
};

/// Factorization of the reduced system matrix.
class SystemSolver {
 public:
  SystemSolver() = default;
  SystemSolver(const MatrixXd& A, bool pseudo_inverse_fallback);

  VectorXd solve(const VectorXd& rhs) const;
  bool uses_pseudo_inverse() const { return use_pinv_; }
  Index rank() const { return rank_; }
  const Eigen::LLT<MatrixXd>& llt() const { return llt_; }

 private:
  Eigen::LLT<MatrixXd> llt_;
  MatrixXd pinv_;
  bool use_pinv_ = false;
  Index rank_ = 0;
};

/// Products cached once per subspace/clustering. Everything except A_sys and
/// the factor is independent of h.
struct ReducedOperators {
  MatrixXd G9KB;   // 9r x 12m
  MatrixXd G9KJ;   // 9r x p
  VectorXd f0;     // 9r, G9 K x0
  MatrixXd BtLB, BtLJ, BtMB, BtMJ, BtB;
  VectorXd BtLx0;
  MatrixXd JtLJ, JtMJ;
  VectorXd JtLx0;
  double x0Lx0 = 0;
  MatrixXd cJtB;        // p x 12m
  VectorXd cJ_norms;    // p, column norms of cJ
  VectorXd cluster_mass, cluster_mu, cluster_lambda;
  double bbox_diag = 1;

  double h = 0;
  MatrixXd A_sys;
  SystemSolver system;

  Index num_clusters() const { return cluster_mass.size(); }
  Index dim() const { return BtLB.rows(); }
  Index p_dim() const { return BtLJ.cols(); }

  /// Rebuilds A_sys = BtLB + BtMB / h^2 and its factor.
  void rebuild_system(double h, bool pseudo_inverse_fallback = false);
};

ReducedOperators precompute_reduced_operators(const TetMesh& mesh, const FullSpaceOperators& ops,
                                              const MaterialField& mat, const MatrixXd& J, const MatrixXd& cJ,
                                              const MatrixXd& B, const Clustering& clustering,
                                              const SolverConfig& config);

struct SimState {
  VectorXd z, z_prev, p, p_prev, f_ext;

  static SimState rest(const ReducedOperators& red);
};

/// Quantities fixed for the duration of one step.
struct StepContext {
  VectorXd p, p_hist, z_hist, f_ext;
};

StepContext make_step_context(const SimState& state, const VectorXd& p_new);

/// f~ = G9KB z + G9KJ p + f0.
VectorXd cluster_deformation_gradients(const VectorXd& z, const VectorXd& p, const ReducedOperators& red);

/// Per-cluster gradient of the rotation-dependent elastic term w.r.t. F~
/// (9r, row-major blocks): -m mu R, plus m (lambda / 2) tr(R^T F - I) R for corot.
VectorXd local_step(const VectorXd& z, const VectorXd& p, const ReducedOperators& red, Energy energy);

/// 1/2 x^T L x + 1/2 sum_c m_c (mu_c (3 - 2 tr(F^T R)) [+ lambda_c / 2 tr^2(R^T F - I)])
/// with x = x0 + J p + B z and R = polar(F).
double reduced_elastic_energy(const VectorXd& z, const VectorXd& p, const ReducedOperators& red, Energy energy);

/// 1/(2h^2) (x - y)^T M (x - y) with y the Backward-Euler history point.
double reduced_kinetic_energy(const VectorXd& z, const StepContext& ctx, const ReducedOperators& red);

double reduced_energy(const VectorXd& z, const StepContext& ctx, const ReducedOperators& red, Energy energy);

/// Gradient minus A_sys z, i.e. Alg. 2's f: BtLJ p + BtLx0 + (G9KB)^T dPhi_df
/// + (BtMJ (p - p_hist) - BtMB z_hist) / h^2 - f_ext.
VectorXd assemble_force(const StepContext& ctx, const VectorXd& dPhi_df, const ReducedOperators& red);

/// Full gradient of reduced_energy at z.
VectorXd reduced_gradient(const VectorXd& z, const StepContext& ctx, const ReducedOperators& red, Energy energy);

struct GlobalStepReport {
  double alpha = 1;
  int backtracks = 0;
  bool line_search_failed = false;
};

/// Solves A dz = -f - A z. ARAP takes the full step; corot backtracks on
/// reduced_energy (Armijo). A failed line search returns z unchanged.
VectorXd global_step(const VectorXd& z, const StepContext& ctx, const VectorXd& dPhi_df, const ReducedOperators& red,
                     const SolverConfig& config, GlobalStepReport* report = nullptr);

struct StepReport {
  int iterations = 0;
  bool converged = false;
  int line_search_failures = 0;
  std::vector<double> energy;  // at the start, then after every global step
};

/// One Backward-Euler step to rig parameters p_new; rolls the histories.
StepReport simulation_step(SimState& state, const VectorXd& p_new, const ReducedOperators& red,
                           const SolverConfig& config);

/// x0 + J p + B z, flattened axis-major.
VectorXd project_full(const VectorXd& z, const VectorXd& p, const VectorXd& x0, const MatrixXd& J, const MatrixXd& B);

/// max_i |(cJ^T B z)_i| / (|cJ_i| |B z|); zero for B z = 0.
double runtime_complementarity_residual(const VectorXd& z, const ReducedOperators& red);

}  // namespace cdsk
