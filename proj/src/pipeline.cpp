#include "cdsk/pipeline.hpp"

namespace cdsk {

namespace {

void build_operators(Model& model) {
  model.mat.validate(model.mesh.num_tets());
  model.ops = assemble_operators(model.mesh, model.mat, model.settings.hessian);
  if (model.leak.size() != model.mesh.num_vertices()) throw Error("momentum-leak field has the wrong size");
  model.comp = complementarity_matrix(model.rig, model.mesh, model.ops, model.leak);
}

}  // namespace

double complementarity_residual(const MatrixXd& cJ, const MatrixXd& B) {
  if (cJ.cols() == 0 || B.cols() == 0) return 0;
  const MatrixXd P = cJ.transpose() * B;
  const VectorXd cn = cJ.colwise().norm();
  const VectorXd bn = B.colwise().norm();
  double worst = 0;
  for (Index j = 0; j < P.cols(); ++j)
    for (Index i = 0; i < P.rows(); ++i)
      if (cn(i) > 0 && bn(j) > 0) worst = std::max(worst, std::abs(P(i, j)) / (cn(i) * bn(j)));
  return worst;
}

Model precompute_model(TetMesh mesh, MaterialField mat, LinearRig rig, const std::optional<VectorXd>& user_leak,
                       const PrecomputeSettings& settings, PrecomputeReport* report) {
  Model model;
  model.mesh = std::move(mesh);
  model.mat = std::move(mat);
  model.rig = std::move(rig);
  model.settings = settings;
  model.leak = momentum_leak_field(model.mesh, user_leak);
  build_operators(model);

  const WeightSpaceJacobians A = weight_space_skinning_jacobians(model.mesh);
  const WeightSpaceConstraint con = weight_space_constraint(model.comp.cJ, A);
  model.constraint_rank = con.Jw.rows();
  const SparseMatrix Hw = weight_space_hessian(model.ops.H);
  model.subspace = solve_constrained_gevp(Hw, model.ops.mass_w, con.Jw, settings.modes);
  attach_lbs(model.subspace, model.mesh);

  const MatrixXd features = cluster_features(model.subspace.W, model.subspace.eigenvalues, model.mesh);
  KMeansReport km;
  const VectorXi raw = kmeans_pp(features, settings.clusters, settings.seed, &km);
  const VectorXi labels = split_cluster_components(raw, model.mesh);
  model.clustering = grouping_matrices(labels, tet_volumes(model.mesh));

  if (report) {
    report->constraint_rows = con.stacked_rows;
    report->constraint_rank = con.Jw.rows();
    report->constraint_residual = con.Jw.rows() ? (con.Jw * model.subspace.W).cwiseAbs().maxCoeff() : 0.0;
    report->complementarity_residual = complementarity_residual(model.comp.cJ, model.subspace.B);
    report->kmeans = km;
    report->clusters_before_split = settings.clusters;
  }
  return model;
}

Model assemble_model(TetMesh mesh, MaterialField mat, LinearRig rig, VectorXd leak, const PrecomputeSettings& settings,
                     MatrixXd W, VectorXd eigenvalues, const VectorXi& labels) {
  Model model;
  model.mesh = std::move(mesh);
  model.mat = std::move(mat);
  model.rig = std::move(rig);
  model.leak = std::move(leak);
  model.settings = settings;
  build_operators(model);
  model.constraint_rank =
      weight_space_constraint(model.comp.cJ, weight_space_skinning_jacobians(model.mesh)).Jw.rows();
  if (W.rows() != model.mesh.num_vertices() || W.cols() != eigenvalues.size())
    throw Error("stored weights do not match the mesh");
  model.subspace.W = std::move(W);
  model.subspace.eigenvalues = std::move(eigenvalues);
  attach_lbs(model.subspace, model.mesh);
  model.clustering = grouping_matrices(labels, tet_volumes(model.mesh));
  return model;
}

ReducedOperators reduce_model(const Model& model, const SolverConfig& config) {
  return precompute_reduced_operators(model.mesh, model.ops, model.mat, model.comp.J, model.comp.cJ, model.subspace.B,
                                      model.clustering, config);
}

}  // namespace cdsk
