#pragma once

#include "cdsk/clusters.hpp"
#include "cdsk/solver.hpp"
#include "cdsk/subspace.hpp"

#include <cstdint>

namespace cdsk {

struct PrecomputeSettings {
  Index modes = 1;
  Index clusters = 1;
  std::uint64_t seed = 0;
  Energy hessian = Energy::arap;  // energy whose rest Hessian defines the modes
};

/// Everything the solver needs, rebuilt deterministically from the inputs plus
/// (W, eigenvalues, labels).
struct Model {
  TetMesh mesh;
  MaterialField mat;
  LinearRig rig;
  VectorXd leak;  // per vertex
  PrecomputeSettings settings;

  FullSpaceOperators ops;
  ComplementarityData comp;
  Index constraint_rank = 0;
  SkinningSubspace subspace;
  Clustering clustering;
};

struct PrecomputeReport {
  Index constraint_rows = 0;   // before redundant-row removal
  Index constraint_rank = 0;
  double constraint_residual = 0;  // max |J_w W|
  double complementarity_residual = 0;
  KMeansReport kmeans;
  Index clusters_before_split = 0;
};

/// Subspace construction: operators, leak field, constraint, constrained
/// eigenmodes, cluster features, k-means++ and component splitting.
Model precompute_model(TetMesh mesh, MaterialField mat, LinearRig rig, const std::optional<VectorXd>& user_leak,
                       const PrecomputeSettings& settings, PrecomputeReport* report = nullptr);

/// Rebuilds a model from stored results without re-solving.
Model assemble_model(TetMesh mesh, MaterialField mat, LinearRig rig, VectorXd leak, const PrecomputeSettings& settings,
                     MatrixXd W, VectorXd eigenvalues, const VectorXi& labels);

ReducedOperators reduce_model(const Model& model, const SolverConfig& config);

/// max over (i, j) of |(cJ^T B)_ij| / (|cJ_i| |B_j|).
double complementarity_residual(const MatrixXd& cJ, const MatrixXd& B);

}  // namespace cdsk
