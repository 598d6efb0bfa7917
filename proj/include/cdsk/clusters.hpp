#pragma once

#include "cdsk/mesh.hpp"

#include <cstdint>

namespace cdsk {

/// Per-tet features: tet-averaged weights, mode i scaled by 1 / (lambda_i^2 + delta)
/// with delta = (1e-6 max(max lambda, 1e-30))^2.
MatrixXd cluster_features(const MatrixXd& W, const VectorXd& eigenvalues, const TetMesh& mesh);

struct KMeansReport {
  int iterations = 0;
  bool converged = false;
  double objective = 0;
};

/// k-means++ seeding followed by Lloyd iterations (cap 100, stop when no label
/// changes). Empty clusters are reseeded at the point farthest from its
/// centroid. Deterministic for a fixed seed.
VectorXi kmeans_pp(const MatrixXd& features, Index r, std::uint64_t seed, KMeansReport* report = nullptr);

/// Sum of squared distances of each row to its cluster centroid.
double kmeans_objective(const MatrixXd& features, const VectorXi& labels);

/// Splits every cluster into its face-connected components and relabels
/// compactly in order of first appearance.
VectorXi split_cluster_components(const VectorXi& labels, const TetMesh& mesh);

struct Clustering {
  VectorXi labels;     // per tet, in [0, num_clusters)
  Index num_clusters = 0;
  SparseMatrix G;      // r x t volume-weighted averaging
  SparseMatrix G9;     // 9r x 9t, G applied to each of the 9 deformation-gradient entries
};

Clustering grouping_matrices(const VectorXi& labels, const VectorXd& volumes);

/// Features, k-means++, component splitting and grouping in one call.
Clustering build_clustering(const MatrixXd& W, const VectorXd& eigenvalues, const TetMesh& mesh, Index r,
                            std::uint64_t seed);

}  // namespace cdsk
