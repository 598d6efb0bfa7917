#include "cdsk/clusters.hpp"

#include <limits>
#include <numeric>
#include <random>

namespace cdsk {

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Index nearest_center(const MatrixXd& X, Index row, const MatrixXd& centers, double* dist2) {
  Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Index c = 0; c < centers.rows(); ++c) {
    const double d = (X.row(row) - centers.row(c)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist2) *dist2 = best_d;
  return best;
}

MatrixXd seed_centers(const MatrixXd& X, Index r, std::mt19937_64& rng) {
  const Index t = X.rows();
  MatrixXd centers(r, X.cols());
  std::vector<bool> chosen(static_cast<std::size_t>(t), false);
  Index first = static_cast<Index>(uniform01(rng) * static_cast<double>(t));
  first = std::min(first, t - 1);
  centers.row(0) = X.row(first);
  chosen[static_cast<std::size_t>(first)] = true;
  VectorXd d2 = (X.rowwise() - X.row(first)).rowwise().squaredNorm();
  for (Index c = 1; c < r; ++c) {
    const double total = d2.sum();
    Index pick = -1;
    if (total > 0) {
      const double target = uniform01(rng) * total;
      double acc = 0;
      for (Index i = 0; i < t; ++i) {
        acc += d2(i);
        if (d2(i) > 0 && acc >= target) {
          pick = i;
          break;
        }
      }
      if (pick < 0)
        for (Index i = t - 1; i >= 0; --i)
          if (d2(i) > 0) {
            pick = i;
            break;
          }
    }
    if (pick < 0) {
      // All remaining points coincide with a center; take an unchosen one.
      std::vector<Index> rest;
      for (Index i = 0; i < t; ++i)
        if (!chosen[static_cast<std::size_t>(i)]) rest.push_back(i);
      pick = rest[std::min(rest.size() - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(rest.size())))];
    }
    chosen[static_cast<std::size_t>(pick)] = true;
    centers.row(c) = X.row(pick);
    d2 = d2.cwiseMin((X.rowwise() - X.row(pick)).rowwise().squaredNorm());
  }
  return centers;
}

}  // namespace

MatrixXd cluster_features(const MatrixXd& W, const VectorXd& eigenvalues, const TetMesh& mesh) {
  if (W.rows() != mesh.num_vertices() || W.cols() != eigenvalues.size())
    throw Error("cluster_features: weights and eigenvalues do not match the mesh");
  const double lmax = eigenvalues.size() ? std::max(eigenvalues.cwiseAbs().maxCoeff(), 1e-30) : 1e-30;
  const double delta = (1e-6 * lmax) * (1e-6 * lmax);
  const VectorXd scale = (eigenvalues.array().square() + delta).inverse().matrix();
  MatrixXd feat(mesh.num_tets(), W.cols());
  for (Index t = 0; t < mesh.num_tets(); ++t)
    feat.row(t) = 0.25 * (W.row(mesh.tets(t, 0)) + W.row(mesh.tets(t, 1)) + W.row(mesh.tets(t, 2)) +
                          W.row(mesh.tets(t, 3)));
  return feat * scale.asDiagonal();
}

double kmeans_objective(const MatrixXd& features, const VectorXi& labels) {
  const Index r = labels.size() ? labels.maxCoeff() + 1 : 0;
  MatrixXd sums = MatrixXd::Zero(r, features.cols());
  VectorXd counts = VectorXd::Zero(r);
  for (Index i = 0; i < features.rows(); ++i) {
    sums.row(labels(i)) += features.row(i);
    counts(labels(i)) += 1;
  }
  double obj = 0;
  for (Index i = 0; i < features.rows(); ++i)
    obj += (features.row(i) - sums.row(labels(i)) / counts(labels(i))).squaredNorm();
  return obj;
}

VectorXi kmeans_pp(const MatrixXd& features, Index r, std::uint64_t seed, KMeansReport* report) {
  const Index t = features.rows();
  if (r < 1 || r > t)
    throw Error("kmeans_pp: cluster count " + std::to_string(r) + " must lie in [1, " + std::to_string(t) + "]");
  std::mt19937_64 rng(seed);
  MatrixXd centers = seed_centers(features, r, rng);

  VectorXi labels = VectorXi::Constant(t, -1);
  KMeansReport rep;
  constexpr int kMaxIters = 100;
  for (int iter = 0; iter < kMaxIters; ++iter) {
    bool changed = false;
    VectorXd d2(t);
    for (Index i = 0; i < t; ++i) {
      const Index c = nearest_center(features, i, centers, &d2(i));
      if (labels(i) != c) {
        labels(i) = static_cast<int>(c);
        changed = true;
      }
    }
    // Repair empty clusters by moving the farthest point of a multi-member cluster.
    VectorXi counts = VectorXi::Zero(r);
    for (Index i = 0; i < t; ++i) counts(labels(i)) += 1;
    for (Index c = 0; c < r; ++c) {
      if (counts(c) > 0) continue;
      Index far = -1;
      double far_d = -1;
      for (Index i = 0; i < t; ++i)
        if (counts(labels(i)) > 1 && d2(i) > far_d) {
          far_d = d2(i);
          far = i;
        }
      counts(labels(far)) -= 1;
      labels(far) = static_cast<int>(c);
      counts(c) = 1;
      d2(far) = 0;
      changed = true;
    }
    rep.iterations = iter + 1;
    if (!changed) {
      rep.converged = true;
      break;
    }
    centers.setZero();
    for (Index i = 0; i < t; ++i) centers.row(labels(i)) += features.row(i);
    for (Index c = 0; c < r; ++c) centers.row(c) /= static_cast<double>(counts(c));
  }
  rep.objective = kmeans_objective(features, labels);
  if (report) *report = rep;
  return labels;
}

VectorXi split_cluster_components(const VectorXi& labels, const TetMesh& mesh) {
  const Index t = mesh.num_tets();
  if (labels.size() != t) throw Error("split_cluster_components: labels do not match the mesh");
  std::vector<Index> parent(static_cast<std::size_t>(t));
  std::iota(parent.begin(), parent.end(), Index(0));
  auto find = [&](Index x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  const Eigen::MatrixX4i nbr = tet_face_neighbors(mesh);
  for (Index a = 0; a < t; ++a)
    for (int k = 0; k < 4; ++k) {
      const Index b = nbr(a, k);
      if (b >= 0 && labels(a) == labels(b)) {
        const Index ra = find(a), rb = find(b);
        if (ra != rb) parent[static_cast<std::size_t>(std::max(ra, rb))] = std::min(ra, rb);
      }
    }
  VectorXi out(t);
  std::vector<int> relabel(static_cast<std::size_t>(t), -1);
  int next = 0;
  for (Index a = 0; a < t; ++a) {
    const Index root = find(a);
    if (relabel[static_cast<std::size_t>(root)] < 0) relabel[static_cast<std::size_t>(root)] = next++;
    out(a) = relabel[static_cast<std::size_t>(root)];
  }
  return out;
}

Clustering grouping_matrices(const VectorXi& labels, const VectorXd& volumes) {
  const Index t = labels.size();
  if (volumes.size() != t) throw Error("grouping_matrices: labels and volumes differ in size");
  if (t == 0 || labels.minCoeff() < 0) throw Error("grouping_matrices: every tet needs a label");
  const Index r = labels.maxCoeff() + 1;
  VectorXd cluster_vol = VectorXd::Zero(r);
  for (Index j = 0; j < t; ++j) cluster_vol(labels(j)) += volumes(j);
  for (Index c = 0; c < r; ++c)
    if (!(cluster_vol(c) > 0)) throw Error("grouping_matrices: cluster " + std::to_string(c) + " is empty");

  std::vector<Triplet> g, g9;
  g.reserve(static_cast<std::size_t>(t));
  g9.reserve(static_cast<std::size_t>(9 * t));
  for (Index j = 0; j < t; ++j) {
    const double w = volumes(j) / cluster_vol(labels(j));
    g.emplace_back(labels(j), j, w);
    for (int q = 0; q < 9; ++q) g9.emplace_back(9 * labels(j) + q, 9 * j + q, w);
  }
  Clustering out;
  out.labels = labels;
  out.num_clusters = r;
  out.G.resize(r, t);
  out.G.setFromTriplets(g.begin(), g.end());
  out.G9.resize(9 * r, 9 * t);
  out.G9.setFromTriplets(g9.begin(), g9.end());
  return out;
}

Clustering build_clustering(const MatrixXd& W, const VectorXd& eigenvalues, const TetMesh& mesh, Index r,
                            std::uint64_t seed) {
  const MatrixXd feat = cluster_features(W, eigenvalues, mesh);
  const VectorXi labels = split_cluster_components(kmeans_pp(feat, r, seed), mesh);
  return grouping_matrices(labels, tet_volumes(mesh));
}

}  // namespace cdsk
