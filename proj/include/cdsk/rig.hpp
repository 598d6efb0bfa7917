#pragma once

#include "cdsk/operators.hpp"

#include <optional>

namespace cdsk {

enum class RigKind { affine_handle, lbs_skeleton, null_rig };

RigKind parse_rig_kind(const std::string& name);
const char* to_string(RigKind kind);

/// Linear rig. Parameters p are per-bone 3x4 displacement transforms, flattened
/// row-major and concatenated bone by bone (p_dim = 12 b); p = 0 is the rest pose.
struct LinearRig {
  RigKind kind = RigKind::null_rig;
  MatrixXd weights;  // n x b

  Index num_bones() const { return weights.cols(); }
  Index p_dim() const { return 12 * weights.cols(); }

  static LinearRig affine_handle(Index n);
  static LinearRig null_rig(Index n);
  static LinearRig lbs_skeleton(MatrixXd weights);
};

/// J (3n x p): the LBS matrix of the rig weights, constant in p.
MatrixXd rig_jacobian(const LinearRig& rig, const TetMesh& mesh);

/// Per-vertex momentum-leak values d in [0, 1] (n entries; D = diag(d) per axis).
/// Without a user field: one implicit diffusion step of the surface indicator,
/// (V + s Lc) d = V chi with V lumped volumes, Lc the cotangent Laplacian and
/// s = mean_edge^2, then affine renormalization to [0, 1] (constant fields kept).
VectorXd momentum_leak_field(const TetMesh& mesh, const std::optional<VectorXd>& user_field = std::nullopt);

struct ComplementarityData {
  MatrixXd J;       // 3n x p
  VectorXd leak;    // 3n, diagonal of D
  MatrixXd cJ;      // 3n x p, D M J
};

ComplementarityData complementarity_matrix(const LinearRig& rig, const TetMesh& mesh,
                                           const FullSpaceOperators& ops, const VectorXd& leak_per_vertex);

/// Rig parameters that move every vertex by the same affine map x -> A x + t
/// (valid for partition-of-unity weights).
VectorXd uniform_rig_parameters(const LinearRig& rig, const Eigen::Matrix<double, 3, 4>& displacement);

}  // namespace cdsk
