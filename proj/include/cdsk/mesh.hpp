#pragma once

#include "cdsk/types.hpp"

#include <Eigen/Geometry>

#include <filesystem>
#include <iosfwd>

namespace cdsk {

/// Tetrahedral rest mesh. Tets are positively oriented; surface_tris holds the
/// faces that belong to exactly one tet, wound outward.
struct TetMesh {
  Eigen::MatrixX3d vertices;
  Eigen::MatrixX4i tets;
  Eigen::MatrixX3i surface_tris;

  Index num_vertices() const { return vertices.rows(); }
  Index num_tets() const { return tets.rows(); }
};

/// Validates indices, rejects degenerate tets (|vol| < 1e-12 bbox_diag^3),
/// flips negatively oriented tets and extracts the boundary.
TetMesh make_tet_mesh(Eigen::MatrixX3d vertices, Eigen::MatrixX4i tets);

/// Loads a Gmsh 2.2 ASCII ".msh" or a plain ".tet" file (chosen by content).
TetMesh load_tet_mesh(const std::filesystem::path& path);
TetMesh read_tet_format(std::istream& in);
TetMesh read_gmsh(std::istream& in);
void write_tet_format(std::ostream& out, const TetMesh& mesh);

template <typename Derived>
typename Derived::Scalar signed_tet_volume(const Eigen::MatrixBase<Derived>& a,
                                           const Eigen::MatrixBase<Derived>& b,
                                           const Eigen::MatrixBase<Derived>& c,
                                           const Eigen::MatrixBase<Derived>& d) {
  return (b - a).dot((c - a).cross(d - a)) / typename Derived::Scalar(6);
}

VectorXd tet_volumes(const TetMesh& mesh);
double bbox_diagonal(const TetMesh& mesh);
double mean_edge_length(const TetMesh& mesh);

/// Sorted indices of vertices touched by a surface triangle.
std::vector<Index> surface_vertices(const TetMesh& mesh);

/// Per tet, the index of the tet across each face (face k is opposite local
/// vertex k), or -1 on the boundary.
Eigen::MatrixX4i tet_face_neighbors(const TetMesh& mesh);

/// Axis-aligned box split into nx*ny*nz cubes, 6 tets per cube (Freudenthal).
TetMesh make_box_mesh(int nx, int ny, int nz, const Vector3d& lo, const Vector3d& hi);

/// Rest positions flattened axis-major (3n).
VectorXd flatten(const Eigen::MatrixX3d& positions);
Eigen::MatrixX3d unflatten(const VectorXd& flat);

}  // namespace cdsk
