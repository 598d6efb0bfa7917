#pragma once

#include "cdsk/rig.hpp"

#include <filesystem>
#include <iosfwd>

namespace cdsk {

/// {mu, lambda, density}: each a scalar or a per-tet array.
MaterialField parse_material(const std::string& json_text, Index num_tets);
MaterialField load_material(const std::filesystem::path& path, Index num_tets);

/// {kind, weights?}: weights is an n x b row-major nested array, required for
/// lbs_skeleton only.
LinearRig parse_rig(const std::string& json_text, Index num_vertices);
LinearRig load_rig(const std::filesystem::path& path, Index num_vertices);

struct Animation {
  double dt = 0;
  std::vector<VectorXd> frames;
};

/// {dt, frames: [[p...], ...]}; every frame must have p_dim entries.
Animation parse_animation(const std::string& json_text, Index p_dim);
Animation load_animation(const std::filesystem::path& path, Index p_dim);

/// A JSON array of n per-vertex values.
VectorXd load_leak_field(const std::filesystem::path& path, Index num_vertices);

/// Surface-only OBJ of axis-major positions.
void write_obj(std::ostream& out, const VectorXd& positions, const Eigen::MatrixX3i& tris);
void write_obj(const std::filesystem::path& path, const VectorXd& positions, const Eigen::MatrixX3i& tris);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace cdsk
