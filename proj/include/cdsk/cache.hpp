#pragma once

#include "cdsk/pipeline.hpp"

#include <array>
#include <filesystem>

namespace cdsk {

// Binary cache layout, all little-endian:
//   "CDSK" u32 version
//   u64 n, t, m, r, b; u32 rig kind; u32 hessian energy; u64 modes, clusters, seed
//   f64 sections: vertices (n x 3), tets (t x 4), mu, lambda, density (t each),
//   rig weights (n x b), leak (n), W (n x m), eigenvalues (m), labels (t)
//   32-byte SHA-256 of the mesh and rig sections
// Matrices are stored column-major. h-dependent data is rebuilt on load.

inline constexpr std::uint32_t kCacheVersion = 1;

using Digest = std::array<std::uint8_t, 32>;

/// SHA-256 of the canonical encoding of mesh geometry, rig kind and rig weights.
Digest mesh_rig_digest(const TetMesh& mesh, const LinearRig& rig);
std::string to_hex(const Digest& d);

std::string serialize_cache(const Model& model);
Model deserialize_cache(const std::string& bytes);

void save_cache(const std::filesystem::path& path, const Model& model);
Model load_cache(const std::filesystem::path& path);

}  // namespace cdsk
