#include "cdsk/mesh.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

namespace cdsk {

namespace {

// Outward faces of a positively oriented tet; face k is opposite vertex k.
constexpr std::array<std::array<int, 3>, 4> kFaces = {{{1, 2, 3}, {0, 3, 2}, {0, 1, 3}, {0, 2, 1}}};

std::array<int, 3> sorted_face(const Eigen::MatrixX4i& tets, Index t, int k) {
  std::array<int, 3> f = {tets(t, kFaces[k][0]), tets(t, kFaces[k][1]), tets(t, kFaces[k][2])};
  std::sort(f.begin(), f.end());
  return f;
}

Eigen::MatrixX3i extract_surface(const Eigen::MatrixX4i& tets) {
  std::map<std::array<int, 3>, std::pair<int, std::array<int, 3>>> faces;
  for (Index t = 0; t < tets.rows(); ++t) {
    for (int k = 0; k < 4; ++k) {
      auto key = sorted_face(tets, t, k);
      auto [it, inserted] = faces.try_emplace(
          key, 0, std::array<int, 3>{tets(t, kFaces[k][0]), tets(t, kFaces[k][1]), tets(t, kFaces[k][2])});
      it->second.first += 1;
    }
  }
  std::vector<std::array<int, 3>> boundary;
  for (const auto& [key, entry] : faces)
    if (entry.first == 1) boundary.push_back(entry.second);
  Eigen::MatrixX3i tris(static_cast<Index>(boundary.size()), 3);
  for (std::size_t i = 0; i < boundary.size(); ++i)
    tris.row(static_cast<Index>(i)) << boundary[i][0], boundary[i][1], boundary[i][2];
  return tris;
}

struct LineReader {
  explicit LineReader(std::istream& s) : in(s) {}
  std::istream& in;
  std::size_t line_no = 0;
  std::string line;

  bool next() {
    while (std::getline(in, line)) {
      ++line_no;
      auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      return true;
    }
    return false;
  }
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, line_no); }
};

}  // namespace

TetMesh make_tet_mesh(Eigen::MatrixX3d vertices, Eigen::MatrixX4i tets) {
  const Index n = vertices.rows();
  if (n == 0 || tets.rows() == 0) throw Error("mesh has no vertices or no tets");
  if (!vertices.allFinite()) throw Error("mesh has non-finite vertex coordinates");
  for (Index t = 0; t < tets.rows(); ++t)
    for (int k = 0; k < 4; ++k)
      if (tets(t, k) < 0 || tets(t, k) >= n)
        throw Error("tet " + std::to_string(t) + " references vertex " + std::to_string(tets(t, k)) +
                    " outside [0, " + std::to_string(n) + ")");

  const double diag = (vertices.colwise().maxCoeff() - vertices.colwise().minCoeff()).norm();
  const double threshold = 1e-12 * diag * diag * diag;
  std::vector<Index> degenerate;
  for (Index t = 0; t < tets.rows(); ++t) {
    Vector3d a = vertices.row(tets(t, 0)), b = vertices.row(tets(t, 1));
    Vector3d c = vertices.row(tets(t, 2)), d = vertices.row(tets(t, 3));
    const double vol = signed_tet_volume(a, b, c, d);
    if (std::abs(vol) < threshold || !(diag > 0)) {
      degenerate.push_back(t);
    } else if (vol < 0) {
      std::swap(tets(t, 2), tets(t, 3));
    }
  }
  if (!degenerate.empty()) {
    std::ostringstream msg;
    msg << "degenerate tets (|volume| < 1e-12 * bbox_diag^3):";
    for (std::size_t i = 0; i < degenerate.size() && i < 20; ++i) msg << ' ' << degenerate[i];
    if (degenerate.size() > 20) msg << " ... (" << degenerate.size() << " total)";
    throw DegenerateTetError(msg.str(), std::move(degenerate));
  }

  TetMesh mesh;
  mesh.vertices = std::move(vertices);
  mesh.tets = std::move(tets);
  mesh.surface_tris = extract_surface(mesh.tets);
  return mesh;
}

TetMesh read_tet_format(std::istream& in) {
  LineReader r(in);
  if (!r.next()) r.fail("empty .tet file");
  std::istringstream header(r.line);
  std::string tag;
  long long n = -1, t = -1;
  if (!(header >> tag >> n >> t) || tag != "tet" || n <= 0 || t <= 0)
    r.fail("expected header 'tet <n> <t>'");
  Eigen::MatrixX3d V(n, 3);
  Eigen::MatrixX4i T(t, 4);
  for (long long i = 0; i < n; ++i) {
    if (!r.next()) r.fail("unexpected end of file in vertex block");
    std::istringstream ls(r.line);
    double x, y, z;
    if (!(ls >> tag >> x >> y >> z) || tag != "v") r.fail("expected 'v x y z'");
    V.row(i) << x, y, z;
  }
  for (long long i = 0; i < t; ++i) {
    if (!r.next()) r.fail("unexpected end of file in tet block");
    std::istringstream ls(r.line);
    long long a, b, c, d;
    if (!(ls >> tag >> a >> b >> c >> d) || tag != "t") r.fail("expected 't i j k l'");
    for (long long idx : {a, b, c, d})
      if (idx < 0 || idx >= n) r.fail("tet index " + std::to_string(idx) + " out of range");
    T.row(i) << static_cast<int>(a), static_cast<int>(b), static_cast<int>(c), static_cast<int>(d);
  }
  return make_tet_mesh(std::move(V), std::move(T));
}

TetMesh read_gmsh(std::istream& in) {
  LineReader r(in);
  std::unordered_map<long long, int> node_index;
  std::vector<Vector3d> nodes;
  std::vector<std::array<int, 4>> tets;
  bool saw_format = false;
  while (r.next()) {
    std::string section = r.line.substr(r.line.find_first_not_of(" \t"));
    while (!section.empty() && (section.back() == '\r' || section.back() == ' ')) section.pop_back();
    if (section == "$MeshFormat") {
      if (!r.next()) r.fail("truncated $MeshFormat");
      std::istringstream ls(r.line);
      double version;
      int file_type;
      if (!(ls >> version >> file_type)) r.fail("malformed $MeshFormat");
      if (version < 2.0 || version >= 3.0) r.fail("only MSH 2.x is supported");
      if (file_type != 0) r.fail("only ASCII MSH is supported");
      if (!r.next() || r.line.find("$EndMeshFormat") == std::string::npos) r.fail("missing $EndMeshFormat");
      saw_format = true;
    } else if (section == "$Nodes") {
      if (!r.next()) r.fail("truncated $Nodes");
      long long count = std::stoll(r.line);
      for (long long i = 0; i < count; ++i) {
        if (!r.next()) r.fail("truncated $Nodes");
        std::istringstream ls(r.line);
        long long id;
        double x, y, z;
        if (!(ls >> id >> x >> y >> z)) r.fail("malformed node line");
        node_index[id] = static_cast<int>(nodes.size());
        nodes.emplace_back(x, y, z);
      }
      if (!r.next() || r.line.find("$EndNodes") == std::string::npos) r.fail("missing $EndNodes");
    } else if (section == "$Elements") {
      if (!r.next()) r.fail("truncated $Elements");
      long long count = std::stoll(r.line);
      for (long long i = 0; i < count; ++i) {
        if (!r.next()) r.fail("truncated $Elements");
        std::istringstream ls(r.line);
        long long id, type, ntags;
        if (!(ls >> id >> type >> ntags)) r.fail("malformed element line");
        for (long long k = 0; k < ntags; ++k) {
          long long tagv;
          if (!(ls >> tagv)) r.fail("malformed element tags");
        }
        if (type != 4) continue;
        std::array<int, 4> tet{};
        for (int k = 0; k < 4; ++k) {
          long long node;
          if (!(ls >> node)) r.fail("malformed tet element");
          auto it = node_index.find(node);
          if (it == node_index.end()) r.fail("element references unknown node " + std::to_string(node));
          tet[k] = it->second;
        }
        tets.push_back(tet);
      }
      if (!r.next() || r.line.find("$EndElements") == std::string::npos) r.fail("missing $EndElements");
    } else if (!section.empty() && section[0] == '$') {
      const std::string end = "$End" + section.substr(1);
      while (true) {
        if (!r.next()) r.fail("unterminated section " + section);
        if (r.line.find(end) != std::string::npos) break;
      }
    } else {
      r.fail("unexpected content outside a section");
    }
  }
  if (!saw_format) throw ParseError("missing $MeshFormat", r.line_no);
  if (tets.empty()) throw ParseError("no 4-node tetrahedra found", r.line_no);
  Eigen::MatrixX3d V(static_cast<Index>(nodes.size()), 3);
  for (std::size_t i = 0; i < nodes.size(); ++i) V.row(static_cast<Index>(i)) = nodes[i].transpose();
  Eigen::MatrixX4i T(static_cast<Index>(tets.size()), 4);
  for (std::size_t i = 0; i < tets.size(); ++i)
    T.row(static_cast<Index>(i)) << tets[i][0], tets[i][1], tets[i][2], tets[i][3];
  return make_tet_mesh(std::move(V), std::move(T));
}

TetMesh load_tet_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open mesh file " + path.string());
  std::string first;
  in >> first;
  in.clear();
  in.seekg(0);
  if (first == "$MeshFormat") return read_gmsh(in);
  if (first == "tet") return read_tet_format(in);
  throw ParseError("unrecognized mesh format in " + path.string(), 1);
}

void write_tet_format(std::ostream& out, const TetMesh& mesh) {
  out.precision(17);
  out << "tet " << mesh.num_vertices() << ' ' << mesh.num_tets() << '\n';
  for (Index i = 0; i < mesh.num_vertices(); ++i)
    out << "v " << mesh.vertices(i, 0) << ' ' << mesh.vertices(i, 1) << ' ' << mesh.vertices(i, 2) << '\n';
  for (Index t = 0; t < mesh.num_tets(); ++t)
    out << "t " << mesh.tets(t, 0) << ' ' << mesh.tets(t, 1) << ' ' << mesh.tets(t, 2) << ' ' << mesh.tets(t, 3)
        << '\n';
}

VectorXd tet_volumes(const TetMesh& mesh) {
  VectorXd vol(mesh.num_tets());
  for (Index t = 0; t < mesh.num_tets(); ++t) {
    Vector3d a = mesh.vertices.row(mesh.tets(t, 0)), b = mesh.vertices.row(mesh.tets(t, 1));
    Vector3d c = mesh.vertices.row(mesh.tets(t, 2)), d = mesh.vertices.row(mesh.tets(t, 3));
    vol(t) = signed_tet_volume(a, b, c, d);
  }
  return vol;
}

double bbox_diagonal(const TetMesh& mesh) {
  return (mesh.vertices.colwise().maxCoeff() - mesh.vertices.colwise().minCoeff()).norm();
}

double mean_edge_length(const TetMesh& mesh) {
  double sum = 0;
  for (Index t = 0; t < mesh.num_tets(); ++t)
    for (int a = 0; a < 4; ++a)
      for (int b = a + 1; b < 4; ++b)
        sum += (mesh.vertices.row(mesh.tets(t, a)) - mesh.vertices.row(mesh.tets(t, b))).norm();
  return sum / (6.0 * static_cast<double>(mesh.num_tets()));
}

std::vector<Index> surface_vertices(const TetMesh& mesh) {
  std::vector<bool> on_surface(static_cast<std::size_t>(mesh.num_vertices()), false);
  for (Index f = 0; f < mesh.surface_tris.rows(); ++f)
    for (int k = 0; k < 3; ++k) on_surface[static_cast<std::size_t>(mesh.surface_tris(f, k))] = true;
  std::vector<Index> out;
  for (Index i = 0; i < mesh.num_vertices(); ++i)
    if (on_surface[static_cast<std::size_t>(i)]) out.push_back(i);
  return out;
}

Eigen::MatrixX4i tet_face_neighbors(const TetMesh& mesh) {
  Eigen::MatrixX4i nbr = Eigen::MatrixX4i::Constant(mesh.num_tets(), 4, -1);
  std::map<std::array<int, 3>, std::pair<int, int>> seen;
  for (Index t = 0; t < mesh.num_tets(); ++t) {
    for (int k = 0; k < 4; ++k) {
      auto key = sorted_face(mesh.tets, t, k);
      auto it = seen.find(key);
      if (it == seen.end()) {
        seen.emplace(key, std::make_pair(static_cast<int>(t), k));
      } else {
        nbr(t, k) = it->second.first;
        nbr(it->second.first, it->second.second) = static_cast<int>(t);
      }
    }
  }
  return nbr;
}

TetMesh make_box_mesh(int nx, int ny, int nz, const Vector3d& lo, const Vector3d& hi) {
  if (nx < 1 || ny < 1 || nz < 1) throw Error("box mesh needs at least one cell per axis");
  auto vid = [&](int i, int j, int k) { return (k * (ny + 1) + j) * (nx + 1) + i; };
  Eigen::MatrixX3d V((nx + 1) * (ny + 1) * (nz + 1), 3);
  for (int k = 0; k <= nz; ++k)
    for (int j = 0; j <= ny; ++j)
      for (int i = 0; i <= nx; ++i) {
        Vector3d s(double(i) / nx, double(j) / ny, double(k) / nz);
        V.row(vid(i, j, k)) = (lo.array() + s.array() * (hi - lo).array()).transpose();
      }
  // Freudenthal split: each tet walks from corner 000 to 111 along one axis order.
  constexpr std::array<std::array<int, 3>, 6> perms = {
      {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
  Eigen::MatrixX4i T(6 * nx * ny * nz, 4);
  Index row = 0;
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i)
        for (const auto& perm : perms) {
          std::array<int, 3> c = {i, j, k};
          T(row, 0) = vid(c[0], c[1], c[2]);
          for (int s = 0; s < 3; ++s) {
            c[perm[s]] += 1;
            T(row, s + 1) = vid(c[0], c[1], c[2]);
          }
          ++row;
        }
  return make_tet_mesh(std::move(V), std::move(T));
}

VectorXd flatten(const Eigen::MatrixX3d& positions) {
  const Index n = positions.rows();
  VectorXd flat(3 * n);
  for (int a = 0; a < 3; ++a) flat.segment(a * n, n) = positions.col(a);
  return flat;
}

Eigen::MatrixX3d unflatten(const VectorXd& flat) {
  const Index n = flat.size() / 3;
  Eigen::MatrixX3d positions(n, 3);
  for (int a = 0; a < 3; ++a) positions.col(a) = flat.segment(a * n, n);
  return positions;
}

}  // namespace cdsk
