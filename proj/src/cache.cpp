#include "cdsk/cache.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cdsk {

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(const void* p, std::size_t len) { out_.append(static_cast<const char*>(p), len); }

  template <typename Derived>
  void matrix(const Eigen::DenseBase<Derived>& m) {
    for (Index c = 0; c < m.cols(); ++c)
      for (Index r = 0; r < m.rows(); ++r) f64(static_cast<double>(m(r, c)));
  }

  const std::string& str() const { return out_; }

 private:
  void put(std::uint64_t v, int len) {
    for (int i = 0; i < len; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }

  MatrixXd matrix(Index rows, Index cols) {
    MatrixXd m(rows, cols);
    for (Index c = 0; c < cols; ++c)
      for (Index r = 0; r < rows; ++r) m(r, c) = f64();
    return m;
  }

  void bytes(void* p, std::size_t len) {
    need(len);
    std::memcpy(p, in_.data() + pos_, len);
    pos_ += len;
  }

  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t len) const {
    if (pos_ + len > in_.size()) throw Error("cache: truncated file");
  }
  std::uint64_t get(int len) {
    need(static_cast<std::size_t>(len));
    std::uint64_t v = 0;
    for (int i = 0; i < len; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    pos_ += static_cast<std::size_t>(len);
    return v;
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

void write_mesh_rig(Writer& w, const TetMesh& mesh, const LinearRig& rig) {
  w.matrix(mesh.vertices);
  w.matrix(mesh.tets);
  w.u32(static_cast<std::uint32_t>(rig.kind));
  w.u64(static_cast<std::uint64_t>(rig.num_bones()));
  w.matrix(rig.weights);
}

VectorXi to_int(const MatrixXd& m) { return m.reshaped().cast<int>(); }

}  // namespace

Digest mesh_rig_digest(const TetMesh& mesh, const LinearRig& rig) {
  Writer w;
  write_mesh_rig(w, mesh, rig);
  Digest d{};
  unsigned int len = 0;
  if (EVP_Digest(w.str().data(), w.str().size(), d.data(), &len, EVP_sha256(), nullptr) != 1 || len != d.size())
    throw Error("cache: SHA-256 failed");
  return d;
}

std::string to_hex(const Digest& d) {
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (std::uint8_t b : d) {
    s.push_back(hex[b >> 4]);
    s.push_back(hex[b & 15]);
  }
  return s;
}

std::string serialize_cache(const Model& model) {
  const Index n = model.mesh.num_vertices(), t = model.mesh.num_tets();
  Writer w;
  w.bytes("CDSK", 4);
  w.u32(kCacheVersion);
  w.u64(static_cast<std::uint64_t>(n));
  w.u64(static_cast<std::uint64_t>(t));
  w.u64(static_cast<std::uint64_t>(model.subspace.num_modes()));
  w.u64(static_cast<std::uint64_t>(model.clustering.num_clusters));
  w.u64(static_cast<std::uint64_t>(model.rig.num_bones()));
  w.u32(static_cast<std::uint32_t>(model.rig.kind));
  w.u32(static_cast<std::uint32_t>(model.settings.hessian));
  w.u64(static_cast<std::uint64_t>(model.settings.modes));
  w.u64(static_cast<std::uint64_t>(model.settings.clusters));
  w.u64(model.settings.seed);
  w.matrix(model.mesh.vertices);
  w.matrix(model.mesh.tets);
  w.matrix(model.mat.mu);
  w.matrix(model.mat.lambda);
  w.matrix(model.mat.density);
  w.matrix(model.rig.weights);
  w.matrix(model.leak);
  w.matrix(model.subspace.W);
  w.matrix(model.subspace.eigenvalues);
  w.matrix(model.clustering.labels);
  const Digest d = mesh_rig_digest(model.mesh, model.rig);
  w.bytes(d.data(), d.size());
  return w.str();
}

Model deserialize_cache(const std::string& bytes) {
  Reader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "CDSK", 4) != 0) throw Error("cache: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCacheVersion)
    throw Error("cache: version " + std::to_string(version) + " is not supported (expected " +
                std::to_string(kCacheVersion) + ")");
  const auto n = static_cast<Index>(r.u64()), t = static_cast<Index>(r.u64());
  const auto m = static_cast<Index>(r.u64()), rc = static_cast<Index>(r.u64());
  const auto b = static_cast<Index>(r.u64());
  const auto kind = static_cast<RigKind>(r.u32());
  PrecomputeSettings settings;
  settings.hessian = static_cast<Energy>(r.u32());
  settings.modes = static_cast<Index>(r.u64());
  settings.clusters = static_cast<Index>(r.u64());
  settings.seed = r.u64();
  if (n > (1 << 26) || t > (1 << 28) || m > n || b > n) throw Error("cache: implausible dimensions");

  const Eigen::MatrixX3d V = r.matrix(n, 3);
  const Eigen::MatrixX4i T = r.matrix(t, 4).cast<int>();
  MaterialField mat;
  mat.mu = r.matrix(t, 1);
  mat.lambda = r.matrix(t, 1);
  mat.density = r.matrix(t, 1);
  LinearRig rig{kind, r.matrix(n, b)};
  VectorXd leak = r.matrix(n, 1);
  MatrixXd W = r.matrix(n, m);
  VectorXd evals = r.matrix(m, 1);
  const VectorXi labels = to_int(r.matrix(t, 1));
  Digest stored{};
  r.bytes(stored.data(), stored.size());
  if (!r.done()) throw Error("cache: trailing bytes");

  TetMesh mesh = make_tet_mesh(V, T);
  if (mesh_rig_digest(mesh, rig) != stored) throw Error("cache: mesh/rig digest mismatch (corrupt cache)");
  Model model = assemble_model(std::move(mesh), std::move(mat), std::move(rig), std::move(leak), settings, std::move(W),
                               std::move(evals), labels);
  if (model.clustering.num_clusters != rc) throw Error("cache: cluster count mismatch");
  return model;
}

void save_cache(const std::filesystem::path& path, const Model& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const std::string bytes = serialize_cache(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

Model load_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_cache(ss.str());
}

}  // namespace cdsk
