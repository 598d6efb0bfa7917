#include "cdsk/io.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <iomanip>
#include <sstream>

namespace cdsk {

using nlohmann::json;

namespace {

json parse_json(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(std::string(what) + ": " + e.what());
  }
}

VectorXd scalar_or_array(const json& j, const char* key, Index count) {
  if (!j.contains(key)) throw Error(std::string("material: missing '") + key + "'");
  const json& v = j.at(key);
  if (v.is_number()) return VectorXd::Constant(count, v.get<double>());
  if (!v.is_array()) throw Error(std::string("material: '") + key + "' must be a number or an array");
  if (static_cast<Index>(v.size()) != count)
    throw Error(std::string("material: '") + key + "' has " + std::to_string(v.size()) + " entries, mesh has " +
                std::to_string(count) + " tets");
  VectorXd out(count);
  for (Index i = 0; i < count; ++i) out(i) = v[static_cast<std::size_t>(i)].get<double>();
  return out;
}

}  // namespace

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

MaterialField parse_material(const std::string& json_text, Index num_tets) {
  const json j = parse_json(json_text, "material");
  MaterialField mat;
  try {
    mat.mu = scalar_or_array(j, "mu", num_tets);
    mat.lambda = scalar_or_array(j, "lambda", num_tets);
    mat.density = scalar_or_array(j, "density", num_tets);
  } catch (const json::exception& e) {
    throw Error(std::string("material: ") + e.what());
  }
  mat.validate(num_tets);
  return mat;
}

MaterialField load_material(const std::filesystem::path& path, Index num_tets) {
  return parse_material(read_text_file(path), num_tets);
}

LinearRig parse_rig(const std::string& json_text, Index num_vertices) {
  const json j = parse_json(json_text, "rig");
  try {
    const RigKind kind = parse_rig_kind(j.at("kind").get<std::string>());
    if (kind == RigKind::affine_handle) return LinearRig::affine_handle(num_vertices);
    if (kind == RigKind::null_rig) return LinearRig::null_rig(num_vertices);
    const json& w = j.at("weights");
    if (!w.is_array() || static_cast<Index>(w.size()) != num_vertices)
      throw Error("rig: weights must have one row per vertex (" + std::to_string(num_vertices) + ")");
    const std::size_t b = w.empty() ? 0 : w[0].size();
    MatrixXd W(num_vertices, static_cast<Index>(b));
    for (Index v = 0; v < num_vertices; ++v) {
      const json& row = w[static_cast<std::size_t>(v)];
      if (row.size() != b) throw Error("rig: weight row " + std::to_string(v) + " has the wrong length");
      for (std::size_t c = 0; c < b; ++c) W(v, static_cast<Index>(c)) = row[c].get<double>();
    }
    return LinearRig::lbs_skeleton(std::move(W));
  } catch (const json::exception& e) {
    throw Error(std::string("rig: ") + e.what());
  }
}

LinearRig load_rig(const std::filesystem::path& path, Index num_vertices) {
  return parse_rig(read_text_file(path), num_vertices);
}

Animation parse_animation(const std::string& json_text, Index p_dim) {
  const json j = parse_json(json_text, "animation");
  Animation anim;
  try {
    anim.dt = j.at("dt").get<double>();
    if (!(anim.dt > 0)) throw Error("animation: dt must be positive");
    for (const json& f : j.at("frames")) {
      if (static_cast<Index>(f.size()) != p_dim)
        throw Error("animation: frame " + std::to_string(anim.frames.size()) + " has " + std::to_string(f.size()) +
                    " parameters, rig expects " + std::to_string(p_dim));
      VectorXd p(p_dim);
      for (Index i = 0; i < p_dim; ++i) p(i) = f[static_cast<std::size_t>(i)].get<double>();
      anim.frames.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw Error(std::string("animation: ") + e.what());
  }
  return anim;
}

Animation load_animation(const std::filesystem::path& path, Index p_dim) {
  return parse_animation(read_text_file(path), p_dim);
}

VectorXd load_leak_field(const std::filesystem::path& path, Index num_vertices) {
  const json j = parse_json(read_text_file(path), "leak field");
  if (!j.is_array() || static_cast<Index>(j.size()) != num_vertices)
    throw Error("leak field: expected an array of " + std::to_string(num_vertices) + " values");
  VectorXd d(num_vertices);
  for (Index i = 0; i < num_vertices; ++i) d(i) = j[static_cast<std::size_t>(i)].get<double>();
  return d;
}

void write_obj(std::ostream& out, const VectorXd& positions, const Eigen::MatrixX3i& tris) {
  const Index n = positions.size() / 3;
  out << std::setprecision(17);
  for (Index v = 0; v < n; ++v)
    out << "v " << positions(v) << ' ' << positions(n + v) << ' ' << positions(2 * n + v) << '\n';
  for (Index f = 0; f < tris.rows(); ++f)
    out << "f " << tris(f, 0) + 1 << ' ' << tris(f, 1) + 1 << ' ' << tris(f, 2) + 1 << '\n';
}

void write_obj(const std::filesystem::path& path, const VectorXd& positions, const Eigen::MatrixX3i& tris) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_obj(out, positions, tris);
}

}  // namespace cdsk
