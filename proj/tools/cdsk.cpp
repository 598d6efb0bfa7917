// Command-line front end: precompute, simulate, modes, serve.

#include "cdsk/cache.hpp"
#include "cdsk/io.hpp"
#include "cdsk/reference.hpp"
#include "cdsk/service.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <bit>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cdsk;

namespace {

void write_manifest(const fs::path& path, const std::string& command, const json& flags, const json& outputs) {
  json j{{"command", command}, {"flags", flags}, {"outputs", outputs}, {"cache_version", kCacheVersion}};
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_row(std::ostream& out, const VectorXd& v) {
  for (Index i = 0; i < v.size(); ++i) out << (i ? "," : "") << v(i);
}

struct PrecomputeArgs {
  std::string mesh, material, rig, out, hessian = "arap", leak;
  Index modes = 8, clusters = 16;
  std::uint64_t seed = 0;
};

int run_precompute(const PrecomputeArgs& a) {
  TetMesh mesh = load_tet_mesh(a.mesh);
  MaterialField mat = load_material(a.material, mesh.num_tets());
  LinearRig rig = load_rig(a.rig, mesh.num_vertices());
  std::optional<VectorXd> leak;
  if (!a.leak.empty()) leak = load_leak_field(a.leak, mesh.num_vertices());

  PrecomputeSettings settings{a.modes, a.clusters, a.seed, parse_energy(a.hessian)};
  PrecomputeReport rep;
  const Model model = precompute_model(std::move(mesh), std::move(mat), std::move(rig), leak, settings, &rep);
  if (const auto dir = std::filesystem::path(a.out).parent_path(); !dir.empty()) std::filesystem::create_directories(dir);
  save_cache(a.out, model);

  std::cout << "vertices " << model.mesh.num_vertices() << ", tets " << model.mesh.num_tets() << "\n"
            << "constraint rows " << rep.constraint_rows << ", rank " << rep.constraint_rank << "\n"
            << "m " << model.subspace.num_modes() << ", r_eff " << model.clustering.num_clusters << " (requested "
            << a.clusters << ")\n"
            << std::setprecision(6) << "eigenvalues";
  for (Index i = 0; i < model.subspace.eigenvalues.size(); ++i) std::cout << ' ' << model.subspace.eigenvalues(i);
  std::cout << "\nconstraint residual max|J_w W| " << rep.constraint_residual << ", max|cJ^T B| (scaled) "
            << rep.complementarity_residual << "\n";
  if (!model.subspace.degenerate.empty()) std::cout << "warning: degenerate eigenvalue pairs present\n";

  const json flags{{"mesh", a.mesh},   {"material", a.material}, {"rig", a.rig},         {"modes", a.modes},
                   {"clusters", a.clusters}, {"seed", a.seed},   {"hessian", a.hessian}, {"leak", a.leak},
                   {"out", a.out}};
  write_manifest(a.out + ".manifest.json", "precompute", flags,
                 {{"cache", a.out}, {"digest", to_hex(mesh_rig_digest(model.mesh, model.rig))},
                  {"r_eff", model.clustering.num_clusters}});
  return 0;
}

struct SimulateArgs {
  std::string cache, anim, out, energy = "arap", mesh;
  double h = 0;
  int max_iters = 30;
  double tol = 1e-6;
  bool oracle = false, obj = false;
};

int run_simulate(const SimulateArgs& a) {
  const Model model = load_cache(a.cache);
  if (!a.mesh.empty()) {
    const TetMesh check = load_tet_mesh(a.mesh);
    if (mesh_rig_digest(check, model.rig) != mesh_rig_digest(model.mesh, model.rig))
      throw Error("cache was built from a different mesh than " + a.mesh);
  }
  const Animation anim = load_animation(a.anim, model.rig.p_dim());
  SolverConfig config;
  config.h = a.h > 0 ? a.h : anim.dt;
  config.energy = parse_energy(a.energy);
  config.max_iters = a.max_iters;
  config.tol = a.tol;
  config.validate();
  const ReducedOperators red = reduce_model(model, config);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  std::ofstream zcsv(dir / "z.csv"), diag(dir / "diagnostics.csv");
  std::ofstream zbin(dir / "z.bin", std::ios::binary);
  if (!zcsv || !diag || !zbin) throw Error("cannot write into " + dir.string());
  zcsv << std::setprecision(17);
  diag << std::setprecision(17) << "frame,iterations,converged,energy,complementarity\n";

  std::optional<FullSpaceProblem> prob;
  std::optional<FullSpaceState> full;
  std::ofstream ocsv;
  if (a.oracle) {
    prob = make_full_space_problem(model.mesh, model.ops, model.mat, model.comp.J, model.comp.cJ, config.h);
    full = FullSpaceState::rest(*prob);
    ocsv.open(dir / "oracle.csv");
    ocsv << std::setprecision(17) << "frame,relative_error\n";
  }
  if (a.obj) fs::create_directories(dir / "obj");

  const VectorXd x0 = flatten(model.mesh.vertices);
  SimState state = SimState::rest(red);
  double worst_oracle = 0;
  for (std::size_t k = 0; k < anim.frames.size(); ++k) {
    const StepReport rep = simulation_step(state, anim.frames[k], red, config);
    write_row(zcsv, state.z);
    zcsv << '\n';
    for (Index i = 0; i < state.z.size(); ++i) {
      const auto bits = std::bit_cast<std::uint64_t>(state.z(i));
      for (int b = 0; b < 8; ++b) zbin.put(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
    diag << k << ',' << rep.iterations << ',' << rep.converged << ',' << rep.energy.back() << ','
         << runtime_complementarity_residual(state.z, red) << '\n';
    if (a.obj) {
      std::ostringstream name;
      name << "frame_" << std::setw(5) << std::setfill('0') << k << ".obj";
      write_obj(dir / "obj" / name.str(), project_full(state.z, state.p, x0, model.comp.J, model.subspace.B),
                model.mesh.surface_tris);
    }
    if (prob) {
      full_space_reference_step(*full, anim.frames[k], *prob, config);
      const VectorXd u = model.subspace.B * state.z;
      const double err = (u - full->u).norm() / std::max(full->u.norm(), 1e-300);
      worst_oracle = std::max(worst_oracle, full->u.norm() > 0 ? err : (u - full->u).norm());
      ocsv << k << ',' << err << '\n';
    }
  }
  std::cout << "simulated " << anim.frames.size() << " frames into " << dir.string() << "\n";
  if (prob) std::cout << "max oracle relative error " << worst_oracle << "\n";

  const json flags{{"cache", a.cache}, {"anim", a.anim},           {"h", config.h},   {"energy", a.energy},
                   {"out", a.out},     {"oracle", a.oracle},       {"obj", a.obj},    {"max_iters", a.max_iters},
                   {"tol", a.tol},     {"mesh", a.mesh}};
  json outputs{{"frames", anim.frames.size()}, {"z_csv", "z.csv"}, {"z_bin", "z.bin"},
               {"diagnostics", "diagnostics.csv"}};
  if (prob) outputs["oracle_max_relative_error"] = worst_oracle;
  write_manifest(dir / "manifest.json", "simulate", flags, outputs);
  return 0;
}

int run_modes(const std::string& cache, const std::string& out, double amplitude) {
  const Model model = load_cache(cache);
  const fs::path dir(out);
  fs::create_directories(dir);
  const VectorXd x0 = flatten(model.mesh.vertices);
  const MatrixXd& B = model.subspace.B;
  const Index n = model.mesh.num_vertices();
  const double target = amplitude * bbox_diagonal(model.mesh);
  const VectorXd p = VectorXd::Zero(model.rig.p_dim());
  for (Index c = 0; c < B.cols(); ++c) {
    VectorXd z = VectorXd::Zero(B.cols());
    z(c) = 1;
    const VectorXd u = B.col(c);
    double peak = 0;
    for (Index v = 0; v < n; ++v) peak = std::max(peak, Vector3d(u(v), u(n + v), u(2 * n + v)).norm());
    if (peak > 0) z(c) = target / peak;
    std::ostringstream name;
    name << "mode_" << std::setw(3) << std::setfill('0') << c / 12 << "_param_" << std::setw(2) << c % 12 << ".obj";
    write_obj(dir / name.str(), project_full(z, p, x0, model.comp.J, B), model.mesh.surface_tris);
  }
  std::cout << "wrote " << B.cols() << " mode meshes to " << dir.string() << "\n";
  write_manifest(dir / "manifest.json", "modes", {{"cache", cache}, {"out", out}, {"amplitude", amplitude}},
                 {{"meshes", B.cols()}});
  return 0;
}

struct ServeArgs {
  std::string cache, energy = "arap", dtype = "f32", address = "127.0.0.1";
  unsigned short port = 8765;
  double h = 1.0 / 60.0;
  bool lockstep = false;
};

int run_serve(const ServeArgs& a) {
  Model model = load_cache(a.cache);
  SolverConfig config;
  config.h = a.h;
  config.energy = parse_energy(a.energy);
  ServeOptions opt{a.port, a.address, a.lockstep, a.dtype};
  SessionServer server(std::move(model), config, opt);
  const unsigned short port = server.start();
  std::cout << "serving on ws://" << a.address << ":" << port << (a.lockstep ? " (lockstep)" : "") << std::endl;
  const fs::path manifest = fs::path(a.cache).replace_extension(".serve.json");
  write_manifest(manifest, "serve",
                 {{"cache", a.cache}, {"port", port}, {"h", a.h}, {"energy", a.energy}, {"lockstep", a.lockstep},
                  {"dtype", a.dtype}, {"address", a.address}},
                 json::object());
  server.wait();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reduced complementary dynamics with skinning eigenmodes"};
  // -h is free for the timestep flag; help stays on --help.
  app.set_help_flag("--help", "Print this help message and exit");
  app.require_subcommand(1);

  PrecomputeArgs pre;
  auto* cpre = app.add_subcommand("precompute", "Build the subspace and clusters and write a cache");
  cpre->add_option("--mesh", pre.mesh, "Tet mesh (.msh v2.2 or .tet)")->required()->check(CLI::ExistingFile);
  cpre->add_option("--material", pre.material, "Material JSON")->required()->check(CLI::ExistingFile);
  cpre->add_option("--rig", pre.rig, "Rig JSON")->required()->check(CLI::ExistingFile);
  cpre->add_option("--modes", pre.modes, "Number of skinning eigenmodes m")->check(CLI::PositiveNumber);
  cpre->add_option("--clusters", pre.clusters, "Number of k-means clusters r")->check(CLI::PositiveNumber);
  cpre->add_option("--seed", pre.seed, "k-means++ seed");
  cpre->add_option("--hessian", pre.hessian, "Energy defining the rest Hessian")->check(CLI::IsMember({"arap", "corot"}));
  cpre->add_option("--leak", pre.leak, "Per-vertex momentum-leak JSON array")->check(CLI::ExistingFile);
  cpre->add_option("--out", pre.out, "Cache file")->required();

  SimulateArgs sim;
  auto* csim = app.add_subcommand("simulate", "Run an animation through the reduced solver");
  csim->add_option("--cache", sim.cache)->required()->check(CLI::ExistingFile);
  csim->add_option("--anim", sim.anim, "Animation JSON")->required()->check(CLI::ExistingFile);
  csim->add_option("--h", sim.h, "Timestep (defaults to the animation dt)");
  csim->add_option("--energy", sim.energy)->check(CLI::IsMember({"arap", "corot"}));
  csim->add_option("--out", sim.out, "Output directory")->required();
  csim->add_option("--max-iters", sim.max_iters)->check(CLI::PositiveNumber);
  csim->add_option("--tol", sim.tol)->check(CLI::NonNegativeNumber);
  csim->add_option("--mesh", sim.mesh, "Refuse to run unless the cache was built from this mesh")
      ->check(CLI::ExistingFile);
  csim->add_flag("--oracle", sim.oracle, "Also run the full-space reference and report per-frame error");
  csim->add_flag("--obj", sim.obj, "Write surface OBJ per frame");

  std::string mcache, mout;
  double amplitude = 0.1;
  auto* cmod = app.add_subcommand("modes", "Write one OBJ per mode and affine parameter");
  cmod->add_option("--cache", mcache)->required()->check(CLI::ExistingFile);
  cmod->add_option("--out", mout)->required();
  cmod->add_option("--amplitude", amplitude, "Peak displacement as a fraction of the bbox diagonal");

  ServeArgs srv;
  auto* csrv = app.add_subcommand("serve", "Run the live websocket session");
  csrv->add_option("--cache", srv.cache)->required()->check(CLI::ExistingFile);
  csrv->add_option("--port", srv.port);
  csrv->add_option("--address", srv.address);
  csrv->add_option("--h", srv.h)->check(CLI::PositiveNumber);
  csrv->add_option("--energy", srv.energy)->check(CLI::IsMember({"arap", "corot"}));
  csrv->add_option("--dtype", srv.dtype, "Payload precision")->check(CLI::IsMember({"f32", "f64"}));
  csrv->add_flag("--lockstep", srv.lockstep, "Step once per set_params instead of on a clock");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*cpre) return run_precompute(pre);
    if (*csim) return run_simulate(sim);
    if (*cmod) return run_modes(mcache, mout, amplitude);
    if (*csrv) return run_serve(srv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
