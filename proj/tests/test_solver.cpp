#include "test_util.hpp"

#include "cdsk/pipeline.hpp"
#include "cdsk/reference.hpp"

#include <Eigen/SVD>

#include <doctest.h>

using namespace cdsk;
using namespace cdsk::testing;

namespace {

struct Fixture {
  Model model;
  ReducedOperators red;
  SolverConfig config;
};

Fixture make_fixture(const MaterialField* mat = nullptr, Energy energy = Energy::arap) {
  const TetMesh mesh = jittered_box(3, 2, 2, 0.15);
  PrecomputeSettings s;
  s.modes = 3;
  s.clusters = 6;
  s.seed = 3;
  Model model = precompute_model(mesh, mat ? *mat : random_material(mesh.num_tets()),
                                 LinearRig::affine_handle(mesh.num_vertices()), std::nullopt, s);
  SolverConfig config;
  config.energy = energy;
  ReducedOperators red = reduce_model(model, config);
  return {std::move(model), std::move(red), config};
}

// Cluster energies written from singular values: tr(R^T F) = s1 + s2 + sign(det F) s3.
double cluster_energy_svd(const VectorXd& F, const ReducedOperators& red, Energy energy) {
  double out = 0;
  for (Index c = 0; c < red.num_clusters(); ++c) {
    const Matrix3d Fc = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(F.data() + 9 * c);
    const Vector3d sv = Eigen::JacobiSVD<Matrix3d>(Fc).singularValues();
    const double s = sv(0) + sv(1) + (Fc.determinant() < 0 ? -sv(2) : sv(2));
    double e = red.cluster_mu(c) * (3 - 2 * s);
    if (energy == Energy::corot) e += 0.5 * red.cluster_lambda(c) * (s - 3) * (s - 3);
    out += 0.5 * red.cluster_mass(c) * e;
  }
  return out;
}

// Reduced operators in which F~ equals z directly.
ReducedOperators identity_clusters(Index r) {
  ReducedOperators red;
  red.G9KB = MatrixXd::Identity(9 * r, 9 * r);
  red.G9KJ = MatrixXd::Zero(9 * r, 0);
  red.f0 = VectorXd::Zero(9 * r);
  red.cluster_mass = (random_vector(r).array() * 0.3 + 1).matrix();
  red.cluster_mu = (random_vector(r).array() * 0.3 + 1).matrix();
  red.cluster_lambda = (random_vector(r).array() * 0.3 + 2).matrix();
  return red;
}

StepContext random_context(const ReducedOperators& red, double scale) {
  StepContext ctx;
  ctx.p = scale * random_vector(red.p_dim());
  ctx.p_hist = scale * random_vector(red.p_dim());
  ctx.z_hist = scale * random_vector(red.dim());
  ctx.f_ext = scale * random_vector(red.dim());
  return ctx;
}

}  // namespace

TEST_CASE("solver config validation") {
  SolverConfig c;
  CHECK_NOTHROW(c.validate());
  c.h = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = SolverConfig{};
  c.max_iters = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("cached reduced products equal explicit products") {
  const Fixture fx = make_fixture();
  const Model& m = fx.model;
  const ReducedOperators& red = fx.red;
  const MatrixXd& B = m.subspace.B;
  const MatrixXd& J = m.comp.J;
  const MatrixXd L = m.ops.L;
  const auto M = m.ops.mass.asDiagonal();
  const VectorXd x0 = flatten(m.mesh.vertices);
  const MatrixXd G9K = MatrixXd(m.clustering.G9) * MatrixXd(m.ops.K);

  CHECK(rel_err(red.BtLB, B.transpose() * L * B) < 1e-12);
  CHECK(rel_err(red.BtLJ, B.transpose() * L * J) < 1e-12);
  CHECK(rel_err(red.BtMB, B.transpose() * M * B) < 1e-12);
  CHECK(rel_err(red.BtMJ, B.transpose() * M * J) < 1e-12);
  CHECK(rel_err(red.JtLJ, J.transpose() * L * J) < 1e-12);
  CHECK(rel_err(red.JtMJ, J.transpose() * M * J) < 1e-12);
  CHECK(rel_err(red.BtLx0, B.transpose() * L * x0) < 1e-10);
  CHECK(rel_err(red.JtLx0, J.transpose() * L * x0) < 1e-10);
  CHECK(red.x0Lx0 == doctest::Approx(x0.dot(L * x0)).epsilon(1e-12));
  CHECK(rel_err(red.G9KB, G9K * B) < 1e-12);
  CHECK(rel_err(red.G9KJ, G9K * J) < 1e-12);
  CHECK(rel_err(red.cJtB, m.comp.cJ.transpose() * B) < 1e-12);
  CHECK(rel_err(red.A_sys, red.BtLB + red.BtMB / (red.h * red.h)) < 1e-14);

  // Each cluster's rest deformation gradient is the identity.
  for (Index c = 0; c < red.num_clusters(); ++c)
    for (int q = 0; q < 9; ++q) CHECK(std::abs(red.f0(9 * c + q) - (q % 4 == 0 ? 1.0 : 0.0)) < 1e-12);

  // Cluster volumes and volume-weighted Lame parameters.
  const VectorXd vol = tet_volumes(m.mesh);
  for (Index c = 0; c < red.num_clusters(); ++c) {
    double v = 0, mu = 0, lam = 0;
    for (Index j = 0; j < m.mesh.num_tets(); ++j)
      if (m.clustering.labels(j) == c) {
        v += vol(j);
        mu += vol(j) * m.mat.mu(j);
        lam += vol(j) * m.mat.lambda(j);
      }
    CHECK(red.cluster_mass(c) == doctest::Approx(v).epsilon(1e-13));
    CHECK(red.cluster_mu(c) == doctest::Approx(mu / v).epsilon(1e-13));
    CHECK(red.cluster_lambda(c) == doctest::Approx(lam / v).epsilon(1e-13));
  }
}

TEST_CASE("local step: rest and pure rotation") {
  const ReducedOperators red = identity_clusters(3);
  Eigen::Matrix<double, 9, 1> eye;
  eye << 1, 0, 0, 0, 1, 0, 0, 0, 1;
  const VectorXd rest = eye.replicate(3, 1);
  for (Energy e : {Energy::arap, Energy::corot}) {
    const VectorXd g = local_step(rest, VectorXd(0), red, e);
    for (Index c = 0; c < 3; ++c)
      CHECK((g.segment<9>(9 * c) + red.cluster_mass(c) * red.cluster_mu(c) * eye).cwiseAbs().maxCoeff() < 1e-14);
  }
  // For F = Q the corot trace term vanishes and the gradient is -m mu Q.
  const Matrix3d Q = random_rotation();
  VectorXd F(27);
  for (Index c = 0; c < 3; ++c)
    Eigen::Map<Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(F.data() + 9 * c) = Q;
  const VectorXd g = local_step(F, VectorXd(0), red, Energy::corot);
  for (Index c = 0; c < 3; ++c) CHECK(rel_err(g.segment<9>(9 * c), -red.cluster_mass(c) * red.cluster_mu(c) * F.segment<9>(9 * c)) < 1e-12);
}

TEST_CASE("local step is the gradient of the cluster energy") {
  const ReducedOperators red = identity_clusters(4);
  for (Energy e : {Energy::arap, Energy::corot}) {
    CAPTURE(to_string(e));
    for (int k = 0; k < 10; ++k) {
      VectorXd F(36);
      for (Index c = 0; c < 4; ++c) {
        const Matrix3d Fc = random_rotation() * (Matrix3d::Identity() + 0.3 * random_matrix(3, 3));
        Eigen::Map<Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(F.data() + 9 * c) = Fc;
      }
      const VectorXd g = local_step(F, VectorXd(0), red, e);
      VectorXd fd(36);
      const double eps = 1e-6;
      for (Index i = 0; i < 36; ++i) {
        VectorXd a = F, b = F;
        a(i) += eps;
        b(i) -= eps;
        fd(i) = (cluster_energy_svd(a, red, e) - cluster_energy_svd(b, red, e)) / (2 * eps);
      }
      CHECK(rel_err(g, fd) < 1e-7);
    }
  }
}

TEST_CASE("reduced gradient matches finite differences of the reduced energy") {
  for (Energy e : {Energy::arap, Energy::corot}) {
    CAPTURE(to_string(e));
    const Fixture fx = make_fixture(nullptr, e);
    const ReducedOperators& red = fx.red;
    for (int k = 0; k < 5; ++k) {
      const StepContext ctx = random_context(red, 0.05);
      const VectorXd z = 0.05 * random_vector(red.dim());
      const VectorXd g = reduced_gradient(z, ctx, red, e);
      CHECK(rel_err(assemble_force(ctx, local_step(z, ctx.p, red, e), red) + red.A_sys * z, g) < 1e-12);
      VectorXd fd(red.dim());
      const double eps = 1e-6;
      for (Index i = 0; i < red.dim(); ++i) {
        VectorXd a = z, b = z;
        a(i) += eps;
        b(i) -= eps;
        fd(i) = (reduced_energy(a, ctx, red, e) - reduced_energy(b, ctx, red, e)) / (2 * eps);
      }
      CHECK(rel_err(g, fd) < 1e-5);
    }
  }
}

TEST_CASE("ARAP global step minimizes the frozen-rotation quadratic") {
  const Fixture fx = make_fixture();
  const ReducedOperators& red = fx.red;
  const StepContext ctx = random_context(red, 0.05);
  const VectorXd z = 0.05 * random_vector(red.dim());
  const VectorXd dPhi = local_step(z, ctx.p, red, Energy::arap);
  const VectorXd zn = global_step(z, ctx, dPhi, red, fx.config);
  const VectorXd f = assemble_force(ctx, dPhi, red);
  CHECK((f + red.A_sys * zn).norm() < 1e-10 * f.norm());
}

TEST_CASE("corotational global step decreases the energy") {
  const Fixture fx = make_fixture(nullptr, Energy::corot);
  const ReducedOperators& red = fx.red;
  for (int k = 0; k < 10; ++k) {
    const StepContext ctx = random_context(red, 0.1);
    const VectorXd z = 0.1 * random_vector(red.dim());
    GlobalStepReport rep;
    const VectorXd zn = global_step(z, ctx, local_step(z, ctx.p, red, Energy::corot), red, fx.config, &rep);
    CHECK(rep.alpha > 0);
    CHECK(reduced_energy(zn, ctx, red, Energy::corot) <= reduced_energy(z, ctx, red, Energy::corot));
  }
}

TEST_CASE("ARAP energy is non-increasing over iterations") {
  Fixture fx = make_fixture();
  fx.config.tol = 0;
  fx.config.max_iters = 10;
  SimState state = SimState::rest(fx.red);
  for (int step = 0; step < 10; ++step) {
    Eigen::Matrix<double, 3, 4> T = 0.1 * random_matrix(3, 4);
    const StepReport rep = simulation_step(state, uniform_rig_parameters(fx.model.rig, T), fx.red, fx.config);
    CHECK(rep.iterations == 10);
    for (std::size_t i = 1; i < rep.energy.size(); ++i)
      CHECK(rep.energy[i] <= rep.energy[i - 1] + 1e-12 * std::abs(rep.energy[i - 1]));
  }
}

TEST_CASE("rest is an equilibrium for homogeneous material") {
  const TetMesh mesh = jittered_box(3, 2, 2, 0.15);
  const MaterialField mat = MaterialField::homogeneous(mesh.num_tets(), 2.0, 3.0, 1.0);
  for (Energy e : {Energy::arap, Energy::corot}) {
    Fixture fx = make_fixture(&mat, e);
    SimState state = SimState::rest(fx.red);
    for (int k = 0; k < 5; ++k) simulation_step(state, VectorXd::Zero(fx.red.p_dim()), fx.red, fx.config);
    CHECK(state.z.cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("rigid rig motion leaves the elastic energy at rest") {
  const TetMesh mesh = jittered_box(3, 2, 2, 0.15);
  const MaterialField mat = MaterialField::homogeneous(mesh.num_tets(), 2.0, 3.0, 1.0);
  const Fixture fx = make_fixture(&mat);
  const Matrix3d Q = random_rotation();
  Eigen::Matrix<double, 3, 4> T;
  T << Q - Matrix3d::Identity(), Vector3d(0.3, -1, 2);
  const VectorXd p = uniform_rig_parameters(fx.model.rig, T);
  const VectorXd z = VectorXd::Zero(fx.red.dim());
  const double e0 = reduced_elastic_energy(z, VectorXd::Zero(12), fx.red, Energy::corot);
  CHECK(std::abs(reduced_elastic_energy(z, p, fx.red, Energy::corot) - e0) < 1e-10);
  CHECK(std::abs(e0) < 1e-10);
}

TEST_CASE("project_full") {
  const Fixture fx = make_fixture();
  const Model& m = fx.model;
  const VectorXd x0 = flatten(m.mesh.vertices);
  CHECK(project_full(VectorXd::Zero(fx.red.dim()), VectorXd::Zero(12), x0, m.comp.J, m.subspace.B) == x0);
  const VectorXd z = random_vector(fx.red.dim());
  const VectorXd p = random_vector(12);
  const VectorXd x = project_full(z, p, x0, m.comp.J, m.subspace.B);
  const Index n = m.mesh.num_vertices();
  for (Index v = 0; v < n; ++v)
    for (int i = 0; i < 3; ++i) {
      double expect = x0(i * n + v) + p(4 * i + 3);
      for (int j = 0; j < 3; ++j) expect += p(4 * i + j) * m.mesh.vertices(v, j);
      for (Index b = 0; b < m.subspace.num_modes(); ++b) {
        double s = z(12 * b + 4 * i + 3);
        for (int j = 0; j < 3; ++j) s += z(12 * b + 4 * i + j) * m.mesh.vertices(v, j);
        expect += m.subspace.W(v, b) * s;
      }
      CHECK(std::abs(x(i * n + v) - expect) < 1e-12);
    }
}

TEST_CASE("solver output stays complementary to the rig") {
  Fixture fx = make_fixture(nullptr, Energy::corot);
  SimState state = SimState::rest(fx.red);
  CHECK(runtime_complementarity_residual(state.z, fx.red) == 0.0);
  for (int k = 0; k < 5; ++k) {
    Eigen::Matrix<double, 3, 4> T;
    const double a = 0.3 * (k + 1);
    T << Eigen::AngleAxisd(a, Vector3d::UnitZ()).toRotationMatrix() - Matrix3d::Identity(), Vector3d(0.1 * k, 0, 0);
    simulation_step(state, uniform_rig_parameters(fx.model.rig, T), fx.red, fx.config);
  }
  CHECK(state.z.norm() > 0);
  CHECK(runtime_complementarity_residual(state.z, fx.red) < 1e-8);
}

TEST_CASE("simulation is deterministic") {
  const Fixture fx = make_fixture(nullptr, Energy::corot);
  auto run = [&] {
    SimState state = SimState::rest(fx.red);
    std::mt19937_64 g(9);
    std::vector<VectorXd> out;
    for (int k = 0; k < 5; ++k) {
      Eigen::Matrix<double, 3, 4> T;
      for (Index i = 0; i < 12; ++i) T.data()[i] = 0.1 * (static_cast<double>(g() % 1000) / 1000 - 0.5);
      simulation_step(state, uniform_rig_parameters(fx.model.rig, T), fx.red, fx.config);
      out.push_back(state.z);
    }
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("pseudo-inverse fallback") {
  const MatrixXd A = (MatrixXd(2, 2) << 1, 1, 1, 1).finished();
  CHECK_THROWS_AS(SystemSolver(A, false), Error);
  const SystemSolver s(A, true);
  CHECK(s.uses_pseudo_inverse());
  CHECK(s.rank() == 1);
  CHECK(rel_err(s.solve(Eigen::Vector2d(2, 2)), Eigen::Vector2d(1, 1)) < 1e-14);
  const MatrixXd P = (MatrixXd(2, 2) << 2, 0, 0, 3).finished();
  CHECK_FALSE(SystemSolver(P, true).uses_pseudo_inverse());
}

TEST_CASE("full-space problem") {
  const TetMesh mesh = jittered_box(2, 1, 1, 0.15);
  const MaterialField mat = MaterialField::homogeneous(mesh.num_tets(), 1.0, 2.0, 1.0);
  const FullSpaceOperators ops = assemble_operators(mesh, mat);
  const ComplementarityData comp =
      complementarity_matrix(LinearRig::affine_handle(mesh.num_vertices()), mesh, ops, VectorXd::Ones(mesh.num_vertices()));
  const FullSpaceProblem prob = make_full_space_problem(mesh, ops, mat, comp.J, comp.cJ, 1.0 / 60);
  CHECK((comp.cJ.transpose() * prob.N).cwiseAbs().maxCoeff() < 1e-12 * comp.cJ.norm());
  CHECK((prob.N.transpose() * prob.N - MatrixXd::Identity(prob.N.cols(), prob.N.cols())).cwiseAbs().maxCoeff() < 1e-12);

  SolverConfig config;
  config.energy = Energy::corot;
  FullSpaceState rest = FullSpaceState::rest(prob);
  full_space_reference_step(rest, VectorXd::Zero(12), prob, config);
  CHECK(rest.u.cwiseAbs().maxCoeff() < 1e-10);

  FullSpaceState state = FullSpaceState::rest(prob);
  Eigen::Matrix<double, 3, 4> T;
  T << Eigen::AngleAxisd(0.8, Vector3d::UnitX()).toRotationMatrix() - Matrix3d::Identity(), Vector3d(0, 0.5, 0);
  const VectorXd p = uniform_rig_parameters(LinearRig::affine_handle(mesh.num_vertices()), T);
  full_space_reference_step(state, p, prob, config);
  CHECK(state.u.norm() > 0);
  CHECK((comp.cJ.transpose() * state.u).cwiseAbs().maxCoeff() < 1e-10 * comp.cJ.norm() * state.u.norm());

  // Gradient against finite differences of the full-space energy.
  for (Energy e : {Energy::arap, Energy::corot}) {
    const FullSpaceContext ctx = make_full_space_context(state, p);
    const VectorXd u = 0.05 * random_vector(prob.x0.size());
    const VectorXd g = full_space_gradient(u, ctx, prob, e);
    VectorXd fd(u.size());
    for (Index i = 0; i < u.size(); ++i) {
      VectorXd a = u, b = u;
      a(i) += 1e-6;
      b(i) -= 1e-6;
      fd(i) = (full_space_energy(a, ctx, prob, e) - full_space_energy(b, ctx, prob, e)) / 2e-6;
    }
    CHECK(rel_err(g, fd) < 1e-5);
  }
}

TEST_CASE("full-rank reduced model reproduces the full-space energy") {
  const TetMesh mesh = jittered_box(2, 1, 1, 0.15);
  const Index n = mesh.num_vertices();
  PrecomputeSettings s;
  s.modes = n;
  s.clusters = mesh.num_tets();
  const Model model = precompute_model(mesh, random_material(mesh.num_tets()), LinearRig::null_rig(n), std::nullopt, s);
  CHECK(model.clustering.num_clusters == mesh.num_tets());
  SolverConfig config;
  config.pseudo_inverse_fallback = true;
  const ReducedOperators red = reduce_model(model, config);
  const FullSpaceProblem prob = make_full_space_problem(model.mesh, model.ops, model.mat, model.comp.J, model.comp.cJ,
                                                        config.h);
  FullSpaceState fs = FullSpaceState::rest(prob);
  SimState rs = SimState::rest(red);
  const VectorXd p0 = VectorXd::Zero(0);
  const FullSpaceContext fctx = make_full_space_context(fs, p0);
  const StepContext rctx = make_step_context(rs, p0);
  for (Energy e : {Energy::arap, Energy::corot}) {
    const VectorXd z = 0.05 * random_vector(red.dim());
    const VectorXd u = model.subspace.B * z;
    FullSpaceContext fc = fctx;
    fc.u_hist = VectorXd::Zero(3 * n);
    CHECK(reduced_energy(z, rctx, red, e) == doctest::Approx(full_space_energy(u, fc, prob, e)).epsilon(1e-10));
  }
}
