#include <cmath>

#include "cwsl/error.hpp"
#include "cwsl/inverse_msm.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace cwsl;
using cwsl::testing::rel_err;

namespace {

ProblemSpec layered(cplx h, cplx H, cplx d2, double amplitude) {
  ProblemSpec s;
  s.T = 1.5;
  s.b = 0.6;
  s.a1 = std::polar(1.8, 0.25);
  s.a2 = std::polar(0.6, 0.15);
  s.d1 = std::polar(1.0, 0.3);
  s.d2 = d2;
  s.h = h;
  s.H = H;
  if (amplitude == 0.0)
    s.q = Potential::zero(s.T);
  else
    s.q = Potential::sampled(s.T, 601, [amplitude](double x) {
      return amplitude * cplx(1.0, 0.5) * std::exp(-25.0 * (x - 0.5) * (x - 0.5));
    });
  return s;
}

ProblemSpec bump() { return layered({0.2, -0.1}, -0.4, {0.0, 0.15}, 0.3); }

RecoveredConstants exact_constants(const ProblemSpec& s) {
  RecoveredConstants rc;
  rc.a1 = s.a1;
  rc.a2 = s.a2;
  rc.d1 = s.d1;
  rc.b = s.b;
  rc.l1 = s.b;
  rc.l2 = s.T - s.b;
  return rc;
}

// Located once; the cases below truncate it.
const SpectralData& bump_spectrum() {
  static const SpectralData d = locate_eigenvalues(bump(), 24, ValidationMode::strict);
  return d;
}

struct Setup {
  ProblemSpec truth, model;
  SpectralData data, model_data;
  SequenceWeights w;
};

Setup setup(int N) {
  Setup u;
  u.truth = bump();
  u.model = build_model(exact_constants(u.truth), u.truth.T);
  u.data = truncate(bump_spectrum(), N);
  u.model_data = closed_form_spectrum_q0(u.model, N, ValidationMode::strict);
  u.w = compute_weights(u.data, u.model_data, validate_problem(u.model, ValidationMode::strict));
  return u;
}

}  // namespace

TEST_CASE("model problem copies the constants") {
  const ProblemSpec t = bump();
  const ProblemSpec m = build_model(exact_constants(t), t.T, {0.1, -0.2, 0.3});
  CHECK(m.a1 == t.a1);
  CHECK(m.a2 == t.a2);
  CHECK(m.d1 == t.d1);
  CHECK(m.b == t.b);
  CHECK(m.h == cplx(0.1));
  CHECK(m.d2 == cplx(0.3));
  CHECK(m.q(0.7) == cplx(0.0));
  CHECK_NOTHROW(validate_problem(m, ValidationMode::strict));
  CHECK(closed_form_spectrum_q0(m, 5, ValidationMode::strict).data.size() == 10);
}

TEST_CASE("weights of identical data") {
  const ProblemSpec m = build_model(exact_constants(bump()), 1.5);
  const DerivedConstants c = validate_problem(m, ValidationMode::strict);
  const SpectralData d = closed_form_spectrum_q0(m, 12, ValidationMode::strict);
  const SequenceWeights w = compute_weights(d, d, c);
  CHECK(w.active_count() == 0);
  for (const IndexPair& p : w.pairs) {
    CHECK(p.xi == 0.0);
    if (p.branch == 1) CHECK(p.theta == 1.0);
    else CHECK(p.theta >= 1.0);
  }
  CHECK_THROWS_AS(assemble_main_equation(0, w, KernelTable(m, w, XGrid(1.5, 0.6, 5), {}, Execution::serial)), Error);
  try {
    compute_weights(d, truncate(d, 11), c);
    FAIL("expected MisalignedData");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MisalignedData);
  }
}

TEST_CASE("truncation beyond the data") {
  const SpectralData d = closed_form_spectrum_q0(build_model(exact_constants(bump()), 1.5), 6, ValidationMode::strict);
  CHECK(truncate(d, 4).data.size() == 8);
  try {
    truncate(d, 7);
    FAIL("expected InsufficientSamples");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InsufficientSamples);
  }
}

TEST_CASE("one perturbed index gives a two by two system") {
  const ProblemSpec m = build_model(exact_constants(bump()), 1.5);
  const DerivedConstants c = validate_problem(m, ValidationMode::strict);
  const SpectralData md = closed_form_spectrum_q0(m, 8, ValidationMode::strict);
  SpectralData d = md;
  d.data[3].lambda += cplx(0.5, 0.2);
  d.data[3].rho = std::sqrt(d.data[3].lambda);
  d.data[3].M *= 1.01;
  const SequenceWeights w = compute_weights(d, md, c);
  CHECK(w.active_count() == 1);
  const KernelTable t(m, w, XGrid(1.5, 0.6, 9), {}, Execution::serial);
  const MainEquationSystem sys = assemble_main_equation(4, w, t);
  CHECK(sys.matrix.rows() == 2);
  const ReconstructedSolutions r = reconstruct_solutions(solve_all_stations(w, t, Execution::serial), w, t);
  for (std::size_t s = 0; s < t.grid().station_count(); ++s) {
    CHECK(r.phi0[0][s].y == t.trace(0, 1).station(s).y);
    CHECK(r.phi1[5][s].dy == t.trace(5, 1).station(s).dy);
  }
}

TEST_CASE("main equation at x = 0 and initial values of the reconstructed solutions") {
  Setup u = setup(10);
  const KernelTable t(u.model, u.w, XGrid(1.5, 0.6, 21), {}, Execution::parallel);
  const MainEquationSystem sys = assemble_main_equation(0, u.w, t);
  CHECK((sys.matrix - Eigen::MatrixXcd::Identity(sys.matrix.rows(), sys.matrix.cols())).cwiseAbs().maxCoeff() == 0.0);
  const MainEquationSolution sol = solve_main_equation(sys);
  CHECK((sol.f - sys.rhs).cwiseAbs().maxCoeff() < 1e-15);
  const ReconstructedSolutions r = reconstruct_solutions(solve_all_stations(u.w, t, Execution::parallel), u.w, t);
  for (std::size_t p = 0; p < u.w.pairs.size(); ++p) {
    CHECK(std::abs(r.phi0[p][0].y - 1.0) < 1e-12);
    CHECK(std::abs(r.phi1[p][0].y - 1.0) < 1e-12);
    CHECK(std::abs(r.phi0[p][0].dy - r.phi0[0][0].dy) < 1e-12);
  }
}

TEST_CASE("identity operator returns the right-hand side") {
  MainEquationSystem sys;
  sys.matrix = Eigen::MatrixXcd::Identity(4, 4);
  sys.dmatrix = Eigen::MatrixXcd::Zero(4, 4);
  sys.rhs = Eigen::VectorXcd::Random(4);
  sys.drhs = Eigen::VectorXcd::Random(4);
  const MainEquationSolution s = solve_main_equation(sys);
  CHECK((s.f - sys.rhs).norm() == 0.0);
  CHECK((s.fp - sys.drhs).norm() == 0.0);
  CHECK(s.rcond == doctest::Approx(1.0));
  sys.matrix.setZero();
  CHECK_THROWS_AS(solve_main_equation(sys), Error);
}

TEST_CASE("true sequences satisfy the main equation and the operator identity improves with N") {
  double prev_defect = 1e300, prev_identity = 1e300;
  for (int N : {8, 16}) {
    Setup u = setup(N);
    const XGrid grid(1.5, 0.6, 7);
    // Interior points of the first layer.
    const auto checks = check_main_equation(u.truth, u.model, u.w, grid, {1, 2}, Execution::parallel);
    double defect = 0.0, identity = 0.0;
    for (const MainEquationCheck& c : checks) {
      defect = std::max(defect, c.defect);
      identity = std::max(identity, c.identity);
    }
    MESSAGE("N = " << N << ": defect " << defect << ", identity residual " << identity);
    CHECK(defect < prev_defect);
    CHECK(identity < prev_identity);
    prev_defect = defect;
    prev_identity = identity;
  }
}

TEST_CASE("serial and parallel solves agree") {
  Setup u = setup(8);
  const XGrid grid(1.5, 0.6, 15);
  const KernelTable ts(u.model, u.w, grid, {}, Execution::serial);
  const KernelTable tp(u.model, u.w, grid, {}, Execution::parallel);
  const auto a = solve_all_stations(u.w, ts, Execution::serial);
  const auto b = solve_all_stations(u.w, tp, Execution::parallel);
  REQUIRE(a.size() == b.size());
  for (std::size_t s = 0; s < a.size(); ++s) {
    CHECK(a[s].f == b[s].f);
    CHECK(a[s].fp == b[s].fp);
  }
}

TEST_CASE("boundary layers are replaced by the neighbouring fit") {
  QReconstruction qr;
  const double T = 1.5, b = 0.6;
  const XGrid g(T, b, 301);
  qr.x.assign(g.points().begin(), g.points().end());
  for (std::size_t i = 0; i < qr.x.size(); ++i) {
    const double x = qr.x[i];
    const bool right = x > b;
    cplx v = right ? cplx(1.0 - x * x, 0.5 * x) : cplx(2.0 + x, -x * x);
    if (x < 0.05 || std::abs(x - b) < 0.05 || x > T - 0.05) v += cplx(3.0, -3.0);
    qr.q.push_back(v);
  }
  patch_boundary_layers(qr, T, b, 0.06, 0.06);
  for (std::size_t i = 0; i < qr.x.size(); ++i) {
    const double x = qr.x[i];
    const bool right = x > b;
    const cplx want = right ? cplx(1.0 - x * x, 0.5 * x) : cplx(2.0 + x, -x * x);
    CHECK(std::abs(qr.q[i] - want) < 1e-10);
  }
}

TEST_CASE("boundary constants from exact eigenvalues and potential") {
  const ProblemSpec t = bump();
  const SpectralData d = truncate(bump_spectrum(), 5);
  std::vector<cplx> lams;
  for (const SpectralDatum& e : d.data) lams.push_back(e.lambda);
  // From zero the iteration settles in another local minimum; start nearby.
  const BoundaryFit f = fit_boundary_params(lams, exact_constants(t), t.T, t.q, {0.1, -0.3, 0.1}, Execution::serial);
  CHECK(std::abs(f.h - t.h) < 1e-7);
  CHECK(std::abs(f.H - t.H) < 1e-7);
  CHECK(std::abs(f.d2 - t.d2) < 1e-7);
  CHECK(f.residual < 1e-8);
  CHECK_THROWS_AS(fit_boundary_params({lams[0], lams[1]}, exact_constants(t), t.T, t.q, {}, Execution::serial), Error);
}

TEST_CASE("model fit recovers a q = 0 problem from perturbed constants") {
  const ProblemSpec t = layered({0.2, -0.1}, -0.4, {0.0, 0.15}, 0.0);
  const SpectralData d = closed_form_spectrum_q0(t, 24, ValidationMode::strict);
  RecoveredConstants start = exact_constants(t);
  start.a1 *= 1.002;
  start.a2 *= cplx(1.0, 0.001);
  start.b += 1e-3;
  start.l1 = start.b;
  start.l2 = t.T - start.b;
  const ModelFit f = fit_model(d, t.T, start, 0.0);
  CHECK(f.residual < 1e-9);
  const ProblemSpec m = build_model(f.constants, t.T, f.boundary);
  const SpectralData md = closed_form_spectrum_q0(m, 24, ValidationMode::strict);
  for (std::size_t i = 0; i < d.data.size(); ++i) CHECK(rel_err(md.data[i].lambda, d.data[i].lambda) < 1e-8);
}

TEST_CASE("degenerate data reproduce the zero problem") {
  const ProblemSpec t = layered(0.0, 0.0, 0.0, 0.0);
  const SpectralData d = closed_form_spectrum_q0(t, 24, ValidationMode::strict);
  InverseConfig cfg;
  cfg.N = 24;
  cfg.model_constants = exact_constants(t);
  cfg.fit_model = false;
  const ReconstructionResult r = invert(d, t.T, cfg);
  CHECK(r.dropped == 48);
  for (cplx v : r.q) CHECK(v == cplx(0.0));
  CHECK(r.h == cplx(0.0));
  CHECK(r.H == cplx(0.0));
  CHECK(r.d2 == cplx(0.0));
}

TEST_CASE("small round trip") {
  const ProblemSpec t = bump();
  const SpectralData& d = bump_spectrum();
  InverseConfig cfg;
  cfg.N = 24;
  cfg.grid_points = 151;
  // Too few entries for the asymptotic recovery; the model fit starts from the true constants.
  cfg.model_constants = exact_constants(t);
  const ReconstructionResult r = invert(d, t.T, cfg);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < r.x.size(); ++i) {
    num += std::norm(r.q[i] - t.q(r.x[i]));
    den += std::norm(t.q(r.x[i]));
  }
  const double qerr = std::sqrt(num / den);
  MESSAGE("q " << qerr << ", h " << rel_err(r.h, t.h) << ", H " << rel_err(r.H, t.H) << ", d2 "
               << rel_err(r.d2, t.d2) << ", forward " << r.max_forward_residual);
  CHECK(qerr < 0.25);
  CHECK(rel_err(r.h, t.h) < 0.05);
  CHECK(rel_err(r.H, t.H) < 0.05);
  CHECK(std::abs(r.d2 - t.d2) < 0.05);
  CHECK(r.max_forward_residual < 1e-3);
  CHECK(!r.forward.empty());
  cfg.N = 25;
  try {
    invert(d, t.T, cfg);
    FAIL("expected InsufficientSamples");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InsufficientSamples);
    CHECK(e.stage() == "truncate");
  }
}
