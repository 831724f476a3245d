#include <cmath>
#include <random>

#include "cwsl/error.hpp"
#include "cwsl/ode_engine.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace cwsl;
using cwsl::testing::classical_spec;
using cwsl::testing::rel_err;

namespace {

// Fixed-step RK4 on y'' = (q - lambda r) y with r == 1.
cplx rk4_end(const std::function<cplx(double)>& q, cplx lambda, double T, int steps) {
  cplx y = 1.0, v = 0.0;
  const double h = T / steps;
  auto f = [&](double x, cplx yy) { return (q(x) - lambda) * yy; };
  for (int i = 0; i < steps; ++i) {
    const double x = i * h;
    const cplx k1y = v, k1v = f(x, y);
    const cplx k2y = v + 0.5 * h * k1v, k2v = f(x + 0.5 * h, y + 0.5 * h * k1y);
    const cplx k3y = v + 0.5 * h * k2v, k3v = f(x + 0.5 * h, y + 0.5 * h * k2y);
    const cplx k4y = v + h * k3v, k4v = f(x + h, y + h * k3y);
    y += h / 6 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
    v += h / 6 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
  }
  return y;
}

}  // namespace

TEST_CASE("constant coefficients reproduce cos") {
  const ProblemSpec s = classical_spec(1.0);
  const cplx rho{7.3, 0.4};
  for (double x : {0.0, 0.25, 0.5, 0.77, 1.0}) {
    const SolutionSample r = integrate(s, rho * rho, {0.0, 1.0, 0.0}, x).end;
    CHECK(rel_err(r.y, std::cos(rho * x)) < 1e-12);
    CHECK(rel_err(r.dy, -rho * std::sin(rho * x)) < 1e-11);
  }
}

TEST_CASE("jump scales the constant solution") {
  ProblemSpec s = classical_spec(1.0);
  s.d1 = 2.0;
  const XGrid g(1.0, 0.5, 11);
  const SolutionTrace t = phi(s, 0.0, g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const cplx want = g.points()[i] <= 0.5 ? 1.0 : 2.0;
    CHECK(std::abs(t.samples[i].y - want) < 1e-14);
  }
  CHECK(std::abs(t.left_at_b.y - 1.0) < 1e-14);
  CHECK(std::abs(t.right_at_b.y - 2.0) < 1e-14);
  // Backward crossing undoes the jump.
  const Segment back = integrate(s, 0.0, {1.0, 2.0, 0.0}, 0.0);
  CHECK(std::abs(back.end.y - 1.0) < 1e-14);
  REQUIRE(back.left_at_b);
  CHECK(std::abs(back.left_at_b->y - 1.0) < 1e-14);
}

TEST_CASE("linear potential against fixed-step reference") {
  ProblemSpec s = classical_spec(1.0);
  auto qf = [](double x) { return cplx(x); };
  s.q = Potential::from_samples({0.0, 1.0}, {0.0, 1.0});
  const cplx ref = rk4_end(qf, 0.0, 1.0, 20000);
  const SolutionSample r = integrate(s, 0.0, {0.0, 1.0, 0.0}, 1.0).end;
  CHECK(std::abs(r.y - ref) < 1e-8);
  IntegratorOptions tight;
  tight.rel_tol = 1e-12;
  CHECK(std::abs(integrate(s, 0.0, {0.0, 1.0, 0.0}, 1.0, tight).end.y - r.y) < 1e-8);
  // Oscillatory regime as well.
  const cplx lam{40.0, 3.0};
  CHECK(std::abs(integrate(s, lam, {0.0, 1.0, 0.0}, 1.0).end.y - rk4_end(qf, lam, 1.0, 20000)) < 1e-8);
}

TEST_CASE("phi and S closed forms") {
  const ProblemSpec s = classical_spec(1.0);
  const XGrid g(1.0, 0.5, 21);
  const cplx rho{5.1, -0.7};
  const SolutionTrace p = phi(s, rho * rho, g);
  const SolutionTrace sp = S_sol(s, rho * rho, g);
  const SolutionTrace s0 = S_sol(s, 0.0, g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double x = g.points()[i];
    CHECK(rel_err(p.samples[i].y, std::cos(rho * x)) < 1e-11);
    CHECK(rel_err(sp.samples[i].y, std::sin(rho * x) / rho) < 1e-11);
    CHECK(std::abs(s0.samples[i].y - x) < 1e-13);
  }
}

TEST_CASE("psi starts from the right boundary condition") {
  const ProblemSpec s = classical_spec(1.0, 0.0, {0.3, 0.1});
  const XGrid g(1.0, 0.5, 5);
  const SolutionTrace t = psi(s, {2.0, 1.0}, g);
  CHECK(std::abs(t.samples.back().y - 1.0) < 1e-15);
  CHECK(std::abs(t.samples.back().dy + s.H) < 1e-15);
}

TEST_CASE("Wronskian of phi and psi is constant") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const ProblemSpec s = cwsl::testing::random_strict_spec(rng);
    const XGrid g(s.T, s.b, 41);
    const cplx lam = cwsl::testing::random_cplx(rng, 80.0);
    const SolutionTrace p = phi(s, lam, g);
    const SolutionTrace q = psi(s, lam, g);
    const cplx w0 = wronskian(p.samples.front(), q.samples.front());
    for (std::size_t st = 0; st < g.station_count(); ++st)
      CHECK(std::abs(wronskian(p.station(st), q.station(st)) - w0) <= 1e-9 * std::abs(w0));
    // One-sided values obey the jump.
    const Mat2 J = transfer_matrix(s.d1, s.d2);
    const Vec2 l(p.left_at_b.y, p.left_at_b.dy);
    const Vec2 r = J * l;
    CHECK(std::abs(r(0) - p.right_at_b.y) <= 1e-12 * std::abs(r(0)));
    CHECK(std::abs(r(1) - p.right_at_b.dy) <= 1e-12 * std::abs(r(1)));
  }
}

TEST_CASE("Phi solution identities") {
  std::mt19937_64 rng(5);
  const ProblemSpec s = cwsl::testing::random_strict_spec(rng);
  const XGrid g(s.T, s.b, 31);
  const cplx lam{17.0, -4.0};
  const SolutionTrace p = phi(s, lam, g);
  const SolutionTrace q = psi(s, lam, g);
  const cplx delta = -(p.samples.back().dy + s.H * p.samples.back().y);
  const SolutionTrace Phi = Phi_solution(s, lam, g);
  const SolutionSample& a = Phi.samples.front();
  CHECK(std::abs(a.dy - s.h * a.y - 1.0) < 1e-12);
  const SolutionSample& e = Phi.samples.back();
  CHECK(std::abs(e.dy + s.H * e.y) < 1e-9 * (std::abs(e.dy) + 1.0));
  for (std::size_t st = 0; st < g.station_count(); ++st) {
    CHECK(std::abs(wronskian(p.station(st), Phi.station(st)) - 1.0) < 1e-9);
    CHECK(rel_err(Phi.station(st).y, q.station(st).y / delta) < 1e-9);
  }
}

TEST_CASE("Phi_solution rejects eigenvalues") {
  const ProblemSpec s = classical_spec(1.0);
  const XGrid g(1.0, 0.5, 5);
  CHECK_THROWS_AS(Phi_solution(s, kPi * kPi, g), Error);
}

TEST_CASE("wronskian algebra") {
  std::mt19937_64 rng(3);
  const SolutionSample u{0.0, 1.0, 0.0}, v{0.0, 0.0, 1.0};
  CHECK(wronskian(u, v) == cplx(1.0));
  for (int i = 0; i < 10; ++i) {
    const SolutionSample a{0.0, cwsl::testing::random_cplx(rng, 3), cwsl::testing::random_cplx(rng, 3)};
    const SolutionSample b{0.0, cwsl::testing::random_cplx(rng, 3), cwsl::testing::random_cplx(rng, 3)};
    CHECK(wronskian(a, a) == cplx(0.0));
    CHECK(wronskian(a, b) == -wronskian(b, a));
  }
}

TEST_CASE("D kernel closed form and both evaluation paths") {
  const ProblemSpec s = classical_spec(1.0);
  const cplx rho{6.0, 0.3}, sig{4.5, -0.2};
  const double x = 0.7;
  const cplx want = (rho * std::sin(rho * x) * std::cos(sig * x) - sig * std::cos(rho * x) * std::sin(sig * x)) /
                    (rho * rho - sig * sig);
  CHECK(rel_err(D_kernel(s, x, rho * rho, sig * sig), want) < 1e-10);
  KernelOptions integral;
  integral.switch_rel = 1e10;
  CHECK(rel_err(D_kernel(s, x, rho * rho, sig * sig, integral), want) < 1e-10);
  CHECK(std::abs(D_kernel(s, 0.0, rho * rho, sig * sig)) < 1e-15);
}

TEST_CASE("D kernel diagonal against extrapolated quotient") {
  std::mt19937_64 rng(21);
  const ProblemSpec s = cwsl::testing::random_strict_spec(rng);
  const cplx lam{30.0, 5.0};
  const double x = 0.8 * s.T;
  const cplx diag = D_kernel(s, x, lam, lam);
  // Richardson on eps and eps / 2 of the quotient path.
  KernelOptions quotient;
  quotient.switch_rel = 0.0;
  const double eps = 1e-3;
  const cplx d1 = D_kernel(s, x, lam, lam + eps, quotient);
  const cplx d2 = D_kernel(s, x, lam, lam + eps / 2, quotient);
  CHECK(rel_err(diag, 2.0 * d2 - d1) < 1e-6);
  // Integral form at mu == lambda.
  KernelOptions integral;
  integral.switch_rel = 1e10;
  CHECK(rel_err(D_kernel(s, x, lam, lam * (1.0 + 1e-14), integral), diag) < 1e-9);
}

TEST_CASE("D kernel symmetry and path agreement on random specs") {
  std::mt19937_64 rng(99);
  KernelOptions integral;
  integral.switch_rel = 1e10;
  for (int trial = 0; trial < 6; ++trial) {
    const ProblemSpec s = cwsl::testing::random_strict_spec(rng);
    const cplx lam = cwsl::testing::random_cplx(rng, 70.0);
    const cplx mu = cwsl::testing::random_cplx(rng, 70.0);
    const double x = cwsl::testing::uniform(rng, 0.0, s.T);
    const cplx a = D_kernel(s, x, lam, mu);
    const cplx b = D_kernel(s, x, mu, lam);
    CHECK(std::abs(a - b) <= 1e-10 * std::max(1.0, std::abs(a)));
    CHECK(std::abs(D_kernel(s, x, lam, mu, integral) - a) <= 1e-7 * std::max(1.0, std::abs(a)));
  }
}

TEST_CASE("lagrange integral at stations") {
  std::mt19937_64 rng(8);
  const ProblemSpec s = cwsl::testing::random_strict_spec(rng);
  const XGrid g(s.T, s.b, 21);
  const cplx lam{12.0, 2.0}, mu{-5.0, 7.0};
  const std::vector<cplx> I = lagrange_integral(s, lam, mu, g);
  const SolutionTrace pl = phi(s, lam, g), pm = phi(s, mu, g);
  REQUIRE(I.size() == g.station_count());
  for (std::size_t st = 0; st < g.station_count(); ++st) {
    const cplx q = d_kernel_quotient(pl.station(st), pm.station(st), lam, mu);
    CHECK(std::abs(I[st] - q) <= 1e-9 * std::max(1.0, std::abs(q)));
  }
}

TEST_CASE("lambda derivative") {
  const ProblemSpec s = classical_spec(1.0);
  const XGrid g(1.0, 0.5, 11);
  const cplx rho{4.0, 0.5};
  const SolutionTrace d = lambda_derivative(s, rho * rho, SolutionKind::phi, g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double x = g.points()[i];
    CHECK(rel_err(d.samples[i].y, -x * std::sin(rho * x) / (2.0 * rho)) < 1e-10);
  }
  const SolutionTrace ds = lambda_derivative(s, 0.0, SolutionKind::S, g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double x = g.points()[i];
    CHECK(std::abs(ds.samples[i].y + x * x * x / 6.0) < 1e-13);
  }
  CHECK_THROWS_AS(lambda_derivative(s, 1.0, SolutionKind::psi, g), Error);

  std::mt19937_64 rng(4);
  const ProblemSpec r = cwsl::testing::random_strict_spec(rng);
  const XGrid gr(r.T, r.b, 11);
  const cplx lam{20.0, -3.0};
  const double delta = 1e-4;
  const SolutionTrace dr = lambda_derivative(r, lam, SolutionKind::phi, gr);
  const SolutionTrace up = phi(r, lam + delta, gr), dn = phi(r, lam - delta, gr);
  for (std::size_t st = 0; st < gr.station_count(); ++st) {
    const cplx fd = (up.station(st).dy - dn.station(st).dy) / (2.0 * delta);
    CHECK(std::abs(fd - dr.station(st).dy) <= 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("fourth-order convergence") {
  // Steps limited by the phase cap only; the defect must drop >= 4x per halving.
  ProblemSpec s = classical_spec(1.0);
  s.q = Potential::from_samples({0.0, 0.5, 1.0}, {cplx(0.0, 0.0), cplx(60.0, 20.0), cplx(-30.0, 0.0)});
  const XGrid g(1.0, 0.5, 2);
  const cplx lam{150.0, 10.0};
  auto defect = [&](double phase) {
    IntegratorOptions o;
    o.rel_tol = 1.0;
    o.max_phase_per_step = phase;
    const SolutionTrace p = phi(s, lam, g, o), q = psi(s, lam, g, o);
    return std::abs(wronskian(p.samples.front(), q.samples.front()) - wronskian(p.samples.back(), q.samples.back()));
  };
  const double e1 = defect(1.0), e2 = defect(0.5), e3 = defect(0.25);
  CHECK(e1 / e2 >= 4.0);
  CHECK(e2 / e3 >= 4.0);
}

TEST_CASE("step underflow reports ToleranceNotMet") {
  ProblemSpec s = classical_spec(1.0);
  s.q = Potential::from_samples({0.0, 1.0}, {0.0, 1e6});
  IntegratorOptions o;
  o.rel_tol = 1e-18;
  o.min_step_fraction = 1e-3;
  try {
    integrate(s, 0.0, {0.0, 1.0, 0.0}, 1.0, o);
    FAIL("expected ToleranceNotMet");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ToleranceNotMet);
  }
}
