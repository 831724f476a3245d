#include <cmath>
#include <random>

#include "cwsl/error.hpp"
#include "cwsl/param_recovery.hpp"
#include "cwsl/spectral_forward.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace cwsl;
using cwsl::testing::classical_spec;
using cwsl::testing::random_strict_spec;
using cwsl::testing::rel_err;

namespace {

ProblemSpec layered_q0() {
  ProblemSpec s;
  s.T = 1.5;
  s.b = 0.6;
  s.q = Potential::zero(s.T);
  s.a1 = std::polar(1.8, 0.25);
  s.a2 = std::polar(0.6, 0.15);
  s.d1 = std::polar(1.0, 0.3);
  s.d2 = {0.0, 0.15};
  s.h = {0.2, -0.1};
  s.H = -0.4;
  return s;
}

ProblemSpec bump_spec(double amplitude) {
  ProblemSpec s = layered_q0();
  s.q = Potential::sampled(s.T, 301, [amplitude](double x) {
    return amplitude * cplx(1.0, 0.5) * std::exp(-25.0 * (x - 0.5) * (x - 0.5));
  });
  return s;
}

}  // namespace

TEST_CASE("classical characteristic and Weyl functions") {
  const ProblemSpec s = classical_spec(1.3);
  for (cplx rho : {cplx(2.1, 0.3), cplx(7.9, -0.2), cplx(0.4, 1.1)}) {
    const cplx lam = rho * rho;
    CHECK(rel_err(char_delta(s, lam), rho * std::sin(rho * s.T)) < 1e-10);
    CHECK(rel_err(delta0(s, lam), std::cos(rho * s.T)) < 1e-10);
    CHECK(rel_err(weyl_M(s, lam), std::cos(rho * s.T) / (rho * std::sin(rho * s.T))) < 1e-9);
  }
  CHECK(std::abs(delta0(s, 0.0) - 1.0) < 1e-12);
}

TEST_CASE("two evaluations of Delta and Delta0 agree") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 5; ++i) {
    const ProblemSpec s = random_strict_spec(rng);
    const cplx lam = cwsl::testing::random_cplx(rng, 60.0);
    const cplx d = char_delta(s, lam);
    CHECK(std::abs(d - char_delta_from_psi(s, lam)) <= 1e-9 * std::max(1.0, std::abs(d)));
    const cplx d0 = delta0(s, lam);
    CHECK(std::abs(d0 - delta0_from_S(s, lam)) <= 1e-9 * std::max(1.0, std::abs(d0)));
  }
}

TEST_CASE("M equals Phi at zero") {
  std::mt19937_64 rng(5);
  const ProblemSpec s = random_strict_spec(rng);
  const cplx lam{14.0, 3.0};
  const cplx m = weyl_M(s, lam);
  const SolutionTrace t = Phi_solution(s, lam, XGrid(s.T, s.b, 5));
  CHECK(rel_err(t.samples.front().y, m) < 1e-9);
}

TEST_CASE("i rho a1 M tends to one along the sampling ray") {
  const ProblemSpec s = bump_spec(0.3);
  const DerivedConstants c = validate_problem(s, ValidationMode::strict);
  const cplx dir = a1_sampling_ray(c.phi1);
  double last = 1.0;
  for (double r : {40.0, 160.0}) {
    const cplx rho = r * dir;
    const double dev = std::abs(kI * rho * s.a1 * weyl_M(s, rho * rho) - 1.0);
    CHECK(dev < last);
    last = dev;
  }
  CHECK(last < 0.05);
}

TEST_CASE("seeds follow the branch rays") {
  const ProblemSpec s = layered_q0();
  const DerivedConstants c = validate_problem(s, ValidationMode::strict);
  const double l1 = s.b, l2 = s.T - s.b;
  for (int k : {3, 10, 50}) {
    const AsymptoticSeed s1 = asymptotic_seed(k, 1, c);
    CHECK(std::abs(s.a1 * (s1.rho_seed - *c.C1) + k * kPi / l1) < 1e-9 * k);
    const AsymptoticSeed s2 = asymptotic_seed(k, 2, c);
    CHECK(std::abs(s.a2 * (s2.rho_seed - *c.C2) - k * kPi / l2) < 1e-9 * k);
  }
  const double gap = std::abs(asymptotic_seed(201, 2, c).rho_seed) - std::abs(asymptotic_seed(200, 2, c).rho_seed);
  CHECK(gap == doctest::Approx(c.spacing(2)).epsilon(1e-3));
}

TEST_CASE("asymptotic Weyl coefficients") {
  const DerivedConstants c = validate_problem(layered_q0(), ValidationMode::strict);
  CHECK(asymptotic_weyl(3, 1, c) == asymptotic_weyl(30, 1, c));
  const double r10 = std::abs(asymptotic_weyl(10, 2, c)), r11 = std::abs(asymptotic_weyl(11, 2, c));
  const double r20 = std::abs(asymptotic_weyl(20, 2, c)), r21 = std::abs(asymptotic_weyl(21, 2, c));
  CHECK(r11 < r10);
  CHECK(r21 / r20 == doctest::Approx(r11 / r10).epsilon(1e-9));
  CHECK_THROWS_AS(asymptotic_seed(1, 3, c), Error);
}

TEST_CASE("classical Neumann spectrum") {
  const double T = 1.7;
  const ProblemSpec s = classical_spec(T);
  const SpectralData d = locate_eigenvalues(s, 16, ValidationMode::relaxed);
  REQUIRE(d.data.size() == 16);
  for (const SpectralDatum& e : d.data) {
    const double want = std::pow(e.k * kPi / T, 2);
    CHECK(std::abs(e.lambda - want) <= 1e-8 * std::max(1.0, want));
    CHECK(rel_err(e.M, e.k == 0 ? 1.0 / T : 2.0 / T) < 1e-6);
  }
  const SpectralData cf = closed_form_spectrum_q0(s, 16, ValidationMode::relaxed);
  for (std::size_t i = 0; i < cf.data.size(); ++i) {
    CHECK(rel_err(cf.data[i].lambda, d.data[i].lambda) < 1e-8);
    CHECK(rel_err(cf.data[i].M, d.data[i].M) < 1e-8);
  }
}

TEST_CASE("closed form matches integration on a layered q = 0 problem") {
  const ProblemSpec s = layered_q0();
  const SpectralData a = locate_eigenvalues(s, 12, ValidationMode::strict);
  const SpectralData b = closed_form_spectrum_q0(s, 12, ValidationMode::strict);
  REQUIRE(a.data.size() == b.data.size());
  CHECK(a.seed_offset == b.seed_offset);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    CHECK(a.data[i].branch == b.data[i].branch);
    CHECK(std::abs(a.data[i].lambda - b.data[i].lambda) <= 1e-8 * std::max(1.0, std::abs(a.data[i].lambda)));
    CHECK(std::abs(a.data[i].M - b.data[i].M) <= 1e-8 * std::max(std::abs(a.data[i].M), 1e-300));
  }
  CHECK_THROWS_AS(closed_form_spectrum_q0(bump_spec(0.3), 4, ValidationMode::strict), Error);
}

TEST_CASE("located eigenvalues are simple zeros with consistent residues") {
  const ProblemSpec s = bump_spec(0.3);
  LocateDiagnostics diag;
  const SpectralData d = locate_eigenvalues(s, 10, ValidationMode::strict, {}, &diag);
  CHECK(d.count_branch1 == 10);
  CHECK(d.count_branch2 == 10);
  const auto f = integrated_characteristic(s);
  int inside = 0;
  for (const SpectralDatum& e : d.data) {
    const CharEval v = f->eval(e.lambda, false);
    CHECK(std::abs(v.delta) <= 1e-9 * v.scale);
    if (std::abs(e.lambda.real()) < diag.half_width && std::abs(e.lambda.imag()) < diag.half_width) ++inside;
  }
  CHECK(inside == diag.winding);
  const SpectralData again = locate_eigenvalues(s, 10, ValidationMode::strict);
  REQUIRE(again.data.size() == d.data.size());
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    CHECK(again.data[i].lambda == d.data[i].lambda);
    CHECK(again.data[i].M == d.data[i].M);
  }
  // Residue by the trapezoid rule on a small circle; M_k of branch 1 only, branch 2 is exponentially small.
  for (const SpectralDatum& e : d.branch(1)) {
    if (e.k > 4) break;
    const double r = 1e-3 * std::max(1.0, std::abs(e.lambda));
    const int n = 64;
    cplx sum{};
    for (int j = 0; j < n; ++j) {
      const cplx u = std::polar(1.0, 2.0 * kPi * j / n);
      sum += weyl_M(s, e.lambda + r * u) * r * u;
    }
    CHECK(rel_err(sum / static_cast<double>(n), e.M) < 1e-6);
  }
}

TEST_CASE("seed distance decays like 1/k and Weyl coefficients approach their limits") {
  const ProblemSpec s = bump_spec(0.3);
  const DerivedConstants c = validate_problem(s, ValidationMode::strict);
  const SpectralData d = locate_eigenvalues(s, 40, ValidationMode::strict);
  for (int j = 1; j <= 2; ++j) {
    double worst = 0.0;
    for (const SpectralDatum& e : d.branch(j)) {
      const int k = d.seed_index(e);
      if (k >= 20) worst = std::max(worst, k * std::abs(e.rho - asymptotic_seed(k, j, c).rho_seed));
    }
    CHECK(worst < 5.0);
    const SpectralDatum& last = d.branch(j).back();
    CHECK(std::abs(last.M / asymptotic_weyl(d.seed_index(last), j, c) - 1.0) < 0.1);
  }
}

TEST_CASE("eigenvalues move continuously under a growing bump") {
  SpectralData prev = locate_eigenvalues(bump_spec(0.0), 8, ValidationMode::strict);
  for (int step = 1; step <= 4; ++step) {
    const SpectralData next = locate_eigenvalues(bump_spec(0.1 * step), 8, ValidationMode::strict);
    REQUIRE(next.data.size() == prev.data.size());
    for (std::size_t i = 0; i < next.data.size(); ++i) {
      CHECK(next.data[i].branch == prev.data[i].branch);
      // Nearest previous eigenvalue on the same branch is the same index.
      std::size_t best = 0;
      for (std::size_t j = 0; j < prev.data.size(); ++j)
        if (std::abs(prev.data[j].lambda - next.data[i].lambda) < std::abs(prev.data[best].lambda - next.data[i].lambda))
          best = j;
      CHECK(best == i);
    }
    prev = next;
  }
}

TEST_CASE("count_zeros on the classical problem") {
  const auto f = closed_form_characteristic(classical_spec(1.0));
  // (k pi)^2 for k = 0..3 lie in the square of half-width 100.
  CHECK(count_zeros(*f, {cplx(-100.0, -100.0), cplx(100.0, 100.0)}) == 4);
  CHECK(count_zeros(*f, {cplx(20.0, -5.0), cplx(30.0, 5.0)}) == 0);
}
