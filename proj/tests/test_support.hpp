#pragma once

#include <cmath>
#include <random>

#include "cwsl/core_model.hpp"

namespace cwsl::testing {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline cplx random_cplx(std::mt19937_64& rng, double scale) {
  return {uniform(rng, -scale, scale), uniform(rng, -scale, scale)};
}

/// Random spec satisfying the strict-mode constraints, smooth complex q.
inline ProblemSpec random_strict_spec(std::mt19937_64& rng, std::size_t q_nodes = 201) {
  ProblemSpec s;
  s.T = uniform(rng, 1.0, 2.0);
  s.b = s.T * uniform(rng, 0.3, 0.7);
  const double phi2 = uniform(rng, 0.0, 0.4);
  const double phi1 = phi2 + uniform(rng, 0.2, 1.0);
  s.a1 = std::polar(uniform(rng, 0.6, 1.6), phi1);
  s.a2 = std::polar(uniform(rng, 0.6, 1.6), phi2);
  s.d1 = std::polar(uniform(rng, 0.7, 1.4), uniform(rng, 0.0, 1.0));
  s.d2 = random_cplx(rng, 0.5);
  s.h = random_cplx(rng, 0.5);
  s.H = random_cplx(rng, 0.5);
  const cplx c1 = random_cplx(rng, 2.0), c2 = random_cplx(rng, 2.0);
  const double w1 = uniform(rng, 1.0, 4.0), w2 = uniform(rng, 1.0, 4.0);
  s.q = Potential::sampled(s.T, q_nodes, [&](double x) { return c1 * std::sin(w1 * x) + c2 * std::cos(w2 * x); });
  return s;
}

/// q == 0, r == 1, d1 = 1, d2 = 0: the classical operator (relaxed mode only).
inline ProblemSpec classical_spec(double T = 1.0, cplx h = 0.0, cplx H = 0.0) {
  ProblemSpec s;
  s.T = T;
  s.b = 0.5 * T;
  s.q = Potential::zero(T);
  s.h = h;
  s.H = H;
  return s;
}

inline double rel_err(cplx got, cplx want) { return std::abs(got - want) / std::max(1.0, std::abs(want)); }

}  // namespace cwsl::testing
