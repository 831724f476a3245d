#pragma once

#include <array>
#include <memory>

#include "cwsl/core_model.hpp"
#include "cwsl/ode_engine.hpp"

namespace cwsl {

/// Delta(lambda), d/dlambda Delta and a magnitude scale for relative tests.
struct CharEval {
  cplx delta;
  cplx ddelta;
  double scale = 1.0;
  /// phi(T, lambda); at a zero of Delta, Delta0 = psi(0) = 1 / phi(T).
  cplx phi_end;
};

/// Source of Delta and Delta0 for eigenvalue localization. Implementations
/// are immutable and safe to call concurrently.
class CharacteristicFunction {
 public:
  virtual ~CharacteristicFunction() = default;
  virtual CharEval eval(cplx lambda, bool with_derivative) const = 0;
  /// Delta0(lambda) = psi(0, lambda) = V(S). `scale`, if given, receives
  /// |S'(T)| + |H S(T)|, the size of the terms that cancel in V(S).
  virtual cplx delta0(cplx lambda, double* scale = nullptr) const = 0;
};

/// Delta from the integrated phi, Delta0 from V(S).
std::unique_ptr<CharacteristicFunction> integrated_characteristic(const ProblemSpec& spec,
                                                                  const IntegratorOptions& opts = {});
/// Exact constant-coefficient propagators; requires q == 0.
std::unique_ptr<CharacteristicFunction> closed_form_characteristic(const ProblemSpec& spec);

/// Delta(lambda) = -V(phi) = -(phi'(T) + H phi(T)).
cplx char_delta(const ProblemSpec& spec, cplx lambda, const IntegratorOptions& opts = {});
/// U(psi) = psi'(0) - h psi(0); equals Delta(lambda).
cplx char_delta_from_psi(const ProblemSpec& spec, cplx lambda, const IntegratorOptions& opts = {});
/// Delta0(lambda) = psi(0, lambda).
cplx delta0(const ProblemSpec& spec, cplx lambda, const IntegratorOptions& opts = {});
/// V(S) = S'(T) + H S(T); equals Delta0(lambda).
cplx delta0_from_S(const ProblemSpec& spec, cplx lambda, const IntegratorOptions& opts = {});
/// M(lambda) = Delta0 / Delta. Throws NearEigenvalue when Delta is negligible.
cplx weyl_M(const ProblemSpec& spec, cplx lambda, const IntegratorOptions& opts = {});

struct AsymptoticSeed {
  int k = 0;
  int branch = 1;
  cplx rho_seed;
};

/// (k pi / (r_j l_j)) exp(i theta) + C_j on the ray of branch j.
AsymptoticSeed asymptotic_seed(int k, int branch, const DerivedConstants& consts);

/// Leading term of the Weyl coefficient for seed index k.
cplx asymptotic_weyl(int k, int branch, const DerivedConstants& consts);

struct LocateOptions {
  /// Seeds below this index are covered by the argument-principle search.
  int K0 = 5;
  /// Newton stops once |Delta| <= newton_tol * scale.
  double newton_tol = 1e-13;
  int max_newton = 60;
  /// Zeros with |Delta'| (1 + |lambda|) < simplicity * scale are rejected.
  double simplicity = 1e-8;
  /// Off-center split fraction for the recursive subdivision.
  double split = 0.537;
  IntegratorOptions integrator;
};

struct LocateDiagnostics {
  /// Half-width of the lambda-plane search square centred at 0.
  double half_width = 0.0;
  /// Winding number of Delta on that square.
  int winding = 0;
  /// Zeros found inside the square, per branch.
  std::array<int, 2> low_per_branch{0, 0};
  int contours = 0;
};

/// Axis-parallel rectangle in the lambda plane.
struct Rect {
  cplx lo;
  cplx hi;
};

/// (1 / 2 pi i) of the contour integrals of Delta'/Delta and lambda Delta'/Delta.
struct ContourMoments {
  cplx count;
  cplx first;
};

ContourMoments contour_moments(const CharacteristicFunction& f, const Rect& rect);
/// Rounded winding number; throws ToleranceNotMet if the quadrature cannot certify an integer.
int count_zeros(const CharacteristicFunction& f, const Rect& rect);

SpectralData locate_eigenvalues(const ProblemSpec& spec, int N_per_branch, ValidationMode mode,
                                const LocateOptions& opts = {}, LocateDiagnostics* diag = nullptr);
SpectralData locate_eigenvalues(const CharacteristicFunction& f, const DerivedConstants& consts, int N_per_branch,
                                const LocateOptions& opts = {}, LocateDiagnostics* diag = nullptr);

/// Residue of M at a simple zero of Delta: Delta0 / Delta'. At a zero psi is
/// proportional to phi, so Delta0 = 1 / phi(T) as well; that form is used when
/// V(S) loses more than three digits to cancellation, which keeps exponentially
/// small M_k accurate.
cplx weyl_coefficient(const ProblemSpec& spec, cplx lambda_k, const LocateOptions& opts = {});

/// Spectrum of a q == 0 spec from exact propagators, same localization.
SpectralData closed_form_spectrum_q0(const ProblemSpec& spec, int N_per_branch, ValidationMode mode,
                                     const LocateOptions& opts = {}, LocateDiagnostics* diag = nullptr);

}  // namespace cwsl
