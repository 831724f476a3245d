#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "cwsl/core_model.hpp"

namespace cwsl {

struct SolutionSample {
  double x = 0.0;
  cplx y;
  cplx dy;
};

/// <u, v> = u v' - u' v.
inline cplx wronskian(const SolutionSample& u, const SolutionSample& v) { return u.y * v.dy - u.dy * v.y; }

struct IntegratorOptions {
  /// Local relative tolerance of the step-doubling error estimate.
  double rel_tol = 1e-10;
  /// Steps shorter than this fraction of T abort with ToleranceNotMet.
  double min_step_fraction = 1e-13;
  /// Upper bound on |h| * sqrt(|lambda r - q|) for a single step.
  double max_phase_per_step = 4.0;
};

/// Uniform output grid on [0, T]. Stations are the grid points followed by
/// the two one-sided interface points b-0 and b+0. A grid point that falls on
/// b holds the left limit.
class XGrid {
 public:
  XGrid(double T, double b, std::size_t points);

  std::size_t size() const { return x_.size(); }
  std::span<const double> points() const { return x_; }
  double T() const { return T_; }
  double b() const { return b_; }

  std::size_t station_count() const { return x_.size() + 2; }
  std::size_t left_station() const { return x_.size(); }
  std::size_t right_station() const { return x_.size() + 1; }
  double station_x(std::size_t s) const { return s < x_.size() ? x_[s] : b_; }
  Layer station_layer(std::size_t s) const;

 private:
  double T_;
  double b_;
  std::vector<double> x_;
};

enum class SolutionKind { phi, psi, S, Phi };

/// Values (and optionally lambda-derivatives) of one solution on an XGrid.
struct SolutionTrace {
  cplx lambda;
  SolutionKind kind = SolutionKind::phi;
  std::vector<SolutionSample> samples;
  SolutionSample left_at_b;
  SolutionSample right_at_b;
  /// d/dlambda of (y, y'); empty unless requested.
  std::vector<SolutionSample> d_samples;
  SolutionSample d_left_at_b;
  SolutionSample d_right_at_b;

  bool has_derivative() const { return !d_samples.empty(); }
  const SolutionSample& station(std::size_t s) const;
  const SolutionSample& d_station(std::size_t s) const;
};

/// Result of integrating between two points.
struct Segment {
  /// Samples at the requested stops, in integration order.
  std::vector<SolutionSample> samples;
  SolutionSample end;
  /// One-sided values at b when the path reaches or crosses it.
  std::optional<SolutionSample> left_at_b;
  std::optional<SolutionSample> right_at_b;
};

/// Advances (y, y') of -y'' + q y = lambda r y from init.x to target.
/// The initial pair is taken on the side of init.x that faces target;
/// crossing b applies the transfer matrix (forward) or its inverse (backward).
Segment integrate(const ProblemSpec& spec, cplx lambda, const SolutionSample& init, double target,
                  const IntegratorOptions& opts = {}, std::span<const double> stops = {});

/// phi: (1, h) at 0; S: (0, 1) at 0; psi: (1, -H) at T, integrated right to left.
SolutionTrace phi(const ProblemSpec& spec, cplx lambda, const XGrid& grid, const IntegratorOptions& opts = {},
                  bool with_derivative = false);
SolutionTrace S_sol(const ProblemSpec& spec, cplx lambda, const XGrid& grid, const IntegratorOptions& opts = {},
                    bool with_derivative = false);
SolutionTrace psi(const ProblemSpec& spec, cplx lambda, const XGrid& grid, const IntegratorOptions& opts = {});

/// Weyl solution psi / Delta, Delta = U(psi); equal to S + M phi but without
/// the growing parts. Throws NearEigenvalue when |Delta(lambda)| is negligible.
SolutionTrace Phi_solution(const ProblemSpec& spec, cplx lambda, const XGrid& grid, const IntegratorOptions& opts = {});

/// d/dlambda of phi or S (kind must be phi or S), returned in the samples of
/// the trace (the d_* fields duplicate them).
SolutionTrace lambda_derivative(const ProblemSpec& spec, cplx lambda, SolutionKind kind, const XGrid& grid,
                                const IntegratorOptions& opts = {});

/// Integral form of the kernel: int_0^x r phi(t, lambda) phi(t, mu) dt at every
/// station of `grid`, by Gauss-Legendre quadrature on sub-cells short enough
/// to resolve the oscillation.
std::vector<cplx> lagrange_integral(const ProblemSpec& spec, cplx lambda, cplx mu, const XGrid& grid,
                                    const IntegratorOptions& opts = {});

struct KernelOptions {
  /// |lambda - mu| below switch_rel * (1 + |lambda|) uses the integral form.
  double switch_rel = 1e-4;
  IntegratorOptions integrator;
};

/// D(x, lambda, mu) = <phi(x, lambda), phi(x, mu)> / (lambda - mu) from two samples.
cplx d_kernel_quotient(const SolutionSample& phi_lambda, const SolutionSample& phi_mu, cplx lambda, cplx mu);

/// D(x, lambda, lambda) = phi_lambda' dphi - phi dphi' from phi and d/dlambda phi.
cplx d_kernel_diagonal(const SolutionSample& phi, const SolutionSample& dphi);

/// D(x, lambda, mu) at a single point, choosing the evaluation path by |lambda - mu|.
cplx D_kernel(const ProblemSpec& spec, double x, cplx lambda, cplx mu, const KernelOptions& opts = {});

}  // namespace cwsl
