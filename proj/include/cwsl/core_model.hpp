#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cwsl/numeric.hpp"

namespace cwsl {

/// Complex potential q on [0, T], stored as samples on a strictly increasing
/// grid and evaluated by piecewise-linear interpolation.
class Potential {
 public:
  /// q == 0 on [0, T]; two nodes, so the integrator sees a single linear piece.
  static Potential zero(double T);
  /// Uniform grid of `count` samples of `f`.
  static Potential sampled(double T, std::size_t count, const std::function<cplx(double)>& f);
  /// Arbitrary grid; must start at 0, end at T and be strictly increasing.
  static Potential from_samples(std::vector<double> grid, std::vector<cplx> values);

  Potential() = default;

  cplx operator()(double x) const;

  std::span<const double> nodes() const { return grid_; }
  std::span<const cplx> values() const { return values_; }
  double length() const { return grid_.empty() ? 0.0 : grid_.back(); }
  bool is_zero() const;

  friend bool operator==(const Potential&, const Potential&) = default;

 private:
  std::vector<double> grid_;
  std::vector<cplx> values_;
  bool uniform_ = false;
};

/// Boundary value problem -y'' + q y = lambda r y on (0, T), r = a1^2 on (0, b)
/// and a2^2 on (b, T), Robin conditions y'(0) - h y(0) = 0, y'(T) + H y(T) = 0
/// and transmission y(b+0) = d1 y(b-0), y'(b+0) = y'(b-0)/d1 + d2 y(b-0).
struct ProblemSpec {
  double T = 1.0;
  double b = 0.5;
  Potential q;
  cplx a1{1.0};
  cplx a2{1.0};
  cplx h{0.0};
  cplx H{0.0};
  cplx d1{1.0};
  cplx d2{0.0};

  friend bool operator==(const ProblemSpec&, const ProblemSpec&) = default;
};

enum class ValidationMode { strict, relaxed };

const char* to_string(ValidationMode mode) noexcept;

struct DerivedConstants {
  ValidationMode mode = ValidationMode::strict;
  double l1 = 0.0;
  double l2 = 0.0;
  double r1 = 0.0;
  double r2 = 0.0;
  double phi1 = 0.0;
  double phi2 = 0.0;
  cplx omega_plus;
  cplx omega_minus;
  /// omega_plus / omega_minus; empty when omega_minus == 0 (relaxed mode only).
  std::optional<cplx> A_ratio;
  std::optional<cplx> C1;
  std::optional<cplx> C2;
  double alpha = 0.0;
  /// Boundaries of the four rho-plane sectors: -phi2, pi - phi1, pi - phi2, -phi1.
  std::array<double, 4> sector_angles{};
  std::vector<std::string> warnings;

  /// Asymptotic distance between consecutive |rho| on `branch` (1 or 2).
  double spacing(int branch) const;
  /// Direction exp(i * theta) of the asymptotic ray of `branch`.
  cplx ray(int branch) const;
  cplx a(int branch) const { return branch == 1 ? a1_ : a2_; }
  bool asymptotics_defined() const { return C1.has_value() && C2.has_value(); }

 private:
  friend DerivedConstants validate_problem(const ProblemSpec&, ValidationMode);
  cplx a1_;
  cplx a2_;
};

DerivedConstants validate_problem(const ProblemSpec& spec, ValidationMode mode);

/// Maps (y(b-0), y'(b-0)) to (y(b+0), y'(b+0)); unimodular.
Mat2 transfer_matrix(cplx d1, cplx d2);

/// r(x); throws OnInterface at x == b.
cplx weight_at(const ProblemSpec& spec, double x);

enum class Layer { left, right };

enum class Provenance { computed, loaded };

struct SpectralDatum {
  /// Serial index within the branch, from 0.
  int k = 0;
  /// 1 or 2 in strict mode; 1 for the merged sequence of relaxed mode.
  int branch = 1;
  cplx lambda;
  /// Square root of lambda nearest the branch's asymptotic ray.
  cplx rho;
  /// Weyl coefficient, the residue of M at lambda.
  cplx M;
};

struct SpectralData {
  /// Branch-major, ascending k.
  std::vector<SpectralDatum> data;
  int count_branch1 = 0;
  int count_branch2 = 0;
  Provenance provenance = Provenance::computed;
  /// Index of the asymptotic seed matched to k = 0 on each branch.
  std::array<int, 2> seed_offset{0, 0};

  std::vector<SpectralDatum> branch(int j) const;
  int seed_index(const SpectralDatum& d) const { return d.k + seed_offset[d.branch == 2 ? 1 : 0]; }
};

inline cplx layer_weight(const ProblemSpec& spec, Layer layer) {
  return layer == Layer::left ? spec.a1 * spec.a1 : spec.a2 * spec.a2;
}

}  // namespace cwsl
