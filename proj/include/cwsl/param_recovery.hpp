#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cwsl/core_model.hpp"

namespace cwsl {

/// Partial estimates of one limit and the spread of the last three.
struct ExtrapolationTrace {
  std::vector<cplx> partial;
  cplx estimate;
  double residual = 0.0;
};

struct RecoveryOptions {
  /// Degree of the polynomial in 1/k eliminated by Richardson extrapolation.
  int order = 1;
  /// Use A = exp(2i a2 l2 beta), beta_k = rho_k - k (rho_{k+1} - rho_k), which
  /// keeps errors in a2 from being multiplied by k.
  bool robust_A = true;
  /// |Im b| above this fraction of T raises NonRealGeometry.
  double nonreal_tol = 1e-3;
};

/// Richardson extrapolation of values(t) to t = 0 over the last half of the
/// samples; t is 1/k or 1/|rho|, increasing k first.
ExtrapolationTrace extrapolate(const std::vector<double>& t, const std::vector<cplx>& values, int order);

struct RecoveredConstants {
  cplx a1;
  cplx a2;
  cplx d1;
  cplx A_ratio;
  double b = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  /// Imaginary part of the extrapolated b.
  double b_imag = 0.0;
  std::map<std::string, ExtrapolationTrace> diagnostics;
};

/// a1 = lim (i rho M(rho^2))^{-1} from (rho, M) samples along a ray.
ExtrapolationTrace recover_a1(const std::vector<std::pair<cplx, cplx>>& M_samples, int order = 1);

/// Direction exp(i (pi/2 - phi1 + pi/4)) used for Weyl-function samples.
cplx a1_sampling_ray(double phi1);

/// a1 = 2 / (P M_inf) with P = lim -k pi / rho_{k1} and M_inf = lim M_{k1};
/// needs only the spectral data.
ExtrapolationTrace recover_a1_from_spectrum(const SpectralData& data, const RecoveryOptions& opts = {});

struct Geometry {
  double b = 0.0;
  double l2 = 0.0;
  cplx a2;
  double b_imag = 0.0;
  ExtrapolationTrace b_trace;
  ExtrapolationTrace a2_trace;
};

Geometry recover_geometry(const SpectralData& data, cplx a1, double T, const RecoveryOptions& opts = {});

struct JumpScaling {
  cplx A;
  cplx d1;
  ExtrapolationTrace trace;
};

JumpScaling recover_d1(const SpectralData& data, cplx a1, cplx a2, double l2, const RecoveryOptions& opts = {});

/// d1 from A with arg d1 in [0, pi).
cplx d1_from_ratio(cplx A, cplx a1, cplx a2);

/// Runs the whole chain: a1 from the spectrum, then b, a2, A and d1.
RecoveredConstants recover_constants(const SpectralData& data, double T, const RecoveryOptions& opts = {});

}  // namespace cwsl
