#include "cwsl/param_recovery.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cwsl/error.hpp"

namespace cwsl {

namespace {

constexpr int kMinBranchSamples = 20;

// Neville evaluation at t = 0 of the interpolant through (t_i, v_i).
cplx neville_at_zero(const double* t, const cplx* v, int n) {
  std::vector<cplx> p(v, v + n);
  for (int m = 1; m < n; ++m)
    for (int i = 0; i + m < n; ++i) p[i] = (t[i + m] * p[i] - t[i] * p[i + 1]) / (t[i + m] - t[i]);
  return p[0];
}

std::vector<SpectralDatum> branch_checked(const SpectralData& data, int j, int need) {
  std::vector<SpectralDatum> b = data.branch(j);
  if (static_cast<int>(b.size()) < need) {
    std::ostringstream os;
    os << "branch " << j << " has " << b.size() << " entries, need " << need;
    throw Error(ErrorKind::InsufficientSamples, os.str());
  }
  return b;
}

}  // namespace

ExtrapolationTrace extrapolate(const std::vector<double>& t, const std::vector<cplx>& values, int order) {
  if (t.size() != values.size()) throw Error(ErrorKind::InvalidArgument, "extrapolation inputs differ in length");
  if (order < 0) throw Error(ErrorKind::InvalidArgument, "extrapolation order must be >= 0");
  const int n = static_cast<int>(t.size());
  if (n < 2 * (order + 3)) throw Error(ErrorKind::InsufficientSamples, "too few samples to extrapolate");
  ExtrapolationTrace out;
  for (int end = n / 2 + order; end < n; ++end)
    out.partial.push_back(neville_at_zero(t.data() + end - order, values.data() + end - order, order + 1));
  out.estimate = out.partial.back();
  const std::size_t m = out.partial.size();
  double lo = 0.0;
  for (std::size_t i = m - 3; i < m; ++i)
    for (std::size_t k = i + 1; k < m; ++k) lo = std::max(lo, std::abs(out.partial[i] - out.partial[k]));
  out.residual = lo;
  if (!is_finite(out.estimate)) throw Error(ErrorKind::NonFinite, "extrapolated limit is not finite");
  if (out.residual > 0.1 * std::max(std::abs(out.estimate), 1e-300))
    throw Error(ErrorKind::NoConvergence, "partial estimates do not settle");
  return out;
}

ExtrapolationTrace recover_a1(const std::vector<std::pair<cplx, cplx>>& M_samples, int order) {
  if (M_samples.size() < 4) throw Error(ErrorKind::InsufficientSamples, "recover_a1 needs at least four samples");
  std::vector<double> t;
  std::vector<cplx> v;
  for (const auto& [rho, M] : M_samples) {
    t.push_back(1.0 / std::abs(rho));
    v.push_back(1.0 / (kI * rho * M));
  }
  for (std::size_t i = 1; i < t.size(); ++i)
    if (!(t[i] < t[i - 1])) throw Error(ErrorKind::InvalidArgument, "samples must have increasing |rho|");
  const int n = static_cast<int>(t.size());
  if (n < 2 * (order + 3)) {
    // Short input: one extrapolation through the last order + 1 points.
    ExtrapolationTrace out;
    const int m = std::min(order + 1, n);
    for (int end = m; end <= n; ++end)
      out.partial.push_back(neville_at_zero(t.data() + end - m, v.data() + end - m, m));
    out.estimate = out.partial.back();
    out.residual = out.partial.size() > 1 ? std::abs(out.partial.back() - out.partial[out.partial.size() - 2]) : 0.0;
    return out;
  }
  return extrapolate(t, v, order);
}

cplx a1_sampling_ray(double phi1) { return std::polar(1.0, kPi / 2.0 - phi1 + kPi / 4.0); }

ExtrapolationTrace recover_a1_from_spectrum(const SpectralData& data, const RecoveryOptions& opts) {
  const std::vector<SpectralDatum> b1 = branch_checked(data, 1, kMinBranchSamples);
  std::vector<double> t;
  std::vector<cplx> p, m;
  for (const SpectralDatum& d : b1) {
    const int k = data.seed_index(d);
    if (k < 1) continue;
    t.push_back(1.0 / k);
    p.push_back(-static_cast<double>(k) * kPi / d.rho);
    m.push_back(d.M);
  }
  const ExtrapolationTrace P = extrapolate(t, p, opts.order);
  const ExtrapolationTrace Minf = extrapolate(t, m, opts.order);
  ExtrapolationTrace out;
  for (std::size_t i = 0; i < P.partial.size(); ++i) out.partial.push_back(2.0 / (P.partial[i] * Minf.partial[i]));
  out.estimate = out.partial.back();
  out.residual = std::abs(out.estimate) * (P.residual / std::abs(P.estimate) + Minf.residual / std::abs(Minf.estimate));
  return out;
}

Geometry recover_geometry(const SpectralData& data, cplx a1, double T, const RecoveryOptions& opts) {
  const std::vector<SpectralDatum> b1 = branch_checked(data, 1, kMinBranchSamples);
  const std::vector<SpectralDatum> b2 = branch_checked(data, 2, kMinBranchSamples);
  Geometry g;
  {
    std::vector<double> t;
    std::vector<cplx> v;
    for (const SpectralDatum& d : b1) {
      const int k = data.seed_index(d);
      if (k < 1) continue;
      t.push_back(1.0 / k);
      v.push_back(-static_cast<double>(k) * kPi / (a1 * d.rho));
    }
    g.b_trace = extrapolate(t, v, opts.order);
  }
  g.b = g.b_trace.estimate.real();
  g.b_imag = g.b_trace.estimate.imag();
  if (std::abs(g.b_imag) > opts.nonreal_tol * T) {
    std::ostringstream os;
    os << "extrapolated b has imaginary part " << g.b_imag;
    throw Error(ErrorKind::NonRealGeometry, os.str());
  }
  if (!(g.b > 0.0 && g.b < T)) throw Error(ErrorKind::NonRealGeometry, "recovered b outside (0, T)");
  g.l2 = T - g.b;
  {
    std::vector<double> t;
    std::vector<cplx> v;
    for (const SpectralDatum& d : b2) {
      const int k = data.seed_index(d);
      if (k < 1) continue;
      t.push_back(1.0 / k);
      v.push_back(static_cast<double>(k) * kPi / (g.l2 * d.rho));
    }
    g.a2_trace = extrapolate(t, v, opts.order);
  }
  g.a2 = g.a2_trace.estimate;
  return g;
}

cplx d1_from_ratio(cplx A, cplx a1, cplx a2) {
  if (!is_finite(A) || std::abs(A - 1.0) < 1e-10 * (1.0 + std::abs(A)))
    throw Error(ErrorKind::DegenerateRatio, "ratio A is degenerate");
  cplx d = std::sqrt(a1 * (A + 1.0) / (a2 * (A - 1.0)));
  // Rounding can leave a real d1 just below the cut; such roots count as arg 0.
  const double eps = 1e-12;
  if (std::arg(d) < -eps || std::arg(d) >= kPi - eps) d = -d;
  return d;
}

JumpScaling recover_d1(const SpectralData& data, cplx a1, cplx a2, double l2, const RecoveryOptions& opts) {
  const std::vector<SpectralDatum> b2 = branch_checked(data, 2, kMinBranchSamples);
  std::vector<double> t;
  std::vector<cplx> v;
  for (std::size_t i = 0; i + 1 < b2.size(); ++i) {
    const int k = data.seed_index(b2[i]);
    if (k < 1) continue;
    t.push_back(1.0 / k);
    if (opts.robust_A)
      v.push_back(b2[i].rho - static_cast<double>(k) * (b2[i + 1].rho - b2[i].rho));
    else
      v.push_back(std::exp(2.0 * kI * b2[i].rho * a2 * l2));
  }
  JumpScaling out;
  out.trace = extrapolate(t, v, opts.order);
  if (opts.robust_A) {
    for (cplx& p : out.trace.partial) p = std::exp(2.0 * kI * a2 * l2 * p);
    out.trace.residual *= std::abs(2.0 * a2 * l2) * std::abs(out.trace.partial.back());
    out.trace.estimate = out.trace.partial.back();
  }
  out.A = out.trace.estimate;
  out.d1 = d1_from_ratio(out.A, a1, a2);
  return out;
}

RecoveredConstants recover_constants(const SpectralData& data, double T, const RecoveryOptions& opts) {
  RecoveredConstants rc;
  const ExtrapolationTrace a1 = recover_a1_from_spectrum(data, opts);
  rc.a1 = a1.estimate;
  const Geometry g = recover_geometry(data, rc.a1, T, opts);
  rc.b = g.b;
  rc.l1 = g.b;
  rc.l2 = g.l2;
  rc.b_imag = g.b_imag;
  rc.a2 = g.a2;
  const JumpScaling js = recover_d1(data, rc.a1, rc.a2, rc.l2, opts);
  rc.A_ratio = js.A;
  rc.d1 = js.d1;
  rc.diagnostics["a1"] = a1;
  rc.diagnostics["b"] = g.b_trace;
  rc.diagnostics["a2"] = g.a2_trace;
  rc.diagnostics["A"] = js.trace;
  return rc;
}

}  // namespace cwsl
