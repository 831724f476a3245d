#include "cwsl/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <sstream>

#include "cwsl/error.hpp"

namespace cwsl {

Potential Potential::zero(double T) { return from_samples({0.0, T}, {cplx{}, cplx{}}); }

Potential Potential::sampled(double T, std::size_t count, const std::function<cplx(double)>& f) {
  if (count < 2) throw Error(ErrorKind::InvalidArgument, "potential needs at least two samples");
  std::vector<double> grid(count);
  std::vector<cplx> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    grid[i] = (i + 1 == count) ? T : T * static_cast<double>(i) / static_cast<double>(count - 1);
    values[i] = f(grid[i]);
  }
  Potential p = from_samples(std::move(grid), std::move(values));
  p.uniform_ = true;
  return p;
}

Potential Potential::from_samples(std::vector<double> grid, std::vector<cplx> values) {
  if (grid.size() < 2 || grid.size() != values.size())
    throw Error(ErrorKind::InvalidArgument, "potential grid and values must match, size >= 2");
  if (grid.front() != 0.0) throw Error(ErrorKind::InvalidArgument, "potential grid must start at 0");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1]))
      throw Error(ErrorKind::InvalidArgument, "potential grid must be strictly increasing");
  for (const auto& v : values)
    if (!is_finite(v)) throw Error(ErrorKind::NonFinite, "potential sample is not finite");
  Potential p;
  p.grid_ = std::move(grid);
  p.values_ = std::move(values);
  const double step = p.grid_.back() / static_cast<double>(p.grid_.size() - 1);
  p.uniform_ = std::all_of(p.grid_.begin(), p.grid_.end(), [&, i = 0.0](double x) mutable {
    return std::abs(x - step * i++) <= 1e-12 * p.grid_.back();
  });
  return p;
}

cplx Potential::operator()(double x) const {
  if (grid_.empty()) return {};
  const std::size_t n = grid_.size();
  if (x <= grid_.front()) return values_.front();
  if (x >= grid_.back()) return values_.back();
  std::size_t i;
  if (uniform_) {
    const double step = grid_.back() / static_cast<double>(n - 1);
    i = std::min(static_cast<std::size_t>(x / step), n - 2);
    // Rounding in x / step can land one cell off.
    if (x < grid_[i] && i > 0) --i;
    if (x > grid_[i + 1] && i + 2 < n) ++i;
  } else {
    i = static_cast<std::size_t>(std::upper_bound(grid_.begin(), grid_.end(), x) - grid_.begin()) - 1;
    i = std::min(i, n - 2);
  }
  const double t = (x - grid_[i]) / (grid_[i + 1] - grid_[i]);
  return values_[i] + t * (values_[i + 1] - values_[i]);
}

bool Potential::is_zero() const {
  return std::all_of(values_.begin(), values_.end(), [](cplx v) { return v == cplx{}; });
}

const char* to_string(ValidationMode mode) noexcept {
  return mode == ValidationMode::strict ? "strict" : "relaxed";
}

double DerivedConstants::spacing(int branch) const {
  return branch == 1 ? kPi / (r1 * l1) : kPi / (r2 * l2);
}

cplx DerivedConstants::ray(int branch) const {
  return std::polar(1.0, branch == 1 ? sector_angles[1] : sector_angles[0]);
}

namespace {

void fail_or_warn(DerivedConstants& c, ErrorKind kind, const std::string& msg) {
  if (c.mode == ValidationMode::strict) throw Error(kind, msg);
  c.warnings.push_back(std::string(to_string(kind)) + ": " + msg);
}

}  // namespace

DerivedConstants validate_problem(const ProblemSpec& spec, ValidationMode mode) {
  if (!(spec.T > 0.0) || !std::isfinite(spec.T))
    throw Error(ErrorKind::InvalidInterval, "interval length must be positive");
  if (!(spec.b > 0.0 && spec.b < spec.T))
    throw Error(ErrorKind::InvalidInterval, "jump point must lie strictly inside (0, T)");
  for (cplx v : {spec.a1, spec.a2, spec.h, spec.H, spec.d1, spec.d2})
    if (!is_finite(v)) throw Error(ErrorKind::NonFinite, "problem constants must be finite");
  if (spec.a1 == cplx{} || spec.a2 == cplx{}) throw Error(ErrorKind::ZeroParameter, "weight amplitude a_k is zero");
  if (spec.d1 == cplx{}) throw Error(ErrorKind::ZeroParameter, "jump scaling d1 is zero");
  if (spec.q.nodes().empty() || std::abs(spec.q.length() - spec.T) > 1e-12 * spec.T)
    throw Error(ErrorKind::InvalidArgument, "potential grid must cover [0, T]");

  DerivedConstants c;
  c.mode = mode;
  c.a1_ = spec.a1;
  c.a2_ = spec.a2;
  c.l1 = spec.b;
  c.l2 = spec.T - spec.b;
  c.r1 = std::abs(spec.a1);
  c.r2 = std::abs(spec.a2);
  c.phi1 = std::arg(spec.a1);
  c.phi2 = std::arg(spec.a2);

  const double arg_d1 = std::arg(spec.d1);
  if (arg_d1 < 0.0 || arg_d1 >= kPi) {
    std::ostringstream os;
    os << "arg d1 = " << arg_d1 << " outside [0, pi)";
    fail_or_warn(c, ErrorKind::AngleOrderViolation, os.str());
  }
  if (!(0.0 <= c.phi2 && c.phi2 < c.phi1 && c.phi1 < kPi)) {
    std::ostringstream os;
    os << "weight arguments phi1 = " << c.phi1 << ", phi2 = " << c.phi2 << " violate 0 <= phi2 < phi1 < pi";
    fail_or_warn(c, ErrorKind::AngleOrderViolation, os.str());
  }

  c.omega_plus = spec.d1 * spec.a2 + spec.a1 / spec.d1;
  c.omega_minus = spec.d1 * spec.a2 - spec.a1 / spec.d1;
  const double omega_scale = std::abs(spec.d1 * spec.a2) + std::abs(spec.a1 / spec.d1);
  const bool plus_zero = std::abs(c.omega_plus) <= 1e-14 * omega_scale;
  const bool minus_zero = std::abs(c.omega_minus) <= 1e-14 * omega_scale;
  if (plus_zero || minus_zero)
    fail_or_warn(c, ErrorKind::RegularityViolation,
                 plus_zero ? "omega_plus = d1 a2 + a1/d1 vanishes" : "omega_minus = d1 a2 - a1/d1 vanishes");

  if (!plus_zero && !minus_zero) {
    c.A_ratio = c.omega_plus / c.omega_minus;
    c.C1 = -std::log(-c.omega_minus / c.omega_plus) / (2.0 * kI * spec.a1 * c.l1);
    c.C2 = std::log(c.omega_plus / c.omega_minus) / (2.0 * kI * spec.a2 * c.l2);
  }
  c.alpha = c.phi1 - c.phi2 + kPi / 2.0;
  c.sector_angles = {-c.phi2, kPi - c.phi1, kPi - c.phi2, -c.phi1};
  return c;
}

Mat2 transfer_matrix(cplx d1, cplx d2) {
  if (d1 == cplx{}) throw Error(ErrorKind::ZeroParameter, "jump scaling d1 is zero");
  Mat2 m;
  m << d1, 0.0, d2, 1.0 / d1;
  return m;
}

cplx weight_at(const ProblemSpec& spec, double x) {
  if (x < 0.0 || x > spec.T) throw Error(ErrorKind::InvalidArgument, "x outside [0, T]");
  if (std::abs(x - spec.b) <= 1e-14 * spec.T)
    throw Error(ErrorKind::OnInterface, "weight is two-valued at the jump point");
  return x < spec.b ? spec.a1 * spec.a1 : spec.a2 * spec.a2;
}

std::vector<SpectralDatum> SpectralData::branch(int j) const {
  std::vector<SpectralDatum> out;
  std::copy_if(data.begin(), data.end(), std::back_inserter(out), [j](const SpectralDatum& d) { return d.branch == j; });
  std::sort(out.begin(), out.end(), [](const SpectralDatum& a, const SpectralDatum& b) { return a.k < b.k; });
  return out;
}

}  // namespace cwsl
