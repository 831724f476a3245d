#include "cwsl/ode_engine.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>

#include "cwsl/error.hpp"

namespace cwsl {

XGrid::XGrid(double T, double b, std::size_t points) : T_(T), b_(b) {
  if (points < 2) throw Error(ErrorKind::InvalidArgument, "x-grid needs at least two points");
  if (!(T > 0.0)) throw Error(ErrorKind::InvalidInterval, "x-grid needs T > 0");
  x_.resize(points);
  for (std::size_t i = 0; i < points; ++i)
    x_[i] = (i + 1 == points) ? T : T * static_cast<double>(i) / static_cast<double>(points - 1);
}

Layer XGrid::station_layer(std::size_t s) const {
  if (s == left_station()) return Layer::left;
  if (s == right_station()) return Layer::right;
  return x_.at(s) <= b_ ? Layer::left : Layer::right;
}

const SolutionSample& SolutionTrace::station(std::size_t s) const {
  if (s < samples.size()) return samples[s];
  return s == samples.size() ? left_at_b : right_at_b;
}

const SolutionSample& SolutionTrace::d_station(std::size_t s) const {
  if (s < d_samples.size()) return d_samples[s];
  return s == d_samples.size() ? d_left_at_b : d_right_at_b;
}

namespace {

constexpr double kGaussOffset = 0.28867513459481287;  // sqrt(3) / 6
constexpr double kMagnusC = 0.14433756729740643;      // sqrt(3) / 12

// cosh(s) and sinh(s)/s as functions of z = s^2.
void cosh_sinhc(cplx z, cplx& f0, cplx& f1) {
  if (std::abs(z) < 1e-3) {
    f0 = 1.0 + z * (1.0 / 2 + z * (1.0 / 24 + z * (1.0 / 720 + z / 40320.0)));
    f1 = 1.0 + z * (1.0 / 6 + z * (1.0 / 120 + z * (1.0 / 5040 + z / 362880.0)));
    return;
  }
  const cplx s = std::sqrt(z);
  f0 = std::cosh(s);
  f1 = std::sinh(s) / s;
}

// d/dz of sinh(s)/s.
cplx sinhc_prime(cplx z, cplx f0, cplx f1) {
  if (std::abs(z) >= 0.1) return (f0 - f1) / (2.0 * z);
  // sum_{n>=1} n z^{n-1} / (2n+1)!
  cplx sum{};
  cplx zp{1.0};
  double fact = 6.0;  // (2n+1)! for n = 1
  for (int n = 1; n <= 10; ++n) {
    sum += static_cast<double>(n) * zp / fact;
    zp *= z;
    fact *= static_cast<double>((2 * n + 2) * (2 * n + 3));
  }
  return sum;
}

struct Step {
  Mat2 E;
  Mat2 dE;
};

// One fourth-order Magnus step of signed length h starting at x, inside a layer
// with weight r. dE is d/dlambda of E when need_d is set.
Step magnus_step(const Potential& q, cplx r, cplx lambda, double x, double h, bool need_d) {
  const cplx q1 = q(x + (0.5 - kGaussOffset) * h);
  const cplx q2 = q(x + (0.5 + kGaussOffset) * h);
  const cplx gbar = 0.5 * (q1 + q2) - lambda * r;
  const cplx c = kMagnusC * h * h * (q1 - q2);
  Mat2 omega;
  omega << c, h, h * gbar, -c;
  const cplx z = c * c + h * h * gbar;
  cplx f0, f1;
  cosh_sinhc(z, f0, f1);
  Step st;
  st.E = f1 * omega;
  st.E(0, 0) += f0;
  st.E(1, 1) += f0;
  if (need_d) {
    const cplx dz = -h * h * r;
    const cplx f1p = sinhc_prime(z, f0, f1);
    st.dE = (f1p * dz) * omega;
    st.dE(0, 0) += 0.5 * f1 * dz;
    st.dE(1, 1) += 0.5 * f1 * dz;
    st.dE(1, 0) += f1 * (-h * r);
  }
  return st;
}

bool finite2(const Vec2& v) { return is_finite(v(0)) && is_finite(v(1)); }

// Adaptive Magnus integrator for a fixed spec and lambda.
class Marcher {
 public:
  Marcher(const ProblemSpec& spec, cplx lambda, const IntegratorOptions& opts)
      : spec_(spec), lambda_(lambda), opts_(opts), hguess_(0.1 * spec.T), hmin_(opts.min_step_fraction * spec.T) {}

  // Advances (y, dy) from u to v; [u, v] lies inside one layer.
  void advance(double u, double v, Layer layer, Vec2& y, Vec2* dy) {
    const cplx r = layer_weight(spec_, layer);
    const double dir = v > u ? 1.0 : -1.0;
    double pos = u;
    while (pos != v) {
      const double rem = std::abs(v - pos);
      const double nu = std::sqrt(std::abs(lambda_ * r - spec_.q(pos))) + 1.0;
      double len = std::min({hguess_, rem, opts_.max_phase_per_step / nu});
      if (rem - len < 1e-3 * len) len = rem;
      const bool last = len == rem;
      const double h = dir * len;

      const Step full = magnus_step(spec_.q, r, lambda_, pos, h, false);
      const Step s1 = magnus_step(spec_.q, r, lambda_, pos, 0.5 * h, dy != nullptr);
      const Step s2 = magnus_step(spec_.q, r, lambda_, pos + 0.5 * h, 0.5 * h, dy != nullptr);
      const Vec2 y_big = full.E * y;
      const Vec2 y_mid = s1.E * y;
      const Vec2 y_small = s2.E * y_mid;
      const double size = std::abs(y_small(0)) + std::abs(y_small(1)) / nu;
      const double diff = std::abs(y_big(0) - y_small(0)) + std::abs(y_big(1) - y_small(1)) / nu;
      const double err = size > 0.0 ? diff / (15.0 * size) : 0.0;
      if (!std::isfinite(err) || !finite2(y_small))
        throw Error(ErrorKind::NonFinite, "solution overflow at x = " + std::to_string(pos));
      const double fac = err == 0.0 ? 4.0 : std::clamp(0.9 * std::pow(opts_.rel_tol / err, 0.2), 0.2, 4.0);
      if (err > opts_.rel_tol) {
        hguess_ = len * fac;
        if (hguess_ < hmin_)
          throw Error(ErrorKind::ToleranceNotMet, "step size underflow at x = " + std::to_string(pos));
        continue;
      }
      if (dy) *dy = s2.E * (s1.E * *dy + s1.dE * y) + s2.dE * y_mid;
      y = y_small;
      if (!last || fac < 1.0) hguess_ = std::max(len * fac, hmin_);
      pos = last ? v : pos + h;
    }
  }

 private:
  const ProblemSpec& spec_;
  cplx lambda_;
  IntegratorOptions opts_;
  double hguess_;
  double hmin_;
};

struct State {
  Vec2 y;
  Vec2 dy;
};

SolutionSample as_sample(double x, const Vec2& v) { return {x, v(0), v(1)}; }

struct MarchCallbacks {
  // Stop index into the ascending stop list, state on arrival (left limit at b).
  std::function<void(std::size_t, const State&)> on_stop;
  std::function<void(const State& left, const State& right)> on_interface;
};

// Integrates from x0 to x1 through the ascending `stops`; only stops inside
// [min(x0, x1), max(x0, x1)] are reported.
State march(const ProblemSpec& spec, cplx lambda, double x0, State st, double x1, bool with_d,
            std::span<const double> stops, const IntegratorOptions& opts, const MarchCallbacks& cb) {
  const double lo = std::min(x0, x1);
  const double hi = std::max(x0, x1);
  const double b = spec.b;
  const Mat2 J = transfer_matrix(spec.d1, spec.d2);
  Mat2 Jinv;
  Jinv << 1.0 / spec.d1, 0.0, -spec.d2, spec.d1;

  // Event points in travel order.
  std::vector<double> pts;
  pts.reserve(spec.q.nodes().size() + stops.size() + 3);
  for (double x : spec.q.nodes())
    if (x > lo && x < hi) pts.push_back(x);
  for (double x : stops)
    if (x >= lo && x <= hi) pts.push_back(x);
  if (b >= lo && b <= hi) pts.push_back(b);
  pts.push_back(x0);
  pts.push_back(x1);
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (x1 < x0) std::reverse(pts.begin(), pts.end());

  auto report_stops = [&](double x, const State& s) {
    if (!cb.on_stop) return;
    auto it = std::lower_bound(stops.begin(), stops.end(), x);
    for (; it != stops.end() && *it == x; ++it) cb.on_stop(static_cast<std::size_t>(it - stops.begin()), s);
  };
  auto apply = [](const Mat2& M, const State& s) { return State{M * s.y, M * s.dy}; };

  Marcher marcher(spec, lambda, opts);
  // Side of b the state currently lives on.
  Layer side = (x0 < b || (x0 == b && x1 < x0)) ? Layer::left : Layer::right;

  auto at_interface = [&](bool arriving) {
    // On arrival the state is on `side`; at departure it is on the side facing travel.
    State left = side == Layer::left ? st : apply(Jinv, st);
    State right = side == Layer::right ? st : apply(J, st);
    if (cb.on_interface) cb.on_interface(left, right);
    report_stops(b, left);
    if (arriving) {
      st = x1 > x0 ? right : left;
      side = x1 > x0 ? Layer::right : Layer::left;
    }
  };

  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double p = pts[i];
    if (i > 0) {
      const double prev = pts[i - 1];
      marcher.advance(prev, p, side, st.y, with_d ? &st.dy : nullptr);
    }
    if (p == b) {
      at_interface(p != x1);
      if (p == x1) break;
      continue;
    }
    report_stops(p, st);
  }
  return st;
}

SolutionTrace forward_trace(const ProblemSpec& spec, cplx lambda, SolutionKind kind, const Vec2& init,
                            const XGrid& grid, const IntegratorOptions& opts, bool with_d) {
  SolutionTrace tr;
  tr.lambda = lambda;
  tr.kind = kind;
  tr.samples.resize(grid.size());
  if (with_d) tr.d_samples.resize(grid.size());
  MarchCallbacks cb;
  cb.on_stop = [&](std::size_t i, const State& s) {
    tr.samples[i] = as_sample(grid.points()[i], s.y);
    if (with_d) tr.d_samples[i] = as_sample(grid.points()[i], s.dy);
  };
  cb.on_interface = [&](const State& l, const State& r) {
    tr.left_at_b = as_sample(spec.b, l.y);
    tr.right_at_b = as_sample(spec.b, r.y);
    if (with_d) {
      tr.d_left_at_b = as_sample(spec.b, l.dy);
      tr.d_right_at_b = as_sample(spec.b, r.dy);
    }
  };
  const bool backward = kind == SolutionKind::psi;
  const double x0 = backward ? spec.T : 0.0;
  const double x1 = backward ? 0.0 : spec.T;
  march(spec, lambda, x0, State{init, Vec2::Zero()}, x1, with_d, grid.points(), opts, cb);
  return tr;
}

// Gauss-Legendre nodes and weights on [0, 1].
constexpr std::array<double, 4> kGlNodes{0.069431844202973712, 0.33000947820757187, 0.66999052179242813,
                                         0.93056815579702629};
constexpr std::array<double, 4> kGlWeights{0.17392742256872693, 0.32607257743127307, 0.32607257743127307,
                                           0.17392742256872693};

// int_0^x r phi(lambda) phi(mu) at each ascending stop.
std::vector<cplx> lagrange_at(const ProblemSpec& spec, cplx lambda, cplx mu, std::span<const double> stops,
                              const IntegratorOptions& opts) {
  std::vector<double> pts(spec.q.nodes().begin(), spec.q.nodes().end());
  pts.insert(pts.end(), stops.begin(), stops.end());
  pts.push_back(spec.b);
  pts.push_back(0.0);
  pts.push_back(spec.T);
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());

  std::vector<cplx> out(stops.size());
  Marcher ml(spec, lambda, opts);
  Marcher mm(spec, mu, opts);
  Vec2 yl(1.0, spec.h);
  Vec2 ym(1.0, spec.h);
  const Mat2 J = transfer_matrix(spec.d1, spec.d2);
  cplx acc{};
  std::size_t next = 0;
  auto report = [&](double x) {
    while (next < stops.size() && stops[next] <= x) out[next++] = acc;
  };
  report(0.0);
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double u = pts[i];
    const double v = pts[i + 1];
    const Layer layer = u < spec.b ? Layer::left : Layer::right;
    if (u == spec.b) {
      yl = J * yl;
      ym = J * ym;
    }
    const cplx r = layer_weight(spec, layer);
    const cplx qm = spec.q(0.5 * (u + v));
    const double nu = std::max(std::sqrt(std::abs(lambda * r - qm)), std::sqrt(std::abs(mu * r - qm))) + 1.0;
    const auto cells = static_cast<std::size_t>(std::ceil((v - u) * nu / 0.25));
    const double hc = (v - u) / static_cast<double>(cells);
    for (std::size_t c = 0; c < cells; ++c) {
      const double xs = u + hc * static_cast<double>(c);
      const double xe = c + 1 == cells ? v : xs + hc;
      const double len = xe - xs;
      cplx cell{};
      for (std::size_t g = 0; g < kGlNodes.size(); ++g) {
        const double t = kGlNodes[g] * len;
        const cplx fl = (magnus_step(spec.q, r, lambda, xs, t, false).E * yl)(0);
        const cplx fm = (magnus_step(spec.q, r, mu, xs, t, false).E * ym)(0);
        cell += kGlWeights[g] * fl * fm;
      }
      acc += r * len * cell;
      ml.advance(xs, xe, layer, yl, nullptr);
      mm.advance(xs, xe, layer, ym, nullptr);
    }
    report(v);
  }
  return out;
}

}  // namespace

Segment integrate(const ProblemSpec& spec, cplx lambda, const SolutionSample& init, double target,
                  const IntegratorOptions& opts, std::span<const double> stops) {
  if (init.x < 0.0 || init.x > spec.T || target < 0.0 || target > spec.T)
    throw Error(ErrorKind::InvalidArgument, "integration endpoints must lie in [0, T]");
  std::vector<double> sorted(stops.begin(), stops.end());
  std::sort(sorted.begin(), sorted.end());
  Segment seg;
  MarchCallbacks cb;
  std::vector<std::pair<std::size_t, SolutionSample>> hits;
  cb.on_stop = [&](std::size_t i, const State& s) { hits.emplace_back(i, as_sample(sorted[i], s.y)); };
  cb.on_interface = [&](const State& l, const State& r) {
    seg.left_at_b = as_sample(spec.b, l.y);
    seg.right_at_b = as_sample(spec.b, r.y);
  };
  const State end = march(spec, lambda, init.x, State{Vec2(init.y, init.dy), Vec2::Zero()}, target, false, sorted,
                          opts, cb);
  seg.samples.reserve(hits.size());
  for (const auto& [i, s] : hits) seg.samples.push_back(s);
  seg.end = as_sample(target, end.y);
  return seg;
}

SolutionTrace phi(const ProblemSpec& spec, cplx lambda, const XGrid& grid, const IntegratorOptions& opts,
                  bool with_derivative) {
  return forward_trace(spec, lambda, SolutionKind::phi, Vec2(1.0, spec.h), grid, opts, with_derivative);
}

SolutionTrace S_sol(const ProblemSpec& spec, cplx lambda, const XGrid& grid, const IntegratorOptions& opts,
                    bool with_derivative) {
  return forward_trace(spec, lambda, SolutionKind::S, Vec2(0.0, 1.0), grid, opts, with_derivative);
}

SolutionTrace psi(const ProblemSpec& spec, cplx lambda, const XGrid& grid, const IntegratorOptions& opts) {
  return forward_trace(spec, lambda, SolutionKind::psi, Vec2(1.0, -spec.H), grid, opts, false);
}

SolutionTrace Phi_solution(const ProblemSpec& spec, cplx lambda, const XGrid& grid, const IntegratorOptions& opts) {
  SolutionTrace out = psi(spec, lambda, grid, opts);
  const SolutionSample& start = out.samples.front();
  const cplx delta = start.dy - spec.h * start.y;
  const double scale =
      std::abs(start.dy) + (std::abs(spec.h) + std::abs(spec.a1 * std::sqrt(lambda)) + 1.0 / spec.T) * std::abs(start.y);
  if (std::abs(delta) <= 1e-12 * scale)
    throw Error(ErrorKind::NearEigenvalue, "Delta(lambda) vanishes to working precision");
  auto scaled = [&](const SolutionSample& u) { return SolutionSample{u.x, u.y / delta, u.dy / delta}; };
  for (SolutionSample& u : out.samples) u = scaled(u);
  out.left_at_b = scaled(out.left_at_b);
  out.right_at_b = scaled(out.right_at_b);
  out.kind = SolutionKind::Phi;
  return out;
}

SolutionTrace lambda_derivative(const ProblemSpec& spec, cplx lambda, SolutionKind kind, const XGrid& grid,
                                const IntegratorOptions& opts) {
  if (kind != SolutionKind::phi && kind != SolutionKind::S)
    throw Error(ErrorKind::InvalidArgument, "lambda_derivative supports phi and S only");
  SolutionTrace tr = kind == SolutionKind::phi ? phi(spec, lambda, grid, opts, true) : S_sol(spec, lambda, grid, opts, true);
  tr.samples = tr.d_samples;
  tr.left_at_b = tr.d_left_at_b;
  tr.right_at_b = tr.d_right_at_b;
  return tr;
}

std::vector<cplx> lagrange_integral(const ProblemSpec& spec, cplx lambda, cplx mu, const XGrid& grid,
                                    const IntegratorOptions& opts) {
  std::vector<cplx> out = lagrange_at(spec, lambda, mu, grid.points(), opts);
  const std::vector<cplx> at_b = lagrange_at(spec, lambda, mu, std::array<double, 1>{grid.b()}, opts);
  out.push_back(at_b[0]);
  out.push_back(at_b[0]);
  return out;
}

cplx d_kernel_quotient(const SolutionSample& phi_lambda, const SolutionSample& phi_mu, cplx lambda, cplx mu) {
  return wronskian(phi_lambda, phi_mu) / (lambda - mu);
}

cplx d_kernel_diagonal(const SolutionSample& p, const SolutionSample& dp) { return p.dy * dp.y - p.y * dp.dy; }

cplx D_kernel(const ProblemSpec& spec, double x, cplx lambda, cplx mu, const KernelOptions& opts) {
  if (x < 0.0 || x > spec.T) throw Error(ErrorKind::InvalidArgument, "D_kernel needs x in [0, T]");
  if (lambda == mu) {
    std::array<double, 1> stop{x};
    MarchCallbacks cb;
    State at_x;
    cb.on_stop = [&](std::size_t, const State& s) { at_x = s; };
    march(spec, lambda, 0.0, State{Vec2(1.0, spec.h), Vec2::Zero()}, x, true, stop, opts.integrator, cb);
    return d_kernel_diagonal(as_sample(x, at_x.y), as_sample(x, at_x.dy));
  }
  if (std::abs(lambda - mu) < opts.switch_rel * (1.0 + std::abs(lambda)))
    return lagrange_at(spec, lambda, mu, std::array<double, 1>{x}, opts.integrator)[0];
  const SolutionSample init{0.0, 1.0, spec.h};
  const SolutionSample pl = integrate(spec, lambda, init, x, opts.integrator).end;
  const SolutionSample pm = integrate(spec, mu, init, x, opts.integrator).end;
  return d_kernel_quotient(pl, pm, lambda, mu);
}

}  // namespace cwsl
