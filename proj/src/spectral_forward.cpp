#include "cwsl/spectral_forward.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <sstream>
#include <limits>
#include <tuple>

#include "cwsl/error.hpp"

namespace cwsl {

namespace {

constexpr int kMaxOffset = 2;
constexpr double kMaxLowDistance = 1.0;

// Hungarian method on a square cost matrix; returns the column for each row.
std::vector<int> min_cost_assignment(const std::vector<std::vector<double>>& a, double& total) {
  const int n = static_cast<int>(a.size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1), v(n + 1);
  std::vector<int> p(n + 1), way(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row(n);
  total = 0.0;
  for (int j = 1; j <= n; ++j) {
    row[p[j] - 1] = j - 1;
    total += a[p[j] - 1][j - 1];
  }
  return row;
}

double delta_scale(const ProblemSpec& spec, cplx lambda, cplx y, cplx dy) {
  return std::abs(dy) + (std::abs(spec.H) + std::abs(spec.a2 * std::sqrt(lambda)) + 1.0 / spec.T) * std::abs(y);
}

class IntegratedCharacteristic final : public CharacteristicFunction {
 public:
  IntegratedCharacteristic(const ProblemSpec& spec, const IntegratorOptions& opts)
      : spec_(spec), opts_(opts), grid_(spec.T, spec.b, 2) {}

  CharEval eval(cplx lambda, bool with_derivative) const override {
    const SolutionTrace t = phi(spec_, lambda, grid_, opts_, with_derivative);
    const SolutionSample& e = t.samples.back();
    CharEval out;
    out.delta = -(e.dy + spec_.H * e.y);
    out.scale = delta_scale(spec_, lambda, e.y, e.dy);
    out.phi_end = e.y;
    if (with_derivative) {
      const SolutionSample& d = t.d_samples.back();
      out.ddelta = -(d.dy + spec_.H * d.y);
    }
    return out;
  }

  cplx delta0(cplx lambda, double* scale) const override {
    const SolutionSample e = S_sol(spec_, lambda, grid_, opts_).samples.back();
    if (scale) *scale = delta_scale(spec_, lambda, e.y, e.dy);
    return e.dy + spec_.H * e.y;
  }

 private:
  ProblemSpec spec_;
  IntegratorOptions opts_;
  XGrid grid_;
};

// cos(sqrt z), sin(sqrt z)/sqrt z and the derivative of the latter in z.
void trig_even(cplx z, cplx& c, cplx& s, cplx& sp) {
  if (std::abs(z) < 0.1) {
    c = 0.0;
    s = 0.0;
    sp = 0.0;
    cplx zp = 1.0;
    double f_even = 1.0, f_odd = 1.0;  // (2n)!, (2n+1)!
    for (int n = 0; n <= 12; ++n) {
      const double sign = (n % 2 == 0) ? 1.0 : -1.0;
      c += sign * zp / f_even;
      s += sign * zp / f_odd;
      if (n + 1 <= 12) {
        const double f_next_odd = f_odd * (2 * n + 2) * (2 * n + 3);
        sp += -sign * static_cast<double>(n + 1) * zp / f_next_odd;
      }
      zp *= z;
      f_even *= static_cast<double>((2 * n + 1) * (2 * n + 2));
      f_odd *= static_cast<double>((2 * n + 2) * (2 * n + 3));
    }
    return;
  }
  const cplx w = std::sqrt(z);
  c = std::cos(w);
  s = std::sin(w) / w;
  sp = (c - s) / (2.0 * z);
}

class ClosedFormCharacteristic final : public CharacteristicFunction {
 public:
  explicit ClosedFormCharacteristic(const ProblemSpec& spec) : spec_(spec), J_(transfer_matrix(spec.d1, spec.d2)) {
    if (!spec.q.is_zero()) throw Error(ErrorKind::InvalidArgument, "closed-form spectrum requires q == 0");
  }

  CharEval eval(cplx lambda, bool with_derivative) const override {
    Mat2 M, dM;
    propagate(lambda, M, dM);
    const Vec2 init(1.0, spec_.h);
    const Vec2 y = M * init;
    CharEval out;
    out.delta = -(y(1) + spec_.H * y(0));
    out.scale = delta_scale(spec_, lambda, y(0), y(1));
    out.phi_end = y(0);
    if (with_derivative) {
      const Vec2 dy = dM * init;
      out.ddelta = -(dy(1) + spec_.H * dy(0));
    }
    return out;
  }

  cplx delta0(cplx lambda, double* scale) const override {
    Mat2 M, dM;
    propagate(lambda, M, dM);
    if (scale) *scale = delta_scale(spec_, lambda, M(0, 1), M(1, 1));
    return M(1, 1) + spec_.H * M(0, 1);
  }

 private:
  void layer(cplx a, double l, cplx lambda, Mat2& P, Mat2& dP) const {
    const cplx z = lambda * a * a * l * l;
    cplx c, s, sp;
    trig_even(z, c, s, sp);
    P << c, l * s, -(z / l) * s, c;
    const cplx dz = a * a * l * l;
    const cplx cp = -0.5 * s;
    dP << cp, l * sp, -(s + z * sp) / l, cp;
    dP *= dz;
  }

  void propagate(cplx lambda, Mat2& M, Mat2& dM) const {
    Mat2 P1, dP1, P2, dP2;
    layer(spec_.a1, spec_.b, lambda, P1, dP1);
    layer(spec_.a2, spec_.T - spec_.b, lambda, P2, dP2);
    M = P2 * J_ * P1;
    dM = dP2 * J_ * P1 + P2 * J_ * dP1;
  }

  ProblemSpec spec_;
  Mat2 J_;
};

struct Zero {
  cplx lambda;
  cplx ddelta;
  double scale = 1.0;
  cplx phi_end;
};

Zero zero_from(cplx lambda, const CharEval& e) { return {lambda, e.ddelta, e.scale, e.phi_end}; }

// Trapezoid rule on one edge, doubling until the count integral settles.
struct EdgeIntegral {
  cplx count;
  cplx first;
};

EdgeIntegral edge_integral(const CharacteristicFunction& f, cplx a, cplx b) {
  auto g = [&](cplx lam) {
    const CharEval e = f.eval(lam, true);
    return e.ddelta / e.delta;
  };
  std::vector<cplx> vals;
  std::size_t n = 16;
  vals.resize(n + 1);
  for (std::size_t i = 0; i <= n; ++i) vals[i] = g(a + (b - a) * (static_cast<double>(i) / n));
  auto sums = [&](std::size_t nn) {
    const cplx h = (b - a) / static_cast<double>(nn);
    cplx s0{}, s1{};
    for (std::size_t i = 0; i <= nn; ++i) {
      const double w = (i == 0 || i == nn) ? 0.5 : 1.0;
      const cplx lam = a + (b - a) * (static_cast<double>(i) / nn);
      s0 += w * vals[i];
      s1 += w * lam * vals[i];
    }
    return EdgeIntegral{h * s0, h * s1};
  };
  EdgeIntegral prev = sums(n);
  while (n < (1u << 15)) {
    std::vector<cplx> next(2 * n + 1);
    for (std::size_t i = 0; i <= n; ++i) next[2 * i] = vals[i];
    for (std::size_t i = 0; i < n; ++i) next[2 * i + 1] = g(a + (b - a) * ((2.0 * i + 1.0) / (2.0 * n)));
    vals.swap(next);
    n *= 2;
    const EdgeIntegral cur = sums(n);
    if (!is_finite(cur.count))
      throw Error(ErrorKind::NonFinite, "contour quadrature hit a non-finite value");
    if (std::abs(cur.count - prev.count) < 0.01 * 2.0 * kPi) return cur;
    prev = cur;
  }
  throw Error(ErrorKind::ToleranceNotMet, "contour quadrature did not settle on an edge");
}

cplx sqrt_near(cplx lambda, cplx direction) {
  const cplx r = std::sqrt(lambda);
  return std::real(r * std::conj(direction)) >= 0.0 ? r : -r;
}

class Locator {
 public:
  Locator(const CharacteristicFunction& f, const LocateOptions& opts, LocateDiagnostics& diag)
      : f_(f), opts_(opts), diag_(diag) {}

  ContourMoments moments(const Rect& r) {
    ++diag_.contours;
    const cplx c1(r.hi.real(), r.lo.imag()), c3(r.lo.real(), r.hi.imag());
    ContourMoments m{};
    for (auto [a, b] : {std::pair{r.lo, c1}, std::pair{c1, r.hi}, std::pair{r.hi, c3}, std::pair{c3, r.lo}}) {
      const EdgeIntegral e = edge_integral(f_, a, b);
      m.count += e.count;
      m.first += e.first;
    }
    m.count /= 2.0 * kPi * kI;
    m.first /= 2.0 * kPi * kI;
    return m;
  }

  static int certified(const ContourMoments& m) {
    const double w = m.count.real();
    if (std::abs(w - std::round(w)) >= 0.1 || std::abs(m.count.imag()) >= 0.1)
      throw Error(ErrorKind::ToleranceNotMet, "winding number is not close to an integer");
    return static_cast<int>(std::lround(w));
  }

  // Newton in lambda; returns false if it leaves `box` or fails to settle.
  bool polish(cplx start, const Rect& box, Zero& out) const {
    cplx lam = start;
    for (int it = 0; it < opts_.max_newton; ++it) {
      const CharEval e = f_.eval(lam, true);
      if (std::abs(e.delta) <= opts_.newton_tol * e.scale) {
        out = zero_from(lam, e);
        return inside(lam, box);
      }
      const cplx step = e.delta / e.ddelta;
      lam -= step;
      if (!is_finite(lam) || !inside(lam, box)) return false;
      if (std::abs(step) <= 1e-15 * (1.0 + std::abs(lam))) {
        const CharEval fin = f_.eval(lam, true);
        out = zero_from(lam, fin);
        return true;
      }
    }
    return false;
  }

  void search(const Rect& r, const ContourMoments& m, int count, int depth, std::vector<Zero>& out) {
    if (count == 0) return;
    if (count == 1) {
      Zero z;
      const cplx pad = 0.05 * (r.hi - r.lo);
      if (polish(m.first, Rect{r.lo - pad, r.hi + pad}, z) && inside(z.lambda, r)) {
        out.push_back(z);
        return;
      }
    }
    const double size = std::abs(r.hi - r.lo);
    if (depth > 60 || size < 1e-9 * (1.0 + std::abs(r.lo))) {
      if (count > 1) throw Error(ErrorKind::MultipleZeroDetected, "zeros of Delta do not separate");
      throw Error(ErrorKind::NoConvergence, "Newton failed inside an isolating cell");
    }
    const double xm = r.lo.real() + opts_.split * (r.hi.real() - r.lo.real());
    const double ym = r.lo.imag() + opts_.split * (r.hi.imag() - r.lo.imag());
    const std::array<Rect, 4> kids{Rect{r.lo, {xm, ym}}, Rect{{xm, r.lo.imag()}, {r.hi.real(), ym}},
                                   Rect{{r.lo.real(), ym}, {xm, r.hi.imag()}}, Rect{{xm, ym}, r.hi}};
    std::array<ContourMoments, 4> km;
    std::array<int, 4> kc{};
    int total = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      km[i] = moments(kids[i]);
      kc[i] = certified(km[i]);
      total += kc[i];
    }
    if (total != count) {
      std::ostringstream os;
      os << "sub-cells hold " << total << " zeros, parent " << count;
      throw Error(ErrorKind::CountMismatch, os.str());
    }
    for (std::size_t i = 0; i < 4; ++i) search(kids[i], km[i], kc[i], depth + 1, out);
  }

  std::vector<Zero> zeros_in_square(double S) {
    const Rect r{cplx(-S, -S), cplx(S, S)};
    const ContourMoments m = moments(r);
    const int w = certified(m);
    diag_.half_width = S;
    diag_.winding = w;
    std::vector<Zero> out;
    search(r, m, w, 0, out);
    if (static_cast<int>(out.size()) != w) {
      std::ostringstream os;
      os << "winding number " << w << " but " << out.size() << " zeros located";
      throw Error(ErrorKind::CountMismatch, os.str());
    }
    return out;
  }

  // Newton in rho from a seed, steps limited to a quarter of the spacing.
  Zero newton_rho(cplx seed, double spacing) const {
    cplx rho = seed;
    for (int it = 0; it < opts_.max_newton; ++it) {
      const CharEval e = f_.eval(rho * rho, true);
      if (std::abs(e.delta) <= opts_.newton_tol * e.scale) return zero_from(rho * rho, e);
      cplx step = e.delta / (2.0 * rho * e.ddelta);
      const double lim = 0.25 * spacing;
      if (std::abs(step) > lim) step *= lim / std::abs(step);
      rho -= step;
      if (!is_finite(rho)) break;
      // Steps at rounding level: |Delta| / scale can sit well above newton_tol for large lambda.
      if (std::abs(step) <= 1e-14 * std::abs(rho)) {
        const CharEval fin = f_.eval(rho * rho, true);
        return zero_from(rho * rho, fin);
      }
    }
    throw Error(ErrorKind::SeedDivergence, "Newton did not converge from seed");
  }

  void check_simple(const Zero& z) const {
    if (std::abs(z.ddelta) * (1.0 + std::abs(z.lambda)) < opts_.simplicity * z.scale) {
      std::ostringstream os;
      os << "zero at lambda = " << z.lambda << " is not simple";
      throw Error(ErrorKind::MultipleZeroDetected, os.str());
    }
  }

 private:
  static bool inside(cplx z, const Rect& r) {
    return z.real() >= r.lo.real() && z.real() <= r.hi.real() && z.imag() >= r.lo.imag() && z.imag() <= r.hi.imag();
  }

  const CharacteristicFunction& f_;
  const LocateOptions& opts_;
  LocateDiagnostics& diag_;
};

cplx residue(const CharacteristicFunction& f, const Zero& z) {
  double scale = 0.0;
  const cplx d0 = f.delta0(z.lambda, &scale);
  if (std::abs(d0) * 1e3 >= scale) return d0 / z.ddelta;
  return 1.0 / (z.phi_end * z.ddelta);
}

SpectralDatum make_datum(const CharacteristicFunction& f, const Zero& z, int k, int branch, cplx direction) {
  SpectralDatum d;
  d.k = k;
  d.branch = branch;
  d.lambda = z.lambda;
  d.rho = sqrt_near(z.lambda, direction);
  d.M = residue(f, z);
  return d;
}

SpectralData locate_relaxed(const CharacteristicFunction& f, const DerivedConstants& c, int N,
                            const LocateOptions& opts, LocateDiagnostics& diag) {
  Locator loc(f, opts, diag);
  const double rate = c.r1 * c.l1 + c.r2 * c.l2;
  double S = std::max(4.0, 2.0 * std::pow(N * kPi / rate, 2));
  for (int round = 0; round < 12; ++round, S *= 2.0) {
    std::vector<Zero> zs = loc.zeros_in_square(S);
    std::erase_if(zs, [S](const Zero& z) { return std::abs(z.lambda) > S; });
    if (static_cast<int>(zs.size()) < N) continue;
    std::sort(zs.begin(), zs.end(), [](const Zero& a, const Zero& b) {
      return std::make_tuple(std::abs(a.lambda), std::arg(a.lambda)) <
             std::make_tuple(std::abs(b.lambda), std::arg(b.lambda));
    });
    SpectralData out;
    for (int k = 0; k < N; ++k) {
      loc.check_simple(zs[k]);
      SpectralDatum d = make_datum(f, zs[k], k, 1, 1.0);
      d.rho = std::sqrt(d.lambda);
      out.data.push_back(d);
    }
    out.count_branch1 = N;
    diag.low_per_branch = {N, 0};
    return out;
  }
  throw Error(ErrorKind::CountMismatch, "too few eigenvalues found in expanding squares");
}

SpectralData locate_strict(const CharacteristicFunction& f, const DerivedConstants& c, int N,
                           const LocateOptions& opts, LocateDiagnostics& diag) {
  if (!c.asymptotics_defined())
    throw Error(ErrorKind::UndefinedConstants, "asymptotic constants are undefined for this spec");
  Locator loc(f, opts, diag);
  const int K0 = std::max(opts.K0, 1);
  double R = 0.0;
  for (int j = 1; j <= 2; ++j)
    R = std::max(R, std::abs(asymptotic_seed(K0 - 1, j, c).rho_seed) + 0.5 * c.spacing(j));
  const std::vector<Zero> low = loc.zeros_in_square(R * R);

  // Each branch's low zeros occupy a consecutive run of seed indices. Choose
  // the runs and the matching with least total spacing-normalized distance.
  const int n = static_cast<int>(low.size());
  auto distance = [&](std::size_t i, int j, int k) {
    const cplx seed = asymptotic_seed(k, j, c).rho_seed;
    return std::abs(sqrt_near(low[i].lambda, seed) - seed) / c.spacing(j);
  };
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::pair<int, int>> best_seeds;
  std::vector<int> best_match;
  for (int o1 = 0; o1 <= kMaxOffset; ++o1)
    for (int o2 = 0; o2 <= kMaxOffset; ++o2)
      for (int n1 = 1; n1 < n; ++n1) {
        std::vector<std::pair<int, int>> seeds;
        for (int k = 0; k < n1; ++k) seeds.emplace_back(1, o1 + k);
        for (int k = 0; k < n - n1; ++k) seeds.emplace_back(2, o2 + k);
        std::vector<std::vector<double>> cost(n, std::vector<double>(n));
        for (int i = 0; i < n; ++i)
          for (int s = 0; s < n; ++s) cost[i][s] = distance(i, seeds[s].first, seeds[s].second);
        double total = 0.0;
        std::vector<int> match = min_cost_assignment(cost, total);
        // Prefer smaller offsets on ties.
        total += 1e-9 * (o1 + o2);
        if (total < best) {
          best = total;
          best_seeds = std::move(seeds);
          best_match = std::move(match);
        }
      }
  if (best_match.empty()) throw Error(ErrorKind::CountMismatch, "too few low eigenvalues to assign both branches");

  SpectralData out;
  std::array<std::vector<std::pair<int, std::size_t>>, 2> assigned;
  for (int i = 0; i < n; ++i) {
    const auto [j, k] = best_seeds[best_match[i]];
    if (distance(i, j, k) > kMaxLowDistance) {
      std::ostringstream os;
      os << "low eigenvalue " << low[i].lambda << " lies far from every admissible seed";
      throw Error(ErrorKind::CountMismatch, os.str());
    }
    assigned[j - 1].emplace_back(k, i);
  }
  struct Task {
    int branch;
    int seed_k;
  };
  std::vector<Task> tasks;
  for (int j = 1; j <= 2; ++j) {
    auto& a = assigned[j - 1];
    std::sort(a.begin(), a.end());
    out.seed_offset[j - 1] = a.front().first;
    diag.low_per_branch[j - 1] = static_cast<int>(a.size());
    for (int k = a.back().first + 1; k < a.front().first + N; ++k) tasks.push_back({j, k});
  }

  std::vector<Zero> found(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    try {
      const double sp = c.spacing(tasks[t].branch);
      const cplx seed = asymptotic_seed(tasks[t].seed_k, tasks[t].branch, c).rho_seed;
      found[t] = loc.newton_rho(seed, sp);
      const cplx rho = sqrt_near(found[t].lambda, seed);
      if (std::abs(rho - seed) > 0.5 * sp) {
        std::ostringstream os;
        os << "Newton from seed k = " << tasks[t].seed_k << " on branch " << tasks[t].branch
           << " converged to rho = " << rho << ", far from the seed " << seed;
        throw Error(ErrorKind::SeedDivergence, os.str());
      }
    } catch (...) {
      errors[t] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (std::size_t t = 0; t < tasks.size(); ++t)
    for (const Zero& z : low)
      if (std::abs(found[t].lambda - z.lambda) <= 1e-8 * (1.0 + std::abs(z.lambda)))
        throw Error(ErrorKind::SeedDivergence, "Newton from a high seed returned a low eigenvalue");

  for (int j = 1; j <= 2; ++j) {
    const int off = out.seed_offset[j - 1];
    const cplx ray = c.ray(j);
    int k = 0;
    for (const auto& [seed_k, i] : assigned[j - 1]) {
      if (k >= N) break;
      loc.check_simple(low[i]);
      out.data.push_back(make_datum(f, low[i], seed_k - off, j, ray));
      ++k;
    }
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      if (tasks[t].branch != j) continue;
      loc.check_simple(found[t]);
      out.data.push_back(make_datum(f, found[t], tasks[t].seed_k - off, j, ray));
      ++k;
    }
    (j == 1 ? out.count_branch1 : out.count_branch2) = k;
  }
  return out;
}

}  // namespace

std::unique_ptr<CharacteristicFunction> integrated_characteristic(const ProblemSpec& spec,
                                                                  const IntegratorOptions& opts) {
  return std::make_unique<IntegratedCharacteristic>(spec, opts);
}

std::unique_ptr<CharacteristicFunction> closed_form_characteristic(const ProblemSpec& spec) {
  return std::make_unique<ClosedFormCharacteristic>(spec);
}

cplx char_delta(const ProblemSpec& spec, cplx lambda, const IntegratorOptions& opts) {
  return IntegratedCharacteristic(spec, opts).eval(lambda, false).delta;
}

cplx char_delta_from_psi(const ProblemSpec& spec, cplx lambda, const IntegratorOptions& opts) {
  const SolutionSample s = psi(spec, lambda, XGrid(spec.T, spec.b, 2), opts).samples.front();
  return s.dy - spec.h * s.y;
}

cplx delta0(const ProblemSpec& spec, cplx lambda, const IntegratorOptions& opts) {
  return psi(spec, lambda, XGrid(spec.T, spec.b, 2), opts).samples.front().y;
}

cplx delta0_from_S(const ProblemSpec& spec, cplx lambda, const IntegratorOptions& opts) {
  return IntegratedCharacteristic(spec, opts).delta0(lambda, nullptr);
}

cplx weyl_M(const ProblemSpec& spec, cplx lambda, const IntegratorOptions& opts) {
  const IntegratedCharacteristic f(spec, opts);
  const CharEval e = f.eval(lambda, false);
  if (std::abs(e.delta) <= 1e-12 * e.scale)
    throw Error(ErrorKind::NearEigenvalue, "Delta(lambda) vanishes to working precision");
  return f.delta0(lambda, nullptr) / e.delta;
}

AsymptoticSeed asymptotic_seed(int k, int branch, const DerivedConstants& c) {
  if (branch != 1 && branch != 2) throw Error(ErrorKind::InvalidArgument, "branch must be 1 or 2");
  if (!c.asymptotics_defined())
    throw Error(ErrorKind::UndefinedConstants, "asymptotic constants are undefined for this spec");
  const cplx C = branch == 1 ? *c.C1 : *c.C2;
  return {k, branch, static_cast<double>(k) * c.spacing(branch) * c.ray(branch) + C};
}

cplx asymptotic_weyl(int k, int branch, const DerivedConstants& c) {
  if (branch != 1 && branch != 2) throw Error(ErrorKind::InvalidArgument, "branch must be 1 or 2");
  if (!c.asymptotics_defined())
    throw Error(ErrorKind::UndefinedConstants, "asymptotic constants are undefined for this spec");
  const cplx a1 = c.a(1);
  if (branch == 1) return 2.0 / (a1 * a1 * c.l1);
  const double growth = 2.0 * k * kPi * c.r1 * c.l1 / (c.r2 * c.l2);
  return 8.0 / (c.omega_minus * c.omega_plus * c.l2) * std::exp(growth * std::polar(1.0, c.alpha)) *
         std::exp(2.0 * kI * a1 * c.l1 * *c.C2);
}

ContourMoments contour_moments(const CharacteristicFunction& f, const Rect& rect) {
  LocateOptions opts;
  LocateDiagnostics diag;
  return Locator(f, opts, diag).moments(rect);
}

int count_zeros(const CharacteristicFunction& f, const Rect& rect) {
  LocateOptions opts;
  LocateDiagnostics diag;
  Locator loc(f, opts, diag);
  return Locator::certified(loc.moments(rect));
}

SpectralData locate_eigenvalues(const CharacteristicFunction& f, const DerivedConstants& consts, int N,
                                const LocateOptions& opts, LocateDiagnostics* diag) {
  if (N < 1) throw Error(ErrorKind::InvalidArgument, "N_per_branch must be positive");
  LocateDiagnostics local;
  LocateDiagnostics& d = diag ? *diag : local;
  d = LocateDiagnostics{};
  SpectralData out = consts.mode == ValidationMode::strict ? locate_strict(f, consts, N, opts, d)
                                                           : locate_relaxed(f, consts, N, opts, d);
  out.provenance = Provenance::computed;
  return out;
}

SpectralData locate_eigenvalues(const ProblemSpec& spec, int N, ValidationMode mode, const LocateOptions& opts,
                                LocateDiagnostics* diag) {
  const DerivedConstants c = validate_problem(spec, mode);
  const IntegratedCharacteristic f(spec, opts.integrator);
  return locate_eigenvalues(f, c, N, opts, diag);
}

cplx weyl_coefficient(const ProblemSpec& spec, cplx lambda_k, const LocateOptions& opts) {
  const IntegratedCharacteristic f(spec, opts.integrator);
  const CharEval e = f.eval(lambda_k, true);
  if (std::abs(e.ddelta) * (1.0 + std::abs(lambda_k)) < opts.simplicity * e.scale)
    throw Error(ErrorKind::MultipleZeroDetected, "Delta' vanishes at the requested eigenvalue");
  return residue(f, zero_from(lambda_k, e));
}

SpectralData closed_form_spectrum_q0(const ProblemSpec& spec, int N, ValidationMode mode, const LocateOptions& opts,
                                     LocateDiagnostics* diag) {
  const DerivedConstants c = validate_problem(spec, mode);
  const ClosedFormCharacteristic f(spec);
  return locate_eigenvalues(f, c, N, opts, diag);
}

}  // namespace cwsl
