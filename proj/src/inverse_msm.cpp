#include "cwsl/inverse_msm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <memory>
#include <sstream>

#include "cwsl/error.hpp"

namespace cwsl {

namespace {

// Runs body(i) for i in [0, n), serially or with OpenMP; rethrows the first
// failure in index order.
template <class Body>
void for_each_index(std::size_t n, Execution exec, Body&& body) {
  std::vector<std::exception_ptr> errors(n);
  if (exec == Execution::parallel) {
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < n; ++i) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

template <class F>
auto in_stage(const char* stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    Error::rethrow_in_stage(e, stage);
  }
}

}  // namespace

std::size_t SequenceWeights::active_count() const {
  return static_cast<std::size_t>(std::count_if(pairs.begin(), pairs.end(), [](const IndexPair& p) { return !p.dropped; }));
}

ProblemSpec build_model(const RecoveredConstants& rec, double T, const ModelBoundary& bc, std::size_t q_nodes) {
  ProblemSpec m;
  m.T = T;
  m.b = rec.b;
  m.a1 = rec.a1;
  m.a2 = rec.a2;
  m.d1 = rec.d1;
  m.h = bc.h;
  m.H = bc.H;
  m.d2 = bc.d2;
  m.q = q_nodes <= 2 ? Potential::zero(T) : Potential::sampled(T, q_nodes, [](double) { return cplx{}; });
  return m;
}

namespace {

using ModelParams = std::array<cplx, 7>;  // b, a1, a2, d1, h, H, d2

ProblemSpec model_from(const ModelParams& p, double T) {
  ProblemSpec s;
  s.T = T;
  s.b = p[0].real();
  s.a1 = p[1];
  s.a2 = p[2];
  s.d1 = p[3];
  s.h = p[4];
  s.H = p[5];
  s.d2 = p[6];
  s.q = Potential::zero(T);
  return s;
}

cplx root_near(cplx lambda, cplx rho) {
  const cplx r = std::sqrt(lambda);
  return std::abs(r - rho) <= std::abs(r + rho) ? r : -r;
}

// Follows each model eigenvalue by Newton from `lam` and stacks Re, Im of
// rho_k - rho~_k, then with weight_M > 0 also weight_M (M_k - M~_k) / M_k;
// false if any iterate leaves the finite range or the model is invalid.
bool track(const ModelParams& p, double T, const std::vector<SpectralDatum>& data, std::vector<cplx>& lam,
           Eigen::VectorXd& r, double weight_M) {
  std::unique_ptr<CharacteristicFunction> f;
  try {
    if (!(p[0].real() > 0.0 && p[0].real() < T)) return false;
    f = closed_form_characteristic(model_from(p, T));
  } catch (const Error&) {
    return false;
  }
  const Eigen::Index n = static_cast<Eigen::Index>(data.size());
  r.resize(weight_M > 0.0 ? 4 * n : 2 * n);
  for (std::size_t i = 0; i < data.size(); ++i) {
    CharEval e;
    for (int it = 0; it < 40; ++it) {
      e = f->eval(lam[i], true);
      const cplx step = e.delta / e.ddelta;
      lam[i] -= step;
      if (!is_finite(lam[i])) return false;
      if (std::abs(step) <= 1e-14 * (1.0 + std::abs(lam[i]))) break;
    }
    // Near lambda = 0 the square root is not smooth; lambda differences take over.
    const cplx d = std::abs(data[i].rho) >= 1.0 ? data[i].rho - root_near(lam[i], data[i].rho)
                                                : 0.5 * (data[i].lambda - lam[i]);
    r(2 * i) = d.real();
    r(2 * i + 1) = d.imag();
    if (weight_M > 0.0) {
      e = f->eval(lam[i], true);
      const cplx M = 1.0 / (e.phi_end * e.ddelta);
      const cplx dm = weight_M * (data[i].M - M) / data[i].M;
      if (!is_finite(dm)) return false;
      r(2 * n + 2 * i) = dm.real();
      r(2 * n + 2 * i + 1) = dm.imag();
    }
  }
  return true;
}

}  // namespace

ModelFit fit_model(const SpectralData& W, double T, const RecoveredConstants& start, double from_fraction,
                   int max_iter, double weight_M) {
  const int N = std::min(W.count_branch1, W.count_branch2);
  std::vector<SpectralDatum> data;
  for (const SpectralDatum& d : W.data)
    if (d.k >= from_fraction * N) data.push_back(d);
  if (data.size() < 7) throw Error(ErrorKind::InsufficientSamples, "model fit needs at least 7 eigenvalues");
  ModelParams p{start.b, start.a1, start.a2, start.d1, 0.0, 0.0, 0.0};
  std::vector<cplx> lam(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) lam[i] = data[i].lambda;
  Eigen::VectorXd r;
  if (!track(p, T, data, lam, r, weight_M)) throw Error(ErrorKind::NoConvergence, "model eigenvalues cannot be followed");
  const Eigen::Index m = r.size();
  ModelFit out;
  double mu = 1e-3;
  for (out.iterations = 0; out.iterations < max_iter; ++out.iterations) {
    if (r.norm() <= 1e-14 * std::sqrt(static_cast<double>(m))) break;
    // Columns: Re b, then Re and Im of the six complex parameters.
    Eigen::MatrixXd J(m, 13);
    if (weight_M > 0.0) {
      // Differences of the tracked residuals.
      for (int c = 0; c < 13; ++c) {
        const int j = (c + 1) / 2;
        ModelParams q = p;
        const double step = 1e-7 * (1.0 + std::abs(p[j]));
        q[j] += c == 0 || c % 2 == 1 ? cplx(step) : cplx(0.0, step);
        std::vector<cplx> lam2 = lam;
        Eigen::VectorXd r2;
        if (!track(q, T, data, lam2, r2, weight_M)) throw Error(ErrorKind::NoConvergence, "model fit Jacobian failed");
        J.col(c) = (r2 - r) / step;
      }
    } else {
      const auto f = closed_form_characteristic(model_from(p, T));
      for (std::size_t i = 0; i < data.size(); ++i) {
        const CharEval e = f->eval(lam[i], true);
        const cplx rho = std::abs(data[i].rho) >= 1.0 ? root_near(lam[i], data[i].rho) : cplx(1.0);
        for (int j = 0; j < 7; ++j) {
          ModelParams q = p;
          const double step = 1e-7 * (1.0 + std::abs(p[j]));
          q[j] += step;
          const cplx dd = (closed_form_characteristic(model_from(q, T))->eval(lam[i], false).delta - e.delta) / step;
          // d(rho_k - rho~_k)/dp = (dDelta/dp / Delta') / (2 rho~); rho~ -> 1 for the lambda form.
          const cplx g = dd / e.ddelta / (2.0 * rho);
          const Eigen::Index row = 2 * static_cast<Eigen::Index>(i);
          if (j == 0) {
            J(row, 0) = g.real();
            J(row + 1, 0) = g.imag();
          } else {
            J(row, 2 * j - 1) = g.real();
            J(row, 2 * j) = -g.imag();
            J(row + 1, 2 * j - 1) = g.imag();
            J(row + 1, 2 * j) = g.real();
          }
        }
      }
    }
    const Eigen::VectorXd colsq = J.colwise().squaredNorm().transpose();
    bool accepted = false;
    double step_norm = 0.0;
    for (int t = 0; t < 16 && !accepted; ++t, mu *= 10.0) {
      // Augmented least squares by QR; the normal equations lose the weakly determined directions.
      Eigen::MatrixXd B(m + 13, 13);
      B.topRows(m) = J;
      B.bottomRows(13) = (mu * colsq).cwiseSqrt().asDiagonal();
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m + 13);
      rhs.head(m) = -r;
      const Eigen::VectorXd st = B.colPivHouseholderQr().solve(rhs);
      ModelParams q = p;
      q[0] += st(0);
      for (int j = 1; j < 7; ++j) q[j] += cplx(st(2 * j - 1), st(2 * j));
      std::vector<cplx> lam2 = lam;
      Eigen::VectorXd r2;
      if (st.allFinite() && track(q, T, data, lam2, r2, weight_M) && r2.norm() < r.norm()) {
        p = q;
        lam = std::move(lam2);
        r = std::move(r2);
        step_norm = st.norm();
        accepted = true;
        mu = std::max(mu / 100.0, 1e-12);
      }
    }
    if (!accepted || step_norm <= 1e-13) break;
  }
  out.residual = r.norm() / std::sqrt(static_cast<double>(data.size()));
  out.constants = start;
  out.constants.b = p[0].real();
  out.constants.l1 = out.constants.b;
  out.constants.l2 = T - out.constants.b;
  out.constants.a1 = p[1];
  out.constants.a2 = p[2];
  out.constants.d1 = p[3];
  out.boundary = {p[4], p[5], p[6]};
  return out;
}

SequenceWeights compute_weights(const SpectralData& W, const SpectralData& Wm, const DerivedConstants& c,
                                double eps_xi) {
  SequenceWeights out;
  for (int j = 1; j <= 2; ++j) {
    const std::vector<SpectralDatum> d = W.branch(j);
    const std::vector<SpectralDatum> m = Wm.branch(j);
    if (d.size() != m.size()) {
      std::ostringstream os;
      os << "branch " << j << ": " << d.size() << " data entries vs " << m.size() << " model entries";
      throw Error(ErrorKind::MisalignedData, os.str());
    }
    if (W.seed_offset[j - 1] != Wm.seed_offset[j - 1]) {
      std::ostringstream os;
      os << "branch " << j << " starts at seed index " << W.seed_offset[j - 1] << " in the data and "
         << Wm.seed_offset[j - 1] << " in the model";
      throw Error(ErrorKind::MisalignedData, os.str());
    }
    for (std::size_t k = 0; k < d.size(); ++k) {
      IndexPair p;
      p.branch = j;
      p.k = d[k].k;
      p.seed_k = W.seed_index(d[k]);
      p.z0 = d[k].lambda;
      p.z1 = m[k].lambda;
      p.beta0 = d[k].M;
      p.beta1 = m[k].M;
      p.rho0 = d[k].rho;
      p.rho1 = m[k].rho;
      p.theta = j == 1 ? 1.0 : std::exp(-p.seed_k * kPi * c.r1 * c.l1 * std::cos(c.alpha) / (c.r2 * c.l2));
      p.xi = std::abs(p.rho0 - p.rho1) + std::abs(p.beta0 - p.beta1) * p.theta * p.theta;
      p.dropped = p.xi < eps_xi * (1.0 + std::abs(p.rho0));
      out.pairs.push_back(p);
    }
  }
  return out;
}

KernelTable::KernelTable(const ProblemSpec& spec, const SequenceWeights& w, const XGrid& grid,
                         const KernelOptions& opts, Execution exec)
    : spec_(spec), grid_(grid) {
  for (const IndexPair& p : w.pairs) {
    z_.push_back(p.z0);
    z_.push_back(p.z1);
  }
  traces_.resize(z_.size());
  for_each_index(z_.size(), exec, [&](std::size_t i) { traces_[i] = phi(spec_, z_[i], grid_, opts.integrator, true); });

  std::vector<std::pair<std::size_t, std::size_t>> near;
  for (std::size_t a = 0; a < z_.size(); ++a)
    for (std::size_t b = a + 1; b < z_.size(); ++b)
      if (z_[a] != z_[b] && std::abs(z_[a] - z_[b]) < opts.switch_rel * (1.0 + std::abs(z_[a]))) near.emplace_back(a, b);
  std::vector<std::vector<cplx>> values(near.size());
  for_each_index(near.size(), exec, [&](std::size_t i) {
    values[i] = lagrange_integral(spec_, z_[near[i].first], z_[near[i].second], grid_, opts.integrator);
  });
  for (std::size_t i = 0; i < near.size(); ++i) near_.emplace(near[i], std::move(values[i]));
}

cplx KernelTable::D(std::size_t s, std::size_t a, std::size_t b) const {
  if (a == b || z_[a] == z_[b]) return d_kernel_diagonal(traces_[a].station(s), traces_[a].d_station(s));
  const auto it = near_.find({std::min(a, b), std::max(a, b)});
  if (it != near_.end()) return it->second[s];
  return d_kernel_quotient(traces_[a].station(s), traces_[b].station(s), z_[a], z_[b]);
}

cplx KernelTable::weight(std::size_t s) const { return layer_weight(spec_, grid_.station_layer(s)); }

cplx KernelTable::dD(std::size_t s, std::size_t a, std::size_t b) const {
  return weight(s) * traces_[a].station(s).y * traces_[b].station(s).y;
}

namespace {

std::vector<std::size_t> active_pairs(const SequenceWeights& w) {
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < w.pairs.size(); ++p)
    if (!w.pairs[p].dropped) out.push_back(p);
  return out;
}

// Fills the 2m x 2m operator from a kernel (D or dD).
template <class Kernel>
Eigen::MatrixXcd operator_from(const SequenceWeights& w, const std::vector<std::size_t>& active, Kernel&& ker) {
  const std::size_t m = active.size();
  Eigen::MatrixXcd A(2 * m, 2 * m);
  for (std::size_t a = 0; a < m; ++a) {
    const IndexPair& pn = w.pairs[active[a]];
    const std::size_t n0 = 2 * active[a], n1 = n0 + 1;
    for (std::size_t c = 0; c < m; ++c) {
      const IndexPair& pk = w.pairs[active[c]];
      const std::size_t k0 = 2 * active[c], k1 = k0 + 1;
      const cplx B00 = ker(n0, k0) * pk.beta0;
      const cplx B10 = ker(n1, k0) * pk.beta0;
      const cplx B01 = ker(n0, k1) * pk.beta1;
      const cplx B11 = ker(n1, k1) * pk.beta1;
      const double tk = pk.theta, tn = pn.theta;
      A(2 * a, 2 * c) = (B00 - B10) * (pk.xi * tk / (pn.xi * tn));
      A(2 * a + 1, 2 * c + 1) = (B10 - B11) * (tk / tn);
      A(2 * a + 1, 2 * c) = B10 * (pk.xi * tk / tn);
      A(2 * a, 2 * c + 1) = (B00 - B10 - B01 + B11) * (tk / (pn.xi * tn));
    }
  }
  return A;
}

}  // namespace

Eigen::MatrixXcd main_operator(std::size_t s, const SequenceWeights& w, const KernelTable& t) {
  return operator_from(w, active_pairs(w), [&](std::size_t a, std::size_t b) { return t.D(s, a, b); });
}

Eigen::VectorXcd sequence_vector(std::size_t s, const SequenceWeights& w, const KernelTable& t) {
  const std::vector<std::size_t> active = active_pairs(w);
  Eigen::VectorXcd f(2 * active.size());
  for (std::size_t a = 0; a < active.size(); ++a) {
    const IndexPair& p = w.pairs[active[a]];
    const cplx y0 = t.trace(active[a], 0).station(s).y, y1 = t.trace(active[a], 1).station(s).y;
    f(2 * a) = (y0 - y1) / (p.xi * p.theta);
    f(2 * a + 1) = y1 / p.theta;
  }
  return f;
}

MainEquationSystem assemble_main_equation(std::size_t s, const SequenceWeights& w, const KernelTable& model) {
  MainEquationSystem sys;
  sys.station = s;
  sys.x = model.grid().station_x(s);
  sys.active = active_pairs(w);
  if (sys.active.empty()) throw Error(ErrorKind::DroppedAll, "every index pair was dropped");
  const std::size_t m = sys.active.size();
  sys.matrix = operator_from(w, sys.active, [&](std::size_t a, std::size_t b) { return model.D(s, a, b); });
  sys.matrix += Eigen::MatrixXcd::Identity(2 * m, 2 * m);
  sys.dmatrix = operator_from(w, sys.active, [&](std::size_t a, std::size_t b) { return model.dD(s, a, b); });
  sys.rhs.resize(2 * m);
  sys.drhs.resize(2 * m);
  for (std::size_t a = 0; a < m; ++a) {
    const IndexPair& p = w.pairs[sys.active[a]];
    const SolutionSample& y0 = model.trace(sys.active[a], 0).station(s);
    const SolutionSample& y1 = model.trace(sys.active[a], 1).station(s);
    sys.rhs(2 * a) = (y0.y - y1.y) / (p.xi * p.theta);
    sys.rhs(2 * a + 1) = y1.y / p.theta;
    sys.drhs(2 * a) = (y0.dy - y1.dy) / (p.xi * p.theta);
    sys.drhs(2 * a + 1) = y1.dy / p.theta;
  }
  return sys;
}

std::vector<MainEquationCheck> check_main_equation(const ProblemSpec& truth, const ProblemSpec& model,
                                                   const SequenceWeights& w, const XGrid& grid,
                                                   const std::vector<std::size_t>& stations, Execution exec,
                                                   const KernelOptions& opts) {
  const KernelTable tt(truth, w, grid, opts, exec), tm(model, w, grid, opts, exec);
  int n1 = 0, n2 = 0;
  for (const IndexPair& p : w.pairs) ++(p.branch == 1 ? n1 : n2);
  std::vector<Eigen::Index> lead;
  Eigen::Index a = 0;
  for (const IndexPair& p : w.pairs) {
    if (p.dropped) continue;
    if (p.k < (p.branch == 1 ? n1 : n2) / 2) {
      lead.push_back(2 * a);
      lead.push_back(2 * a + 1);
    }
    ++a;
  }
  std::vector<MainEquationCheck> out;
  for (std::size_t s : stations) {
    MainEquationCheck c;
    c.x = grid.station_x(s);
    const MainEquationSystem sys = assemble_main_equation(s, w, tm);
    const Eigen::VectorXcd f = sequence_vector(s, w, tt);
    c.defect = (sys.rhs - sys.matrix * f).cwiseAbs().maxCoeff();
    c.f_sup = f.cwiseAbs().maxCoeff();
    const Eigen::MatrixXcd A = main_operator(s, w, tt), At = main_operator(s, w, tm);
    const Eigen::MatrixXcd R = At - A - At * A;
    for (Eigen::Index i : lead)
      for (Eigen::Index j : lead) c.identity = std::max(c.identity, std::abs(R(i, j)));
    out.push_back(c);
  }
  return out;
}

MainEquationSolution solve_main_equation(const MainEquationSystem& sys, double min_rcond) {
  const Eigen::PartialPivLU<Eigen::MatrixXcd> lu(sys.matrix);
  MainEquationSolution out;
  out.rcond = lu.rcond();
  if (!(out.rcond >= min_rcond)) {
    std::ostringstream os;
    os << "main equation at x = " << sys.x << " has reciprocal condition " << out.rcond;
    throw Error(ErrorKind::SingularSystem, os.str());
  }
  out.f = lu.solve(sys.rhs);
  out.fp = lu.solve(sys.drhs - sys.dmatrix * out.f);
  return out;
}

std::vector<MainEquationSolution> solve_all_stations(const SequenceWeights& w, const KernelTable& model,
                                                     Execution exec, double min_rcond) {
  std::vector<MainEquationSolution> out(model.grid().station_count());
  for_each_index(out.size(), exec, [&](std::size_t s) {
    out[s] = solve_main_equation(assemble_main_equation(s, w, model), min_rcond);
  });
  return out;
}

ReconstructedSolutions reconstruct_solutions(const std::vector<MainEquationSolution>& sols, const SequenceWeights& w,
                                             const KernelTable& model) {
  const std::size_t S = model.grid().station_count();
  ReconstructedSolutions r;
  r.phi0.assign(w.pairs.size(), std::vector<SolutionSample>(S));
  r.phi1.assign(w.pairs.size(), std::vector<SolutionSample>(S));
  std::vector<long> slot(w.pairs.size(), -1);
  long a = 0;
  for (std::size_t p = 0; p < w.pairs.size(); ++p)
    if (!w.pairs[p].dropped) slot[p] = a++;
  for (std::size_t p = 0; p < w.pairs.size(); ++p) {
    const IndexPair& ip = w.pairs[p];
    for (std::size_t s = 0; s < S; ++s) {
      const double x = model.grid().station_x(s);
      if (slot[p] < 0) {
        r.phi0[p][s] = r.phi1[p][s] = model.trace(p, 1).station(s);
        continue;
      }
      const std::size_t u = 2 * static_cast<std::size_t>(slot[p]);
      const cplx y1 = sols[s].f(u + 1) * ip.theta, dy1 = sols[s].fp(u + 1) * ip.theta;
      r.phi1[p][s] = {x, y1, dy1};
      r.phi0[p][s] = {x, y1 + sols[s].f(u) * ip.xi * ip.theta, dy1 + sols[s].fp(u) * ip.xi * ip.theta};
    }
  }
  return r;
}

QReconstruction reconstruct_q(const ReconstructedSolutions& phis, const SequenceWeights& w, const KernelTable& model,
                              double tail_limit, bool sigma) {
  const XGrid& g = model.grid();
  QReconstruction out;
  out.x.assign(g.points().begin(), g.points().end());
  out.q.assign(g.size(), cplx{});
  std::array<long, 2> last{-1, -1};
  std::array<int, 2> count{0, 0};
  for (std::size_t p = 0; p < w.pairs.size(); ++p) {
    ++count[w.pairs[p].branch - 1];
    if (!w.pairs[p].dropped) last[w.pairs[p].branch - 1] = static_cast<long>(p);
  }
  std::vector<double> factor(w.pairs.size(), 1.0);
  if (sigma)
    for (std::size_t p = 0; p < w.pairs.size(); ++p) {
      const double u = kPi * w.pairs[p].k / count[w.pairs[p].branch - 1];
      if (u > 0.0) factor[p] = std::sin(u) / u;
    }
  double sum_sup = 0.0, tail_sup = 0.0;
  for (std::size_t s = 0; s < g.size(); ++s) {
    cplx eps{};
    for (std::size_t p = 0; p < w.pairs.size(); ++p) {
      const IndexPair& ip = w.pairs[p];
      if (ip.dropped) continue;
      const SolutionSample& m0 = model.trace(p, 0).station(s);
      const SolutionSample& m1 = model.trace(p, 1).station(s);
      const SolutionSample& y0 = phis.phi0[p][s];
      const SolutionSample& y1 = phis.phi1[p][s];
      const cplx term = ip.beta0 * (m0.dy * y0.y + m0.y * y0.dy) - ip.beta1 * (m1.dy * y1.y + m1.y * y1.dy);
      eps += factor[p] * term;
      if (static_cast<long>(p) == last[0] || static_cast<long>(p) == last[1])
        tail_sup = std::max(tail_sup, std::abs(model.weight(s) * term));
    }
    out.q[s] = -2.0 * model.weight(s) * eps;
    sum_sup = std::max(sum_sup, std::abs(model.weight(s) * eps));
  }
  out.tail_estimate = sum_sup > 0.0 ? tail_sup / sum_sup : 0.0;
  if (out.tail_estimate > tail_limit) {
    std::ostringstream os;
    os << "last retained terms reach " << out.tail_estimate << " of the series";
    throw Error(ErrorKind::TailTooLarge, os.str());
  }
  return out;
}

void patch_boundary_layers(QReconstruction& qr, double T, double b, double width1, double width2, int degree) {
  struct Edge {
    double at, lo, hi, width;
  };
  // Each edge patches the points of [lo, hi] within `width` of `at`.
  const Edge edges[] = {{0.0, 0.0, b, width1}, {b, 0.0, b, width1}, {b, b, T, width2}, {T, b, T, width2}};
  const std::vector<cplx> src = qr.q;
  for (const Edge& e : edges) {
    if (e.width <= 0.0) continue;
    std::vector<std::size_t> fit, patch;
    for (std::size_t i = 0; i < qr.x.size(); ++i) {
      const double x = qr.x[i];
      // The grid point at b carries the left limit.
      const bool inside = e.lo == 0.0 ? x <= e.hi : (x > e.lo && x <= e.hi);
      if (!inside) continue;
      const double d = std::abs(x - e.at);
      if (d < e.width) patch.push_back(i);
      else if (d < 3.0 * e.width) fit.push_back(i);
    }
    if (patch.empty()) continue;
    const int deg = std::min<int>(degree, static_cast<int>(fit.size()) - 1);
    if (deg < 0) continue;
    Eigen::MatrixXd V(fit.size(), deg + 1);
    Eigen::VectorXcd y(fit.size());
    for (std::size_t r = 0; r < fit.size(); ++r) {
      const double t = (qr.x[fit[r]] - e.at) / e.width;
      for (int c = 0; c <= deg; ++c) V(r, c) = std::pow(t, c);
      y(r) = src[fit[r]];
    }
    const Eigen::VectorXcd coef = V.cast<cplx>().colPivHouseholderQr().solve(y);
    for (std::size_t i : patch) {
      const double t = (qr.x[i] - e.at) / e.width;
      cplx v{};
      for (int c = deg; c >= 0; --c) v = v * t + coef(c);
      qr.q[i] = v;
    }
  }
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

BoundaryEstimate robust_mean(const std::vector<cplx>& est, const char* name, double spread_limit) {
  if (est.empty()) throw Error(ErrorKind::NoUsableIndex, std::string("no usable index for ") + name);
  std::vector<double> re, im;
  for (cplx e : est) {
    re.push_back(e.real());
    im.push_back(e.imag());
  }
  const cplx med(median(re), median(im));
  std::vector<double> dev;
  for (cplx e : est) dev.push_back(std::abs(e - med));
  const double cut = 5.0 * median(dev) + 1e-14 * (1.0 + std::abs(med));
  BoundaryEstimate out;
  cplx sum{};
  for (std::size_t i = 0; i < est.size(); ++i)
    if (dev[i] <= cut) {
      sum += est[i];
      ++out.used;
    }
  out.value = sum / static_cast<double>(out.used);
  for (std::size_t i = 0; i < est.size(); ++i)
    if (dev[i] <= cut) out.spread = std::max(out.spread, std::abs(est[i] - out.value));
  if (out.spread > spread_limit * (1.0 + std::abs(out.value))) {
    std::ostringstream os;
    os << name << " estimates spread by " << out.spread;
    throw Error(ErrorKind::InconsistentEstimates, os.str());
  }
  return out;
}

}  // namespace

BoundaryParams extract_boundary_params(const ReconstructedSolutions& phis, const SequenceWeights& w,
                                       const XGrid& grid, cplx d1, double spread_limit) {
  const std::size_t s0 = 0, sT = grid.size() - 1, sl = grid.left_station(), sr = grid.right_station();
  std::vector<cplx> hs, Hs, d2s;
  for (std::size_t p = 0; p < w.pairs.size(); ++p) {
    if (w.pairs[p].dropped) continue;
    for (const auto* tr : {&phis.phi0[p], &phis.phi1[p]}) {
      const std::vector<SolutionSample>& y = *tr;
      double sup = 0.0;
      for (const SolutionSample& v : y) sup = std::max(sup, std::abs(v.y));
      hs.push_back(y[s0].dy / y[s0].y);
      if (std::abs(y[sl].y) > 1e-6 * sup) d2s.push_back((y[sr].dy - y[sl].dy / d1) / y[sl].y);
      if (tr == &phis.phi0[p] && std::abs(y[sT].y) > 1e-6 * sup) Hs.push_back(-y[sT].dy / y[sT].y);
    }
  }
  BoundaryParams out;
  out.h = robust_mean(hs, "h", spread_limit);
  out.H = robust_mean(Hs, "H", spread_limit);
  out.d2 = robust_mean(d2s, "d2", spread_limit);
  return out;
}

namespace {

// Fundamental solutions at one lambda: C, S from 0 to b-0 and U1 = (1, 0),
// U2 = (0, 1) from b+0 to T.
struct Propagators {
  SolutionSample C, S, U1, U2;
  double scale = 1.0;
};

Propagators propagators(const ProblemSpec& base, cplx lambda, const IntegratorOptions& opts) {
  ProblemSpec s = base;
  s.d1 = 1.0;
  s.d2 = 0.0;
  auto left = [&](cplx y, cplx dy) {
    const Segment seg = integrate(s, lambda, {0.0, y, dy}, s.b, opts);
    return seg.left_at_b ? *seg.left_at_b : seg.end;
  };
  auto right = [&](cplx y, cplx dy) { return integrate(s, lambda, {s.b, y, dy}, s.T, opts).end; };
  Propagators p{left(1.0, 0.0), left(0.0, 1.0), right(1.0, 0.0), right(0.0, 1.0)};
  return p;
}

struct CharValue {
  cplx delta;
  std::array<cplx, 3> grad;  // d/dh, d/dH, d/dd2
};

CharValue char_value(const Propagators& p, cplx d1, const ModelBoundary& bc) {
  const cplx yb = p.C.y + bc.h * p.S.y, dyb = p.C.dy + bc.h * p.S.dy;
  auto at_T = [&](cplx y, cplx dy, cplx d2) {
    const cplx u = d1 * y, v = dy / d1 + d2 * y;
    return std::pair<cplx, cplx>{u * p.U1.y + v * p.U2.y, u * p.U1.dy + v * p.U2.dy};
  };
  const auto [yT, dyT] = at_T(yb, dyb, bc.d2);
  const auto [hT, dhT] = at_T(p.S.y, p.S.dy, bc.d2);
  const cplx vd2 = yb * p.U2.y, dvd2 = yb * p.U2.dy;
  return {dyT + bc.H * yT, {dhT + bc.H * hT, yT, dvd2 + bc.H * vd2}};
}

}  // namespace

BoundaryFit fit_boundary_params(const std::vector<cplx>& lambdas, const RecoveredConstants& rec, double T,
                                const Potential& q, const ModelBoundary& start, Execution exec,
                                const IntegratorOptions& opts, int max_iter) {
  if (lambdas.size() < 3) throw Error(ErrorKind::InsufficientSamples, "boundary fit needs at least 3 eigenvalues");
  ProblemSpec s = build_model(rec, T);
  s.q = q;
  std::vector<Propagators> props(lambdas.size());
  for_each_index(lambdas.size(), exec, [&](std::size_t i) { props[i] = propagators(s, lambdas[i], opts); });
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    // Size of the terms of Delta, so every eigenvalue weighs alike.
    const CharValue v = char_value(props[i], rec.d1, start);
    const double k = std::abs(std::sqrt(lambdas[i]) * rec.a2) + 1.0;
    props[i].scale = std::abs(v.delta - start.H * v.grad[1]) + k * std::abs(v.grad[1]) + 1e-300;
  }
  BoundaryFit out;
  ModelBoundary bc = start;
  const Eigen::Index n = static_cast<Eigen::Index>(lambdas.size());
  for (out.iterations = 1; out.iterations <= max_iter; ++out.iterations) {
    Eigen::MatrixXcd J(n, 3);
    Eigen::VectorXcd r(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const CharValue v = char_value(props[i], rec.d1, bc);
      r(i) = v.delta / props[i].scale;
      for (int c = 0; c < 3; ++c) J(i, c) = v.grad[c] / props[i].scale;
    }
    out.residual = r.norm() / std::sqrt(static_cast<double>(n));
    const Eigen::VectorXcd step = J.colPivHouseholderQr().solve(-r);
    if (!step.allFinite()) throw Error(ErrorKind::NonFinite, "boundary fit step is not finite");
    bc.h += step(0);
    bc.H += step(1);
    bc.d2 += step(2);
    if (step.norm() <= 1e-13 * (1.0 + std::abs(bc.h) + std::abs(bc.H) + std::abs(bc.d2))) break;
  }
  out.iterations = std::min(out.iterations, max_iter);
  out.h = bc.h;
  out.H = bc.H;
  out.d2 = bc.d2;
  return out;
}

SpectralData truncate(const SpectralData& W, int N) {
  SpectralData out = W;
  out.data.clear();
  out.count_branch1 = out.count_branch2 = 0;
  for (int j = 1; j <= 2; ++j) {
    const std::vector<SpectralDatum> b = W.branch(j);
    if (static_cast<int>(b.size()) < N) {
      std::ostringstream os;
      os << "branch " << j << " has " << b.size() << " entries, need " << N;
      throw Error(ErrorKind::InsufficientSamples, os.str());
    }
    out.data.insert(out.data.end(), b.begin(), b.begin() + N);
    (j == 1 ? out.count_branch1 : out.count_branch2) = N;
  }
  return out;
}

ProblemSpec reconstructed_spec(const ReconstructionResult& r, double T) {
  ProblemSpec s = build_model(r.model.constants, T);
  s.q = Potential::from_samples(r.x, r.q);
  s.h = r.h;
  s.H = r.H;
  s.d2 = r.d2;
  return s;
}

ReconstructionResult invert(const SpectralData& W_in, double T, const InverseConfig& cfg) {
  ReconstructionResult res;
  res.N = cfg.N;
  const SpectralData W = in_stage("truncate", [&] { return truncate(W_in, cfg.N); });
  res.constants = in_stage("recovery", [&] {
    return cfg.model_constants ? *cfg.model_constants : recover_constants(W, T, cfg.recovery);
  });
  if (cfg.fit_model) {
    // Data of a q = 0 problem are matched exactly by a model fitted to every entry.
    bool exact = false;
    try {
      const ModelFit full = fit_model(W, T, res.constants, 0.0, 60, 1.0);
      if (full.residual <= cfg.exact_model_tol) {
        res.model = full;
        exact = true;
      }
    } catch (const Error&) {
    }
    if (!exact) res.model = in_stage("model", [&] { return fit_model(W, T, res.constants, cfg.model_fit_from); });
  } else {
    res.model.constants = res.constants;
    res.model.boundary = cfg.model_boundary.value_or(ModelBoundary{});
  }
  const ProblemSpec model = build_model(res.model.constants, T, res.model.boundary);
  const XGrid grid(T, res.model.constants.b, cfg.grid_points);
  res.x.assign(grid.points().begin(), grid.points().end());
  res.q.assign(grid.size(), cplx{});
  const DerivedConstants consts = in_stage("model", [&] { return validate_problem(model, ValidationMode::strict); });
  const SpectralData Wm =
      in_stage("model", [&] { return closed_form_spectrum_q0(model, cfg.N, ValidationMode::strict, cfg.locate); });
  const SequenceWeights w = in_stage("weights", [&] { return compute_weights(W, Wm, consts, cfg.eps_xi); });
  res.dropped = static_cast<int>(w.pairs.size() - w.active_count());
  if (w.active_count() == 0) {
    // Data and model coincide: the model is the answer.
    res.h = model.h;
    res.H = model.H;
    res.d2 = model.d2;
    return res;
  }
  const KernelTable table = in_stage("kernels", [&] { return KernelTable(model, w, grid, cfg.kernel, cfg.execution); });
  const std::vector<MainEquationSolution> sols =
      in_stage("main-equation", [&] { return solve_all_stations(w, table, cfg.execution, cfg.min_rcond); });
  res.min_rcond = 1.0;
  for (const auto& s : sols) res.min_rcond = std::min(res.min_rcond, s.rcond);
  const ReconstructedSolutions phis = reconstruct_solutions(sols, w, table);
  QReconstruction qr = in_stage("potential", [&] { return reconstruct_q(phis, w, table, cfg.tail_limit, cfg.sigma); });
  patch_boundary_layers(qr, T, res.model.constants.b, cfg.layer_width * res.model.constants.l1 / cfg.N,
                        cfg.layer_width * res.model.constants.l2 / cfg.N);
  res.q = qr.q;
  res.tail_estimate = qr.tail_estimate;
  ModelBoundary start = res.model.boundary;
  try {
    res.solution_estimates = extract_boundary_params(phis, w, grid, res.model.constants.d1, cfg.spread_limit);
    start = {res.solution_estimates.h.value, res.solution_estimates.H.value, res.solution_estimates.d2.value};
  } catch (const Error&) {
    // Only a starting point for the fit below.
  }
  std::vector<cplx> fit_lambdas;
  for (const SpectralDatum& d : W.data)
    if (d.k < std::min(cfg.fit_count, cfg.N / 2)) fit_lambdas.push_back(d.lambda);
  const BoundaryFit fit = in_stage("boundary", [&] {
    return fit_boundary_params(fit_lambdas, res.model.constants, T, Potential::from_samples(res.x, res.q), start,
                               cfg.execution, cfg.kernel.integrator);
  });
  res.fit_residual = fit.residual;
  res.h = fit.h;
  res.H = fit.H;
  res.d2 = fit.d2;
  res.h_spread = res.solution_estimates.h.spread;
  res.H_spread = res.solution_estimates.H.spread;
  res.d2_spread = res.solution_estimates.d2.spread;

  if (cfg.verify) {
    in_stage("verify", [&] {
      const ProblemSpec rec = reconstructed_spec(res, T);
      const auto f = integrated_characteristic(rec, cfg.kernel.integrator);
      std::vector<SpectralDatum> targets;
      for (int j = 1; j <= 2; ++j)
        for (const SpectralDatum& d : W.branch(j))
          if (d.k <= static_cast<int>(cfg.resolve_fraction * cfg.N)) targets.push_back(d);
      res.forward.resize(targets.size());
      for_each_index(targets.size(), cfg.execution, [&](std::size_t i) {
        cplx lam = targets[i].lambda;
        for (int it = 0; it < cfg.locate.max_newton; ++it) {
          const CharEval e = f->eval(lam, true);
          if (std::abs(e.delta) <= cfg.locate.newton_tol * e.scale) break;
          const cplx step = e.delta / e.ddelta;
          lam -= step;
          if (std::abs(step) <= 1e-15 * (1.0 + std::abs(lam))) break;
        }
        ForwardResidual fr;
        fr.branch = targets[i].branch;
        fr.k = targets[i].k;
        fr.lambda_data = targets[i].lambda;
        fr.lambda_resolved = lam;
        fr.rel_err = std::abs(lam - targets[i].lambda) / std::max(1.0, std::abs(targets[i].lambda));
        res.forward[i] = fr;
      });
      for (const auto& fr : res.forward) res.max_forward_residual = std::max(res.max_forward_residual, fr.rel_err);
      return 0;
    });
  }
  return res;
}

}  // namespace cwsl
