#include <chrono>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "cwsl/error.hpp"
#include "cwsl/inverse_msm.hpp"
#include "cwsl/io.hpp"
#include "cwsl/param_recovery.hpp"
#include "cwsl/spectral_forward.hpp"
#include "json.hpp"

using namespace cwsl;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kIo = 1, kInvalid = 2, kSolver = 3, kTolerance = 4 };

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::Io:
      return kIo;
    case ErrorKind::InsufficientSamples:
    case ErrorKind::Schema:
      return kInvalid;
    case ErrorKind::InvalidInterval:
    case ErrorKind::ZeroParameter:
    case ErrorKind::RegularityViolation:
    case ErrorKind::AngleOrderViolation:
    case ErrorKind::OnInterface:
    case ErrorKind::InvalidArgument:
    case ErrorKind::UndefinedConstants:
      // Inside the inverse pipeline these come from derived problems, not the input.
      return e.stage().empty() ? kInvalid : kSolver;
    default:
      return kSolver;
  }
}

int report(const Error& e) {
  std::cerr << "error: " << e.what() << "\n";
  return exit_code(e);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string fmt(cplx z) { return "[" + fmt(z.real()) + ", " + fmt(z.imag()) + "]"; }

double rel(cplx got, cplx want) { return std::abs(got - want) / std::max(std::abs(want), 1e-300); }

// Absolute when the true value is zero.
double rel_or_abs(cplx got, cplx want) { return std::abs(want) > 0.0 ? rel(got, want) : std::abs(got); }

double q_error(const ReconstructionResult& r, const ProblemSpec& truth) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < r.x.size(); ++i) {
    num += std::norm(r.q[i] - truth.q(r.x[i]));
    den += std::norm(truth.q(r.x[i]));
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num / static_cast<double>(r.x.size()));
}

io::ProblemFile load_problem(const std::string& path, int grid_points) {
  io::ProblemFile pf = io::parse_problem(io::read_file(path));
  if (grid_points > 0 && pf.q_expression) {
    pf.q_expression->nodes = static_cast<std::size_t>(grid_points);
    pf.spec.q = io::evaluate(*pf.q_expression, pf.spec.T);
  }
  return pf;
}

LocateOptions locate_options(double tolerance) {
  LocateOptions o;
  if (tolerance > 0.0) o.integrator.rel_tol = tolerance;
  return o;
}

std::map<std::string, double> locate_tolerances(const LocateOptions& o) {
  return {{"integrator_rel_tol", o.integrator.rel_tol},
          {"newton_tol", o.newton_tol},
          {"simplicity", o.simplicity}};
}

struct ForwardArgs {
  std::string input, output;
  int N = 0;
  double tolerance = 0.0;
  int grid_points = 0;
};

int run_forward(const ForwardArgs& a) {
  try {
    const io::ProblemFile pf = load_problem(a.input, a.grid_points);
    const DerivedConstants c = validate_problem(pf.spec, pf.mode);
    for (const std::string& w : c.warnings) std::cerr << "warning: " << w << "\n";
    const LocateOptions opts = locate_options(a.tolerance);
    io::SpectrumFile sf;
    sf.T = pf.spec.T;
    sf.mode = pf.mode;
    try {
      sf.data = locate_eigenvalues(pf.spec, a.N, pf.mode, opts);
    } catch (const Error& e) {
      Error::rethrow_in_stage(e, "forward");
    }
    sf.run.tolerances = locate_tolerances(opts);
    std::ostringstream cfg;
    cfg << io::serialize(pf) << "N=" << a.N << ";rel_tol=" << fmt(opts.integrator.rel_tol);
    sf.run.config_hash = io::fnv1a_hex(cfg.str());
    io::write_file(a.output, io::serialize(sf));
    std::cout << "wrote " << sf.data.data.size() << " eigenvalues to " << a.output << "\n";
    return kOk;
  } catch (const Error& e) {
    return report(e);
  }
}

struct InvertArgs {
  std::string spectrum, output, csv;
  double T = 0.0;
  int N = 40;
  int grid = 201;
};

io::SpectrumFile load_strict_spectrum(const std::string& path, double T) {
  io::SpectrumFile sf = io::parse_spectrum(io::read_file(path));
  if (sf.mode != ValidationMode::strict)
    throw Error(ErrorKind::InvalidArgument, "the inverse pipeline requires strict-mode spectral data");
  if (std::abs(sf.T - T) > 1e-12 * T)
    std::cerr << "warning: spectrum file records T = " << fmt(sf.T) << ", using " << fmt(T) << "\n";
  return sf;
}

int run_invert(const InvertArgs& a) {
  try {
    if (!(a.T > 0.0)) throw Error(ErrorKind::InvalidInterval, "interval length must be positive");
    const io::SpectrumFile sf = load_strict_spectrum(a.spectrum, a.T);
    InverseConfig cfg;
    cfg.N = a.N;
    cfg.grid_points = static_cast<std::size_t>(a.grid);
    const ReconstructionResult r = invert(sf.data, a.T, cfg);
    io::ReconstructionFile rf = io::to_file(r, a.T);
    rf.run.tolerances = {{"eps_xi", cfg.eps_xi}, {"min_rcond", cfg.min_rcond}, {"tail_limit", cfg.tail_limit}};
    std::ostringstream h;
    h << sf.run.config_hash << ";N=" << a.N << ";grid=" << a.grid << ";T=" << fmt(a.T);
    rf.run.config_hash = io::fnv1a_hex(h.str());
    io::write_file(a.output, io::serialize(rf));
    if (!a.csv.empty()) io::write_file(a.csv, io::q_csv(r.x, r.q));
    std::cout << "h = " << fmt(r.h) << "\nH = " << fmt(r.H) << "\nd2 = " << fmt(r.d2)
              << "\nmax forward residual = " << fmt(r.max_forward_residual) << "\n";
    return kOk;
  } catch (const Error& e) {
    return report(e);
  }
}

struct RecoverArgs {
  std::string spectrum, weyl, json_out;
  double T = 0.0;
};

int run_recover(const RecoverArgs& a) {
  try {
    if (!(a.T > 0.0)) throw Error(ErrorKind::InvalidInterval, "interval length must be positive");
    const io::SpectrumFile sf = load_strict_spectrum(a.spectrum, a.T);
    const RecoveredConstants rc = recover_constants(sf.data, a.T);
    json out = {{"schema_version", io::kSchemaVersion},
                {"b", rc.b},
                {"b_imag", rc.b_imag},
                {"a1", {rc.a1.real(), rc.a1.imag()}},
                {"a2", {rc.a2.real(), rc.a2.imag()}},
                {"d1", {rc.d1.real(), rc.d1.imag()}},
                {"A", {rc.A_ratio.real(), rc.A_ratio.imag()}}};
    std::cout << "b  = " << fmt(rc.b) << "  (imaginary part " << fmt(rc.b_imag) << ")\n"
              << "a1 = " << fmt(rc.a1) << "\na2 = " << fmt(rc.a2) << "\nd1 = " << fmt(rc.d1)
              << "\nA  = " << fmt(rc.A_ratio) << "\nextrapolation residuals:\n";
    for (const auto& [name, t] : rc.diagnostics) {
      std::cout << "  " << name << " " << fmt(t.residual) << "\n";
      out["residuals"][name] = t.residual;
    }
    if (!a.weyl.empty()) {
      const io::WeylSamples ws = io::parse_weyl_samples(io::read_file(a.weyl));
      const ExtrapolationTrace t = recover_a1(ws.samples);
      std::cout << "a1 from Weyl samples = " << fmt(t.estimate) << "  residual " << fmt(t.residual) << "\n";
      out["a1_weyl"] = {t.estimate.real(), t.estimate.imag()};
      out["residuals"]["a1_weyl"] = t.residual;
    }
    if (!a.json_out.empty()) io::write_file(a.json_out, out.dump(1) + "\n");
    return kOk;
  } catch (const Error& e) {
    return report(e);
  }
}

struct RoundtripArgs {
  std::string input, report;
  int N = 40;
  int Nt = 40;
  int grid = 201;
  int grid_points = 0;
  double q_tol = 5e-2;
  double bc_tol = 1e-2;
  double forward_tol = 1e-4;
  bool refine = false;
  bool halved = false;
};

json errors_json(const ReconstructionResult& r, const ProblemSpec& t) {
  return {{"q_l2", q_error(r, t)},
          {"h", rel_or_abs(r.h, t.h)},
          {"H", rel_or_abs(r.H, t.H)},
          {"d2", rel_or_abs(r.d2, t.d2)},
          {"forward", r.max_forward_residual}};
}

// Main-equation check against the true problem at five interior points.
json main_equation_series(const ProblemSpec& truth, const SpectralData& data, const ReconstructionResult& r, double T) {
  const ProblemSpec model = build_model(r.model.constants, T, r.model.boundary);
  const DerivedConstants c = validate_problem(model, ValidationMode::strict);
  const SpectralData Wm = closed_form_spectrum_q0(model, r.N, ValidationMode::strict);
  const SequenceWeights w = compute_weights(truncate(data, r.N), Wm, c);
  json out = json::array();
  if (w.active_count() == 0) return out;
  const XGrid grid(T, r.model.constants.b, 7);
  for (const MainEquationCheck& m : check_main_equation(truth, model, w, grid, {1, 2, 3, 4, 5}, Execution::parallel))
    out.push_back({{"N", r.N}, {"x", m.x}, {"defect", m.defect}, {"identity_residual", m.identity}});
  return out;
}

int run_roundtrip(const RoundtripArgs& a) {
  try {
    const io::ProblemFile pf = load_problem(a.input, a.grid_points);
    if (pf.mode != ValidationMode::strict)
      throw Error(ErrorKind::InvalidArgument, "the inverse pipeline requires a strict-mode problem");
    validate_problem(pf.spec, ValidationMode::strict);
    if (a.Nt > a.N) throw Error(ErrorKind::InsufficientSamples, "truncation exceeds the number of eigenvalues");
    const double T = pf.spec.T;
    auto t0 = std::chrono::steady_clock::now();
    SpectralData data;
    try {
      data = locate_eigenvalues(pf.spec, a.N, ValidationMode::strict);
    } catch (const Error& e) {
      Error::rethrow_in_stage(e, "forward");
    }
    const double t_forward = seconds_since(t0);

    InverseConfig cfg;
    cfg.N = a.Nt;
    cfg.grid_points = static_cast<std::size_t>(a.grid);
    t0 = std::chrono::steady_clock::now();
    const ReconstructionResult r = invert(data, T, cfg);
    const double t_invert = seconds_since(t0);

    json rep;
    rep["schema_version"] = io::kSchemaVersion;
    rep["N"] = a.N;
    rep["truncation"] = a.Nt;
    rep["errors"] = errors_json(r, pf.spec);
    rep["tolerances"] = {{"q_l2", a.q_tol}, {"boundary", a.bc_tol}, {"forward", a.forward_tol}};
    rep["main_equation"] = main_equation_series(pf.spec, data, r, T);
    rep["timing_s"] = {{"forward", t_forward}, {"invert", t_invert}};
    const json& e = rep["errors"];
    bool pass = e["q_l2"].get<double>() <= a.q_tol && e["h"].get<double>() <= a.bc_tol &&
                e["H"].get<double>() <= a.bc_tol && e["d2"].get<double>() <= a.bc_tol &&
                e["forward"].get<double>() <= a.forward_tol;
    // Comparison runs: the finer of each pair must not have larger errors.
    auto compare = [&](const char* key, int Nc, bool finer) {
      json cmp;
      cmp["truncation"] = Nc;
      try {
        if (Nc > a.N) throw Error(ErrorKind::InsufficientSamples, "comparison truncation exceeds the number of eigenvalues");
        InverseConfig cc = cfg;
        cc.N = Nc;
        const ReconstructionResult rc = invert(data, T, cc);
        cmp["errors"] = errors_json(rc, pf.spec);
        cmp["main_equation"] = main_equation_series(pf.spec, data, rc, T);
        bool monotone = true;
        for (const char* k : {"q_l2", "h", "H", "d2"}) {
          const double fine = finer ? cmp["errors"][k].get<double>() : e[k].get<double>();
          const double coarse = finer ? e[k].get<double>() : cmp["errors"][k].get<double>();
          monotone = monotone && fine <= coarse;
        }
        cmp["non_increasing"] = monotone;
        pass = pass && monotone;
      } catch (const Error& err) {
        cmp["error"] = err.what();
        pass = false;
      }
      rep[key] = cmp;
    };
    if (a.halved) compare("halved", a.Nt / 2, false);
    if (a.refine) compare("refined", 2 * a.Nt, true);
    rep["pass"] = pass;
    io::write_file(a.report, rep.dump(1) + "\n");
    std::cout << "q " << fmt(e["q_l2"].get<double>()) << "  h " << fmt(e["h"].get<double>()) << "  H "
              << fmt(e["H"].get<double>()) << "  d2 " << fmt(e["d2"].get<double>()) << "  forward "
              << fmt(e["forward"].get<double>()) << "\n"
              << (pass ? "PASS" : "FAIL") << "\n";
    return pass ? kOk : kTolerance;
  } catch (const Error& e) {
    return report(e);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Forward and inverse spectral problems for a two-layer Sturm-Liouville operator"};
  app.set_config("--config", "", "TOML or INI file with option defaults; flags win");
  app.fallthrough();
  app.require_subcommand(1);

  ForwardArgs fa;
  auto* fwd = app.add_subcommand("forward", "Compute eigenvalues and Weyl coefficients");
  fwd->add_option("--input", fa.input, "Problem file")->required();
  fwd->add_option("--output", fa.output, "Spectrum file to write")->required();
  fwd->add_option("--num-eigenvalues", fa.N, "Eigenvalues per branch")->required()->check(CLI::PositiveNumber);
  fwd->add_option("--tolerance", fa.tolerance, "Integrator relative tolerance (default 1e-10)")
      ->check(CLI::PositiveNumber);
  fwd->add_option("--grid-points", fa.grid_points, "Sample count for an expression-defined q")
      ->check(CLI::Range(2, 1000000));

  InvertArgs ia;
  auto* inv = app.add_subcommand("invert", "Reconstruct q, h, H, d2 from spectral data");
  inv->add_option("--spectrum", ia.spectrum, "Spectrum file")->required();
  inv->add_option("--interval-length", ia.T, "Interval length T")->required();
  inv->add_option("--output", ia.output, "Reconstruction file to write")->required();
  inv->add_option("--truncation", ia.N, "Entries per branch used")->capture_default_str()->check(CLI::Range(7, 100000));
  inv->add_option("--x-grid", ia.grid, "Points of the output grid")->capture_default_str()->check(CLI::Range(3, 1000000));
  inv->add_option("--emit-csv", ia.csv, "Also write q as CSV");

  RecoverArgs ra;
  auto* rec = app.add_subcommand("recover", "Recover b, a1, a2, d1 from the asymptotics");
  rec->add_option("--spectrum", ra.spectrum, "Spectrum file")->required();
  rec->add_option("--interval-length", ra.T, "Interval length T")->required();
  rec->add_option("--weyl-samples", ra.weyl, "File of (rho, M) samples for a1");
  rec->add_option("--json", ra.json_out, "Also write the constants as JSON");

  RoundtripArgs ta;
  auto* rt = app.add_subcommand("roundtrip", "Forward, invert and compare with the input");
  rt->add_option("--input", ta.input, "Problem file")->required();
  rt->add_option("--num-eigenvalues", ta.N, "Eigenvalues per branch")->required()->check(CLI::PositiveNumber);
  rt->add_option("--truncation", ta.Nt, "Entries per branch used by the inversion")->required()->check(CLI::Range(7, 100000));
  rt->add_option("--report", ta.report, "Report file to write")->required();
  rt->add_option("--x-grid", ta.grid, "Points of the reconstruction grid")->capture_default_str()->check(CLI::Range(3, 1000000));
  rt->add_option("--grid-points", ta.grid_points, "Sample count for an expression-defined q")
      ->check(CLI::Range(2, 1000000));
  rt->add_option("--q-tol", ta.q_tol, "Relative L2 tolerance for q")->capture_default_str();
  rt->add_option("--boundary-tol", ta.bc_tol, "Relative tolerance for h, H, d2")->capture_default_str();
  rt->add_option("--forward-tol", ta.forward_tol, "Relative tolerance of the forward re-solve")->capture_default_str();
  rt->add_flag("--halved", ta.halved, "Also invert at half the truncation; its errors must not be smaller");
  rt->add_flag("--refine", ta.refine, "Also invert at twice the truncation; its errors must not be larger");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }
  if (*fwd) return run_forward(fa);
  if (*inv) return run_invert(ia);
  if (*rec) return run_recover(ra);
  return run_roundtrip(ta);
}
