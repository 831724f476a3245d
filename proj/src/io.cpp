#include "cwsl/io.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cwsl/error.hpp"
#include "json.hpp"

namespace cwsl::io {

using nlohmann::json;

namespace {

[[noreturn]] void schema_error(const std::string& what) { throw Error(ErrorKind::Schema, what); }

double finite(double v, const char* what) {
  if (!std::isfinite(v)) schema_error(std::string("non-finite value for ") + what);
  return v;
}

json put(cplx z, const char* what) {
  if (!is_finite(z)) throw Error(ErrorKind::NonFinite, std::string("cannot write non-finite ") + what);
  return json::array({z.real(), z.imag()});
}

json put(double v, const char* what) {
  if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, std::string("cannot write non-finite ") + what);
  return v;
}

const json& field(const json& j, const char* key) {
  if (!j.is_object()) schema_error(std::string("expected an object holding '") + key + "'");
  const auto it = j.find(key);
  if (it == j.end()) schema_error(std::string("missing field '") + key + "'");
  return *it;
}

double get_real(const json& j, const char* what) {
  if (!j.is_number()) schema_error(std::string(what) + " must be a number");
  return finite(j.get<double>(), what);
}

cplx get_cplx(const json& j, const char* what) {
  if (j.is_number()) return get_real(j, what);
  if (!j.is_array() || j.size() != 2) schema_error(std::string(what) + " must be [re, im]");
  return {get_real(j[0], what), get_real(j[1], what)};
}

int get_int(const json& j, const char* what) {
  if (!j.is_number_integer()) schema_error(std::string(what) + " must be an integer");
  const auto v = j.get<std::int64_t>();
  if (v < -(1LL << 30) || v > (1LL << 30)) schema_error(std::string(what) + " is out of range");
  return static_cast<int>(v);
}

double real_field(const json& j, const char* key) { return get_real(field(j, key), key); }
cplx cplx_field(const json& j, const char* key) { return get_cplx(field(j, key), key); }

json parse_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    schema_error(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) schema_error("top level must be an object");
  const int v = get_int(field(j, "schema_version"), "schema_version");
  if (v != kSchemaVersion) schema_error("unsupported schema_version " + std::to_string(v));
  return j;
}

std::string dump(const json& j) { return j.dump(1) + "\n"; }

ValidationMode mode_from(const json& j) {
  if (!j.is_string()) schema_error("mode must be a string");
  const std::string m = j.get<std::string>();
  if (m == "strict") return ValidationMode::strict;
  if (m == "relaxed") return ValidationMode::relaxed;
  schema_error("mode must be strict or relaxed, got " + m);
}

json samples_json(std::span<const double> x, std::span<const cplx> v) {
  json g = json::array(), vals = json::array();
  for (double t : x) g.push_back(put(t, "grid"));
  for (cplx z : v) vals.push_back(put(z, "values"));
  return {{"grid", g}, {"values", vals}};
}

std::pair<std::vector<double>, std::vector<cplx>> samples_from(const json& j) {
  const json& g = field(j, "grid");
  const json& v = field(j, "values");
  if (!g.is_array() || !v.is_array() || g.size() != v.size() || g.size() < 2)
    schema_error("grid and values must be arrays of equal length >= 2");
  std::vector<double> x;
  std::vector<cplx> y;
  for (std::size_t i = 0; i < g.size(); ++i) {
    x.push_back(get_real(g[i], "grid"));
    y.push_back(get_cplx(v[i], "values"));
    if (i > 0 && !(x[i] > x[i - 1])) schema_error("grid must be strictly increasing");
  }
  return {std::move(x), std::move(y)};
}

json run_json(const RunInfo& r) {
  json t = json::object();
  for (const auto& [k, v] : r.tolerances) t[k] = put(v, "tolerance");
  return {{"config_hash", r.config_hash}, {"tolerances", t}};
}

RunInfo run_from(const json& j) {
  RunInfo r;
  const json& h = field(j, "config_hash");
  if (!h.is_string()) schema_error("config_hash must be a string");
  r.config_hash = h.get<std::string>();
  const json& t = field(j, "tolerances");
  if (!t.is_object()) schema_error("tolerances must be an object");
  for (auto it = t.begin(); it != t.end(); ++it) r.tolerances[it.key()] = get_real(it.value(), "tolerance");
  return r;
}

const std::map<std::string, std::vector<std::string>>& builtins() {
  static const std::map<std::string, std::vector<std::string>> b{
      {"zero", {}},
      {"gaussian", {"amplitude", "center", "width"}},
      {"sine", {"amplitude", "frequency", "phase"}},
  };
  return b;
}

}  // namespace

Potential evaluate(const QExpression& e, double T) {
  const auto it = builtins().find(e.name);
  if (it == builtins().end()) schema_error("unknown q expression '" + e.name + "'");
  for (const auto& [k, v] : e.params) {
    if (std::find(it->second.begin(), it->second.end(), k) == it->second.end())
      schema_error("q expression '" + e.name + "' has no parameter '" + k + "'");
    (void)v;
  }
  auto p = [&](const char* k) {
    const auto f = e.params.find(k);
    if (f == e.params.end()) schema_error(std::string("q expression needs parameter '") + k + "'");
    return f->second;
  };
  if (e.name == "zero") return Potential::zero(T);
  if (e.nodes < 2) schema_error("q expression needs at least 2 nodes");
  if (e.name == "gaussian") {
    const cplx a = p("amplitude"), c = p("center"), w = p("width");
    return Potential::sampled(T, e.nodes, [=](double x) { return a * std::exp(-w * (x - c) * (x - c)); });
  }
  const cplx a = p("amplitude"), f = p("frequency"), ph = p("phase");
  return Potential::sampled(T, e.nodes, [=](double x) { return a * std::sin(f * x + ph); });
}

bool operator==(const SpectrumFile& a, const SpectrumFile& b) {
  auto same = [](const SpectralDatum& u, const SpectralDatum& v) {
    return u.k == v.k && u.branch == v.branch && u.lambda == v.lambda && u.rho == v.rho && u.M == v.M;
  };
  if (a.T != b.T || a.mode != b.mode || !(a.run == b.run)) return false;
  if (a.data.count_branch1 != b.data.count_branch1 || a.data.count_branch2 != b.data.count_branch2) return false;
  if (a.data.seed_offset != b.data.seed_offset || a.data.data.size() != b.data.data.size()) return false;
  for (std::size_t i = 0; i < a.data.data.size(); ++i)
    if (!same(a.data.data[i], b.data.data[i])) return false;
  return true;
}

bool operator==(const ReconstructionFile& a, const ReconstructionFile& b) {
  auto same_consts = [](const RecoveredConstants& u, const RecoveredConstants& v) {
    return u.a1 == v.a1 && u.a2 == v.a2 && u.d1 == v.d1 && u.A_ratio == v.A_ratio && u.b == v.b && u.l1 == v.l1 &&
           u.l2 == v.l2 && u.b_imag == v.b_imag;
  };
  auto same_fwd = [](const ForwardResidual& u, const ForwardResidual& v) {
    return u.branch == v.branch && u.k == v.k && u.lambda_data == v.lambda_data &&
           u.lambda_resolved == v.lambda_resolved && u.rel_err == v.rel_err;
  };
  if (a.T != b.T || a.N != b.N || !same_consts(a.constants, b.constants)) return false;
  if (!same_consts(a.model.constants, b.model.constants)) return false;
  if (a.model.boundary.h != b.model.boundary.h || a.model.boundary.H != b.model.boundary.H ||
      a.model.boundary.d2 != b.model.boundary.d2 || a.model.residual != b.model.residual)
    return false;
  if (a.x != b.x || a.q != b.q || a.h != b.h || a.H != b.H || a.d2 != b.d2) return false;
  if (a.residuals != b.residuals || !(a.run == b.run) || a.forward.size() != b.forward.size()) return false;
  for (std::size_t i = 0; i < a.forward.size(); ++i)
    if (!same_fwd(a.forward[i], b.forward[i])) return false;
  return true;
}

ReconstructionFile to_file(const ReconstructionResult& r, double T) {
  ReconstructionFile f;
  f.T = T;
  f.N = r.N;
  f.constants = r.constants;
  f.constants.diagnostics.clear();
  f.model = r.model;
  f.model.constants.diagnostics.clear();
  f.x = r.x;
  f.q = r.q;
  f.h = r.h;
  f.H = r.H;
  f.d2 = r.d2;
  f.residuals = {
      {"dropped", static_cast<double>(r.dropped)},
      {"tail_estimate", r.tail_estimate},
      {"min_rcond", r.min_rcond},
      {"boundary_fit_residual", r.fit_residual},
      {"model_fit_residual", r.model.residual},
      {"h_spread", r.h_spread},
      {"H_spread", r.H_spread},
      {"d2_spread", r.d2_spread},
      {"max_forward_residual", r.max_forward_residual},
  };
  f.forward = r.forward;
  return f;
}

std::string serialize(const ProblemFile& f) {
  const ProblemSpec& s = f.spec;
  json p = {{"T", put(s.T, "T")},   {"b", put(s.b, "b")},   {"a1", put(s.a1, "a1")},
            {"a2", put(s.a2, "a2")}, {"h", put(s.h, "h")},   {"H", put(s.H, "H")},
            {"d1", put(s.d1, "d1")}, {"d2", put(s.d2, "d2")}};
  if (f.q_expression) {
    json params = json::object();
    for (const auto& [k, v] : f.q_expression->params) params[k] = put(v, "q parameter");
    p["q"] = {{"expression", f.q_expression->name}, {"params", params}, {"nodes", f.q_expression->nodes}};
  } else {
    p["q"] = samples_json(s.q.nodes(), s.q.values());
  }
  return dump({{"schema_version", kSchemaVersion}, {"mode", to_string(f.mode)}, {"problem", p}});
}

ProblemFile parse_problem(const std::string& text) {
  const json j = parse_json(text);
  ProblemFile f;
  f.mode = mode_from(field(j, "mode"));
  const json& p = field(j, "problem");
  ProblemSpec& s = f.spec;
  s.T = real_field(p, "T");
  s.b = real_field(p, "b");
  s.a1 = cplx_field(p, "a1");
  s.a2 = cplx_field(p, "a2");
  s.h = cplx_field(p, "h");
  s.H = cplx_field(p, "H");
  s.d1 = cplx_field(p, "d1");
  s.d2 = cplx_field(p, "d2");
  if (!(s.T > 0.0)) schema_error("T must be positive");
  const json& q = field(p, "q");
  if (q.is_object() && q.contains("expression")) {
    QExpression e;
    const json& name = q["expression"];
    if (!name.is_string()) schema_error("expression must be a string");
    e.name = name.get<std::string>();
    if (q.contains("params")) {
      const json& ps = q["params"];
      if (!ps.is_object()) schema_error("params must be an object");
      for (auto it = ps.begin(); it != ps.end(); ++it) e.params[it.key()] = get_cplx(it.value(), "q parameter");
    }
    if (q.contains("nodes")) {
      const int n = get_int(q["nodes"], "nodes");
      if (n < 2) schema_error("nodes must be >= 2");
      e.nodes = static_cast<std::size_t>(n);
    }
    s.q = evaluate(e, s.T);
    f.q_expression = std::move(e);
  } else {
    auto [x, v] = samples_from(q);
    if (x.front() != 0.0 || x.back() != s.T) schema_error("q grid must run from 0 to T");
    s.q = Potential::from_samples(std::move(x), std::move(v));
  }
  return f;
}

std::string serialize(const SpectrumFile& f) {
  json entries = json::array();
  for (const SpectralDatum& d : f.data.data)
    entries.push_back({{"k", d.k},
                       {"branch", d.branch},
                       {"lambda", put(d.lambda, "lambda")},
                       {"rho", put(d.rho, "rho")},
                       {"M", put(d.M, "M")}});
  return dump({{"schema_version", kSchemaVersion},
               {"T", put(f.T, "T")},
               {"mode", to_string(f.mode)},
               {"counts", {f.data.count_branch1, f.data.count_branch2}},
               {"seed_offset", {f.data.seed_offset[0], f.data.seed_offset[1]}},
               {"entries", entries},
               {"provenance", run_json(f.run)}});
}

SpectrumFile parse_spectrum(const std::string& text) {
  const json j = parse_json(text);
  SpectrumFile f;
  f.T = real_field(j, "T");
  f.mode = mode_from(field(j, "mode"));
  const json& c = field(j, "counts");
  const json& o = field(j, "seed_offset");
  if (!c.is_array() || c.size() != 2 || !o.is_array() || o.size() != 2) schema_error("counts and seed_offset are pairs");
  f.data.count_branch1 = get_int(c[0], "counts");
  f.data.count_branch2 = get_int(c[1], "counts");
  f.data.seed_offset = {get_int(o[0], "seed_offset"), get_int(o[1], "seed_offset")};
  f.data.provenance = cwsl::Provenance::loaded;
  const json& es = field(j, "entries");
  if (!es.is_array()) schema_error("entries must be an array");
  std::array<int, 2> seen{0, 0};
  for (const json& e : es) {
    SpectralDatum d;
    d.k = get_int(field(e, "k"), "k");
    d.branch = get_int(field(e, "branch"), "branch");
    d.lambda = cplx_field(e, "lambda");
    d.rho = cplx_field(e, "rho");
    d.M = cplx_field(e, "M");
    if (d.branch != 1 && d.branch != 2) schema_error("branch must be 1 or 2");
    if (d.branch == 1 && seen[1] > 0) schema_error("entries must be branch-major");
    if (d.k != seen[d.branch - 1]) schema_error("entries must be sorted by k from 0 within a branch");
    ++seen[d.branch - 1];
    f.data.data.push_back(d);
  }
  if (seen[0] != f.data.count_branch1 || seen[1] != f.data.count_branch2)
    schema_error("entry counts disagree with 'counts'");
  f.run = run_from(field(j, "provenance"));
  return f;
}

std::string serialize(const WeylSamples& f) {
  json s = json::array();
  for (const auto& [rho, M] : f.samples) s.push_back({{"rho", put(rho, "rho")}, {"M", put(M, "M")}});
  return dump({{"schema_version", kSchemaVersion}, {"samples", s}});
}

WeylSamples parse_weyl_samples(const std::string& text) {
  const json j = parse_json(text);
  WeylSamples f;
  const json& s = field(j, "samples");
  if (!s.is_array()) schema_error("samples must be an array");
  for (const json& e : s) f.samples.emplace_back(cplx_field(e, "rho"), cplx_field(e, "M"));
  return f;
}

namespace {

json constants_json(const RecoveredConstants& c) {
  return {{"b", put(c.b, "b")},   {"b_imag", put(c.b_imag, "b_imag")}, {"l1", put(c.l1, "l1")},
          {"l2", put(c.l2, "l2")}, {"a1", put(c.a1, "a1")},             {"a2", put(c.a2, "a2")},
          {"d1", put(c.d1, "d1")}, {"A", put(c.A_ratio, "A")}};
}

RecoveredConstants constants_from(const json& j) {
  RecoveredConstants c;
  c.b = real_field(j, "b");
  c.b_imag = real_field(j, "b_imag");
  c.l1 = real_field(j, "l1");
  c.l2 = real_field(j, "l2");
  c.a1 = cplx_field(j, "a1");
  c.a2 = cplx_field(j, "a2");
  c.d1 = cplx_field(j, "d1");
  c.A_ratio = cplx_field(j, "A");
  return c;
}

}  // namespace

std::string serialize(const ReconstructionFile& f) {
  json res = json::object();
  for (const auto& [k, v] : f.residuals) res[k] = put(v, "residual");
  json fwd = json::array();
  for (const ForwardResidual& r : f.forward)
    fwd.push_back({{"branch", r.branch},
                   {"k", r.k},
                   {"lambda_data", put(r.lambda_data, "lambda")},
                   {"lambda_resolved", put(r.lambda_resolved, "lambda")},
                   {"rel_err", put(r.rel_err, "rel_err")}});
  const json model = {{"constants", constants_json(f.model.constants)},
                      {"h", put(f.model.boundary.h, "h")},
                      {"H", put(f.model.boundary.H, "H")},
                      {"d2", put(f.model.boundary.d2, "d2")},
                      {"fit_residual", put(f.model.residual, "fit_residual")}};
  return dump({{"schema_version", kSchemaVersion},
               {"T", put(f.T, "T")},
               {"N", f.N},
               {"constants", constants_json(f.constants)},
               {"model", model},
               {"h", put(f.h, "h")},
               {"H", put(f.H, "H")},
               {"d2", put(f.d2, "d2")},
               {"q", samples_json(f.x, f.q)},
               {"residuals", res},
               {"forward", fwd},
               {"provenance", run_json(f.run)}});
}

ReconstructionFile parse_reconstruction(const std::string& text) {
  const json j = parse_json(text);
  ReconstructionFile f;
  f.T = real_field(j, "T");
  f.N = get_int(field(j, "N"), "N");
  f.constants = constants_from(field(j, "constants"));
  const json& m = field(j, "model");
  f.model.constants = constants_from(field(m, "constants"));
  f.model.boundary = {cplx_field(m, "h"), cplx_field(m, "H"), cplx_field(m, "d2")};
  f.model.residual = real_field(m, "fit_residual");
  f.h = cplx_field(j, "h");
  f.H = cplx_field(j, "H");
  f.d2 = cplx_field(j, "d2");
  std::tie(f.x, f.q) = samples_from(field(j, "q"));
  const json& res = field(j, "residuals");
  if (!res.is_object()) schema_error("residuals must be an object");
  for (auto it = res.begin(); it != res.end(); ++it) f.residuals[it.key()] = get_real(it.value(), "residual");
  const json& fwd = field(j, "forward");
  if (!fwd.is_array()) schema_error("forward must be an array");
  for (const json& e : fwd) {
    ForwardResidual r;
    r.branch = get_int(field(e, "branch"), "branch");
    r.k = get_int(field(e, "k"), "k");
    r.lambda_data = cplx_field(e, "lambda_data");
    r.lambda_resolved = cplx_field(e, "lambda_resolved");
    r.rel_err = real_field(e, "rel_err");
    f.forward.push_back(r);
  }
  f.run = run_from(field(j, "provenance"));
  return f;
}

std::string q_csv(const std::vector<double>& x, const std::vector<cplx>& q) {
  std::ostringstream os;
  os << std::setprecision(17) << "x,q_re,q_im\n";
  for (std::size_t i = 0; i < x.size(); ++i) os << x[i] << ',' << q[i].real() << ',' << q[i].imag() << '\n';
  return os.str();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  if (in.bad()) throw Error(ErrorKind::Io, "cannot read " + path);
  return os.str();
}

void write_file(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot open " + tmp + " for writing");
    out << text;
    out.flush();
    if (!out) throw Error(ErrorKind::Io, "cannot write " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorKind::Io, "cannot write " + path);
  }
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace cwsl::io
