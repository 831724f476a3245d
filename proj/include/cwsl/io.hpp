#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cwsl/core_model.hpp"
#include "cwsl/inverse_msm.hpp"

namespace cwsl::io {

inline constexpr int kSchemaVersion = 1;

/// Named potential: "zero", "gaussian" (amplitude, center, width:
/// amplitude exp(-width (x - center)^2)) or "sine" (amplitude, frequency, phase:
/// amplitude sin(frequency x + phase)), sampled on `nodes` uniform points.
struct QExpression {
  std::string name;
  std::map<std::string, cplx> params;
  std::size_t nodes = 1001;

  friend bool operator==(const QExpression&, const QExpression&) = default;
};

Potential evaluate(const QExpression& e, double T);

struct ProblemFile {
  ProblemSpec spec;
  ValidationMode mode = ValidationMode::strict;
  /// Set when q came from an expression; spec.q then holds its samples.
  std::optional<QExpression> q_expression;

  friend bool operator==(const ProblemFile&, const ProblemFile&) = default;
};

struct RunInfo {
  std::string config_hash;
  std::map<std::string, double> tolerances;

  friend bool operator==(const RunInfo&, const RunInfo&) = default;
};

struct SpectrumFile {
  double T = 1.0;
  ValidationMode mode = ValidationMode::strict;
  SpectralData data;
  RunInfo run;
};

bool operator==(const SpectrumFile& a, const SpectrumFile& b);

struct WeylSamples {
  std::vector<std::pair<cplx, cplx>> samples;

  friend bool operator==(const WeylSamples&, const WeylSamples&) = default;
};

struct ReconstructionFile {
  double T = 1.0;
  int N = 0;
  RecoveredConstants constants;
  ModelFit model;
  std::vector<double> x;
  std::vector<cplx> q;
  cplx h, H, d2;
  /// Scalar diagnostics by name.
  std::map<std::string, double> residuals;
  std::vector<ForwardResidual> forward;
  RunInfo run;
};

bool operator==(const ReconstructionFile& a, const ReconstructionFile& b);

ReconstructionFile to_file(const ReconstructionResult& r, double T);

/// Text form; parse errors, wrong schema_version and non-finite numbers throw
/// Error(Schema).
std::string serialize(const ProblemFile& f);
std::string serialize(const SpectrumFile& f);
std::string serialize(const WeylSamples& f);
std::string serialize(const ReconstructionFile& f);

ProblemFile parse_problem(const std::string& text);
SpectrumFile parse_spectrum(const std::string& text);
WeylSamples parse_weyl_samples(const std::string& text);
ReconstructionFile parse_reconstruction(const std::string& text);

/// x,q_re,q_im rows at round-trip precision.
std::string q_csv(const std::vector<double>& x, const std::vector<cplx>& q);

std::string read_file(const std::string& path);
/// Writes through a temporary file and rename; throws Error(Io).
void write_file(const std::string& path, const std::string& text);

/// FNV-1a of the text, 16 hex digits.
std::string fnv1a_hex(const std::string& text);

}  // namespace cwsl::io
