#include "cwsl/error.hpp"

namespace cwsl {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidInterval: return "InvalidInterval";
    case ErrorKind::ZeroParameter: return "ZeroParameter";
    case ErrorKind::RegularityViolation: return "RegularityViolation";
    case ErrorKind::AngleOrderViolation: return "AngleOrderViolation";
    case ErrorKind::OnInterface: return "OnInterface";
    case ErrorKind::ToleranceNotMet: return "ToleranceNotMet";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::NearEigenvalue: return "NearEigenvalue";
    case ErrorKind::MultipleZeroDetected: return "MultipleZeroDetected";
    case ErrorKind::CountMismatch: return "CountMismatch";
    case ErrorKind::SeedDivergence: return "SeedDivergence";
    case ErrorKind::UndefinedConstants: return "UndefinedConstants";
    case ErrorKind::InsufficientSamples: return "InsufficientSamples";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::NonRealGeometry: return "NonRealGeometry";
    case ErrorKind::DegenerateRatio: return "DegenerateRatio";
    case ErrorKind::MisalignedData: return "MisalignedData";
    case ErrorKind::MissingTrace: return "MissingTrace";
    case ErrorKind::DroppedAll: return "DroppedAll";
    case ErrorKind::SingularSystem: return "SingularSystem";
    case ErrorKind::TailTooLarge: return "TailTooLarge";
    case ErrorKind::NoUsableIndex: return "NoUsableIndex";
    case ErrorKind::InconsistentEstimates: return "InconsistentEstimates";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Io: return "Io";
    case ErrorKind::Schema: return "Schema";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& what) : Error(kind, what, std::string{}) {}

Error::Error(ErrorKind kind, const std::string& detail, const std::string& stage)
    : std::runtime_error(std::string(to_string(kind)) + ": " +
                         (stage.empty() ? detail : "[" + stage + "] " + detail)),
      kind_(kind),
      detail_(detail),
      stage_(stage) {}

void Error::rethrow_in_stage(const Error& e, const std::string& stage) {
  throw Error(e.kind(), e.detail(), stage);
}

}  // namespace cwsl
