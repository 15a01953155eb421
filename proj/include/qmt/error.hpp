#ifndef QMT_ERROR_HPP
#define QMT_ERROR_HPP

#include <stdexcept>
#include <string>

namespace qmt {

enum class Errc {
  none = 0,
  invalid_dimension,
  constraint_violation,
  degenerate_covector,
  integration_failure,
  invalid_grid,
  uncovered,
  no_optimal_control,
  degenerate_gradient,
  escape_search_failure,
  shell_certification_failure,
  invalid_shells,
  jump_target_undefined,
  stuck_state,
  instant_zeno,
  blow_up,
  artifacts_missing,
  io_error,
  invalid_argument,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::none: return "Ok";
    case Errc::invalid_dimension: return "InvalidDimension";
    case Errc::constraint_violation: return "ConstraintViolation";
    case Errc::degenerate_covector: return "DegenerateCovector";
    case Errc::integration_failure: return "IntegrationFailure";
    case Errc::invalid_grid: return "InvalidGrid";
    case Errc::uncovered: return "Uncovered";
    case Errc::no_optimal_control: return "NoOptimalControl";
    case Errc::degenerate_gradient: return "DegenerateGradient";
    case Errc::escape_search_failure: return "EscapeSearchFailure";
    case Errc::shell_certification_failure: return "ShellCertificationFailure";
    case Errc::invalid_shells: return "InvalidShells";
    case Errc::jump_target_undefined: return "JumpTargetUndefined";
    case Errc::stuck_state: return "StuckState";
    case Errc::instant_zeno: return "InstantZeno";
    case Errc::blow_up: return "BlowUp";
    case Errc::artifacts_missing: return "ArtifactsMissing";
    case Errc::io_error: return "IoError";
    case Errc::invalid_argument: return "InvalidArgument";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace qmt

#endif
