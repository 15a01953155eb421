#ifndef QMT_INTEGRATE_HPP
#define QMT_INTEGRATE_HPP

#include <functional>

#include "qmt/linalg.hpp"

namespace qmt {

struct IntegratorOptions {
  double abs_tol = 1e-9;
  double rel_tol = 1e-9;
  double max_step = 0.25;
  double min_step = 1e-13;     // below this the step size controller gives up
  double h1_tol = 1e-6;        // allowed drift of the extremal Hamiltonian
  double sample_stride = 1e-2; // scan stride for conjugate detection and endpoint sampling
};

using OdeRhs = std::function<void(double t, const Vec& y, Vec& dy)>;

/// Adaptive Dormand-Prince 5(4) stepper with value semantics: copying the
/// object snapshots the integration state, which is what the event bisection
/// and the conjugate-time scan rely on to re-run short spans.
class Dopri5 {
 public:
  Dopri5(OdeRhs rhs, double t0, Vec y0, IntegratorOptions opt);

  /// Integrate to exactly t_end (t_end >= current time).  Throws
  /// Errc::integration_failure on step-size underflow or non-finite states.
  void advance_to(double t_end);

  double t() const { return t_; }
  const Vec& y() const { return y_; }
  const IntegratorOptions& options() const { return opt_; }

 private:
  double attempt_step(double h, Vec& y_out, double& err);

  OdeRhs rhs_;
  double t_;
  Vec y_;
  double h_;
  IntegratorOptions opt_;
  Vec k1_, k2_, k3_, k4_, k5_, k6_, k7_, ytmp_;
  bool have_k1_ = false;
};

/// Convenience wrapper: integrate y' = rhs from (t0, y0) to t1.
Vec integrate_to(const OdeRhs& rhs, double t0, const Vec& y0, double t1,
                 const IntegratorOptions& opt);

}  // namespace qmt

#endif
