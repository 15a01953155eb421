#include "qmt/integrate.hpp"

#include <algorithm>
#include <cmath>

namespace qmt {

namespace {

// Dormand-Prince RK5(4)7M tableau.
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
constexpr double e1 = b1 - 5179.0 / 57600, e3 = b3 - 7571.0 / 16695, e4 = b4 - 393.0 / 640,
                 e5 = b5 + 92097.0 / 339200, e6 = b6 - 187.0 / 2100, e7 = -1.0 / 40;

}  // namespace

Dopri5::Dopri5(OdeRhs rhs, double t0, Vec y0, IntegratorOptions opt)
    : rhs_(std::move(rhs)), t_(t0), y_(std::move(y0)), opt_(opt) {
  const size_t n = y_.size();
  k1_.assign(n, 0.0);
  k2_.assign(n, 0.0);
  k3_.assign(n, 0.0);
  k4_.assign(n, 0.0);
  k5_.assign(n, 0.0);
  k6_.assign(n, 0.0);
  k7_.assign(n, 0.0);
  ytmp_.assign(n, 0.0);
  h_ = std::min(opt_.max_step, 1e-3);
}

double Dopri5::attempt_step(double h, Vec& y_out, double& err) {
  const size_t n = y_.size();
  if (!have_k1_) {
    rhs_(t_, y_, k1_);
    have_k1_ = true;
  }
  for (size_t i = 0; i < n; ++i) ytmp_[i] = y_[i] + h * a21 * k1_[i];
  rhs_(t_ + h / 5.0, ytmp_, k2_);
  for (size_t i = 0; i < n; ++i) ytmp_[i] = y_[i] + h * (a31 * k1_[i] + a32 * k2_[i]);
  rhs_(t_ + 3.0 * h / 10.0, ytmp_, k3_);
  for (size_t i = 0; i < n; ++i)
    ytmp_[i] = y_[i] + h * (a41 * k1_[i] + a42 * k2_[i] + a43 * k3_[i]);
  rhs_(t_ + 4.0 * h / 5.0, ytmp_, k4_);
  for (size_t i = 0; i < n; ++i)
    ytmp_[i] = y_[i] + h * (a51 * k1_[i] + a52 * k2_[i] + a53 * k3_[i] + a54 * k4_[i]);
  rhs_(t_ + 8.0 * h / 9.0, ytmp_, k5_);
  for (size_t i = 0; i < n; ++i)
    ytmp_[i] =
        y_[i] + h * (a61 * k1_[i] + a62 * k2_[i] + a63 * k3_[i] + a64 * k4_[i] + a65 * k5_[i]);
  rhs_(t_ + h, ytmp_, k6_);
  y_out.resize(n);
  for (size_t i = 0; i < n; ++i)
    y_out[i] = y_[i] + h * (b1 * k1_[i] + b3 * k3_[i] + b4 * k4_[i] + b5 * k5_[i] + b6 * k6_[i]);
  rhs_(t_ + h, y_out, k7_);

  err = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double ei = h * (e1 * k1_[i] + e3 * k3_[i] + e4 * k4_[i] + e5 * k5_[i] + e6 * k6_[i] +
                           e7 * k7_[i]);
    const double sc = opt_.abs_tol + opt_.rel_tol * std::max(std::fabs(y_[i]), std::fabs(y_out[i]));
    const double r = ei / sc;
    err += r * r;
  }
  err = std::sqrt(err / static_cast<double>(n));
  return err;
}

void Dopri5::advance_to(double t_end) {
  if (t_end < t_) fail(Errc::integration_failure, "advance_to called with t_end < t");
  Vec y_new;
  while (t_ < t_end) {
    double h = std::min({h_, opt_.max_step, t_end - t_});
    if (h < opt_.min_step) {
      // Remaining gap is below resolvable step size; snap to the endpoint.
      t_ = t_end;
      break;
    }
    double err = 0.0;
    bool accepted = false;
    while (!accepted) {
      err = attempt_step(h, y_new, err);
      if (!std::isfinite(err)) fail(Errc::integration_failure, "non-finite state during step");
      if (err <= 1.0) {
        accepted = true;
      } else {
        h *= std::max(0.2, 0.9 * std::pow(err, -0.2));
        if (h < opt_.min_step)
          fail(Errc::integration_failure, "step size underflow at t=" + std::to_string(t_));
      }
    }
    t_ += h;
    y_ = y_new;
    k1_ = k7_;  // FSAL
    const double grow = (err > 0.0) ? 0.9 * std::pow(err, -0.2) : 5.0;
    h_ = h * std::clamp(grow, 0.2, 5.0);
    h_ = std::min(h_, opt_.max_step);
  }
}

Vec integrate_to(const OdeRhs& rhs, double t0, const Vec& y0, double t1,
                 const IntegratorOptions& opt) {
  Dopri5 stepper(rhs, t0, y0, opt);
  stepper.advance_to(t1);
  return stepper.y();
}

}  // namespace qmt
