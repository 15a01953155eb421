#ifndef QMT_SYSTEM_HPP
#define QMT_SYSTEM_HPP

#include <functional>
#include <string>
#include <vector>

#include "qmt/linalg.hpp"

namespace qmt {

/// Driftless control-affine system  xdot = sum_i u_i f_i(x)  with the control
/// constrained to the closed Euclidean unit ball.  Vector fields are supplied
/// as analytic closures together with their Jacobians; downstream code only
/// ever needs pointwise evaluation.
struct ControlSystem {
  int n = 0;  // state dimension
  int m = 0;  // control dimension
  std::vector<std::function<Vec(const Vec&)>> fields;     // x -> f_i(x)
  std::vector<std::function<Mat(const Vec&)>> jacobians;  // x -> df_i/dx
  Vec target;                                             // the point everything steers to
  std::string name;
};

/// Control value certified to satisfy the unit-ball constraint.
struct ControlVector {
  Vec u;
};

/// sum_i u_i f_i(x).  Throws Errc::invalid_dimension on shape mismatch.
Vec eval_dynamics(const ControlSystem& sys, const Vec& x, const ControlVector& u);

/// The n=3, m=2 reference instance:
///   f1 = (1, 0, x2),  f2 = (0, 1, -x1),  target at the origin.
ControlSystem brockett_system();

/// Wraps u as admissible.  |u| in (1, 1+tol] is renormalized to the sphere;
/// |u| > 1+tol raises Errc::constraint_violation.
ControlVector validate_control(const Vec& u, double tol = 1e-9);

}  // namespace qmt

#endif
