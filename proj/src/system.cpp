#include "qmt/system.hpp"

#include <cmath>

namespace qmt {

Vec eval_dynamics(const ControlSystem& sys, const Vec& x, const ControlVector& u) {
  if (static_cast<int>(x.size()) != sys.n)
    fail(Errc::invalid_dimension, "state has dimension " + std::to_string(x.size()) +
                                      ", system expects " + std::to_string(sys.n));
  if (static_cast<int>(u.u.size()) != sys.m)
    fail(Errc::invalid_dimension, "control has dimension " + std::to_string(u.u.size()) +
                                      ", system expects " + std::to_string(sys.m));
  Vec dx(static_cast<size_t>(sys.n), 0.0);
  for (int i = 0; i < sys.m; ++i) {
    const double ui = u.u[static_cast<size_t>(i)];
    if (ui == 0.0) continue;
    axpy(ui, sys.fields[static_cast<size_t>(i)](x), dx);
  }
  return dx;
}

ControlSystem brockett_system() {
  ControlSystem sys;
  sys.n = 3;
  sys.m = 2;
  sys.name = "brockett";
  sys.target = Vec{0.0, 0.0, 0.0};
  sys.fields.push_back([](const Vec& x) { return Vec{1.0, 0.0, x[1]}; });
  sys.fields.push_back([](const Vec& x) { return Vec{0.0, 1.0, -x[0]}; });
  sys.jacobians.push_back([](const Vec&) {
    Mat j(3, 3);
    j(2, 1) = 1.0;
    return j;
  });
  sys.jacobians.push_back([](const Vec&) {
    Mat j(3, 3);
    j(2, 0) = -1.0;
    return j;
  });
  return sys;
}

ControlVector validate_control(const Vec& u, double tol) {
  const double nu = norm(u);
  if (nu > 1.0 + tol)
    fail(Errc::constraint_violation,
         "control norm " + std::to_string(nu) + " exceeds 1 + " + std::to_string(tol));
  ControlVector cv{u};
  if (nu > 1.0) {
    for (double& v : cv.u) v /= nu;
  }
  return cv;
}

}  // namespace qmt
