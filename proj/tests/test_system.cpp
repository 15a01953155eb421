#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "oracles.hpp"
#include "qmt/system.hpp"

using qmt::brockett_system;
using qmt::ControlVector;
using qmt::eval_dynamics;
using qmt::Vec;

TEST_CASE("dynamics evaluation on the reference instance") {
  auto sys = brockett_system();
  ControlVector u1{{1.0, 0.0}};
  Vec r = eval_dynamics(sys, {0.0, 0.0, 0.0}, u1);
  CHECK(r == Vec{1.0, 0.0, 0.0});

  ControlVector u2{{0.0, 1.0}};
  r = eval_dynamics(sys, {1.0, 2.0, 5.0}, u2);
  CHECK(r == Vec{0.0, 1.0, -1.0});

  ControlVector uz{{0.0, 0.0}};
  r = eval_dynamics(sys, {0.3, -0.7, 2.0}, uz);
  CHECK(r == Vec{0.0, 0.0, 0.0});
}

TEST_CASE("dimension mismatches are rejected") {
  auto sys = brockett_system();
  CHECK_THROWS_AS(eval_dynamics(sys, {0.0, 0.0}, ControlVector{{1.0, 0.0}}), qmt::Error);
  CHECK_THROWS_AS(eval_dynamics(sys, {0.0, 0.0, 0.0}, ControlVector{{1.0}}), qmt::Error);
}

TEST_CASE("reference fields and jacobians") {
  auto sys = brockett_system();
  CHECK(sys.fields[0](Vec{0, 0, 0}) == Vec{1.0, 0.0, 0.0});
  CHECK(sys.fields[1](Vec{3, 0, 0}) == Vec{0.0, 1.0, -3.0});
  auto j1 = sys.jacobians[0](Vec{0.4, -2.0, 7.0});
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) CHECK(j1(r, c) == ((r == 2 && c == 1) ? 1.0 : 0.0));
}

TEST_CASE("control validation") {
  auto ok = qmt::validate_control({1.0, 0.0}, 0.0);
  CHECK(ok.u == Vec{1.0, 0.0});

  auto pythag = qmt::validate_control({0.6, 0.8}, 0.0);
  CHECK(qmt::norm(pythag.u) == doctest::Approx(1.0).epsilon(1e-15));

  CHECK_THROWS_AS(qmt::validate_control({2.0, 0.0}, 1e-9), qmt::Error);

  // slight overshoot gets renormalized onto the sphere
  auto renorm = qmt::validate_control({1.0 + 5e-10, 0.0}, 1e-9);
  CHECK(qmt::norm(renorm.u) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("dynamics is linear in the control") {
  auto sys = brockett_system();
  oracle::Rand rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Vec x{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    Vec u{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
    Vec v{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
    const double a = rng.uniform(-1, 1), b = rng.uniform(-1, 1);
    Vec lhs = eval_dynamics(sys, x, ControlVector{{a * u[0] + b * v[0], a * u[1] + b * v[1]}});
    Vec fu = eval_dynamics(sys, x, ControlVector{u});
    Vec fv = eval_dynamics(sys, x, ControlVector{v});
    for (int i = 0; i < 3; ++i)
      CHECK(lhs[i] == doctest::Approx(a * fu[i] + b * fv[i]).epsilon(1e-12));
    // third component is u1*x2 - u2*x1 exactly
    Vec w = eval_dynamics(sys, x, ControlVector{u});
    CHECK(w[2] == u[0] * x[1] - u[1] * x[0]);
  }
}

TEST_CASE("jacobians match finite differences at random probes") {
  auto sys = brockett_system();
  oracle::Rand rng(11);
  const double eps = 1e-6;
  for (int trial = 0; trial < 100; ++trial) {
    Vec x{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    for (int i = 0; i < sys.m; ++i) {
      auto jac = sys.jacobians[i](x);
      for (int c = 0; c < 3; ++c) {
        Vec xp = x, xm = x;
        xp[c] += eps;
        xm[c] -= eps;
        Vec fp = sys.fields[i](xp), fm = sys.fields[i](xm);
        for (int r = 0; r < 3; ++r) {
          const double fd = (fp[r] - fm[r]) / (2 * eps);
          const double scale = std::max(1.0, std::fabs(jac(r, c)));
          CHECK(std::fabs(jac(r, c) - fd) / scale <= 1e-6);
        }
      }
    }
  }
}
