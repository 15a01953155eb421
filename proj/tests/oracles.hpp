#ifndef QMT_TESTS_ORACLES_HPP
#define QMT_TESTS_ORACLES_HPP

// Test-only reference computations, kept independent of the library's
// integration path on purpose.

#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

// Closed-form extremal of the Brockett instance started at the origin with
// p0 = (cos th, sin th, la).  Derived by integrating the extremal system by
// hand: the control rotates at rate 2*la, so
//   x1 = (sin(th) - sin(th - 2 la t)) / (2 la),
//   x2 = (cos(th - 2 la t) - cos(th)) / (2 la),
//   x3 = (2 la t - sin(2 la t)) / (4 la^2),
// with the straight line as the la -> 0 limit.
inline void brockett_extremal(double th, double la, double t, Vec& x, Vec& p) {
  x.assign(3, 0.0);
  p.assign(3, 0.0);
  if (std::fabs(la) < 1e-14) {
    x[0] = t * std::cos(th);
    x[1] = t * std::sin(th);
    x[2] = 0.0;
    p[0] = std::cos(th);
    p[1] = std::sin(th);
    p[2] = 0.0;
    return;
  }
  const double a = th - 2.0 * la * t;
  x[0] = (std::sin(th) - std::sin(a)) / (2.0 * la);
  x[1] = (std::cos(a) - std::cos(th)) / (2.0 * la);
  x[2] = (2.0 * la * t - std::sin(2.0 * la * t)) / (4.0 * la * la);
  // h = (cos a, sin a); p1 = h1 - la*x2, p2 = h2 + la*x1, p3 = la.
  p[0] = std::cos(a) - la * x[1];
  p[1] = std::sin(a) + la * x[0];
  p[2] = la;
}

// First conjugate time of the same family: pi / |la| (the slice circle
// closes), none for straight lines.
inline double brockett_conjugate_time(double la) {
  return std::acos(-1.0) / std::fabs(la);
}

// Minimal time from the origin to a point on the x3 axis: sqrt(2 pi |x3|).
inline double brockett_axis_time(double x3) {
  return std::sqrt(2.0 * std::acos(-1.0) * std::fabs(x3));
}

// Classical fixed-step RK4 with step halving until two successive refinements
// agree to tol in sup norm.
inline Vec rk4_step_halving(const std::function<void(double, const Vec&, Vec&)>& rhs, double t0,
                            Vec y0, double t1, double tol) {
  auto run = [&](int steps) {
    Vec y = y0;
    const double h = (t1 - t0) / steps;
    Vec k1(y.size()), k2(y.size()), k3(y.size()), k4(y.size()), tmp(y.size());
    double t = t0;
    for (int s = 0; s < steps; ++s) {
      rhs(t, y, k1);
      for (size_t i = 0; i < y.size(); ++i) tmp[i] = y[i] + 0.5 * h * k1[i];
      rhs(t + 0.5 * h, tmp, k2);
      for (size_t i = 0; i < y.size(); ++i) tmp[i] = y[i] + 0.5 * h * k2[i];
      rhs(t + 0.5 * h, tmp, k3);
      for (size_t i = 0; i < y.size(); ++i) tmp[i] = y[i] + h * k3[i];
      rhs(t + h, tmp, k4);
      for (size_t i = 0; i < y.size(); ++i)
        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      t += h;
    }
    return y;
  };
  int steps = 64;
  Vec prev = run(steps);
  for (int iter = 0; iter < 14; ++iter) {
    steps *= 2;
    Vec cur = run(steps);
    double diff = 0.0;
    for (size_t i = 0; i < cur.size(); ++i) diff = std::max(diff, std::fabs(cur[i] - prev[i]));
    if (diff <= tol) return cur;
    prev = cur;
  }
  return prev;
}

// Deterministic uniform generator for probe points (splitmix64 based), kept
// independent of the library RNG.
struct Rand {
  unsigned long long s;
  explicit Rand(unsigned long long seed) : s(seed) {}
  double u01() {
    s += 0x9e3779b97f4a7c15ull;
    unsigned long long z = s;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    z = z ^ (z >> 31);
    return static_cast<double>(z >> 11) * 0x1.0p-53;
  }
  double uniform(double a, double b) { return a + (b - a) * u01(); }
};

}  // namespace oracle

#endif
