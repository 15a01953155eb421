#include "qmt/extremal.hpp"

#include <algorithm>
#include <cmath>

namespace qmt {

double hamiltonian_h1(const ControlSystem& sys, const Vec& x, const Vec& p) {
  double s = 0.0;
  for (int i = 0; i < sys.m; ++i) {
    const double hi = dot(p, sys.fields[static_cast<size_t>(i)](x));
    s += hi * hi;
  }
  return std::sqrt(s);
}

Vec extremal_control(const ControlSystem& sys, const Vec& x, const Vec& p, double h1_floor) {
  Vec u(static_cast<size_t>(sys.m), 0.0);
  double s = 0.0;
  for (int i = 0; i < sys.m; ++i) {
    u[static_cast<size_t>(i)] = dot(p, sys.fields[static_cast<size_t>(i)](x));
    s += u[static_cast<size_t>(i)] * u[static_cast<size_t>(i)];
  }
  const double h1 = std::sqrt(s);
  if (h1 <= h1_floor)
    fail(Errc::degenerate_covector, "H1 = " + std::to_string(h1) + " at control evaluation");
  for (double& v : u) v /= h1;
  return u;
}

void extremal_rhs(const ControlSystem& sys, const Vec& x, const Vec& p, Vec& dx, Vec& dp,
                  double h1_floor) {
  const size_t n = static_cast<size_t>(sys.n);
  dx.assign(n, 0.0);
  dp.assign(n, 0.0);
  double s = 0.0;
  std::vector<double> h(static_cast<size_t>(sys.m));
  for (int i = 0; i < sys.m; ++i) {
    h[static_cast<size_t>(i)] = dot(p, sys.fields[static_cast<size_t>(i)](x));
    s += h[static_cast<size_t>(i)] * h[static_cast<size_t>(i)];
  }
  const double h1 = std::sqrt(s);
  if (h1 <= h1_floor)
    fail(Errc::degenerate_covector, "H1 = " + std::to_string(h1) + " along extremal");
  // dH1/dp = sum h_i f_i / H1 ; dH1/dx = sum h_i J_i^T p / H1.
  for (int i = 0; i < sys.m; ++i) {
    const double w = h[static_cast<size_t>(i)] / h1;
    if (w == 0.0) continue;
    axpy(w, sys.fields[static_cast<size_t>(i)](x), dx);
    axpy(-w, mat_tvec(sys.jacobians[static_cast<size_t>(i)](x), p), dp);
  }
}

CovectorSlice::CovectorSlice(const ControlSystem& sys) : n_(sys.n), m_(sys.m) {
  const Vec& xb = sys.target;
  rows_ = Mat(m_, n_);
  for (int i = 0; i < m_; ++i) {
    const Vec fi = sys.fields[static_cast<size_t>(i)](xb);
    for (int j = 0; j < n_; ++j) rows_(i, j) = fi[static_cast<size_t>(j)];
  }
  // Right inverse pinv = A^T (A A^T)^{-1}; requires the fields independent at
  // the target.
  Mat g(m_, m_);
  for (int i = 0; i < m_; ++i)
    for (int j = 0; j < m_; ++j) {
      double s = 0.0;
      for (int k = 0; k < n_; ++k) s += rows_(i, k) * rows_(j, k);
      g(i, j) = s;
    }
  pinv_ = Mat(n_, m_);
  for (int c = 0; c < m_; ++c) {
    Vec e(static_cast<size_t>(m_), 0.0);
    e[static_cast<size_t>(c)] = 1.0;
    Vec w = solve(g, e);  // (A A^T)^{-1} e_c
    for (int r = 0; r < n_; ++r) {
      double s = 0.0;
      for (int i = 0; i < m_; ++i) s += rows_(i, r) * w[static_cast<size_t>(i)];
      pinv_(r, c) = s;
    }
  }
  // Orthonormal basis of ker A by Gram-Schmidt against the rows and the
  // already accepted directions.
  std::vector<Vec> basis;
  std::vector<Vec> rows(static_cast<size_t>(m_));
  for (int i = 0; i < m_; ++i) {
    rows[static_cast<size_t>(i)].assign(static_cast<size_t>(n_), 0.0);
    for (int j = 0; j < n_; ++j) rows[static_cast<size_t>(i)][static_cast<size_t>(j)] = rows_(i, j);
  }
  for (int c = 0; c < n_ && static_cast<int>(basis.size()) < n_ - m_; ++c) {
    Vec v(static_cast<size_t>(n_), 0.0);
    v[static_cast<size_t>(c)] = 1.0;
    for (const Vec& r : rows) axpy(-dot(v, r) / dot(r, r), r, v);
    for (const Vec& b : basis) axpy(-dot(v, b), b, v);
    const double nv = norm(v);
    if (nv > 1e-8) {
      for (double& e : v) e /= nv;
      basis.push_back(v);
    }
  }
  if (static_cast<int>(basis.size()) != n_ - m_)
    fail(Errc::invalid_argument, "could not build transverse basis for the covector slice");
  nullb_ = Mat(n_, n_ - m_);
  for (int c = 0; c < n_ - m_; ++c)
    for (int r = 0; r < n_; ++r) nullb_(r, c) = basis[static_cast<size_t>(c)][static_cast<size_t>(r)];
}

namespace {

// Hyperspherical unit vector and its angle derivatives:
//   xi_i = cos(a_i) prod_{j<i} sin(a_j)   (i < m-1),
//   xi_{m-1} = prod_j sin(a_j),
// reducing to (cos a, sin a) for m = 2.
Vec unit_direction(const Vec& angles, int m) {
  Vec xi(static_cast<size_t>(m), 1.0);
  double prefix = 1.0;
  for (int i = 0; i < m - 1; ++i) {
    xi[static_cast<size_t>(i)] = prefix * std::cos(angles[static_cast<size_t>(i)]);
    prefix *= std::sin(angles[static_cast<size_t>(i)]);
  }
  xi[static_cast<size_t>(m - 1)] = prefix;
  return xi;
}

Vec unit_direction_deriv(const Vec& angles, int m, int k) {
  Vec dxi(static_cast<size_t>(m), 0.0);
  for (int i = k; i < m; ++i) {
    double d;
    if (i == k && i < m - 1) {
      d = -std::sin(angles[static_cast<size_t>(k)]);
      for (int j = 0; j < i; ++j) d *= std::sin(angles[static_cast<size_t>(j)]);
    } else if (i > k) {
      d = (i < m - 1) ? std::cos(angles[static_cast<size_t>(i)]) : 1.0;
      for (int j = 0; j < i; ++j)
        d *= (j == k) ? std::cos(angles[static_cast<size_t>(j)])
                      : std::sin(angles[static_cast<size_t>(j)]);
    } else {
      continue;
    }
    dxi[static_cast<size_t>(i)] = d;
  }
  return dxi;
}

}  // namespace

Vec CovectorSlice::covector(const Vec& coords) const {
  Vec angles(coords.begin(), coords.begin() + (m_ - 1));
  const Vec xi = unit_direction(angles, m_);
  Vec p0 = matvec(pinv_, xi);
  for (int c = 0; c < n_ - m_; ++c) {
    const double lam = coords[static_cast<size_t>(m_ - 1 + c)];
    for (int r = 0; r < n_; ++r) p0[static_cast<size_t>(r)] += nullb_(r, c) * lam;
  }
  return p0;
}

Vec CovectorSlice::d_covector(const Vec& coords, int k) const {
  if (k < m_ - 1) {
    Vec angles(coords.begin(), coords.begin() + (m_ - 1));
    return matvec(pinv_, unit_direction_deriv(angles, m_, k));
  }
  Vec d(static_cast<size_t>(n_), 0.0);
  const int c = k - (m_ - 1);
  for (int r = 0; r < n_; ++r) d[static_cast<size_t>(r)] = nullb_(r, c);
  return d;
}

Vec CovectorSlice::chart_of(const Vec& p0) const {
  // xi = A p0 recovers the unit direction; transverse coords project onto the
  // null basis.
  Vec xi = matvec(rows_, p0);
  Vec coords(static_cast<size_t>(n_ - 1), 0.0);
  // Invert the hyperspherical parameterization front-to-back:
  // a_i = atan2(norm of remaining tail, xi_i), with the last angle keeping
  // the sign of the final component.
  double rem = 0.0;
  for (int i = m_ - 1; i >= 0; --i) rem += xi[static_cast<size_t>(i)] * xi[static_cast<size_t>(i)];
  for (int i = 0; i < m_ - 1; ++i) {
    rem -= xi[static_cast<size_t>(i)] * xi[static_cast<size_t>(i)];
    double tailn = std::sqrt(std::max(rem, 0.0));
    if (i == m_ - 2) tailn = xi[static_cast<size_t>(m_ - 1)];  // keep the sign in the last angle
    coords[static_cast<size_t>(i)] = std::atan2(tailn, xi[static_cast<size_t>(i)]);
  }
  for (int c = 0; c < n_ - m_; ++c) {
    double s = 0.0;
    for (int r = 0; r < n_; ++r) s += nullb_(r, c) * p0[static_cast<size_t>(r)];
    coords[static_cast<size_t>(m_ - 1 + c)] = s;
  }
  return coords;
}

double CovectorSlice::chart_distance(const Vec& a, const Vec& b) const {
  double s = 0.0;
  for (int k = 0; k < n_ - 1; ++k) {
    double d = a[static_cast<size_t>(k)] - b[static_cast<size_t>(k)];
    if (k < m_ - 1) {
      constexpr double two_pi = 6.283185307179586476925286766559;
      d = std::remainder(d, two_pi);
    }
    s += d * d;
  }
  return std::sqrt(s);
}

ExtremalFlow::ExtremalFlow(const ControlSystem& sys, const CovectorSlice& slice, const Vec& chart,
                           IntegratorOptions opt, bool with_variational)
    : sys_(&sys),
      n_(sys.n),
      ndir_(with_variational ? sys.n - 1 : 0),
      opt_(opt),
      stepper_(
          // Captures by value so that copied flows stay self-contained.
          [sysp = &sys, n_ = sys.n, ndir_ = with_variational ? sys.n - 1 : 0](
              double, const Vec& y, Vec& dy) {
            const ControlSystem& sys_ = *sysp;
            const size_t n = static_cast<size_t>(n_);
            dy.assign(y.size(), 0.0);
            Vec x(y.begin(), y.begin() + n_);
            Vec p(y.begin() + n_, y.begin() + 2 * n_);
            Vec dx, dp;
            extremal_rhs(sys_, x, p, dx, dp);
            std::copy(dx.begin(), dx.end(), dy.begin());
            std::copy(dp.begin(), dp.end(), dy.begin() + n_);
            // Variational directions: directional central difference of the
            // extremal RHS; the Jacobian of the flow needs field Hessians the
            // system does not carry, so the derivative is taken numerically.
            for (int k = 0; k < ndir_; ++k) {
              const size_t off = 2 * n + 2 * n * static_cast<size_t>(k);
              Vec delx(y.begin() + off, y.begin() + off + n_);
              Vec delp(y.begin() + off + n_, y.begin() + off + 2 * n_);
              double s = 0.0;
              for (double v : delx) s += v * v;
              for (double v : delp) s += v * v;
              s = std::sqrt(s);
              if (s == 0.0) continue;
              const double eps = 1e-6 * (1.0 + norm(x) + norm(p)) / s;
              Vec xp = x, pp = p, xm = x, pm = p;
              axpy(eps, delx, xp);
              axpy(eps, delp, pp);
              axpy(-eps, delx, xm);
              axpy(-eps, delp, pm);
              Vec dxp, dpp, dxm, dpm;
              extremal_rhs(sys_, xp, pp, dxp, dpp);
              extremal_rhs(sys_, xm, pm, dxm, dpm);
              for (int j = 0; j < n_; ++j) {
                dy[off + static_cast<size_t>(j)] =
                    (dxp[static_cast<size_t>(j)] - dxm[static_cast<size_t>(j)]) / (2.0 * eps);
                dy[off + n + static_cast<size_t>(j)] =
                    (dpp[static_cast<size_t>(j)] - dpm[static_cast<size_t>(j)]) / (2.0 * eps);
              }
            }
          },
          0.0,
          [&] {
            Vec y(2 * static_cast<size_t>(sys.n) +
                      (with_variational ? 2 * static_cast<size_t>(sys.n) * (sys.n - 1) : 0),
                  0.0);
            const Vec p0 = slice.covector(chart);
            for (int j = 0; j < sys.n; ++j) {
              y[static_cast<size_t>(j)] = sys.target[static_cast<size_t>(j)];
              y[static_cast<size_t>(sys.n + j)] = p0[static_cast<size_t>(j)];
            }
            if (with_variational) {
              for (int k = 0; k < sys.n - 1; ++k) {
                const Vec dp0 = slice.d_covector(chart, k);
                const size_t off =
                    2 * static_cast<size_t>(sys.n) + 2 * static_cast<size_t>(sys.n) * k;
                for (int j = 0; j < sys.n; ++j)
                  y[off + static_cast<size_t>(sys.n + j)] = dp0[static_cast<size_t>(j)];
              }
            }
            return y;
          }(),
          opt) {}

void ExtremalFlow::advance_to(double t) {
  stepper_.advance_to(t);
  h1_drift_ = std::max(h1_drift_, std::fabs(h1() - 1.0));
}

double ExtremalFlow::t() const { return stepper_.t(); }

Vec ExtremalFlow::x() const {
  return Vec(stepper_.y().begin(), stepper_.y().begin() + n_);
}

Vec ExtremalFlow::p() const {
  return Vec(stepper_.y().begin() + n_, stepper_.y().begin() + 2 * n_);
}

double ExtremalFlow::h1() const { return hamiltonian_h1(*sys_, x(), p()); }

Vec ExtremalFlow::xdot() const {
  Vec dx, dp;
  extremal_rhs(*sys_, x(), p(), dx, dp);
  return dx;
}

Mat ExtremalFlow::jacobi() const {
  Mat j(n_, n_);
  const Vec dx = xdot();
  for (int r = 0; r < n_; ++r) j(r, 0) = dx[static_cast<size_t>(r)];
  for (int k = 0; k < ndir_; ++k) {
    const size_t off = 2 * static_cast<size_t>(n_) + 2 * static_cast<size_t>(n_) * k;
    for (int r = 0; r < n_; ++r) j(r, k + 1) = stepper_.y()[off + static_cast<size_t>(r)];
  }
  return j;
}

Mat ExtremalFlow::adjoint_jacobi() const {
  Mat pj(n_, n_);
  Vec dx, dp;
  extremal_rhs(*sys_, x(), p(), dx, dp);
  for (int r = 0; r < n_; ++r) pj(r, 0) = dp[static_cast<size_t>(r)];
  for (int k = 0; k < ndir_; ++k) {
    const size_t off = 2 * static_cast<size_t>(n_) + 2 * static_cast<size_t>(n_) * k;
    for (int r = 0; r < n_; ++r)
      pj(r, k + 1) = stepper_.y()[off + static_cast<size_t>(n_ + r)];
  }
  return pj;
}

double ExtremalFlow::det_jacobi() const { return det(jacobi()); }

void ExtremalFlow::check_h1() const {
  if (h1_drift_ > opt_.h1_tol)
    fail(Errc::integration_failure,
         "H1 drift " + std::to_string(h1_drift_) + " exceeds tolerance");
}

ExpResult exponential_map(const ControlSystem& sys, const Covector& p0, double t,
                          const IntegratorOptions& opts) {
  if (t < 0.0) fail(Errc::invalid_argument, "exponential map needs t >= 0");
  CovectorSlice slice(sys);
  const Vec chart = slice.chart_of(p0.p);
  ExtremalFlow flow(sys, slice, chart, opts);
  ExtremalArc arc;
  arc.p0 = slice.covector(chart);
  arc.p0_chart = chart;
  double s = 0.0;
  const double stride = std::max(opts.sample_stride, 1e-6);
  while (true) {
    flow.advance_to(s);
    flow.check_h1();
    arc.t.push_back(flow.t());
    arc.x.push_back(flow.x());
    arc.p.push_back(flow.p());
    arc.jacobi.push_back(flow.jacobi());
    arc.h1.push_back(flow.h1());
    if (s >= t) break;
    s = std::min(t, s + stride);
  }
  return ExpResult{arc.x.back(), arc.p.back(), std::move(arc)};
}

std::optional<double> conjugate_time_chart(const ControlSystem& sys, const CovectorSlice& slice,
                                           const Vec& chart, double t_max,
                                           const IntegratorOptions& opts) {
  if (t_max <= 0.0) fail(Errc::invalid_argument, "conjugate scan needs t_max > 0");
  ExtremalFlow flow(sys, slice, chart, opts, true);
  const double stride = std::max(opts.sample_stride, 1e-6);
  // det J vanishes at t = 0 by construction (all slice columns start at zero),
  // so the reference sign is taken at the first scan point.
  double t_prev = std::min(stride, t_max);
  flow.advance_to(t_prev);
  double d_prev = flow.det_jacobi();
  ExtremalFlow snap = flow;
  while (t_prev < t_max) {
    const double t_next = std::min(t_prev + stride, t_max);
    flow.advance_to(t_next);
    const double d_next = flow.det_jacobi();
    if ((d_prev > 0.0 && d_next <= 0.0) || (d_prev < 0.0 && d_next >= 0.0)) {
      // bisect inside [t_prev, t_next] restarting from the snapshot
      double lo = t_prev, hi = t_next;
      while (hi - lo > kConjugateTimeTol) {
        const double mid = 0.5 * (lo + hi);
        ExtremalFlow probe = snap;
        probe.advance_to(mid);
        const double dm = probe.det_jacobi();
        if ((d_prev > 0.0 && dm <= 0.0) || (d_prev < 0.0 && dm >= 0.0))
          hi = mid;
        else
          lo = mid;
      }
      return 0.5 * (lo + hi);
    }
    t_prev = t_next;
    d_prev = d_next;
    snap = flow;
  }
  flow.check_h1();
  return std::nullopt;
}

std::optional<double> conjugate_time(const ControlSystem& sys, const Covector& p0, double t_max,
                                     const IntegratorOptions& opts) {
  CovectorSlice slice(sys);
  return conjugate_time_chart(sys, slice, slice.chart_of(p0.p), t_max, opts);
}

}  // namespace qmt
