#ifndef QMT_EXTREMAL_HPP
#define QMT_EXTREMAL_HPP

#include <limits>
#include <optional>
#include <vector>

#include "qmt/integrate.hpp"
#include "qmt/system.hpp"

namespace qmt {

struct Covector {
  Vec p;
};

constexpr double kH1Floor = 1e-8;  // below this the covector counts as degenerate

/// H1(x,p) = sqrt(sum_i <p, f_i(x)>^2), the reduced Hamiltonian whose level-1
/// flow carries the time-parameterized extremals.
double hamiltonian_h1(const ControlSystem& sys, const Vec& x, const Vec& p);

/// u_i = <p, f_i(x)> / H1(x, p).  Unit norm by construction.  Throws
/// Errc::degenerate_covector when H1 <= h1_floor.
Vec extremal_control(const ControlSystem& sys, const Vec& x, const Vec& p,
                     double h1_floor = kH1Floor);

/// xdot = dH1/dp, pdot = -dH1/dx, assembled from the fields and Jacobians.
void extremal_rhs(const ControlSystem& sys, const Vec& x, const Vec& p, Vec& dx, Vec& dp,
                  double h1_floor = kH1Floor);

/// Chart on the normalization slice X = {p0 : H1(target, p0) = 1}.
/// Coordinates are (m-1) angles for the unit direction seen by the fields at
/// the target, followed by (n-m) free transverse components:
///   p0 = pinv(A) xi(angles) + N lambda,   A = rows f_i(target)^T.
/// For the Brockett instance this reduces to (theta, lambda) -> (cos theta,
/// sin theta, lambda).
class CovectorSlice {
 public:
  explicit CovectorSlice(const ControlSystem& sys);

  int dim() const { return n_ - 1; }
  int angle_count() const { return m_ - 1; }

  Vec covector(const Vec& coords) const;
  Vec d_covector(const Vec& coords, int k) const;
  Vec chart_of(const Vec& p0) const;

  /// Distance in chart space; angle coordinates wrap at 2*pi.
  double chart_distance(const Vec& a, const Vec& b) const;

 private:
  int n_ = 0;
  int m_ = 0;
  Mat pinv_;   // n x m, right inverse of A
  Mat nullb_;  // n x (n-m), orthonormal basis of ker A
  Mat rows_;   // m x n, the field values at the target
};

struct ExtremalArc {
  std::vector<double> t;
  std::vector<Vec> x;
  std::vector<Vec> p;
  std::vector<Mat> jacobi;  // per sample: n x n, columns [xdot | dx/dchart_k]
  std::vector<double> h1;
  Vec p0;
  Vec p0_chart;
};

/// Integrates the extremal system together with the variational equations for
/// the chart directions.  Copying the object snapshots the full state.
class ExtremalFlow {
 public:
  ExtremalFlow(const ControlSystem& sys, const CovectorSlice& slice, const Vec& chart,
               IntegratorOptions opt, bool with_variational = true);

  void advance_to(double t);

  double t() const;
  Vec x() const;
  Vec p() const;
  double h1() const;
  Vec xdot() const;
  /// Endpoint sensitivity [xdot | dx/dchart_k]; requires with_variational.
  Mat jacobi() const;
  /// Covector sensitivity [pdot | dp/dchart_k]; together with jacobi() this
  /// yields the wavefront Hessian grad^2 T = P J^{-1} along the arc.
  Mat adjoint_jacobi() const;
  double det_jacobi() const;
  /// Largest |H1 - 1| seen at accepted sample points so far.
  double h1_drift() const { return h1_drift_; }
  void check_h1() const;

 private:
  const ControlSystem* sys_;
  int n_;
  int ndir_;
  IntegratorOptions opt_;
  Dopri5 stepper_;
  double h1_drift_ = 0.0;
};

/// exp map at the system target: integrate from (target, p0) over [0, t].
/// The returned arc carries samples at opts.sample_stride plus the endpoint.
/// p0 must sit on the normalization slice.
struct ExpResult {
  Vec x;
  Vec p;
  ExtremalArc arc;
};
ExpResult exponential_map(const ControlSystem& sys, const Covector& p0, double t,
                          const IntegratorOptions& opts);

/// First t in (0, t_max] where det of the endpoint sensitivity crosses zero,
/// bracketed on opts.sample_stride and bisected to 1e-8, or nullopt.
std::optional<double> conjugate_time(const ControlSystem& sys, const Covector& p0, double t_max,
                                     const IntegratorOptions& opts);
std::optional<double> conjugate_time_chart(const ControlSystem& sys, const CovectorSlice& slice,
                                           const Vec& chart, double t_max,
                                           const IntegratorOptions& opts);

constexpr double kConjugateTimeTol = 1e-8;

}  // namespace qmt

#endif
