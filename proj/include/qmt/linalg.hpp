#ifndef QMT_LINALG_HPP
#define QMT_LINALG_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "qmt/error.hpp"

namespace qmt {

using Vec = std::vector<double>;

// Dense row-major matrix, sized for the small systems handled here (n <= 4).
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

  double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }
};

inline double dot(const Vec& x, const Vec& y) {
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

inline double norm(const Vec& x) { return std::sqrt(dot(x, x)); }

inline Vec operator+(const Vec& x, const Vec& y) {
  Vec z(x);
  for (size_t i = 0; i < z.size(); ++i) z[i] += y[i];
  return z;
}

inline Vec operator-(const Vec& x, const Vec& y) {
  Vec z(x);
  for (size_t i = 0; i < z.size(); ++i) z[i] -= y[i];
  return z;
}

inline Vec operator*(double a, const Vec& x) {
  Vec z(x);
  for (double& v : z) v *= a;
  return z;
}

inline void axpy(double a, const Vec& x, Vec& y) {
  for (size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

inline Vec matvec(const Mat& m, const Vec& x) {
  Vec y(static_cast<size_t>(m.rows), 0.0);
  for (int i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < m.cols; ++j) s += m(i, j) * x[j];
    y[static_cast<size_t>(i)] = s;
  }
  return y;
}

// p^T * M for the adjoint equation.
inline Vec mat_tvec(const Mat& m, const Vec& p) {
  Vec y(static_cast<size_t>(m.cols), 0.0);
  for (int j = 0; j < m.cols; ++j) {
    double s = 0.0;
    for (int i = 0; i < m.rows; ++i) s += m(i, j) * p[static_cast<size_t>(i)];
    y[static_cast<size_t>(j)] = s;
  }
  return y;
}

// Determinant by LU with partial pivoting. Destroys a local copy.
double det(const Mat& m);

// Solve m * x = b in place via LU with partial pivoting; throws on singular m.
Vec solve(const Mat& m, const Vec& b);

// Least-destructive solve used by the shooting refinement: columns are
// rescaled to unit norm before factoring so badly scaled Jacobians stay
// solvable near t -> 0. Returns false instead of throwing when singular.
bool solve_equilibrated(const Mat& m, const Vec& b, Vec& x);

}  // namespace qmt

#endif
