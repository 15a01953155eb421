#include "qmt/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace qmt {

namespace {

// Returns the permutation sign, or 0 if the matrix is numerically singular.
int lu_factor(Mat& m, std::vector<int>& piv) {
  const int n = m.rows;
  piv.resize(static_cast<size_t>(n));
  int sign = 1;
  for (int k = 0; k < n; ++k) {
    int p = k;
    double best = std::fabs(m(k, k));
    for (int i = k + 1; i < n; ++i) {
      const double v = std::fabs(m(i, k));
      if (v > best) {
        best = v;
        p = i;
      }
    }
    piv[static_cast<size_t>(k)] = p;
    if (best == 0.0) return 0;
    if (p != k) {
      for (int j = 0; j < n; ++j) std::swap(m(k, j), m(p, j));
      sign = -sign;
    }
    for (int i = k + 1; i < n; ++i) {
      m(i, k) /= m(k, k);
      const double f = m(i, k);
      for (int j = k + 1; j < n; ++j) m(i, j) -= f * m(k, j);
    }
  }
  return sign;
}

void lu_solve(const Mat& lu, const std::vector<int>& piv, Vec& b) {
  const int n = lu.rows;
  for (int k = 0; k < n; ++k) {
    const int p = piv[static_cast<size_t>(k)];
    if (p != k) std::swap(b[static_cast<size_t>(k)], b[static_cast<size_t>(p)]);
    for (int i = k + 1; i < n; ++i) b[static_cast<size_t>(i)] -= lu(i, k) * b[static_cast<size_t>(k)];
  }
  for (int i = n - 1; i >= 0; --i) {
    for (int j = i + 1; j < n; ++j) b[static_cast<size_t>(i)] -= lu(i, j) * b[static_cast<size_t>(j)];
    b[static_cast<size_t>(i)] /= lu(i, i);
  }
}

}  // namespace

double det(const Mat& m) {
  Mat lu = m;
  std::vector<int> piv;
  const int sign = lu_factor(lu, piv);
  if (sign == 0) return 0.0;
  double d = sign;
  for (int i = 0; i < m.rows; ++i) d *= lu(i, i);
  return d;
}

Vec solve(const Mat& m, const Vec& b) {
  Mat lu = m;
  std::vector<int> piv;
  if (lu_factor(lu, piv) == 0) fail(Errc::invalid_argument, "singular linear system");
  Vec x = b;
  lu_solve(lu, piv, x);
  return x;
}

bool solve_equilibrated(const Mat& m, const Vec& b, Vec& x) {
  const int n = m.rows;
  Mat s = m;
  Vec scale(static_cast<size_t>(n), 1.0);
  for (int j = 0; j < n; ++j) {
    double c = 0.0;
    for (int i = 0; i < n; ++i) c += s(i, j) * s(i, j);
    c = std::sqrt(c);
    if (c <= 0.0 || !std::isfinite(c)) return false;
    scale[static_cast<size_t>(j)] = c;
    for (int i = 0; i < n; ++i) s(i, j) /= c;
  }
  std::vector<int> piv;
  if (lu_factor(s, piv) == 0) return false;
  x = b;
  lu_solve(s, piv, x);
  for (int j = 0; j < n; ++j) x[static_cast<size_t>(j)] /= scale[static_cast<size_t>(j)];
  for (double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace qmt
