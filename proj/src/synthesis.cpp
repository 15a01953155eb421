#include "qmt/synthesis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <thread>

namespace qmt {

GridSpec GridSpec::make(const Vec& lo, const Vec& hi, double h) {
  if (h <= 0.0) fail(Errc::invalid_grid, "grid spacing must be positive");
  if (lo.size() != hi.size() || lo.empty()) fail(Errc::invalid_grid, "box extents mismatch");
  GridSpec g;
  g.n = static_cast<int>(lo.size());
  if (g.n > kMaxDim) fail(Errc::invalid_grid, "grids beyond dimension 4 are unsupported");
  g.min = lo;
  g.max = hi;
  g.h = h;
  for (int a = 0; a < g.n; ++a) {
    if (hi[a] <= lo[a]) fail(Errc::invalid_grid, "box extents inverted");
    const int c = static_cast<int>(std::round((hi[a] - lo[a]) / h)) + 1;
    if (c < 2) fail(Errc::invalid_grid, "box too small for the spacing");
    g.counts.push_back(c);
  }
  return g;
}

size_t GridSpec::cell_count() const {
  size_t c = 1;
  for (int a = 0; a < n; ++a) c *= static_cast<size_t>(counts[static_cast<size_t>(a)]);
  return c;
}

size_t GridSpec::flat(const std::vector<int>& ix) const {
  size_t idx = 0;
  for (int a = 0; a < n; ++a) idx = idx * static_cast<size_t>(counts[static_cast<size_t>(a)]) +
                                    static_cast<size_t>(ix[static_cast<size_t>(a)]);
  return idx;
}

std::vector<int> GridSpec::unflat(size_t idx) const {
  std::vector<int> ix(static_cast<size_t>(n), 0);
  for (int a = n - 1; a >= 0; --a) {
    const size_t c = static_cast<size_t>(counts[static_cast<size_t>(a)]);
    ix[static_cast<size_t>(a)] = static_cast<int>(idx % c);
    idx /= c;
  }
  return ix;
}

Vec GridSpec::center(const std::vector<int>& ix) const {
  Vec c(static_cast<size_t>(n), 0.0);
  for (int a = 0; a < n; ++a)
    c[static_cast<size_t>(a)] = min[static_cast<size_t>(a)] + h * ix[static_cast<size_t>(a)];
  return c;
}

std::optional<std::vector<int>> GridSpec::locate(const Vec& x) const {
  std::vector<int> ix(static_cast<size_t>(n), 0);
  for (int a = 0; a < n; ++a) {
    const double r = (x[static_cast<size_t>(a)] - min[static_cast<size_t>(a)]) / h;
    const int k = static_cast<int>(std::lround(r));
    if (k < 0 || k >= counts[static_cast<size_t>(a)]) return std::nullopt;
    if (std::fabs(r - k) > 0.5 + 1e-12) return std::nullopt;
    ix[static_cast<size_t>(a)] = k;
  }
  return ix;
}

namespace {

FrontSample make_sample(const ExtremalFlow& flow, const Vec& chart, int n) {
  FrontSample s;
  const Vec x = flow.x();
  const Vec p = flow.p();
  for (int a = 0; a < n; ++a) {
    s.endpoint[static_cast<size_t>(a)] = x[static_cast<size_t>(a)];
    s.adjoint[static_cast<size_t>(a)] = p[static_cast<size_t>(a)];
  }
  for (size_t k = 0; k < chart.size(); ++k) s.chart[k] = chart[k];
  s.time = flow.t();
  // Inverse sensitivity and wavefront Hessian H = P J^{-1}.  J^{-1} lets the
  // binning judge which (time, chart) displacement a correction implies; H
  // supplies the second-order term of the corrected arrival time.
  const Mat j = flow.jacobi();
  const Mat pj = flow.adjoint_jacobi();
  // Near a conjugate point J is ill-conditioned and inverse-based data would
  // be garbage, so the sample falls back to uncorrected binning.
  double jn = 0.0;
  for (double v : j.a) jn += v * v;
  jn = std::sqrt(jn / n);
  s.hessian_valid = std::fabs(det(j)) > 1e-9 * jn * jn * jn;
  Vec col(static_cast<size_t>(n));
  Mat jinv(n, n);
  for (int c = 0; c < n && s.hessian_valid; ++c) {
    Vec e(static_cast<size_t>(n), 0.0);
    e[static_cast<size_t>(c)] = 1.0;
    if (!solve_equilibrated(j, e, col)) {
      s.hessian_valid = false;
      break;
    }
    for (int r = 0; r < n; ++r) jinv(r, c) = col[static_cast<size_t>(r)];
  }
  if (s.hessian_valid) {
    double hn = 0.0;
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        s.jac_inv[static_cast<size_t>(r * kMaxDim + c)] = jinv(r, c);
        double hh = 0.0;
        for (int k = 0; k < n; ++k) hh += pj(r, k) * jinv(k, c);
        s.hessian[static_cast<size_t>(r * kMaxDim + c)] = hh;
        hn += hh * hh;
      }
    if (!(hn < 1e8)) s.hessian_valid = false;  // numerically meaningless this close to conjugacy
  }
  return s;
}

struct ArcResult {
  std::vector<FrontSample> samples;
  bool failed = false;
  double h1_drift = 0.0;
};

ArcResult shoot_arc(const ControlSystem& sys, const CovectorSlice& slice, const Vec& chart,
                    const FrontOptions& opt) {
  ArcResult out;
  try {
    ExtremalFlow flow(sys, slice, chart, opt.integ, true);
    const double stride = std::max(opt.integ.sample_stride, 1e-6);
    out.samples.push_back(make_sample(flow, chart, sys.n));
    double t = 0.0;
    double d_prev = 0.0;
    bool have_sign = false;
    ExtremalFlow snap = flow;
    while (t < opt.t_max) {
      const double t_next = std::min(t + stride, opt.t_max);
      flow.advance_to(t_next);
      const double d = flow.det_jacobi();
      if (!have_sign) {
        if (d != 0.0) {
          have_sign = true;
          d_prev = d;
        }
        out.samples.push_back(make_sample(flow, chart, sys.n));
      } else if ((d_prev > 0.0 && d <= 0.0) || (d_prev < 0.0 && d >= 0.0)) {
        // first conjugate point inside (t, t_next]: bisect, emit the exact
        // endpoint, flag the overshoot sample, stop the arc
        double lo = t, hi = t_next;
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
        const double t_conj = 0.5 * (lo + hi);
        ExtremalFlow probe = snap;
        probe.advance_to(t_conj);
        out.samples.push_back(make_sample(probe, chart, sys.n));
        FrontSample past = make_sample(flow, chart, sys.n);
        past.conjugate_passed = true;
        out.samples.push_back(past);
        out.h1_drift = std::max(flow.h1_drift(), probe.h1_drift());
        flow.check_h1();
        return out;
      } else {
        d_prev = d;
        out.samples.push_back(make_sample(flow, chart, sys.n));
      }
      snap = flow;
      t = t_next;
    }
    out.h1_drift = flow.h1_drift();
    flow.check_h1();
  } catch (const Error&) {
    out.failed = true;
    out.samples.clear();
  }
  return out;
}

}  // namespace

FrontStats synthesize_front_visit(
    const ControlSystem& sys, const CovectorSlice& slice, const std::vector<Vec>& slice_grid,
    const FrontOptions& opt,
    const std::function<void(size_t, const std::vector<FrontSample>&)>& sink) {
  if (opt.t_max <= 0.0) fail(Errc::invalid_argument, "t_max must be positive");
  FrontStats stats;
  stats.arc_count = slice_grid.size();
  const int threads = std::max(1, opt.threads);
  const size_t chunk = static_cast<size_t>(threads) * 4;
  std::vector<ArcResult> results(chunk);
  for (size_t base = 0; base < slice_grid.size(); base += chunk) {
    const size_t end = std::min(base + chunk, slice_grid.size());
    if (threads == 1) {
      for (size_t i = base; i < end; ++i) results[i - base] = shoot_arc(sys, slice, slice_grid[i], opt);
    } else {
      std::atomic<size_t> next(base);
      std::vector<std::thread> pool;
      for (int w = 0; w < threads; ++w)
        pool.emplace_back([&] {
          for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= end) return;
            results[i - base] = shoot_arc(sys, slice, slice_grid[i], opt);
          }
        });
      for (auto& th : pool) th.join();
    }
    for (size_t i = base; i < end; ++i) {
      ArcResult& r = results[i - base];
      if (r.failed) {
        ++stats.failures;
        continue;
      }
      stats.sample_count += r.samples.size();
      stats.max_h1_drift = std::max(stats.max_h1_drift, r.h1_drift);
      sink(i, r.samples);
      r.samples.clear();
    }
  }
  return stats;
}

std::vector<FrontSample> synthesize_front(const ControlSystem& sys, const CovectorSlice& slice,
                                          const std::vector<Vec>& slice_grid,
                                          const FrontOptions& opt, FrontStats* stats) {
  std::vector<FrontSample> all;
  FrontStats st = synthesize_front_visit(sys, slice, slice_grid, opt,
                                         [&all](size_t, const std::vector<FrontSample>& s) {
                                           all.insert(all.end(), s.begin(), s.end());
                                         });
  if (stats) *stats = st;
  return all;
}

MinimalTimeField::MinimalTimeField(GridSpec grid, const ControlSystem& sys, SynthesisKnobs knobs)
    : grid_(std::move(grid)), knobs_(knobs), target_(sys.target), sys_(&sys) {
  cells_.resize(grid_.cell_count());
  if (!grid_.locate(target_))
    fail(Errc::invalid_grid, "grid box does not contain the target point");
}

namespace {

bool chart_lex_less(const std::array<double, kMaxDim - 1>& a,
                    const std::array<double, kMaxDim - 1>& b) {
  for (size_t k = 0; k < a.size(); ++k) {
    if (a[k] < b[k]) return true;
    if (a[k] > b[k]) return false;
  }
  return false;
}

double family_distance(const CovectorSlice& slice, const std::array<double, kMaxDim - 1>& a,
                       const std::array<double, kMaxDim - 1>& b, int dim) {
  Vec va(a.begin(), a.begin() + dim), vb(b.begin(), b.begin() + dim);
  return slice.chart_distance(va, vb);
}

}  // namespace

void MinimalTimeField::bin(const FrontSample& s, const CovectorSlice& slice) {
  if (s.conjugate_passed) return;  // ceases to be minimizing beyond the first conjugate point
  Vec x(s.endpoint.begin(), s.endpoint.begin() + grid_.n);
  auto ix = grid_.locate(x);
  if (!ix) return;
  FieldCell& cell = cells_[grid_.flat(*ix)];
  ++cell.coverage;

  // Second-order correction of the arrival time to the cell center through
  // the arc's wavefront data: t + <p, dx> + dx^T H dx / 2.  Without it the
  // min-binned field carries noise at the transverse arc-spacing scale, which
  // breaks the gradient estimators.  The quadratic term doubles as a trust
  // test: where it is large the expansion (and near a conjugate point the
  // Hessian itself) is unreliable and the sample is not used for timing.
  const Vec center = grid_.center(*ix);
  double t = s.time;
  Vec dxv(static_cast<size_t>(grid_.n), 0.0);
  double dx2 = 0.0, p2 = 0.0;
  for (int a = 0; a < grid_.n; ++a) {
    const double d = center[static_cast<size_t>(a)] - s.endpoint[static_cast<size_t>(a)];
    dxv[static_cast<size_t>(a)] = d;
    const double pa = s.adjoint[static_cast<size_t>(a)];
    t += pa * d;
    dx2 += d * d;
    p2 += pa * pa;
  }
  if (dx2 > 0.0) {
    if (s.hessian_valid) {
      // The correction is only meaningful while the implied displacement in
      // (time, chart) stays within roughly one sample spacing; a fold in the
      // front otherwise produces phantom sheets with small quadratic terms.
      double dt_implied = 0.0, dchart2 = 0.0;
      for (int r = 0; r < grid_.n; ++r) {
        double dpar = 0.0;
        for (int c = 0; c < grid_.n; ++c)
          dpar += s.jac_inv[static_cast<size_t>(r * kMaxDim + c)] * dxv[static_cast<size_t>(c)];
        if (r == 0)
          dt_implied = dpar;
        else
          dchart2 += dpar * dpar;
      }
      if (std::fabs(dt_implied) > grid_.h || dchart2 > knobs_.chart_trust * knobs_.chart_trust)
        return;
      double q = 0.0;
      for (int r = 0; r < grid_.n; ++r)
        for (int c = 0; c < grid_.n; ++c)
          q += dxv[static_cast<size_t>(r)] * s.hessian[static_cast<size_t>(r * kMaxDim + c)] *
               dxv[static_cast<size_t>(c)];
      q *= 0.5;
      if (std::fabs(q) > grid_.h / 4.0) return;
      t += q;
    } else if (0.5 * (1.0 + p2) * dx2 > grid_.h / 50.0) {
      return;
    }
  }

  double hnorm = 0.0;
  if (s.hessian_valid) {
    for (int r = 0; r < grid_.n; ++r)
      for (int c = 0; c < grid_.n; ++c) {
        const double v = s.hessian[static_cast<size_t>(r * kMaxDim + c)];
        hnorm += v * v;
      }
    hnorm = std::sqrt(hnorm);
  }

  if (t < cell.T || (t == cell.T && chart_lex_less(s.chart, cell.winner))) {
    cell.T = t;
    cell.winner = s.chart;
    // adjoint transported to the cell center so that it matches grad T there
    cell.adjoint = s.adjoint;
    if (s.hessian_valid && hnorm * std::sqrt(dx2) <= 1.0) {
      for (int r = 0; r < grid_.n; ++r)
        for (int c = 0; c < grid_.n; ++c)
          cell.adjoint[static_cast<size_t>(r)] +=
              s.hessian[static_cast<size_t>(r * kMaxDim + c)] * dxv[static_cast<size_t>(c)];
    }
    cell.winner_hess_norm = hnorm;
    cell.winner_hess_valid = s.hessian_valid;
  }

  // arrival families for the two-arrival cut rule
  const int dim = slice.dim();
  auto unit_velocity = [&](const Vec& p, const Vec& at, std::array<double, kMaxDim>& out) {
    Vec v(static_cast<size_t>(grid_.n), 0.0);
    for (int i = 0; i < sys_->m; ++i) {
      const Vec fi = sys_->fields[static_cast<size_t>(i)](at);
      axpy(dot(p, fi), fi, v);
    }
    const double nv = norm(v);
    for (int a = 0; a < grid_.n; ++a)
      out[static_cast<size_t>(a)] = nv > 1e-12 ? v[static_cast<size_t>(a)] / nv : 0.0;
  };
  auto fill = [&](CellFamily& fam) {
    fam.t = t;
    fam.chart = s.chart;
    fam.adjoint = s.adjoint;
    Vec p(s.adjoint.begin(), s.adjoint.begin() + grid_.n);
    unit_velocity(p, x, fam.direction_raw);
    // Arrival direction at the cell center with the covector transported
    // there through the wavefront Hessian (when the transport is sane).
    // Samples of one smooth front sheet then agree on the direction
    // regardless of where in the cell they landed.
    if (s.hessian_valid && hnorm * std::sqrt(dx2) <= 1.0) {
      for (int r = 0; r < grid_.n; ++r)
        for (int c = 0; c < grid_.n; ++c)
          p[static_cast<size_t>(r)] +=
              s.hessian[static_cast<size_t>(r * kMaxDim + c)] * dxv[static_cast<size_t>(c)];
      unit_velocity(p, center, fam.direction);
    } else {
      fam.direction = fam.direction_raw;
    }
  };
  for (int f = 0; f < cell.family_count; ++f) {
    CellFamily& fam = cell.families[static_cast<size_t>(f)];
    if (family_distance(slice, fam.chart, s.chart, dim) <= knobs_.angle_tol) {
      if (t < fam.t || (t == fam.t && chart_lex_less(s.chart, fam.chart))) fill(fam);
      return;
    }
  }
  const int max_fam = static_cast<int>(cell.families.size());
  if (cell.family_count < max_fam) {
    fill(cell.families[cell.family_count++]);
    return;
  }
  if (t - cell.T > knobs_.time_tol) return;
  // Full slate: replace toward maximal chart spread, so that a cut cell
  // reached from a whole circle of covectors retains far-apart
  // representatives instead of four adjacent clusters.
  double closest = kInf;
  int ca = 0, cb = 1;
  for (int a = 0; a < max_fam; ++a)
    for (int b = a + 1; b < max_fam; ++b) {
      const double d = family_distance(slice, cell.families[static_cast<size_t>(a)].chart,
                                       cell.families[static_cast<size_t>(b)].chart, dim);
      if (d < closest) {
        closest = d;
        ca = a;
        cb = b;
      }
    }
  double new_min = kInf;
  for (int f = 0; f < max_fam; ++f)
    new_min = std::min(new_min, family_distance(slice, cell.families[static_cast<size_t>(f)].chart,
                                                s.chart, dim));
  if (new_min >= closest) {
    const int victim =
        cell.families[static_cast<size_t>(ca)].t >= cell.families[static_cast<size_t>(cb)].t ? ca
                                                                                              : cb;
    fill(cell.families[static_cast<size_t>(victim)]);
  }
}

void MinimalTimeField::finalize_coverage() {
  for (FieldCell& c : cells_) c.covered = c.T < kInf;
}

size_t MinimalTimeField::covered_count() const {
  size_t n = 0;
  for (const FieldCell& c : cells_)
    if (c.covered) ++n;
  return n;
}

namespace {

const FieldCell& located_cell(const MinimalTimeField& f, const Vec& x, size_t* flat_out = nullptr) {
  auto ix = f.grid().locate(x);
  if (!ix) fail(Errc::uncovered, "point outside the synthesized grid");
  const size_t idx = f.grid().flat(*ix);
  if (flat_out) *flat_out = idx;
  const FieldCell& c = f.cells()[idx];
  if (!c.covered) fail(Errc::uncovered, "cell holds no front sample");
  return c;
}

}  // namespace

bool MinimalTimeField::covered_at(const Vec& x) const {
  auto ix = grid_.locate(x);
  if (!ix) return false;
  return cells_[grid_.flat(*ix)].covered;
}

double MinimalTimeField::time_at(const Vec& x) const { return located_cell(*this, x).T; }

Vec MinimalTimeField::winner_chart_at(const Vec& x) const {
  const FieldCell& c = located_cell(*this, x);
  return Vec(c.winner.begin(), c.winner.begin() + (grid_.n - 1));
}

Vec MinimalTimeField::winner_adjoint_at(const Vec& x) const {
  const FieldCell& c = located_cell(*this, x);
  return Vec(c.adjoint.begin(), c.adjoint.begin() + grid_.n);
}

bool MinimalTimeField::masked_at(const Vec& x) const {
  auto ix = grid_.locate(x);
  if (!ix) return false;
  return cells_[grid_.flat(*ix)].singular_mask;
}

std::optional<Vec> MinimalTimeField::grad_time(const Vec& x) const {
  auto ixo = grid_.locate(x);
  if (!ixo) fail(Errc::uncovered, "point outside the synthesized grid");
  std::vector<int> ix = *ixo;
  const size_t idx = grid_.flat(ix);
  const FieldCell& cell = cells_[idx];
  if (!cell.covered) fail(Errc::uncovered, "cell holds no front sample");
  if (cell.singular_mask) return std::nullopt;

  auto cell_at = [&](std::vector<int> q) -> const FieldCell* {
    for (int a = 0; a < grid_.n; ++a)
      if (q[static_cast<size_t>(a)] < 0 || q[static_cast<size_t>(a)] >= grid_.counts[static_cast<size_t>(a)])
        return nullptr;
    return &cells_[grid_.flat(q)];
  };
  auto flagged_within = [&](int axis, int dir, int reach) {
    std::vector<int> q = ix;
    for (int k = 1; k <= reach; ++k) {
      q[static_cast<size_t>(axis)] = ix[static_cast<size_t>(axis)] + dir * k;
      const FieldCell* c = cell_at(q);
      if (c && (c->cut_two_arrival || c->cut_grad_jump)) return true;
    }
    return false;
  };

  Vec g(static_cast<size_t>(grid_.n), 0.0);
  for (int a = 0; a < grid_.n; ++a) {
    std::vector<int> qp = ix, qm = ix;
    qp[static_cast<size_t>(a)] += 1;
    qm[static_cast<size_t>(a)] -= 1;
    const FieldCell* cp = cell_at(qp);
    const FieldCell* cm = cell_at(qm);
    const bool plus_ok = cp && cp->covered && !flagged_within(a, +1, 2);
    const bool minus_ok = cm && cm->covered && !flagged_within(a, -1, 2);
    if (plus_ok && minus_ok) {
      g[static_cast<size_t>(a)] = (cp->T - cm->T) / (2.0 * grid_.h);
    } else if (plus_ok) {
      g[static_cast<size_t>(a)] = (cp->T - cell.T) / grid_.h;
    } else if (minus_ok) {
      g[static_cast<size_t>(a)] = (cell.T - cm->T) / grid_.h;
    } else if (cp && cp->covered) {
      g[static_cast<size_t>(a)] = (cp->T - cell.T) / grid_.h;
    } else if (cm && cm->covered) {
      g[static_cast<size_t>(a)] = (cell.T - cm->T) / grid_.h;
    } else {
      fail(Errc::uncovered, "no covered neighbor for the gradient stencil");
    }
  }
  return g;
}

std::optional<Vec> MinimalTimeField::adjoint_at(const Vec& x, const CovectorSlice& slice) const {
  auto ixo = grid_.locate(x);
  if (!ixo) fail(Errc::uncovered, "point outside the synthesized grid");
  const FieldCell& base = cells_[grid_.flat(*ixo)];
  if (!base.covered) fail(Errc::uncovered, "cell holds no front sample");
  if (base.singular_mask) return std::nullopt;

  // trilinear blend over the surrounding nodes when they carry one covector
  // family; otherwise fall back to the nearest winner
  std::vector<int> lo(static_cast<size_t>(grid_.n), 0);
  Vec frac(static_cast<size_t>(grid_.n), 0.0);
  bool in_range = true;
  for (int a = 0; a < grid_.n; ++a) {
    const double r = (x[static_cast<size_t>(a)] - grid_.min[static_cast<size_t>(a)]) / grid_.h;
    int k = static_cast<int>(std::floor(r));
    if (k < 0 || k + 1 >= grid_.counts[static_cast<size_t>(a)]) {
      in_range = false;
      break;
    }
    lo[static_cast<size_t>(a)] = k;
    frac[static_cast<size_t>(a)] = r - k;
  }
  if (in_range) {
    const int corners = 1 << grid_.n;
    Vec blended(static_cast<size_t>(grid_.n), 0.0);
    bool ok = true;
    for (int c = 0; c < corners && ok; ++c) {
      std::vector<int> q = lo;
      double w = 1.0;
      for (int a = 0; a < grid_.n; ++a) {
        const bool hi = (c >> a) & 1;
        if (hi) q[static_cast<size_t>(a)] += 1;
        w *= hi ? frac[static_cast<size_t>(a)] : 1.0 - frac[static_cast<size_t>(a)];
      }
      const FieldCell& cc = cells_[grid_.flat(q)];
      if (!cc.covered || cc.singular_mask ||
          family_distance(slice, cc.winner, base.winner, grid_.n - 1) > knobs_.angle_tol) {
        ok = false;
        break;
      }
      for (int a = 0; a < grid_.n; ++a)
        blended[static_cast<size_t>(a)] += w * cc.adjoint[static_cast<size_t>(a)];
    }
    if (ok) return blended;
  }
  return Vec(base.adjoint.begin(), base.adjoint.begin() + grid_.n);
}

MinimalTimeField build_time_field(const std::vector<FrontSample>& samples, const GridSpec& grid,
                                  const ControlSystem& sys, const CovectorSlice& slice,
                                  SynthesisKnobs knobs) {
  if (samples.empty()) fail(Errc::invalid_argument, "no front samples to bin");
  MinimalTimeField field(grid, sys, knobs);
  for (const FrontSample& s : samples) field.bin(s, slice);
  field.finalize_coverage();
  return field;
}

double SingularSetModel::distance(const Vec& x) const {
  if (flagged.empty()) return kInf;
  double best = kInf;
  const double half = grid.h / 2.0;
  for (const Vec& c : centers) {
    double s = 0.0;
    for (int a = 0; a < grid.n; ++a) {
      const double d = std::max(0.0, std::fabs(x[static_cast<size_t>(a)] - c[static_cast<size_t>(a)]) - half);
      s += d * d;
    }
    best = std::min(best, s);
  }
  return std::sqrt(best);
}

Vec SingularSetModel::nearest_center(const Vec& x) const {
  double best = kInf;
  Vec out;
  for (const Vec& c : centers) {
    double s = 0.0;
    for (int a = 0; a < grid.n; ++a) {
      const double d = x[static_cast<size_t>(a)] - c[static_cast<size_t>(a)];
      s += d * d;
    }
    if (s < best) {
      best = s;
      out = c;
    }
  }
  return out;
}

SingularSetModel estimate_cut_locus(MinimalTimeField& field, double angle_tol, double time_tol,
                                    const CovectorSlice& slice) {
  const GridSpec& grid = field.grid();
  auto& cells = field.cells();
  const int n = grid.n;

  // No flags inside a small ball around the target, and inside the cone
  // reach only within a cone around the directions transverse to
  // span{f_i(target)}: near the target the cut set lives in such a conic
  // neighborhood, while grid evidence just outside the ball is dominated by
  // curvature that the spacing cannot resolve.
  const double excl = field.knobs().target_exclusion * grid.h;
  const double cone_reach = field.knobs().cone_extent * grid.h;
  const double cone_gamma = field.knobs().cone_gamma;
  const Vec& target = field.target();
  const ControlSystem& sys = field.system();
  std::vector<Vec> horiz;  // orthonormal basis of span{f_i(target)}
  for (int i = 0; i < sys.m; ++i) {
    Vec v = sys.fields[static_cast<size_t>(i)](target);
    for (const Vec& b : horiz) axpy(-dot(v, b), b, v);
    const double nv = norm(v);
    if (nv > 1e-10) {
      for (double& e : v) e /= nv;
      horiz.push_back(v);
    }
  }
  auto flag_eligible = [&](const Vec& center) {
    const Vec d = center - target;
    const double r = norm(d);
    if (r < excl - 1e-9) return false;
    if (r < cone_reach) {
      double h2 = 0.0;
      for (const Vec& b : horiz) {
        const double c = dot(d, b);
        h2 += c * c;
      }
      if (std::sqrt(h2) > cone_gamma * r) return false;
    }
    return true;
  };

  // Two-arrival rule: a pair of near-minimal arrival families with separated
  // covectors AND separated arrival directions.  The direction requirement is
  // what certifies a non-smooth junction of two minimizers; covector
  // separation alone also fires on mirror pairs that land in one cell while
  // heading the same way.
  const double dir_tol = field.knobs().dir_tol;
  const double strong_dir = field.knobs().strong_dir;
  auto angle = [n](const std::array<double, kMaxDim>& u, const std::array<double, kMaxDim>& v) {
    double c = 0.0;
    for (int k = 0; k < n; ++k) c += u[static_cast<size_t>(k)] * v[static_cast<size_t>(k)];
    return std::acos(std::clamp(c, -1.0, 1.0));
  };
  for (size_t idx = 0; idx < cells.size(); ++idx) {
    FieldCell& c = cells[idx];
    if (!c.covered || c.coverage < 2) continue;
    if (!flag_eligible(grid.center(grid.unflat(idx)))) continue;
    // Grid-scale evidence only counts where the measured wavefront curvature
    // is resolvable; strongly opposed raw arrival directions count always.
    const bool resolvable =
        !(c.winner_hess_valid && c.winner_hess_norm * grid.h > field.knobs().curv_resolvable);
    for (int a = 0; a < c.family_count && !c.cut_two_arrival; ++a) {
      const CellFamily& fa = c.families[static_cast<size_t>(a)];
      if (fa.t - c.T > time_tol) continue;
      for (int b = a + 1; b < c.family_count && !c.cut_two_arrival; ++b) {
        const CellFamily& fb = c.families[static_cast<size_t>(b)];
        if (fb.t - c.T > time_tol) continue;
        if (family_distance(slice, fa.chart, fb.chart, n - 1) <= angle_tol) continue;
        const bool strong = angle(fa.direction_raw, fb.direction_raw) > strong_dir;
        const bool weak = resolvable && angle(fa.direction, fb.direction) > dir_tol;
        if (strong || weak) c.cut_two_arrival = true;
      }
    }
  }

  // Gradient-disagreement rule: the finite-difference gradient must match the
  // winner adjoint (p(T) = grad T away from the cut).  Where a stencil leg
  // crosses the cut the estimate breaks away from the adjoint by O(|grad T|).
  // Comparing fwd against bwd legs directly would also fire on the smooth but
  // strongly curved region near the equatorial plane of the small spheres,
  // where the second derivative genuinely reaches O(1/rho^3).
  auto cell_at = [&](std::vector<int> q) -> const FieldCell* {
    for (int a = 0; a < n; ++a)
      if (q[static_cast<size_t>(a)] < 0 || q[static_cast<size_t>(a)] >= grid.counts[static_cast<size_t>(a)])
        return nullptr;
    return &cells[grid.flat(q)];
  };
  std::vector<char> grad_flag(cells.size(), 0);
  for (size_t idx = 0; idx < cells.size(); ++idx) {
    const FieldCell& c = cells[idx];
    if (!c.covered) continue;
    const std::vector<int> ix = grid.unflat(idx);
    if (!flag_eligible(grid.center(ix))) continue;
    if (c.winner_hess_valid && c.winner_hess_norm * grid.h > field.knobs().curv_resolvable)
      continue;  // stencil cannot out-resolve the measured curvature
    double dev2 = 0.0;
    bool have = true;
    for (int a = 0; a < n; ++a) {
      std::vector<int> qp = ix, qm = ix;
      qp[static_cast<size_t>(a)] += 1;
      qm[static_cast<size_t>(a)] -= 1;
      const FieldCell* cp = cell_at(qp);
      const FieldCell* cm = cell_at(qm);
      double g;
      if (cp && cm && cp->covered && cm->covered)
        g = (cp->T - cm->T) / (2.0 * grid.h);
      else if (cp && cp->covered)
        g = (cp->T - c.T) / grid.h;
      else if (cm && cm->covered)
        g = (c.T - cm->T) / grid.h;
      else {
        have = false;
        break;
      }
      const double d = g - c.adjoint[static_cast<size_t>(a)];
      dev2 += d * d;
    }
    if (have && std::sqrt(dev2) > field.knobs().grad_jump_tol) grad_flag[idx] = 1;
  }
  for (size_t idx = 0; idx < cells.size(); ++idx) cells[idx].cut_grad_jump = grad_flag[idx] != 0;

  // dilated mask
  const int dil = field.knobs().mask_dilation;
  for (size_t idx = 0; idx < cells.size(); ++idx) {
    if (!(cells[idx].cut_two_arrival || cells[idx].cut_grad_jump)) continue;
    const std::vector<int> ix = grid.unflat(idx);
    std::vector<int> q = ix;
    std::function<void(int)> spread = [&](int axis) {
      if (axis == n) {
        cells[grid.flat(q)].singular_mask = true;
        return;
      }
      for (int d = -dil; d <= dil; ++d) {
        const int v = ix[static_cast<size_t>(axis)] + d;
        if (v < 0 || v >= grid.counts[static_cast<size_t>(axis)]) continue;
        q[static_cast<size_t>(axis)] = v;
        spread(axis + 1);
      }
      q[static_cast<size_t>(axis)] = ix[static_cast<size_t>(axis)];
    };
    spread(0);
  }

  // component labels over flagged cells (26-connectivity)
  SingularSetModel model;
  model.grid = grid;
  std::vector<int> label_of(cells.size(), -1);
  int next_label = 0;
  for (size_t idx = 0; idx < cells.size(); ++idx) {
    if (!(cells[idx].cut_two_arrival || cells[idx].cut_grad_jump) || label_of[idx] >= 0) continue;
    std::deque<size_t> queue{idx};
    label_of[idx] = next_label;
    while (!queue.empty()) {
      const size_t cur = queue.front();
      queue.pop_front();
      const std::vector<int> ix = grid.unflat(cur);
      std::vector<int> q = ix;
      std::function<void(int)> visit = [&](int axis) {
        if (axis == n) {
          const size_t j = grid.flat(q);
          if (j != cur && (cells[j].cut_two_arrival || cells[j].cut_grad_jump) && label_of[j] < 0) {
            label_of[j] = next_label;
            queue.push_back(j);
          }
          return;
        }
        for (int d = -1; d <= 1; ++d) {
          const int v = ix[static_cast<size_t>(axis)] + d;
          if (v < 0 || v >= grid.counts[static_cast<size_t>(axis)]) continue;
          q[static_cast<size_t>(axis)] = v;
          visit(axis + 1);
        }
        q[static_cast<size_t>(axis)] = ix[static_cast<size_t>(axis)];
      };
      visit(0);
    }
    ++next_label;
  }
  for (size_t idx = 0; idx < cells.size(); ++idx) {
    if (label_of[idx] < 0) continue;
    model.flagged.push_back(idx);
    model.labels.push_back(label_of[idx]);
    model.centers.push_back(grid.center(grid.unflat(idx)));
  }
  model.component_count = next_label;
  return model;
}

ControlVector optimal_feedback(const ControlSystem& sys, const MinimalTimeField& field,
                               const Vec& x, double grad_floor) {
  auto g = field.grad_time(x);
  if (!g) fail(Errc::no_optimal_control, "point lies in the singular region");
  Vec u(static_cast<size_t>(sys.m), 0.0);
  double s = 0.0;
  for (int i = 0; i < sys.m; ++i) {
    u[static_cast<size_t>(i)] = dot(*g, sys.fields[static_cast<size_t>(i)](x));
    s += u[static_cast<size_t>(i)] * u[static_cast<size_t>(i)];
  }
  const double den = std::sqrt(s);
  if (den < grad_floor)
    fail(Errc::degenerate_gradient, "gradient pairs with the fields below the floor");
  for (double& v : u) v /= -den;
  return ControlVector{u};
}

std::vector<Vec> make_slice_grid(const CovectorSlice& slice, int theta_count,
                                 const std::vector<double>& transverse) {
  if (slice.angle_count() != 1 || slice.dim() - slice.angle_count() > 1)
    fail(Errc::invalid_argument, "slice grids are built for one angle and at most one transverse axis");
  std::vector<Vec> grid;
  const double two_pi = 2.0 * std::acos(-1.0);
  for (int k = 0; k < theta_count; ++k) {
    const double th = two_pi * k / theta_count;
    if (slice.dim() == 1) {
      grid.push_back(Vec{th});
    } else {
      for (double lam : transverse) grid.push_back(Vec{th, lam});
    }
  }
  return grid;
}

}  // namespace qmt
