#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "oracles.hpp"
#include "qmt/synthesis.hpp"

using namespace qmt;

namespace {

const double kPi = std::acos(-1.0);

// Shared coarse pipeline fixture: box [-1,1]^3 at h = 0.1.
struct Fixture {
  ControlSystem sys = brockett_system();
  CovectorSlice slice{sys};
  GridSpec grid = GridSpec::make({-1, -1, -1}, {1, 1, 1}, 0.1);
  SynthesisKnobs knobs;
  MinimalTimeField field{grid, sys, knobs};
  SingularSetModel model;
  FrontStats stats;

  Fixture() {
    knobs.time_tol = 0.2;  // 2h
    field = MinimalTimeField(grid, sys, knobs);
    std::vector<double> lambdas;
    for (double la = -7.0; la <= 7.0 + 1e-9; la += 0.1) lambdas.push_back(la);
    // aim extra covectors at the axis cells so each one receives its cut point
    for (double z = 0.15; z <= 1.0 + 1e-9; z += 0.05) {
      const double la = std::sqrt(kPi / (2.0 * z));
      lambdas.push_back(la);
      lambdas.push_back(-la);
    }
    FrontOptions fopt;
    fopt.t_max = 3.0;
    fopt.integ.sample_stride = 0.02;
    fopt.threads = 4;
    auto grid_pts = make_slice_grid(slice, 48, lambdas);
    stats = synthesize_front_visit(sys, slice, grid_pts, fopt,
                                   [this](size_t, const std::vector<FrontSample>& s) {
                                     for (const auto& smp : s) field.bin(smp, slice);
                                   });
    field.finalize_coverage();
    model = estimate_cut_locus(field, knobs.angle_tol, knobs.time_tol, slice);
  }
};

Fixture& fx() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("front synthesis basics") {
  auto& f = fx();
  CHECK(f.stats.failures == 0);
  CHECK(f.stats.max_h1_drift <= 1e-6);
  CHECK(f.stats.sample_count > 0);

  // single straight arc produces samples on a segment
  FrontOptions fopt;
  fopt.t_max = 1.0;
  auto samples = synthesize_front(f.sys, f.slice, {Vec{0.0, 0.0}}, fopt);
  REQUIRE(!samples.empty());
  for (const auto& s : samples) {
    CHECK(s.endpoint[0] == doctest::Approx(s.time).epsilon(1e-9));
    CHECK(std::fabs(s.endpoint[1]) <= 1e-9);
    CHECK(std::fabs(s.endpoint[2]) <= 1e-9);
    CHECK(!s.conjugate_passed);
  }

  // empty slice grid -> empty list
  CHECK(synthesize_front(f.sys, f.slice, {}, fopt).empty());
}

TEST_CASE("invalid grids are rejected") {
  CHECK_THROWS_AS(GridSpec::make({-1, -1, -1}, {1, 1, 1}, 0.0), Error);
  CHECK_THROWS_AS(GridSpec::make({-1, -1, -1}, {1, 1, 1}, -0.1), Error);
  CHECK_THROWS_AS(GridSpec::make({1, 1, 1}, {-1, -1, -1}, 0.1), Error);
}

TEST_CASE("time field values") {
  auto& f = fx();
  const double h = f.grid.h;
  const double slack = h * std::sqrt(3.0);

  // near-zero at the target
  CHECK(f.field.time_at({0, 0, 0}) <= slack);

  // T((a,0,0)) = a on the horizontal axis
  for (double a : {0.3, 0.5, 0.8}) {
    const double t = f.field.time_at({a, 0, 0});
    CHECK(std::fabs(t - a) <= 0.1);
  }

  // horizontal-speed lower bound on every covered cell
  size_t checked = 0;
  for (size_t idx = 0; idx < f.field.cells().size(); ++idx) {
    const FieldCell& c = f.field.cells()[idx];
    if (!c.covered) continue;
    Vec ctr = f.grid.center(f.grid.unflat(idx));
    CHECK(c.T >= std::hypot(ctr[0], ctr[1]) - slack);
    ++checked;
  }
  CHECK(checked > 1000);

  // axis point time matches sqrt(2 pi z)
  CHECK(std::fabs(f.field.time_at({0, 0, 0.5}) - oracle::brockett_axis_time(0.5)) <= 0.1);
}

TEST_CASE("conjugate-passed samples never enter the field") {
  auto& f = fx();
  FrontOptions fopt;
  fopt.t_max = 3.0;
  auto samples = synthesize_front(f.sys, f.slice, {Vec{0.0, 2.0}}, fopt);
  bool saw_flagged = false;
  for (const auto& s : samples) saw_flagged |= s.conjugate_passed;
  CHECK(saw_flagged);

  // binning all samples and binning only the unflagged ones must agree
  MinimalTimeField all(f.grid, f.sys, f.knobs);
  MinimalTimeField clean(f.grid, f.sys, f.knobs);
  for (const auto& s : samples) {
    all.bin(s, f.slice);
    if (!s.conjugate_passed) clean.bin(s, f.slice);
  }
  all.finalize_coverage();
  clean.finalize_coverage();
  for (size_t i = 0; i < all.cells().size(); ++i) {
    CHECK(all.cells()[i].T == clean.cells()[i].T);
    CHECK(all.cells()[i].coverage == clean.cells()[i].coverage);
  }
  // and the raw time of every unflagged sample stays short of the conjugate time
  for (const auto& s : samples)
    if (!s.conjugate_passed) CHECK(s.time <= oracle::brockett_conjugate_time(2.0) + 1e-6);
}

TEST_CASE("cut locus flags concentrate on the vertical axis") {
  auto& f = fx();
  REQUIRE(!f.model.empty());
  size_t near_axis = 0;
  for (const Vec& c : f.model.centers) {
    if (std::hypot(c[0], c[1]) <= 2 * f.grid.h + 1e-9) ++near_axis;
  }
  CHECK(static_cast<double>(near_axis) / f.model.centers.size() >= 0.95);

  // every axis cell beyond the exclusion ball is flagged
  for (double z = 0.3; z <= 0.9 + 1e-9; z += 0.1) {
    for (double sign : {1.0, -1.0}) {
      auto ix = f.grid.locate({0, 0, sign * z});
      REQUIRE(ix);
      const FieldCell& c = f.field.cells()[f.grid.flat(*ix)];
      CHECK((c.cut_two_arrival || c.cut_grad_jump));
    }
  }

  // a generic smooth point is not flagged
  auto ix = f.grid.locate({0.5, 0, 0});
  const FieldCell& c = f.field.cells()[f.grid.flat(*ix)];
  CHECK(!c.cut_two_arrival);
  CHECK(!c.cut_grad_jump);

  // two connected components (upper and lower axis)
  CHECK(f.model.component_count == 2);

  // distance evaluator vanishes exactly on flagged closures
  CHECK(f.model.distance(f.model.centers.front()) == 0.0);
  CHECK(f.model.distance({1.0, 1.0, 0.0}) > 0.5);
}

TEST_CASE("two estimators agree up to one cell of dilation") {
  auto& f = fx();
  const auto& cells = f.field.cells();
  auto near_flag = [&](size_t idx, bool want_two_arrival) {
    const auto ix = f.grid.unflat(idx);
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          std::vector<int> q = {ix[0] + dx, ix[1] + dy, ix[2] + dz};
          bool in = true;
          for (int a = 0; a < 3; ++a)
            if (q[a] < 0 || q[a] >= f.grid.counts[a]) in = false;
          if (!in) continue;
          const FieldCell& c = cells[f.grid.flat(q)];
          if (want_two_arrival ? c.cut_two_arrival : c.cut_grad_jump) return true;
        }
    return false;
  };
  size_t mismatches = 0, flagged = 0;
  for (size_t idx = 0; idx < cells.size(); ++idx) {
    if (cells[idx].cut_two_arrival) {
      ++flagged;
      if (!near_flag(idx, false)) ++mismatches;
    }
    if (cells[idx].cut_grad_jump) {
      ++flagged;
      if (!near_flag(idx, true)) ++mismatches;
    }
  }
  CHECK(flagged > 0);
  // The strict one-cell version of this property is asserted at production
  // resolution by the acceptance suite; this coarse grid doubles every
  // curvature artifact, so a small disagreement budget is allowed here.
  CHECK(static_cast<double>(mismatches) / flagged <= 0.2);
}

TEST_CASE("field symmetries") {
  auto& f = fx();
  // rotation by 90 degrees about x3 and the swap (x1,x2,x3)->(x2,x1,-x3) map
  // grid nodes to grid nodes exactly
  oracle::Rand rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    Vec x{rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)};
    auto ix = f.grid.locate(x);
    if (!ix) continue;
    Vec c = f.grid.center(*ix);
    Vec rot{-c[1], c[0], c[2]};
    Vec swp{c[1], c[0], -c[2]};
    if (!f.field.covered_at(c) || !f.field.covered_at(rot) || !f.field.covered_at(swp)) continue;
    const double t0 = f.field.time_at(c);
    const double lip = std::max(1.0, norm(f.field.winner_adjoint_at(c)));
    CHECK(std::fabs(f.field.time_at(rot) - t0) <= 2 * f.grid.h * lip);
    CHECK(std::fabs(f.field.time_at(swp) - t0) <= 2 * f.grid.h * lip);
  }
}

TEST_CASE("gradients and the closed-loop formula") {
  auto& f = fx();
  // smooth probe: grad T at (0.5,0,0) is close to (1,0,0)
  auto g = f.field.grad_time({0.5, 0, 0});
  REQUIRE(g.has_value());
  CHECK(std::fabs((*g)[0] - 1.0) <= 0.05);
  CHECK(std::fabs((*g)[1]) <= 0.05);
  CHECK(std::fabs((*g)[2]) <= 0.25);  // x3 stencil straddles the parity-even direction

  // on the axis the field reports the singular region
  CHECK(!f.field.grad_time({0, 0, 0.5}).has_value());

  // uncovered cells raise
  CHECK_THROWS_AS(f.field.grad_time({5, 5, 5}), Error);

  // optimal feedback drives toward the target
  auto u = optimal_feedback(f.sys, f.field, {0.5, 0, 0});
  CHECK(u.u[0] == doctest::Approx(-1.0).epsilon(0.05));
  CHECK(std::fabs(norm(u.u) - 1.0) <= 1e-10);
  CHECK_THROWS_AS(optimal_feedback(f.sys, f.field, {0, 0, 0.5}), Error);

  // adjoint identity: grad T vs the winning arc covector at arrival.  The
  // production tolerance is checked at fine resolution in the acceptance
  // suite; here the coarse fixture only has to put the bulk of the probes in
  // the right ballpark.
  oracle::Rand rng(43);
  size_t tested = 0, good = 0;
  for (int trial = 0; trial < 600 && tested < 50; ++trial) {
    Vec x{rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)};
    if (std::hypot(x[0], x[1]) < 0.35 || norm(x) < 0.4) continue;
    auto ixo = f.grid.locate(x);
    if (!ixo) continue;
    Vec c = f.grid.center(*ixo);
    if (!f.field.covered_at(c) || f.field.masked_at(c)) continue;
    auto gc = f.field.grad_time(c);
    if (!gc) continue;
    Vec adj = f.field.winner_adjoint_at(c);
    const double rel = norm(*gc - adj) / std::max(1e-9, norm(adj));
    ++tested;
    if (rel <= 0.25) ++good;
  }
  CHECK(tested >= 50);
  CHECK(static_cast<double>(good) / tested >= 0.9);
}
