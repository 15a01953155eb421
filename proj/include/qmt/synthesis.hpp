#ifndef QMT_SYNTHESIS_HPP
#define QMT_SYNTHESIS_HPP

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "qmt/extremal.hpp"
#include "qmt/system.hpp"

namespace qmt {

constexpr int kMaxDim = 4;  // fields for larger n are out of budget
constexpr double kInf = std::numeric_limits<double>::infinity();

/// Node-centered axis-aligned grid: node k on axis a sits at min[a] + k*h and
/// owns the cube of side h around it.
struct GridSpec {
  int n = 0;
  Vec min;
  Vec max;
  double h = 0.0;
  std::vector<int> counts;

  static GridSpec make(const Vec& lo, const Vec& hi, double h);
  size_t cell_count() const;
  size_t flat(const std::vector<int>& ix) const;
  std::vector<int> unflat(size_t idx) const;
  Vec center(const std::vector<int>& ix) const;
  /// Nearest node index, or nullopt outside the box (beyond half a cell).
  std::optional<std::vector<int>> locate(const Vec& x) const;
};

struct FrontSample {
  std::array<double, kMaxDim> endpoint{};
  std::array<double, kMaxDim - 1> chart{};
  std::array<double, kMaxDim> adjoint{};            // p at the sample time
  std::array<double, kMaxDim * kMaxDim> hessian{};  // wavefront grad^2 T estimate
  std::array<double, kMaxDim * kMaxDim> jac_inv{};  // inverse endpoint sensitivity
  double time = 0.0;
  bool hessian_valid = false;
  bool conjugate_passed = false;
};

struct FrontOptions {
  double t_max = 4.0;
  IntegratorOptions integ;
  int threads = 1;
};

struct FrontStats {
  size_t arc_count = 0;
  size_t sample_count = 0;
  size_t failures = 0;
  double max_h1_drift = 0.0;
};

/// Shoots one extremal per slice-grid point up to min(t_max, first conjugate
/// time), emitting endpoint samples at the integrator sample stride plus the
/// exact conjugate endpoint.  Samples recorded past the conjugate time carry
/// conjugate_passed = true.  Per-arc integration failures are counted, not
/// fatal.  The sink is invoked in slice-grid order regardless of threading.
FrontStats synthesize_front_visit(
    const ControlSystem& sys, const CovectorSlice& slice, const std::vector<Vec>& slice_grid,
    const FrontOptions& opt,
    const std::function<void(size_t arc_index, const std::vector<FrontSample>&)>& sink);

/// Convenience form returning the full sample list.
std::vector<FrontSample> synthesize_front(const ControlSystem& sys, const CovectorSlice& slice,
                                          const std::vector<Vec>& slice_grid,
                                          const FrontOptions& opt, FrontStats* stats = nullptr);

struct CellFamily {
  double t = kInf;                           // arrival time corrected to the cell center
  std::array<double, kMaxDim - 1> chart{};
  std::array<double, kMaxDim> adjoint{};
  std::array<double, kMaxDim> direction{};     // arrival velocity transported to the center
  std::array<double, kMaxDim> direction_raw{}; // arrival velocity at the sample point
};

struct FieldCell {
  double T = kInf;  // min center-corrected arrival time
  std::array<double, kMaxDim - 1> winner{};
  std::array<double, kMaxDim> adjoint{};
  double winner_hess_norm = 0.0;
  bool winner_hess_valid = false;
  uint32_t coverage = 0;
  uint8_t family_count = 0;
  std::array<CellFamily, 4> families{};
  bool covered = false;
  bool cut_two_arrival = false;
  bool cut_grad_jump = false;
  bool singular_mask = false;
};

struct SynthesisKnobs {
  double time_tol = 0.1;         // 2h at the default grid
  double angle_tol = 0.3;        // chart-space separation for distinct families
  double dir_tol = 0.6;          // arrival-direction angle certifying a non-smooth junction
  double strong_dir = 1.2;       // raw-direction angle accepted without resolvability
  double chart_trust = 0.3;      // implied chart displacement accepted for corrections
  double grad_jump_tol = 0.5;    // gradient-vs-adjoint disagreement threshold
  double curv_resolvable = 1.0;  // max |grad^2 T| * h at which grid evidence counts
  int mask_dilation = 2;         // cells added around cut flags
  double target_exclusion = 3;   // in units of h: no cut flags inside this ball
  double cone_extent = 9;        // in units of h: conic exclusion reach around the target
  double cone_gamma = 0.5;       // horizontal/total ratio admitted inside the cone reach
};

/// Gridded estimate of the minimal time to the target, with per-cell winning
/// covector data and cut-locus bookkeeping.
class MinimalTimeField {
 public:
  MinimalTimeField() = default;
  MinimalTimeField(GridSpec grid, const ControlSystem& sys, SynthesisKnobs knobs);

  void bin(const FrontSample& s, const CovectorSlice& slice);
  void finalize_coverage();

  const GridSpec& grid() const { return grid_; }
  const ControlSystem& system() const { return *sys_; }
  const SynthesisKnobs& knobs() const { return knobs_; }
  const Vec& target() const { return target_; }
  const std::vector<FieldCell>& cells() const { return cells_; }
  std::vector<FieldCell>& cells() { return cells_; }
  size_t covered_count() const;

  bool covered_at(const Vec& x) const;
  /// Minimal-time estimate at the cell containing x; Errc::uncovered if the
  /// cell holds no sample.
  double time_at(const Vec& x) const;
  Vec winner_chart_at(const Vec& x) const;
  Vec winner_adjoint_at(const Vec& x) const;
  bool masked_at(const Vec& x) const;

  /// Finite-difference gradient of T.  nullopt marks the singular region;
  /// Errc::uncovered outside the covered grid.
  std::optional<Vec> grad_time(const Vec& x) const;

  /// Winner adjoint blended over neighbor cells when they belong to one
  /// covector family; the executor's smooth evaluation of grad T.
  std::optional<Vec> adjoint_at(const Vec& x, const CovectorSlice& slice) const;

 private:
  friend class FieldCache;
  GridSpec grid_;
  SynthesisKnobs knobs_;
  std::vector<FieldCell> cells_;
  Vec target_;
  const ControlSystem* sys_ = nullptr;
};

/// Bins non-conjugate samples.  Each arrival time is corrected to the cell
/// center to first order through the adjoint (p = grad T along the arc), which
/// removes the sampling-offset noise that raw min-binning would leave at the
/// transverse arc spacing.  Per-cell minimum with lexicographic (t, chart)
/// tie-break, plus up to four arrival families for cut detection.
MinimalTimeField build_time_field(const std::vector<FrontSample>& samples, const GridSpec& grid,
                                  const ControlSystem& sys, const CovectorSlice& slice,
                                  SynthesisKnobs knobs = {});

/// Estimated singular set: flagged cells with connected-component labels and a
/// distance evaluator that is exactly zero on flagged-cell closures.
struct SingularSetModel {
  GridSpec grid;
  std::vector<size_t> flagged;     // flat indices
  std::vector<int> labels;         // component label per flagged entry
  int component_count = 0;
  std::vector<Vec> centers;        // flagged cell centers

  bool empty() const { return flagged.empty(); }
  double distance(const Vec& x) const;
  Vec nearest_center(const Vec& x) const;
};

/// Flags cut cells by the two-arrival rule and the gradient-jump rule, builds
/// the dilated singular mask, and labels connected components.
SingularSetModel estimate_cut_locus(MinimalTimeField& field, double angle_tol, double time_tol,
                                    const CovectorSlice& slice);

/// u_i = -<grad T, f_i(x)> / sqrt(sum_j <grad T, f_j(x)>^2).
/// Errors: singular region -> Errc::no_optimal_control, tiny denominator ->
/// Errc::degenerate_gradient, uncovered cell -> Errc::uncovered.
ControlVector optimal_feedback(const ControlSystem& sys, const MinimalTimeField& field,
                               const Vec& x, double grad_floor = 1e-6);

/// Slice grid helper: theta_count equispaced angles crossed with the given
/// transverse levels.
std::vector<Vec> make_slice_grid(const CovectorSlice& slice, int theta_count,
                                 const std::vector<double>& transverse);

}  // namespace qmt

#endif
