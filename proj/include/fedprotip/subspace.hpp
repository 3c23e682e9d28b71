#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fedprotip/errors.hpp"
#include "fedprotip/linalg.hpp"

// Task-subspace memory: thresholded core-basis extraction from projected
// activations, incremental merging of client bases into the global subspace,
// and storage/communication accounting.
namespace fedprotip::subspace {

using linalg::Index;
using linalg::Matrix;
using linalg::Vector;

struct SubspaceBasis {
  std::size_t layer_index = 0;
  Matrix basis;  // d_l x r_l, orthonormal columns

  Index dim() const { return basis.rows(); }
  Index rank() const { return basis.cols(); }
  bool empty() const { return basis.cols() == 0; }
};

enum class EnergyMode { sum_fraction, squared_sum_fraction };

struct ExtractionConfig {
  std::vector<double> epsilon_per_layer;  // each in (0, 1]
  EnergyMode energy_mode = EnergyMode::sum_fraction;
  std::size_t sample_count_m = 256;
  std::size_t subsample_count_ms = 128;

  void validate() const {
    if (subsample_count_ms > sample_count_m)
      throw InputError("extraction: subsample_count_ms exceeds sample_count_m");
    for (double e : epsilon_per_layer)
      if (!(e > 0.0 && e <= 1.0))
        throw InputError("extraction: epsilon must lie in (0, 1]");
  }
};

// Global store of retained directions. `merged` accumulates across tasks, one
// entry per projected layer; `per_task_final` keeps the feature-layer basis of
// each completed task unmerged, because task identity prediction indexes them
// by task.
struct ProjectionMemory {
  std::vector<SubspaceBasis> merged;
  std::vector<SubspaceBasis> per_task_final;

  bool empty() const { return merged.empty(); }
};

struct CostLedger {
  std::vector<std::size_t> per_task_uploaded_basis_floats;
  std::vector<std::size_t> per_task_reference_floats;
  std::vector<std::size_t> per_task_stored_floats;

  CostLedger() = default;
  explicit CostLedger(std::size_t horizon)
      : per_task_uploaded_basis_floats(horizon, 0),
        per_task_reference_floats(horizon, 0),
        per_task_stored_floats(horizon, 0) {}

  std::size_t horizon() const { return per_task_uploaded_basis_floats.size(); }
};

// Residuals whose norm falls below this fraction of the activation norm are
// treated as full containment and zeroed outright. Without the clamp, the
// roundoff left behind by the projection has singular values far above the
// numerical-rank cutoff of the (tiny) residual and extraction would keep
// garbage directions once the merged subspace saturates a layer.
inline constexpr double kResidualFloor = 1e-10;

// a - Phi (Phi^T a): removes the component of the activations that the global
// subspace already explains. Empty basis (task 1) passes through bit-exactly.
inline Matrix subtract_known_subspace(const Matrix& activations,
                                      const SubspaceBasis& merged) {
  if (!merged.empty() && merged.basis.rows() != activations.rows())
    throw DimensionError("subtract_known_subspace: basis dim " +
                         std::to_string(merged.basis.rows()) +
                         " vs activation dim " +
                         std::to_string(activations.rows()));
  if (merged.empty()) return activations;
  Matrix residual =
      linalg::project_onto_complement(activations, merged.basis);
  if (residual.norm() <= kResidualFloor * activations.norm())
    residual.setZero();
  return residual;
}

// SVD of the projected activations, keeping the smallest number of leading
// left singular vectors whose cumulative singular-value mass reaches the
// epsilon fraction of the total. Mass is sigma_i in sum_fraction mode and
// sigma_i^2 in squared_sum_fraction mode. Singular values below the numerical
// rank cutoff never count. Falls back to exact_svd when the randomized sketch
// does not fit the matrix.
inline SubspaceBasis extract_core_bases(const Matrix& projected_acts,
                                        double epsilon, EnergyMode mode,
                                        const linalg::RandomizedSvdConfig&
                                            svd_cfg) {
  if (!(epsilon > 0.0 && epsilon <= 1.0))
    throw InputError("extract_core_bases: epsilon must lie in (0, 1]");
  const Index mindim = std::min(projected_acts.rows(), projected_acts.cols());
  const bool randomized = svd_cfg.target_rank >= 1 &&
                          svd_cfg.target_rank + svd_cfg.oversampling <= mindim;
  const linalg::SvdResult svd = randomized
                                    ? linalg::randomized_svd(projected_acts,
                                                             svd_cfg)
                                    : linalg::exact_svd(projected_acts);

  const double smax = svd.s.size() > 0 ? svd.s(0) : 0.0;
  SubspaceBasis out;
  out.basis = Matrix(projected_acts.rows(), 0);
  if (!(smax > 0.0)) return out;

  const double cutoff =
      static_cast<double>(std::max(projected_acts.rows(),
                                   projected_acts.cols())) *
      std::numeric_limits<double>::epsilon() * smax;
  Index significant = 0;
  double total = 0.0;
  for (Index i = 0; i < svd.s.size(); ++i) {
    if (svd.s(i) <= cutoff) break;
    total += mode == EnergyMode::sum_fraction ? svd.s(i) : svd.s(i) * svd.s(i);
    ++significant;
  }
  if (significant == 0) return out;

  double cumulative = 0.0;
  Index r = significant;
  for (Index i = 0; i < significant; ++i) {
    cumulative +=
        mode == EnergyMode::sum_fraction ? svd.s(i) : svd.s(i) * svd.s(i);
    if (cumulative >= epsilon * total) {
      r = i + 1;
      break;
    }
  }
  out.basis = svd.u.leftCols(r);
  return out;
}

// Gram-Schmidt append of client bases into the running global basis,
// client order as given. Each incoming column is projected against the
// current basis (twice, for re-orthogonalization), renormalized, and dropped
// when its residual norm falls below drop_tol. The merged rank can therefore
// never exceed the layer dimension.
inline SubspaceBasis merge_into_global(SubspaceBasis merged,
                                       const std::vector<SubspaceBasis>&
                                           client_bases,
                                       double drop_tol) {
  for (const SubspaceBasis& cb : client_bases) {
    if (cb.empty()) continue;
    if (!merged.empty() && cb.basis.rows() != merged.basis.rows())
      throw DimensionError("merge_into_global: layer dim mismatch, " +
                           std::to_string(cb.basis.rows()) + " vs " +
                           std::to_string(merged.basis.rows()));
    if (merged.empty()) {
      merged.layer_index = cb.layer_index;
      merged.basis = cb.basis;
      continue;
    }
    Matrix grown(merged.basis.rows(), merged.basis.cols() + cb.basis.cols());
    grown.leftCols(merged.basis.cols()) = merged.basis;
    Index r = merged.basis.cols();
    for (Index j = 0; j < cb.basis.cols(); ++j) {
      Vector v = cb.basis.col(j);
      for (int pass = 0; pass < 2; ++pass)
        for (Index i = 0; i < r; ++i)
          v -= grown.col(i).dot(v) * grown.col(i);
      const double n = v.norm();
      if (n < drop_tol) continue;
      grown.col(r++) = v / n;
    }
    merged.basis = grown.leftCols(r);
  }
  return merged;
}

// Upload accounting for one task: d_l * r_l floats per transmitted basis plus
// the reference-vector entries sent alongside them.
template <typename RefRange>
CostLedger record_cost(CostLedger ledger, std::size_t task,
                       const std::vector<SubspaceBasis>& bases,
                       const RefRange& references) {
  if (task >= ledger.horizon())
    throw InputError("record_cost: task " + std::to_string(task) +
                     " outside ledger horizon " +
                     std::to_string(ledger.horizon()));
  std::size_t basis_floats = 0;
  for (const SubspaceBasis& b : bases)
    basis_floats += static_cast<std::size_t>(b.basis.rows()) *
                    static_cast<std::size_t>(b.basis.cols());
  std::size_t ref_floats = 0;
  for (const auto& ref : references) ref_floats += ref.values.size();
  ledger.per_task_uploaded_basis_floats[task] += basis_floats;
  ledger.per_task_reference_floats[task] += ref_floats;
  return ledger;
}

// Snapshot of the server-side memory footprint after a task's merge.
inline void record_storage(CostLedger& ledger, std::size_t task,
                           const ProjectionMemory& memory) {
  if (task >= ledger.horizon())
    throw InputError("record_storage: task outside ledger horizon");
  std::size_t floats = 0;
  for (const SubspaceBasis& b : memory.merged)
    floats += static_cast<std::size_t>(b.basis.size());
  for (const SubspaceBasis& b : memory.per_task_final)
    floats += static_cast<std::size_t>(b.basis.size());
  ledger.per_task_stored_floats[task] = floats;
}

}  // namespace fedprotip::subspace
