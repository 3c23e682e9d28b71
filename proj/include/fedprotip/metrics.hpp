#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fedprotip/errors.hpp"

namespace fedprotip::harness {

enum class EvalMode { task_aware, agnostic_no_tip, agnostic_tip };

inline const char* eval_mode_name(EvalMode mode) {
  switch (mode) {
    case EvalMode::task_aware: return "task_aware";
    case EvalMode::agnostic_no_tip: return "agnostic_no_tip";
    case EvalMode::agnostic_tip: return "agnostic_tip";
  }
  return "unknown";
}

// acc(t, i): accuracy on task t after training i + 1 tasks, defined for
// i >= t (0-based). Entries live in [0, 1]; reading an unset entry throws.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  AccuracyMatrix(std::size_t num_tasks, EvalMode mode)
      : num_tasks_(num_tasks),
        mode_(mode),
        entries_(num_tasks * num_tasks,
                 std::numeric_limits<double>::quiet_NaN()) {}

  std::size_t num_tasks() const { return num_tasks_; }
  EvalMode mode() const { return mode_; }

  void set(std::size_t task, std::size_t phase, double value) {
    check_coords(task, phase);
    if (!(value >= 0.0 && value <= 1.0))
      throw InputError("AccuracyMatrix: accuracy outside [0, 1]");
    entries_[task * num_tasks_ + phase] = value;
  }

  bool is_set(std::size_t task, std::size_t phase) const {
    check_coords(task, phase);
    return !std::isnan(entries_[task * num_tasks_ + phase]);
  }

  double get(std::size_t task, std::size_t phase) const {
    check_coords(task, phase);
    const double v = entries_[task * num_tasks_ + phase];
    if (std::isnan(v))
      throw StateError("AccuracyMatrix: entry (" + std::to_string(task) + ", " +
                       std::to_string(phase) + ") not recorded");
    return v;
  }

  bool phase_complete(std::size_t phase) const {
    for (std::size_t t = 0; t <= phase; ++t)
      if (std::isnan(entries_[t * num_tasks_ + phase])) return false;
    return true;
  }

 private:
  void check_coords(std::size_t task, std::size_t phase) const {
    if (task >= num_tasks_ || phase >= num_tasks_ || phase < task)
      throw InputError("AccuracyMatrix: coordinates (" + std::to_string(task) +
                       ", " + std::to_string(phase) +
                       ") outside the lower-triangular region of size " +
                       std::to_string(num_tasks_));
  }

  std::size_t num_tasks_ = 0;
  EvalMode mode_ = EvalMode::task_aware;
  std::vector<double> entries_;
};

// Average accuracy after T tasks: (1/T) sum_t acc[t][T].
inline double compute_acc(const AccuracyMatrix& m, std::size_t tasks) {
  if (tasks < 1 || tasks > m.num_tasks())
    throw InputError("compute_acc: bad task count");
  if (!m.phase_complete(tasks - 1))
    throw StateError("compute_acc: phase " + std::to_string(tasks) +
                     " is incomplete");
  double sum = 0.0;
  for (std::size_t t = 0; t < tasks; ++t) sum += m.get(t, tasks - 1);
  return sum / static_cast<double>(tasks);
}

// Forgetting after T tasks: (1/T) sum_{t<T} (max_{i<T} acc[t][i] - acc[t][T]).
// The prefactor is 1/T even though the sum has T-1 terms; a single task has
// no forgetting by convention. Negative values are legitimate (a task can end
// up better than it ever was).
inline double compute_ft(const AccuracyMatrix& m, std::size_t tasks) {
  if (tasks < 1 || tasks > m.num_tasks())
    throw InputError("compute_ft: bad task count");
  for (std::size_t i = 0; i < tasks; ++i)
    if (!m.phase_complete(i))
      throw StateError("compute_ft: phase " + std::to_string(i + 1) +
                       " is incomplete");
  if (tasks == 1) return 0.0;
  double sum = 0.0;
  for (std::size_t t = 0; t + 1 < tasks; ++t) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = t; i + 1 < tasks; ++i)
      best = std::max(best, m.get(t, i));
    sum += best - m.get(t, tasks - 1);
  }
  return sum / static_cast<double>(tasks);
}

}  // namespace fedprotip::harness
