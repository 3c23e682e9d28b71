#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fedprotip/config.hpp"
#include "fedprotip/csv.hpp"
#include "fedprotip/errors.hpp"
#include "fedprotip/fedcl.hpp"
#include "fedprotip/metrics.hpp"

// Result bundling and CSV emission. Every method writes its artifacts into
// its own subdirectory with fixed per-file schemas; the combined metrics.csv
// at the top level carries one row per (method, mode, task phase).
namespace fedprotip::harness {

struct ResultBundle {
  Method method = Method::fedavg;
  std::size_t num_tasks = 0;
  std::size_t num_clients = 0;
  std::vector<EvalMode> modes;
  std::vector<AccuracyMatrix> matrices;  // parallel to `modes`
  std::vector<double> final_acc;         // per mode, after the last task
  std::vector<double> final_ft;
  linalg::Matrix confusion;  // final-phase task-prediction counts
  subspace::CostLedger ledger;
  std::vector<fedcl::RoundRecord> rounds;
  std::vector<fedcl::VoteRow> votes;
  std::vector<double> tip_accuracy_per_phase;
};

inline ResultBundle make_bundle(Method method,
                                const fedcl::ExperimentResult& result,
                                std::size_t num_clients) {
  ResultBundle bundle;
  bundle.method = method;
  bundle.num_clients = num_clients;
  bundle.modes = result.modes;
  bundle.matrices = result.acc;
  bundle.num_tasks =
      bundle.matrices.empty() ? 0 : bundle.matrices.front().num_tasks();
  for (const auto& m : bundle.matrices) {
    bundle.final_acc.push_back(compute_acc(m, bundle.num_tasks));
    bundle.final_ft.push_back(compute_ft(m, bundle.num_tasks));
  }
  bundle.confusion = result.confusion_per_phase.empty()
                         ? linalg::Matrix()
                         : result.confusion_per_phase.back();
  bundle.ledger = result.ledger;
  bundle.rounds = result.rounds;
  bundle.votes = result.votes;
  bundle.tip_accuracy_per_phase = result.tip_accuracy_per_phase;
  return bundle;
}

inline void write_cost_csv(const subspace::CostLedger& ledger,
                           const std::filesystem::path& path) {
  csv::Writer w(path);
  w.row({"task", "uploaded_basis_floats", "reference_floats",
         "stored_floats"});
  for (std::size_t t = 0; t < ledger.horizon(); ++t)
    w.row({csv::fmt(t + 1), csv::fmt(ledger.per_task_uploaded_basis_floats[t]),
           csv::fmt(ledger.per_task_reference_floats[t]),
           csv::fmt(ledger.per_task_stored_floats[t])});
}

inline subspace::CostLedger read_cost_csv(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  subspace::CostLedger ledger(table.rows.size());
  const auto up = csv::column_index(table, "uploaded_basis_floats");
  const auto rf = csv::column_index(table, "reference_floats");
  const auto st = csv::column_index(table, "stored_floats");
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    ledger.per_task_uploaded_basis_floats[i] = std::stoull(table.rows[i][up]);
    ledger.per_task_reference_floats[i] = std::stoull(table.rows[i][rf]);
    ledger.per_task_stored_floats[i] = std::stoull(table.rows[i][st]);
  }
  return ledger;
}

// One method's artifacts under <dir>: accuracy_matrix_<mode>.csv (task,
// phase, acc), cost.csv, rounds.csv and votes.csv.
inline void emit_results(const ResultBundle& bundle,
                         const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  for (std::size_t m = 0; m < bundle.modes.size(); ++m) {
    csv::Writer w(dir / (std::string("accuracy_matrix_") +
                         eval_mode_name(bundle.modes[m]) + ".csv"));
    w.row({"task", "phase", "acc"});
    for (std::size_t t = 0; t < bundle.num_tasks; ++t)
      for (std::size_t i = t; i < bundle.num_tasks; ++i)
        w.row({csv::fmt(t + 1), csv::fmt(i + 1),
               csv::fmt(bundle.matrices[m].get(t, i))});
  }

  write_cost_csv(bundle.ledger, dir / "cost.csv");

  {
    csv::Writer w(dir / "rounds.csv");
    w.row({"task", "round", "mean_loss", "checksum"});
    for (const auto& r : bundle.rounds) {
      char checksum[32];
      std::snprintf(checksum, sizeof(checksum), "%016llx",
                    static_cast<unsigned long long>(r.params_checksum));
      w.row({csv::fmt(r.task + 1), csv::fmt(r.round),
             csv::fmt(r.mean_local_loss), checksum});
    }
  }

  {
    csv::Writer w(dir / "votes.csv");
    std::vector<std::string> header = {"phase", "sample_id", "true_task",
                                       "predicted_task"};
    for (std::size_t k = 0; k < bundle.num_clients; ++k)
      header.push_back("vote_client_" + std::to_string(k));
    w.row(header);
    for (const auto& v : bundle.votes) {
      std::vector<std::string> row = {
          csv::fmt(v.phase + 1), csv::fmt(v.sample_id),
          csv::fmt(v.true_task + 1), csv::fmt(v.predicted_task + 1)};
      for (long long vote : v.client_votes)
        row.push_back(vote < 0 ? "" : std::to_string(vote + 1));
      w.row(row);
    }
  }
}

// metrics.csv — one row per (method, mode, task phase); tip_accuracy is only
// populated for the agnostic_tip rows.
inline void write_metrics_csv(const std::vector<ResultBundle>& bundles,
                              const std::filesystem::path& path) {
  csv::Writer w(path);
  w.row({"method", "mode", "task_phase", "acc", "ft", "tip_accuracy"});
  for (const auto& bundle : bundles) {
    for (std::size_t m = 0; m < bundle.modes.size(); ++m) {
      for (std::size_t phase = 1; phase <= bundle.num_tasks; ++phase) {
        const double acc = compute_acc(bundle.matrices[m], phase);
        const double ft = compute_ft(bundle.matrices[m], phase);
        std::string tip;
        if (bundle.modes[m] == EvalMode::agnostic_tip) {
          const double v = bundle.tip_accuracy_per_phase[phase - 1];
          if (!std::isnan(v)) tip = csv::fmt(v);
        }
        w.row({method_name(bundle.method), eval_mode_name(bundle.modes[m]),
               csv::fmt(phase), csv::fmt(acc), csv::fmt(ft), tip});
      }
    }
  }
}

struct MetricsRow {
  std::string method;
  std::string mode;
  std::size_t task_phase = 0;
  double acc = 0.0;
  double ft = 0.0;
  std::string tip_accuracy;  // empty when not applicable
};

inline std::vector<MetricsRow> read_metrics_csv(
    const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const auto method = csv::column_index(table, "method");
  const auto mode = csv::column_index(table, "mode");
  const auto phase = csv::column_index(table, "task_phase");
  const auto acc = csv::column_index(table, "acc");
  const auto ft = csv::column_index(table, "ft");
  const auto tip = csv::column_index(table, "tip_accuracy");
  std::vector<MetricsRow> rows;
  for (const auto& r : table.rows) {
    MetricsRow row;
    row.method = r[method];
    row.mode = r[mode];
    row.task_phase = std::stoull(r[phase]);
    row.acc = std::strtod(r[acc].c_str(), nullptr);
    row.ft = std::strtod(r[ft].c_str(), nullptr);
    row.tip_accuracy = r[tip];
    rows.push_back(std::move(row));
  }
  return rows;
}

inline AccuracyMatrix read_accuracy_matrix_csv(
    const std::filesystem::path& path, EvalMode mode) {
  const auto table = csv::read(path);
  const auto task = csv::column_index(table, "task");
  const auto phase = csv::column_index(table, "phase");
  const auto acc = csv::column_index(table, "acc");
  std::size_t tasks = 0;
  for (const auto& r : table.rows)
    tasks = std::max(tasks, static_cast<std::size_t>(std::stoull(r[phase])));
  AccuracyMatrix m(tasks, mode);
  for (const auto& r : table.rows)
    m.set(std::stoull(r[task]) - 1, std::stoull(r[phase]) - 1,
          std::strtod(r[acc].c_str(), nullptr));
  return m;
}

// Re-checks invariants over a results directory. Returns human-readable
// problems; an empty list means the artifacts are internally consistent.
inline std::vector<std::string> verify_results(
    const std::filesystem::path& dir) {
  std::vector<std::string> problems;
  const auto metrics_path = dir / "metrics.csv";
  if (!std::filesystem::exists(metrics_path)) {
    problems.push_back("missing " + metrics_path.string());
    return problems;
  }
  std::vector<MetricsRow> metrics;
  try {
    metrics = read_metrics_csv(metrics_path);
  } catch (const Error& e) {
    problems.push_back(std::string("metrics.csv unreadable: ") + e.what());
    return problems;
  }
  if (!std::filesystem::exists(dir / "config_echo.toml"))
    problems.push_back("missing config_echo.toml");

  std::set<std::string> methods;
  for (const auto& row : metrics) methods.insert(row.method);

  for (const auto& method : methods) {
    const auto mdir = dir / method;
    if (!std::filesystem::is_directory(mdir)) {
      problems.push_back("missing method directory " + mdir.string());
      continue;
    }

    std::set<std::string> modes;
    for (const auto& row : metrics)
      if (row.method == method) modes.insert(row.mode);

    std::map<std::string, AccuracyMatrix> matrices;
    for (const auto& mode : modes) {
      const auto path = mdir / ("accuracy_matrix_" + mode + ".csv");
      if (!std::filesystem::exists(path)) {
        problems.push_back("missing " + path.string());
        continue;
      }
      try {
        matrices[mode] = read_accuracy_matrix_csv(path, parse_eval_mode(mode));
      } catch (const Error& e) {
        problems.push_back(path.string() + ": " + e.what());
      }
    }

    for (const auto& row : metrics) {
      if (row.method != method || !matrices.count(row.mode)) continue;
      const auto& matrix = matrices.at(row.mode);
      try {
        const double acc = compute_acc(matrix, row.task_phase);
        const double ft = compute_ft(matrix, row.task_phase);
        if (std::abs(acc - row.acc) > 1e-15)
          problems.push_back(method + "/" + row.mode + " phase " +
                             std::to_string(row.task_phase) +
                             ": acc mismatch with accuracy matrix");
        if (std::abs(ft - row.ft) > 1e-15)
          problems.push_back(method + "/" + row.mode + " phase " +
                             std::to_string(row.task_phase) +
                             ": ft mismatch with accuracy matrix");
      } catch (const Error& e) {
        problems.push_back(method + "/" + row.mode + ": " + e.what());
      }
    }

    if (std::filesystem::exists(mdir / "cost.csv")) {
      try {
        read_cost_csv(mdir / "cost.csv");
      } catch (const std::exception& e) {
        problems.push_back(method + "/cost.csv: " + e.what());
      }
    } else {
      problems.push_back("missing " + (mdir / "cost.csv").string());
    }

    // per-phase task-prediction accuracy must match the votes
    if (modes.count("agnostic_tip") &&
        std::filesystem::exists(mdir / "votes.csv")) {
      std::map<std::size_t, std::pair<std::size_t, std::size_t>> tally;
      try {
        const auto votes = csv::read(mdir / "votes.csv");
        const auto phase = csv::column_index(votes, "phase");
        const auto true_task = csv::column_index(votes, "true_task");
        const auto predicted = csv::column_index(votes, "predicted_task");
        for (const auto& r : votes.rows) {
          auto& [total, correct] = tally[std::stoull(r[phase])];
          ++total;
          correct += r[true_task] == r[predicted];
        }
        for (const auto& row : metrics) {
          if (row.method != method || row.mode != "agnostic_tip" ||
              row.tip_accuracy.empty())
            continue;
          const auto it = tally.find(row.task_phase);
          if (it == tally.end()) {
            problems.push_back(method + ": no votes for phase " +
                               std::to_string(row.task_phase));
            continue;
          }
          const double recomputed =
              static_cast<double>(it->second.second) /
              static_cast<double>(it->second.first);
          const double reported =
              std::strtod(row.tip_accuracy.c_str(), nullptr);
          if (std::abs(recomputed - reported) > 1e-15)
            problems.push_back(method + " phase " +
                               std::to_string(row.task_phase) +
                               ": tip_accuracy disagrees with votes.csv");
        }
      } catch (const std::exception& e) {
        problems.push_back(method + "/votes.csv: " + e.what());
      }
    }
  }
  return problems;
}

}  // namespace fedprotip::harness
