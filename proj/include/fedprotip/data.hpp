#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fedprotip/errors.hpp"
#include "fedprotip/linalg.hpp"
#include "fedprotip/rng.hpp"

// Synthetic continual-task generation (class- and domain-incremental) and
// Dirichlet non-IID partitioning across clients. All generation is a pure
// function of its config: equal seeds give bit-identical streams.
namespace fedprotip::data {

using linalg::Index;
using linalg::Matrix;
using linalg::Vector;

enum class Regime { class_incremental, domain_incremental };

struct TaskDataset {
  Matrix inputs;              // d0 x n
  std::vector<Index> labels;  // global class ids, length n
  std::size_t task_id = 0;
  std::vector<Index> train_indices;
  std::vector<Index> test_indices;

  Index sample_count() const { return inputs.cols(); }
};

struct TaskStream {
  std::vector<TaskDataset> tasks;
  Regime regime = Regime::class_incremental;
};

struct GeneratorConfig {
  std::size_t num_tasks = 1;
  std::size_t classes_per_task = 2;
  std::size_t samples_per_class = 100;
  Index input_dim = 8;
  double class_separation = 6.0;  // distance of class means in noise-std units
  double noise_std = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_tasks < 1 || classes_per_task < 1 || samples_per_class < 1)
      throw InputError("GeneratorConfig: counts must be >= 1");
    if (input_dim < 1) throw InputError("GeneratorConfig: input_dim must be >= 1");
    if (class_separation < 0.0)
      throw InputError("GeneratorConfig: class_separation must be >= 0");
    if (!(noise_std > 0.0))
      throw InputError("GeneratorConfig: noise_std must be > 0");
  }
};

// Per-task, per-client sample indices (into that task's arrays, train split
// only). alpha is empty for an IID split.
struct PartitionPlan {
  std::vector<std::vector<std::vector<Index>>> assignments;
  std::optional<double> alpha;

  std::size_t num_clients() const {
    return assignments.empty() ? 0 : assignments.front().size();
  }
};

namespace detail {

inline Vector sphere_point(rng::Engine& eng, Index dim, double radius) {
  Vector v(dim);
  double norm2 = 0.0;
  do {
    for (Index i = 0; i < dim; ++i) v(i) = rng::normal(eng);
    norm2 = v.squaredNorm();
  } while (!(norm2 > 0.0));
  return v * (radius / std::sqrt(norm2));
}

// One task's clusters: means on a sphere of radius separation * noise_std,
// isotropic Gaussian noise, labels starting at label_base. Samples are laid
// out class by class; the train split takes the first 80% of every class.
inline TaskDataset gaussian_task(const GeneratorConfig& cfg,
                                 std::size_t task_id, Index label_base,
                                 std::uint64_t task_key) {
  const Index classes = static_cast<Index>(cfg.classes_per_task);
  const Index per_class = static_cast<Index>(cfg.samples_per_class);
  const Index n = classes * per_class;
  TaskDataset task;
  task.task_id = task_id;
  task.inputs = Matrix(cfg.input_dim, n);
  task.labels.resize(static_cast<std::size_t>(n));

  auto eng = rng::make_engine(task_key);
  const double radius = cfg.class_separation * cfg.noise_std;
  for (Index c = 0; c < classes; ++c) {
    const Vector mean = sphere_point(eng, cfg.input_dim, radius);
    for (Index s = 0; s < per_class; ++s) {
      const Index col = c * per_class + s;
      for (Index i = 0; i < cfg.input_dim; ++i)
        task.inputs(i, col) = mean(i) + cfg.noise_std * rng::normal(eng);
      task.labels[static_cast<std::size_t>(col)] = label_base + c;
    }
    const Index train_count = per_class * 4 / 5;
    for (Index s = 0; s < per_class; ++s) {
      (s < train_count ? task.train_indices : task.test_indices)
          .push_back(c * per_class + s);
    }
  }
  return task;
}

}  // namespace detail

// Haar-distributed orthogonal matrix (QR of a Gaussian with sign fix).
inline Matrix haar_orthogonal(Index dim, std::uint64_t seed) {
  auto eng = rng::make_engine(seed);
  Matrix g(dim, dim);
  for (Index j = 0; j < dim; ++j)
    for (Index i = 0; i < dim; ++i) g(i, j) = rng::normal(eng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(dim, dim);
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < dim; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

// Disjoint label sets across tasks: task t uses global classes
// [t * classes_per_task, (t + 1) * classes_per_task).
inline TaskStream generate_class_incremental(const GeneratorConfig& cfg) {
  cfg.validate();
  TaskStream stream;
  stream.regime = Regime::class_incremental;
  for (std::size_t t = 0; t < cfg.num_tasks; ++t) {
    const Index base = static_cast<Index>(t * cfg.classes_per_task);
    stream.tasks.push_back(detail::gaussian_task(
        cfg, t, base, rng::derive_key(cfg.seed, {0x7461736bULL, t})));
  }
  return stream;
}

// Shared label set; task 1 is the base layout and every later task applies a
// distinct random orthogonal rotation to the base inputs.
inline TaskStream generate_domain_incremental(const GeneratorConfig& cfg) {
  cfg.validate();
  TaskStream stream;
  stream.regime = Regime::domain_incremental;
  const TaskDataset base = detail::gaussian_task(
      cfg, 0, 0, rng::derive_key(cfg.seed, {0x62617365ULL}));
  for (std::size_t t = 0; t < cfg.num_tasks; ++t) {
    TaskDataset task = base;
    task.task_id = t;
    if (t > 0) {
      const Matrix rot = haar_orthogonal(
          cfg.input_dim, rng::derive_key(cfg.seed, {0x726f7461ULL, t}));
      task.inputs = rot * base.inputs;
    }
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

// Splits one task's train samples across clients. IID: label-agnostic
// shuffled equal split. Dirichlet: per class, proportions drawn from
// Dir(alpha), largest-remainder rounding, then a repair pass that moves
// samples from the largest holder until every client owns at least one sample
// of every class present in the task.
inline std::vector<std::vector<Index>> partition_dirichlet(
    const TaskDataset& task, std::size_t num_clients,
    std::optional<double> alpha, std::uint64_t seed) {
  if (num_clients < 1) throw InputError("partition_dirichlet: need >= 1 client");
  if (alpha && !(*alpha > 0.0))
    throw InputError("partition_dirichlet: alpha must be > 0");
  std::vector<std::vector<Index>> clients(num_clients);
  auto eng = rng::make_engine(seed);

  if (!alpha) {
    std::vector<Index> order = task.train_indices;
    rng::shuffle(order, eng);
    const std::size_t n = order.size();
    const std::size_t base = n / num_clients;
    const std::size_t extra = n % num_clients;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < num_clients; ++k) {
      const std::size_t take = base + (k < extra ? 1 : 0);
      clients[k].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                        order.begin() + static_cast<std::ptrdiff_t>(pos + take));
      pos += take;
    }
    return clients;
  }

  // group the train split by class, keeping class order deterministic
  std::map<Index, std::vector<Index>> by_class;
  for (Index idx : task.train_indices)
    by_class[task.labels[static_cast<std::size_t>(idx)]].push_back(idx);

  for (auto& [label, members] : by_class) {
    const std::size_t n = members.size();
    if (n < num_clients)
      throw PartitionError("partition_dirichlet: class " +
                           std::to_string(label) + " has " +
                           std::to_string(n) + " samples for " +
                           std::to_string(num_clients) + " clients");
    rng::shuffle(members, eng);
    const std::vector<double> p = rng::dirichlet(eng, *alpha, num_clients);

    // largest-remainder rounding of p * n
    std::vector<std::size_t> counts(num_clients);
    std::vector<std::pair<double, std::size_t>> remainders(num_clients);
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < num_clients; ++k) {
      const double exact = p[k] * static_cast<double>(n);
      counts[k] = static_cast<std::size_t>(exact);
      remainders[k] = {exact - static_cast<double>(counts[k]), k};
      assigned += counts[k];
    }
    std::sort(remainders.begin(), remainders.end(), [](auto a, auto b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned)
      ++counts[remainders[i % num_clients].second];

    // repair: every client gets at least one sample of this class
    for (std::size_t k = 0; k < num_clients; ++k) {
      while (counts[k] == 0) {
        const std::size_t donor = static_cast<std::size_t>(
            std::max_element(counts.begin(), counts.end()) - counts.begin());
        --counts[donor];
        ++counts[k];
      }
    }

    std::size_t pos = 0;
    for (std::size_t k = 0; k < num_clients; ++k) {
      for (std::size_t i = 0; i < counts[k]; ++i)
        clients[k].push_back(members[pos++]);
    }
  }
  for (auto& list : clients) std::sort(list.begin(), list.end());
  return clients;
}

inline PartitionPlan make_partition_plan(const TaskStream& stream,
                                         std::size_t num_clients,
                                         std::optional<double> alpha,
                                         std::uint64_t seed) {
  PartitionPlan plan;
  plan.alpha = alpha;
  for (const TaskDataset& task : stream.tasks)
    plan.assignments.push_back(partition_dirichlet(
        task, num_clients, alpha, rng::derive_key(seed, {task.task_id})));
  return plan;
}

// --- CSV export / reload -----------------------------------------------------
// One directory per task with inputs.csv, labels.csv and split.csv; values are
// printed with 17 significant digits so the reload is bit-exact.

namespace detail {

inline std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

inline void export_stream(const TaskStream& stream,
                          const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "stream.csv");
    if (!os) throw IoError("export_stream: cannot write " + (dir / "stream.csv").string());
    os << "key,value\n";
    os << "regime," << (stream.regime == Regime::class_incremental
                            ? "class_incremental"
                            : "domain_incremental")
       << "\n";
    os << "num_tasks," << stream.tasks.size() << "\n";
    os << "input_dim,"
       << (stream.tasks.empty() ? 0 : stream.tasks.front().inputs.rows())
       << "\n";
  }
  for (const TaskDataset& task : stream.tasks) {
    const auto tdir = dir / ("task_" + std::to_string(task.task_id + 1));
    std::filesystem::create_directories(tdir);
    {
      std::ofstream os(tdir / "inputs.csv");
      for (Index i = 0; i < task.inputs.rows(); ++i)
        os << (i ? "," : "") << "x" << i;
      os << "\n";
      for (Index c = 0; c < task.inputs.cols(); ++c) {
        for (Index i = 0; i < task.inputs.rows(); ++i)
          os << (i ? "," : "") << detail::fmt17(task.inputs(i, c));
        os << "\n";
      }
    }
    {
      std::ofstream os(tdir / "labels.csv");
      os << "label\n";
      for (Index lbl : task.labels) os << lbl << "\n";
    }
    {
      std::ofstream os(tdir / "split.csv");
      os << "index,role\n";
      std::vector<std::string> role(task.labels.size());
      for (Index idx : task.train_indices)
        role[static_cast<std::size_t>(idx)] = "train";
      for (Index idx : task.test_indices)
        role[static_cast<std::size_t>(idx)] = "test";
      for (std::size_t i = 0; i < role.size(); ++i)
        os << i << "," << role[i] << "\n";
    }
  }
}

inline TaskStream load_stream(const std::filesystem::path& dir) {
  std::ifstream meta(dir / "stream.csv");
  if (!meta) throw IoError("load_stream: cannot open " + (dir / "stream.csv").string());
  std::string line;
  std::getline(meta, line);  // header
  std::map<std::string, std::string> kv;
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() == 2) kv[cells[0]] = cells[1];
  }
  TaskStream stream;
  stream.regime = kv["regime"] == "domain_incremental"
                      ? Regime::domain_incremental
                      : Regime::class_incremental;
  const std::size_t num_tasks = std::stoull(kv["num_tasks"]);
  const Index input_dim = static_cast<Index>(std::stoll(kv["input_dim"]));

  for (std::size_t t = 0; t < num_tasks; ++t) {
    const auto tdir = dir / ("task_" + std::to_string(t + 1));
    TaskDataset task;
    task.task_id = t;

    std::ifstream in(tdir / "inputs.csv");
    if (!in) throw IoError("load_stream: cannot open " + (tdir / "inputs.csv").string());
    std::getline(in, line);  // header
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = detail::split_csv_line(line);
      std::vector<double> vals(cells.size());
      for (std::size_t i = 0; i < cells.size(); ++i)
        vals[i] = std::strtod(cells[i].c_str(), nullptr);
      rows.push_back(std::move(vals));
    }
    task.inputs = Matrix(input_dim, static_cast<Index>(rows.size()));
    for (std::size_t c = 0; c < rows.size(); ++c)
      for (Index i = 0; i < input_dim; ++i)
        task.inputs(i, static_cast<Index>(c)) = rows[c][static_cast<std::size_t>(i)];

    std::ifstream lf(tdir / "labels.csv");
    std::getline(lf, line);
    while (std::getline(lf, line))
      if (!line.empty()) task.labels.push_back(static_cast<Index>(std::stoll(line)));

    std::ifstream sf(tdir / "split.csv");
    std::getline(sf, line);
    while (std::getline(sf, line)) {
      if (line.empty()) continue;
      const auto cells = detail::split_csv_line(line);
      const Index idx = static_cast<Index>(std::stoll(cells[0]));
      (cells[1] == "train" ? task.train_indices : task.test_indices)
          .push_back(idx);
    }
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

}  // namespace fedprotip::data
