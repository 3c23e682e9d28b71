#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>
#include <utility>
#include <vector>

#include "fedprotip/data.hpp"
#include "fedprotip/errors.hpp"
#include "fedprotip/linalg.hpp"
#include "fedprotip/metrics.hpp"
#include "fedprotip/model.hpp"
#include "fedprotip/rng.hpp"
#include "fedprotip/subspace.hpp"

// Federated continual-learning engine: projected local SGD on each client,
// weighted server aggregation, end-of-task basis extraction and merging,
// reference-vector bookkeeping, and inference-time task identity prediction.
namespace fedprotip::fedcl {

using linalg::Index;
using linalg::Matrix;
using linalg::Vector;

enum class AggregationWeights { data_proportional, uniform };

struct TrainingConfig {
  std::size_t num_clients = 1;
  double client_fraction = 1.0;
  std::size_t local_epochs = 1;
  std::size_t global_rounds_per_task = 1;
  double lr = 0.01;
  double weight_decay = 0.0;
  std::size_t batch_size = 32;
  subspace::ExtractionConfig extraction;
  linalg::RandomizedSvdConfig svd;  // target_rank 0 selects the exact path
  bool projection_enabled = true;
  bool tip_enabled = true;
  AggregationWeights aggregation_weights_mode =
      AggregationWeights::data_proportional;
  double vote_client_fraction = 1.0;
  bool cache_reference_activations = false;
  std::size_t freeze_first_n_layers = 0;
  double merge_drop_tol = 1e-8;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_clients < 1) throw InputError("TrainingConfig: num_clients >= 1");
    if (!(client_fraction > 0.0 && client_fraction <= 1.0))
      throw InputError("TrainingConfig: client_fraction in (0, 1]");
    if (local_epochs < 1 || global_rounds_per_task < 1 || batch_size < 1)
      throw InputError("TrainingConfig: counts must be >= 1");
    if (lr < 0.0) throw InputError("TrainingConfig: lr must be >= 0");
    if (weight_decay < 0.0)
      throw InputError("TrainingConfig: weight_decay must be >= 0");
    if (!(vote_client_fraction > 0.0 && vote_client_fraction <= 1.0))
      throw InputError("TrainingConfig: vote_client_fraction in (0, 1]");
    extraction.validate();
  }
};

// Per-client, per-task alignment fingerprint. values[j] records how strongly
// the client's task activations align with task j's feature subspace; entries
// for tasks learned after this one are zero-padded (clients no longer hold
// the data to measure them).
struct ReferenceVector {
  std::size_t client_id = 0;
  std::size_t task_id = 0;
  std::vector<double> values;
};

// refs[client][task]
using ReferenceStore = std::vector<std::vector<ReferenceVector>>;

struct TaskVote {
  std::size_t client_id = 0;
  std::vector<double> similarities;  // one per task, in [-1, 1]
  std::size_t vote = 0;              // argmax, ties toward the lowest task
};

struct TipResult {
  std::size_t predicted_task = 0;
  std::vector<TaskVote> votes;
  bool fallback_used = false;  // zero-norm relevance, most recent task chosen
};

struct RoundRecord {
  std::size_t task = 0;
  std::size_t round = 0;  // 1-based within the task
  std::vector<std::size_t> participants;
  double mean_local_loss = 0.0;
  std::uint64_t params_checksum = 0;
};

struct VoteRow {
  std::size_t phase = 0;
  std::size_t sample_id = 0;
  std::size_t true_task = 0;
  std::size_t predicted_task = 0;
  std::vector<long long> client_votes;  // -1 marks a non-voting client
};

// Raw feature-layer activation columns kept per (client, task); only filled
// when cache_reference_activations is on.
using ActivationCache = std::vector<std::vector<Matrix>>;

inline std::size_t thread_count() {
  if (const char* env = std::getenv("FEDPROTIP_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc ? hc : 1;
}

namespace detail {

// Runs body(i) for i in [0, n). Work items own disjoint state; the first
// exception is rethrown on the caller thread.
template <typename F>
void parallel_for(std::size_t n, F&& body) {
  const std::size_t workers = std::min(thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline std::uint64_t fnv1a(std::uint64_t h, const void* data,
                           std::size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

// Row-space complement projection for a gradient block: removes the
// components of the update that act on directions the merged basis spans.
// Realized through the column projector on the transposed block so the same
// kernel (and its empty-basis bit passthrough) serves both orientations.
inline Matrix project_gradient(const Matrix& grad,
                               const subspace::SubspaceBasis& basis) {
  if (basis.empty()) return grad;
  return linalg::project_onto_complement(grad.transpose(), basis.basis)
      .transpose();
}

}  // namespace detail

inline std::uint64_t params_checksum(const nn::ModelParams& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const Matrix& w : params.hidden_weights)
    h = detail::fnv1a(h, w.data(), sizeof(double) * w.size());
  h = detail::fnv1a(h, params.head.data(),
                    sizeof(double) * params.head.size());
  if (!params.head_task_offsets.empty())
    h = detail::fnv1a(h, params.head_task_offsets.data(),
                      sizeof(Index) * params.head_task_offsets.size());
  return h;
}

struct LocalResult {
  nn::ModelParams params;
  double mean_loss = 0.0;
  std::size_t steps = 0;
};

// Local projected SGD: for every epoch and mini-batch, gradients of each
// hidden layer are projected onto the complement of the merged subspace for
// that layer before the step. Weight decay is folded into the gradient before
// projection so the realized update stays orthogonal to retained directions.
// Head gradients are never projected; rows of earlier tasks are frozen by the
// optimizer. Returns nullopt for an empty shard (skip-client signal).
inline std::optional<LocalResult> client_local_train(
    const nn::ModelParams& global_params, const data::TaskDataset& task_data,
    const std::vector<Index>& shard, const subspace::ProjectionMemory& memory,
    const TrainingConfig& cfg, std::size_t task, Index head_block,
    std::size_t round, std::size_t client_id) {
  if (shard.empty()) return std::nullopt;
  const Index layers = global_params.hidden_layers();
  if (!memory.empty() &&
      memory.merged.size() != static_cast<std::size_t>(layers) + 1)
    throw DimensionError("client_local_train: memory layer count mismatch");

  nn::ModelParams params = global_params;
  auto eng = rng::make_engine(
      cfg.seed, {0x6c6f63616cULL, task, round, client_id});
  double loss_sum = 0.0;
  std::size_t steps = 0;

  std::vector<Index> order = shard;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    rng::shuffle(order, eng);
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t count =
          std::min(cfg.batch_size, order.size() - start);
      Matrix batch(task_data.inputs.rows(), static_cast<Index>(count));
      std::vector<Index> labels(count);
      for (std::size_t i = 0; i < count; ++i) {
        batch.col(static_cast<Index>(i)) =
            task_data.inputs.col(order[start + i]);
        labels[i] =
            task_data.labels[static_cast<std::size_t>(order[start + i])];
      }
      auto trace = nn::forward(params, batch, true);
      auto [grads, loss] = nn::backward(params, trace, labels, head_block);
      loss_sum += loss;
      ++steps;
      if (!(cfg.lr > 0.0)) continue;  // lr = 0 is a fixed point

      if (cfg.weight_decay > 0.0) {
        for (Index l = 0; l < layers; ++l)
          grads.hidden_grads[static_cast<std::size_t>(l)] +=
              cfg.weight_decay * params.hidden_weights[static_cast<std::size_t>(l)];
        const Index frozen = grads.frozen_head_rows;
        const Index live = params.head.rows() - frozen;
        if (live > 0)
          grads.head_grad.middleRows(frozen, live) +=
              cfg.weight_decay * params.head.middleRows(frozen, live);
      }
      for (Index l = 0; l < layers; ++l) {
        auto& g = grads.hidden_grads[static_cast<std::size_t>(l)];
        if (task >= 1 &&
            static_cast<std::size_t>(l) < cfg.freeze_first_n_layers) {
          g.setZero();
          continue;
        }
        if (cfg.projection_enabled && !memory.empty())
          g = detail::project_gradient(
              g, memory.merged[static_cast<std::size_t>(l)]);
      }
      params = nn::sgd_step(std::move(params), grads, cfg.lr, 0.0);
    }
  }
  return LocalResult{std::move(params), steps ? loss_sum / steps : 0.0, steps};
}

// Convex combination of client parameter sets, accumulated in client index
// order so the result is independent of which thread produced each input.
inline nn::ModelParams server_aggregate(
    const std::vector<nn::ModelParams>& client_params,
    const std::vector<double>& weights) {
  if (client_params.empty())
    throw InputError("server_aggregate: no client parameters");
  if (client_params.size() != weights.size())
    throw InputError("server_aggregate: weight count mismatch");
  double sum = 0.0;
  for (double w : weights) sum += w;
  if (std::abs(sum - 1.0) > 1e-12)
    throw ContractError("server_aggregate: weights sum to " +
                        std::to_string(sum) + ", expected 1");
  if (client_params.size() == 1) return client_params.front();

  nn::ModelParams out = client_params.front();
  for (auto& w : out.hidden_weights) w *= weights.front();
  out.head *= weights.front();
  for (std::size_t k = 1; k < client_params.size(); ++k) {
    const nn::ModelParams& p = client_params[k];
    if (p.hidden_weights.size() != out.hidden_weights.size() ||
        p.head.rows() != out.head.rows() ||
        p.head.cols() != out.head.cols())
      throw DimensionError("server_aggregate: parameter shape mismatch");
    for (std::size_t l = 0; l < out.hidden_weights.size(); ++l) {
      if (p.hidden_weights[l].rows() != out.hidden_weights[l].rows() ||
          p.hidden_weights[l].cols() != out.hidden_weights[l].cols())
        throw DimensionError("server_aggregate: parameter shape mismatch");
      out.hidden_weights[l] += weights[k] * p.hidden_weights[l];
    }
    out.head += weights[k] * p.head;
  }
  return out;
}

// Builds the task-t reference vector of one client from its raw feature-layer
// activations: entry j is the mean per-column projected norm against task j's
// subspace, j = 1..t. Older reference vectors gain a zero entry for the new
// task; with an activation cache the entry is recomputed exactly instead.
inline std::vector<ReferenceVector> update_references(
    std::size_t client_id, const subspace::SubspaceBasis& new_final_basis,
    const Matrix& current_acts, std::vector<ReferenceVector> old_refs,
    const std::vector<subspace::SubspaceBasis>& all_final_bases,
    std::size_t task, const std::vector<Matrix>* cached_acts = nullptr) {
  if (all_final_bases.size() < task + 1)
    throw InputError("update_references: final bases must cover tasks 1..t");
  if (!new_final_basis.empty() &&
      new_final_basis.dim() != all_final_bases[task].dim())
    throw DimensionError("update_references: basis dimension mismatch");

  auto mean_projected_norm = [](const subspace::SubspaceBasis& basis,
                                const Matrix& acts) {
    if (basis.empty() || acts.cols() == 0) return 0.0;
    double sum = 0.0;
    for (Index j = 0; j < acts.cols(); ++j)
      sum += (basis.basis.transpose() * acts.col(j)).norm();
    return sum / static_cast<double>(acts.cols());
  };

  for (auto& ref : old_refs) {
    double entry = 0.0;
    if (cached_acts && ref.task_id < cached_acts->size())
      entry = mean_projected_norm(all_final_bases[task],
                                  (*cached_acts)[ref.task_id]);
    ref.values.push_back(entry);
  }

  ReferenceVector fresh;
  fresh.client_id = client_id;
  fresh.task_id = task;
  fresh.values.resize(task + 1);
  for (std::size_t j = 0; j <= task; ++j)
    fresh.values[j] = mean_projected_norm(all_final_bases[j], current_acts);
  old_refs.push_back(std::move(fresh));
  return old_refs;
}

namespace detail {

inline double cosine_similarity(const std::vector<double>& a,
                                const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  for (std::size_t i = n; i < a.size(); ++i) na += a[i] * a[i];
  for (std::size_t i = n; i < b.size(); ++i) nb += b[i] * b[i];
  if (!(na > 0.0) || !(nb > 0.0)) return -1.0;  // degenerate: never wins
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

}  // namespace detail

// Task identity prediction from a feature-layer activation: relevance against
// every task subspace, cosine matching against each voting client's
// references, then a plurality vote with ties toward the lowest task index.
inline TipResult predict_task_from_features(
    const Vector& features, const subspace::ProjectionMemory& memory,
    const ReferenceStore& refs, const std::vector<std::size_t>& voters) {
  const std::size_t tasks = memory.per_task_final.size();
  if (tasks == 0)
    throw StateError("predict_task: no completed task to choose from");

  std::vector<double> relevance(tasks, 0.0);
  double norm2 = 0.0;
  for (std::size_t t = 0; t < tasks; ++t) {
    const auto& basis = memory.per_task_final[t];
    relevance[t] =
        basis.empty() ? 0.0 : (basis.basis.transpose() * features).norm();
    norm2 += relevance[t] * relevance[t];
  }

  TipResult result;
  if (!(norm2 > 0.0)) {
    result.predicted_task = tasks - 1;  // most recent task
    result.fallback_used = true;
    return result;
  }

  std::vector<std::size_t> counts(tasks, 0);
  for (std::size_t k : voters) {
    if (k >= refs.size() || refs[k].empty()) continue;
    TaskVote vote;
    vote.client_id = k;
    vote.similarities.resize(tasks, -1.0);
    std::size_t best = 0;
    double best_sim = -2.0;
    for (std::size_t t = 0; t < tasks && t < refs[k].size(); ++t) {
      const double sim =
          detail::cosine_similarity(relevance, refs[k][t].values);
      vote.similarities[t] = sim;
      if (sim > best_sim) {
        best_sim = sim;
        best = t;
      }
    }
    vote.vote = best;
    ++counts[best];
    result.votes.push_back(std::move(vote));
  }
  if (result.votes.empty()) {
    result.predicted_task = tasks - 1;
    result.fallback_used = true;
    return result;
  }
  std::size_t winner = 0;
  for (std::size_t t = 1; t < tasks; ++t)
    if (counts[t] > counts[winner]) winner = t;
  result.predicted_task = winner;
  return result;
}

// Single-sample entry point: runs the forward pass to obtain the
// feature-layer activation, then votes over all clients.
inline TipResult predict_task(const Vector& test_input,
                              const nn::ModelParams& global_params,
                              const subspace::ProjectionMemory& memory,
                              const ReferenceStore& refs) {
  Matrix column(test_input.size(), 1);
  column.col(0) = test_input;
  const auto trace = nn::forward(global_params, column, true);
  std::vector<std::size_t> voters(refs.size());
  std::iota(voters.begin(), voters.end(), std::size_t{0});
  return predict_task_from_features(trace.layer_inputs.back().col(0), memory,
                                    refs, voters);
}

struct EndOfTaskResult {
  subspace::ProjectionMemory memory;
  ReferenceStore refs;
  subspace::CostLedger ledger;
};

// End-of-task barrier: every client feeds m local samples through the final
// global model, subsamples m^s activation columns, removes the directions the
// global subspace already spans, and extracts per-layer core bases. The
// feature-layer bases are merged into the canonical per-task basis used by
// task identity prediction, references are refreshed, all client bases are
// merged into the global store, and the cost ledger is charged.
inline EndOfTaskResult end_of_task(
    const nn::ModelParams& global_params, const data::TaskDataset& task_data,
    const std::vector<std::vector<Index>>& client_shards,
    subspace::ProjectionMemory memory, ReferenceStore refs,
    subspace::CostLedger ledger, const TrainingConfig& cfg, std::size_t task,
    ActivationCache* cache = nullptr) {
  const Index layers = global_params.hidden_layers();
  const std::size_t spaces = static_cast<std::size_t>(layers) + 1;
  const std::size_t clients = client_shards.size();
  if (refs.size() < clients) refs.resize(clients);
  if (cache && cache->size() < clients) cache->resize(clients);

  if (memory.merged.empty()) {
    memory.merged.resize(spaces);
    for (std::size_t l = 0; l < spaces; ++l) {
      const Index dim =
          l < static_cast<std::size_t>(layers)
              ? global_params.hidden_weights[l].cols()  // input dim + bias
              : global_params.feature_dim();
      memory.merged[l].layer_index = l;
      memory.merged[l].basis = Matrix(dim, 0);
    }
  }

  const auto& eps = cfg.extraction.epsilon_per_layer;
  if (eps.size() != spaces)
    throw InputError("end_of_task: need one epsilon per projected layer (" +
                     std::to_string(spaces) + "), got " +
                     std::to_string(eps.size()));

  std::vector<std::vector<subspace::SubspaceBasis>> client_bases(
      clients, std::vector<subspace::SubspaceBasis>(spaces));
  std::vector<Matrix> client_feature_acts(clients);
  std::vector<bool> active(clients, false);

  detail::parallel_for(clients, [&](std::size_t k) {
    const auto& shard = client_shards[k];
    if (shard.empty()) return;
    auto eng = rng::make_engine(cfg.seed, {0x65787472ULL, task, k});
    const std::size_t m =
        std::min(cfg.extraction.sample_count_m, shard.size());
    const auto picks = rng::sample_without_replacement(shard.size(), m, eng);
    Matrix batch(task_data.inputs.rows(), static_cast<Index>(m));
    for (std::size_t i = 0; i < m; ++i)
      batch.col(static_cast<Index>(i)) = task_data.inputs.col(shard[picks[i]]);
    const auto trace = nn::forward(global_params, batch, true);

    const std::size_t ms = std::min(cfg.extraction.subsample_count_ms, m);
    const auto cols = rng::sample_without_replacement(m, ms, eng);

    for (std::size_t l = 0; l < spaces; ++l) {
      const bool hidden = l < static_cast<std::size_t>(layers);
      const Matrix& full = trace.layer_inputs[l];
      Matrix acts(hidden ? full.rows() + 1 : full.rows(),
                  static_cast<Index>(ms));
      for (std::size_t i = 0; i < ms; ++i) {
        acts.col(static_cast<Index>(i)).head(full.rows()) =
            full.col(static_cast<Index>(cols[i]));
        if (hidden) acts(full.rows(), static_cast<Index>(i)) = 1.0;
      }
      if (l == spaces - 1) client_feature_acts[k] = acts;

      const Matrix residual =
          subspace::subtract_known_subspace(acts, memory.merged[l]);
      linalg::RandomizedSvdConfig svd_cfg = cfg.svd;
      svd_cfg.seed = rng::derive_key(cfg.seed, {0x73766400ULL, task, k, l});
      auto basis = subspace::extract_core_bases(residual, eps[l],
                                                cfg.extraction.energy_mode,
                                                svd_cfg);
      basis.layer_index = l;
      client_bases[k][l] = std::move(basis);
    }
    active[k] = true;
  });

  // canonical per-task feature basis, merged across clients in index order
  std::vector<subspace::SubspaceBasis> final_bases;
  for (std::size_t k = 0; k < clients; ++k)
    if (active[k]) final_bases.push_back(client_bases[k][spaces - 1]);
  subspace::SubspaceBasis task_final;
  task_final.layer_index = spaces - 1;
  task_final.basis = Matrix(global_params.feature_dim(), 0);
  task_final =
      subspace::merge_into_global(task_final, final_bases, cfg.merge_drop_tol);
  memory.per_task_final.push_back(task_final);

  if (cfg.tip_enabled) {
    for (std::size_t k = 0; k < clients; ++k) {
      if (!active[k]) continue;
      const std::vector<Matrix>* cached =
          cache && cfg.cache_reference_activations ? &(*cache)[k] : nullptr;
      refs[k] = update_references(k, client_bases[k][spaces - 1],
                                  client_feature_acts[k], std::move(refs[k]),
                                  memory.per_task_final, task, cached);
      if (cache && cfg.cache_reference_activations) {
        (*cache)[k].resize(task + 1);
        (*cache)[k][task] = client_feature_acts[k];
      }
    }
  }

  for (std::size_t l = 0; l < spaces; ++l) {
    std::vector<subspace::SubspaceBasis> uploads;
    for (std::size_t k = 0; k < clients; ++k)
      if (active[k]) uploads.push_back(client_bases[k][l]);
    memory.merged[l] = subspace::merge_into_global(memory.merged[l], uploads,
                                                   cfg.merge_drop_tol);
  }

  std::vector<subspace::SubspaceBasis> all_uploads;
  std::vector<ReferenceVector> sent_refs;
  for (std::size_t k = 0; k < clients; ++k) {
    if (!active[k]) continue;
    for (const auto& b : client_bases[k]) all_uploads.push_back(b);
    if (cfg.tip_enabled)
      for (const auto& r : refs[k]) sent_refs.push_back(r);
  }
  ledger = subspace::record_cost(std::move(ledger), task, all_uploads,
                                 sent_refs);
  subspace::record_storage(ledger, task, memory);

  return {std::move(memory), std::move(refs), std::move(ledger)};
}

struct RunHooks {
  std::function<void(std::size_t task, std::size_t round, std::size_t client,
                     const nn::ModelParams& before,
                     const nn::ModelParams& after)>
      after_client_update;
  std::function<void(std::size_t task, const nn::ModelParams& global,
                     const subspace::ProjectionMemory& memory)>
      after_task;
};

struct ExperimentResult {
  nn::ModelParams params;
  subspace::ProjectionMemory memory;
  ReferenceStore refs;
  std::vector<harness::EvalMode> modes;
  std::vector<harness::AccuracyMatrix> acc;  // parallel to `modes`
  subspace::CostLedger ledger;
  std::vector<RoundRecord> rounds;
  std::vector<VoteRow> votes;
  std::vector<double> tip_accuracy_per_phase;  // NaN where TIP did not run
  std::vector<Matrix> confusion_per_phase;     // true task x predicted task

  const harness::AccuracyMatrix& accuracy(harness::EvalMode mode) const {
    for (std::size_t i = 0; i < modes.size(); ++i)
      if (modes[i] == mode) return acc[i];
    throw StateError("ExperimentResult: mode was not evaluated");
  }
  bool has_mode(harness::EvalMode mode) const {
    for (auto m : modes)
      if (m == mode) return true;
    return false;
  }
};

// Full protocol: per task, E rounds of {sample clients, local projected SGD,
// weighted aggregation}, then the end-of-task extraction barrier, then
// evaluation of every seen task in the requested modes.
inline ExperimentResult run_experiment(
    const data::TaskStream& stream, const data::PartitionPlan& plan,
    const nn::ModelSpec& spec, const TrainingConfig& cfg,
    const std::vector<harness::EvalMode>& requested_modes,
    const RunHooks* hooks = nullptr) {
  cfg.validate();
  spec.validate();
  const std::size_t tasks = stream.tasks.size();
  if (plan.assignments.size() != tasks)
    throw InputError("run_experiment: partition plan does not match stream");
  if (plan.num_clients() != cfg.num_clients)
    throw InputError("run_experiment: plan has " +
                     std::to_string(plan.num_clients()) + " clients, config " +
                     std::to_string(cfg.num_clients));
  const bool class_incremental =
      stream.regime == data::Regime::class_incremental;
  if (class_incremental && spec.head_classes_per_task.size() != tasks)
    throw InputError("run_experiment: head_classes_per_task must cover all tasks");

  ExperimentResult result;
  for (auto mode : requested_modes) {
    if (mode == harness::EvalMode::agnostic_tip && !cfg.tip_enabled)
      continue;  // TIP evaluation is skipped for the no-TIP variants
    result.modes.push_back(mode);
    result.acc.emplace_back(tasks, mode);
  }
  result.ledger = subspace::CostLedger(tasks);
  result.tip_accuracy_per_phase.assign(
      tasks, std::numeric_limits<double>::quiet_NaN());

  nn::ModelParams global =
      nn::init_params(spec, rng::derive_key(cfg.seed, {0x696e6974ULL}));
  subspace::ProjectionMemory memory;
  ReferenceStore refs(cfg.num_clients);
  ActivationCache cache;

  // fixed voter subset for the whole run (all clients at fraction 1)
  std::vector<std::size_t> voters;
  {
    const std::size_t count = static_cast<std::size_t>(
        std::ceil(cfg.vote_client_fraction *
                  static_cast<double>(cfg.num_clients)));
    auto eng = rng::make_engine(cfg.seed, {0x766f7465ULL});
    voters = rng::sample_without_replacement(cfg.num_clients,
                                             std::max<std::size_t>(count, 1),
                                             eng);
    std::sort(voters.begin(), voters.end());
  }

  for (std::size_t task = 0; task < tasks; ++task) {
    const data::TaskDataset& td = stream.tasks[task];
    const auto& shards = plan.assignments[task];
    const Index head_block = class_incremental ? static_cast<Index>(task) : 0;

    if (class_incremental) {
      global = nn::expand_head(
          std::move(global), spec.head_classes_per_task[task],
          rng::derive_key(cfg.seed, {0x68656164ULL, task}));
    } else if (task == 0) {
      global = nn::expand_head(
          std::move(global), spec.head_classes_per_task.front(),
          rng::derive_key(cfg.seed, {0x68656164ULL}));
    }

    const std::size_t participants_per_round = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::ceil(cfg.client_fraction *
                         static_cast<double>(cfg.num_clients))));

    for (std::size_t round = 1; round <= cfg.global_rounds_per_task;
         ++round) {
      auto sample_eng =
          rng::make_engine(cfg.seed, {0x70617274ULL, task, round});
      std::vector<std::size_t> participants = rng::sample_without_replacement(
          cfg.num_clients, participants_per_round, sample_eng);
      std::sort(participants.begin(), participants.end());

      std::vector<std::optional<LocalResult>> locals(participants.size());
      detail::parallel_for(participants.size(), [&](std::size_t i) {
        const std::size_t k = participants[i];
        locals[i] = client_local_train(global, td, shards[k], memory, cfg,
                                       task, head_block, round, k);
      });
      if (hooks && hooks->after_client_update)
        for (std::size_t i = 0; i < participants.size(); ++i)
          if (locals[i])
            hooks->after_client_update(task, round, participants[i], global,
                                       locals[i]->params);

      std::vector<nn::ModelParams> updated;
      std::vector<double> weights;
      std::vector<std::size_t> contributing;
      double loss_sum = 0.0;
      for (std::size_t i = 0; i < participants.size(); ++i) {
        if (!locals[i]) continue;
        contributing.push_back(participants[i]);
        updated.push_back(std::move(locals[i]->params));
        loss_sum += locals[i]->mean_loss;
        weights.push_back(
            cfg.aggregation_weights_mode == AggregationWeights::uniform
                ? 1.0
                : static_cast<double>(shards[participants[i]].size()));
      }
      if (!updated.empty()) {
        double wsum = 0.0;
        for (double w : weights) wsum += w;
        for (double& w : weights) w /= wsum;
        // exact unit sum for the aggregation contract
        double resum = 0.0;
        for (double w : weights) resum += w;
        weights.back() += 1.0 - resum;
        global = server_aggregate(updated, weights);
      }

      RoundRecord record;
      record.task = task;
      record.round = round;
      record.participants = contributing;
      record.mean_local_loss =
          contributing.empty()
              ? std::numeric_limits<double>::quiet_NaN()
              : loss_sum / static_cast<double>(contributing.size());
      record.params_checksum = params_checksum(global);
      result.rounds.push_back(std::move(record));
    }

    if (cfg.projection_enabled || cfg.tip_enabled) {
      auto eot = end_of_task(global, td, shards, std::move(memory),
                             std::move(refs), std::move(result.ledger), cfg,
                             task, &cache);
      memory = std::move(eot.memory);
      refs = std::move(eot.refs);
      result.ledger = std::move(eot.ledger);
    }
    if (hooks && hooks->after_task) hooks->after_task(task, global, memory);

    // --- evaluation of every seen task in the requested modes -------------
    const bool run_tip = cfg.tip_enabled &&
                         result.has_mode(harness::EvalMode::agnostic_tip) &&
                         !memory.per_task_final.empty();
    Matrix confusion = Matrix::Zero(static_cast<Index>(tasks),
                                    static_cast<Index>(tasks));
    std::size_t tip_total = 0, tip_correct = 0;

    for (std::size_t seen = 0; seen <= task; ++seen) {
      const data::TaskDataset& eval_td = stream.tasks[seen];
      const std::size_t n = eval_td.test_indices.size();
      if (n == 0)
        throw StateError("run_experiment: task " + std::to_string(seen + 1) +
                         " has no test samples");
      Matrix inputs(eval_td.inputs.rows(), static_cast<Index>(n));
      for (std::size_t i = 0; i < n; ++i)
        inputs.col(static_cast<Index>(i)) =
            eval_td.inputs.col(eval_td.test_indices[i]);
      const auto trace = nn::forward(global, inputs, true);
      const Index seen_block = class_incremental ? static_cast<Index>(seen) : 0;
      const Index aware_offset = global.task_offset(seen_block);
      const Index aware_classes = global.task_classes(seen_block);

      std::size_t correct_aware = 0, correct_agnostic = 0, correct_tip = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const Index col = static_cast<Index>(i);
        const Index label =
            eval_td.labels[static_cast<std::size_t>(eval_td.test_indices[i])];

        Index row;
        trace.logits.col(col).segment(aware_offset, aware_classes)
            .maxCoeff(&row);
        correct_aware += aware_offset + row == label;

        trace.logits.col(col).maxCoeff(&row);
        correct_agnostic += row == label;

        if (run_tip) {
          const auto tip = predict_task_from_features(
              trace.layer_inputs.back().col(col), memory, refs, voters);
          const Index tip_block =
              class_incremental ? static_cast<Index>(tip.predicted_task) : 0;
          const Index off = global.task_offset(tip_block);
          const Index cls = global.task_classes(tip_block);
          trace.logits.col(col).segment(off, cls).maxCoeff(&row);
          correct_tip += off + row == label;

          confusion(static_cast<Index>(seen),
                    static_cast<Index>(tip.predicted_task)) += 1.0;
          ++tip_total;
          tip_correct += tip.predicted_task == seen;

          VoteRow vr;
          vr.phase = task;
          vr.sample_id = static_cast<std::size_t>(eval_td.test_indices[i]);
          vr.true_task = seen;
          vr.predicted_task = tip.predicted_task;
          vr.client_votes.assign(cfg.num_clients, -1);
          for (const auto& v : tip.votes)
            vr.client_votes[v.client_id] = static_cast<long long>(v.vote);
          result.votes.push_back(std::move(vr));
        }
      }

      for (std::size_t m = 0; m < result.modes.size(); ++m) {
        double value = 0.0;
        switch (result.modes[m]) {
          case harness::EvalMode::task_aware:
            value = static_cast<double>(correct_aware) / n;
            break;
          case harness::EvalMode::agnostic_no_tip:
            value = static_cast<double>(correct_agnostic) / n;
            break;
          case harness::EvalMode::agnostic_tip:
            value = static_cast<double>(correct_tip) / n;
            break;
        }
        result.acc[m].set(seen, task, value);
      }
    }
    result.confusion_per_phase.push_back(std::move(confusion));
    if (run_tip && tip_total > 0)
      result.tip_accuracy_per_phase[task] =
          static_cast<double>(tip_correct) / tip_total;
  }

  result.params = std::move(global);
  result.memory = std::move(memory);
  result.refs = std::move(refs);
  return result;
}

}  // namespace fedprotip::fedcl
