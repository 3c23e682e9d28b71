#include <catch2/catch_amalgamated.hpp>

#include "fedprotip/fedcl.hpp"

using namespace fedprotip;
using fedcl::TrainingConfig;
using harness::EvalMode;
using linalg::Index;
using linalg::Matrix;
using linalg::Vector;
using nn::ModelParams;
using nn::ModelSpec;
using subspace::SubspaceBasis;

namespace {

Matrix random_matrix(Index rows, Index cols, std::uint64_t seed) {
  auto eng = rng::make_engine(seed);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = rng::normal(eng);
  return m;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  if (a.hidden_weights.size() != b.hidden_weights.size()) return false;
  for (std::size_t l = 0; l < a.hidden_weights.size(); ++l)
    if (std::memcmp(a.hidden_weights[l].data(), b.hidden_weights[l].data(),
                    sizeof(double) * a.hidden_weights[l].size()) != 0)
      return false;
  return a.head.rows() == b.head.rows() &&
         std::memcmp(a.head.data(), b.head.data(),
                     sizeof(double) * a.head.size()) == 0;
}

data::GeneratorConfig stream_cfg(std::size_t tasks, std::uint64_t seed) {
  data::GeneratorConfig cfg;
  cfg.num_tasks = tasks;
  cfg.classes_per_task = 3;
  cfg.samples_per_class = 40;
  cfg.input_dim = 8;
  cfg.class_separation = 6.0;
  cfg.noise_std = 1.0;
  cfg.seed = seed;
  return cfg;
}

TrainingConfig small_training_cfg(std::size_t clients, std::uint64_t seed) {
  TrainingConfig cfg;
  cfg.num_clients = clients;
  cfg.client_fraction = 1.0;
  cfg.local_epochs = 1;
  cfg.global_rounds_per_task = 3;
  cfg.lr = 0.05;
  cfg.batch_size = 16;
  cfg.extraction.epsilon_per_layer = {0.9, 0.9, 0.9};
  cfg.extraction.sample_count_m = 60;
  cfg.extraction.subsample_count_ms = 40;
  cfg.seed = seed;
  return cfg;
}

ModelSpec small_spec(std::size_t tasks) {
  ModelSpec spec;
  spec.layer_dims = {8, 16, 12};
  spec.activation = nn::Activation::relu;
  spec.head_classes_per_task.assign(tasks, 3);
  return spec;
}

}  // namespace

TEST_CASE("server_aggregate: hand cases and contract errors") {
  ModelSpec spec;
  spec.layer_dims = {2, 2};
  ModelParams zero = nn::init_params(spec, 1);
  zero = nn::expand_head(std::move(zero), 2, 2);
  zero.hidden_weights[0].setZero();
  zero.head.setZero();
  ModelParams two = zero;
  two.hidden_weights[0].setConstant(2.0);
  two.head.setConstant(2.0);

  auto mid = fedcl::server_aggregate({zero, two}, {0.5, 0.5});
  REQUIRE(mid.hidden_weights[0].isConstant(1.0));
  REQUIRE(mid.head.isConstant(1.0));

  ModelParams four = zero;
  four.hidden_weights[0].setConstant(4.0);
  auto blend = fedcl::server_aggregate({four, zero}, {0.25, 0.75});
  REQUIRE(blend.hidden_weights[0](0, 0) == Catch::Approx(1.0).margin(1e-15));

  auto single = fedcl::server_aggregate({two}, {1.0});
  REQUIRE(params_equal(single, two));

  REQUIRE_THROWS_AS(fedcl::server_aggregate({zero, two}, {0.5, 0.6}),
                    ContractError);
}

TEST_CASE("server_aggregate: matches a naive double-loop oracle") {
  ModelSpec spec;
  spec.layer_dims = {4, 5};
  std::vector<ModelParams> clients;
  for (int k = 0; k < 3; ++k) {
    ModelParams p = nn::init_params(spec, 10 + k);
    p = nn::expand_head(std::move(p), 3, 20 + k);
    clients.push_back(std::move(p));
  }
  const std::vector<double> w = {0.2, 0.3, 0.5};
  auto combined = fedcl::server_aggregate(clients, w);

  for (Index i = 0; i < combined.hidden_weights[0].rows(); ++i)
    for (Index j = 0; j < combined.hidden_weights[0].cols(); ++j) {
      double expect = 0.0;
      for (std::size_t k = 0; k < clients.size(); ++k)
        expect += w[k] * clients[k].hidden_weights[0](i, j);
      REQUIRE(std::abs(combined.hidden_weights[0](i, j) - expect) <= 1e-12);
    }
  for (Index i = 0; i < combined.head.rows(); ++i)
    for (Index j = 0; j < combined.head.cols(); ++j) {
      double expect = 0.0;
      for (std::size_t k = 0; k < clients.size(); ++k)
        expect += w[k] * clients[k].head(i, j);
      REQUIRE(std::abs(combined.head(i, j) - expect) <= 1e-12);
    }
}

TEST_CASE("client_local_train: lr 0 is a fixed point, empty shard skips") {
  const auto stream = data::generate_class_incremental(stream_cfg(1, 3));
  TrainingConfig cfg = small_training_cfg(2, 4);
  cfg.lr = 0.0;
  ModelParams global = nn::init_params(small_spec(1), 5);
  global = nn::expand_head(std::move(global), 3, 6);

  subspace::ProjectionMemory memory;
  auto out = fedcl::client_local_train(global, stream.tasks[0],
                                       stream.tasks[0].train_indices, memory,
                                       cfg, 0, 0, 1, 0);
  REQUIRE(out.has_value());
  REQUIRE(params_equal(out->params, global));
  REQUIRE(out->steps > 0);

  auto skipped = fedcl::client_local_train(global, stream.tasks[0], {}, memory,
                                           cfg, 0, 0, 1, 0);
  REQUIRE(!skipped.has_value());
}

TEST_CASE("client_local_train: task-1 trajectory identical with and without projection") {
  const auto stream = data::generate_class_incremental(stream_cfg(1, 7));
  ModelParams global = nn::init_params(small_spec(1), 8);
  global = nn::expand_head(std::move(global), 3, 9);

  TrainingConfig projected = small_training_cfg(1, 10);
  TrainingConfig plain = projected;
  plain.projection_enabled = false;

  subspace::ProjectionMemory empty_memory;
  auto a = fedcl::client_local_train(global, stream.tasks[0],
                                     stream.tasks[0].train_indices,
                                     empty_memory, projected, 0, 0, 1, 0);
  auto b = fedcl::client_local_train(global, stream.tasks[0],
                                     stream.tasks[0].train_indices,
                                     empty_memory, plain, 0, 0, 1, 0);
  REQUIRE(params_equal(a->params, b->params));
}

TEST_CASE("client_local_train: updates orthogonal to merged subspace") {
  const auto stream = data::generate_class_incremental(stream_cfg(2, 11));
  ModelParams global = nn::init_params(small_spec(2), 12);
  global = nn::expand_head(std::move(global), 3, 13);
  TrainingConfig cfg = small_training_cfg(1, 14);
  cfg.weight_decay = 5e-4;  // decay folds into the projected gradient

  // build a memory from task 1 and train on task 2
  auto eot = fedcl::end_of_task(global, stream.tasks[0],
                                {stream.tasks[0].train_indices},
                                subspace::ProjectionMemory{},
                                fedcl::ReferenceStore(1),
                                subspace::CostLedger(2), cfg, 0);
  global = nn::expand_head(std::move(global), 3, 15);

  auto out = fedcl::client_local_train(global, stream.tasks[1],
                                       stream.tasks[1].train_indices,
                                       eot.memory, cfg, 1, 1, 1, 0);
  REQUIRE(out.has_value());
  for (Index l = 0; l < global.hidden_layers(); ++l) {
    const Matrix delta = out->params.hidden_weights[static_cast<std::size_t>(l)] -
                         global.hidden_weights[static_cast<std::size_t>(l)];
    const Matrix& phi = eot.memory.merged[static_cast<std::size_t>(l)].basis;
    REQUIRE(phi.cols() > 0);
    REQUIRE((delta * phi).norm() <= 1e-6 * delta.norm());
  }
}

TEST_CASE("projected gradients never grow in norm") {
  const Matrix phi = linalg::orthonormalize_columns(random_matrix(9, 4, 21),
                                                    1e-10);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Matrix g = random_matrix(5, 9, 30 + s);  // gradient-shaped block
    const Matrix projected =
        fedcl::detail::project_gradient(g, SubspaceBasis{0, phi});
    REQUIRE(projected.norm() <= g.norm() + 1e-12);
  }
}

TEST_CASE("update_references: containment and orthogonality cases") {
  // task 1: activations inside the span of the only basis, unit norm
  const Matrix q = linalg::orthonormalize_columns(random_matrix(6, 3, 41),
                                                  1e-10);
  Matrix acts = q * random_matrix(3, 8, 42);
  for (Index j = 0; j < acts.cols(); ++j) acts.col(j) /= acts.col(j).norm();

  auto refs = fedcl::update_references(0, SubspaceBasis{0, q}, acts, {},
                                       {SubspaceBasis{0, q}}, 0);
  REQUIRE(refs.size() == 1);
  REQUIRE(refs[0].values.size() == 1);
  REQUIRE(refs[0].values[0] == Catch::Approx(1.0).margin(1e-10));

  // task 2: activations orthogonal to the second basis
  Matrix q2(6, 2);
  q2.setZero();
  q2(4, 0) = 1.0;
  q2(5, 1) = 1.0;
  Matrix acts2 = Matrix::Zero(6, 4);
  acts2.topRows(3) = random_matrix(3, 4, 43);
  Matrix q2_complement = Matrix::Zero(6, 3);
  q2_complement(0, 0) = 1.0;
  q2_complement(1, 1) = 1.0;
  q2_complement(2, 2) = 1.0;

  auto refs2 = fedcl::update_references(
      0, SubspaceBasis{0, q2}, acts2, refs,
      {SubspaceBasis{0, q2_complement}, SubspaceBasis{0, q2}}, 1);
  REQUIRE(refs2.size() == 2);
  // the old reference was zero-padded for the new task
  REQUIRE(refs2[0].values.size() == 2);
  REQUIRE(refs2[0].values[1] == 0.0);
  // the fresh reference has a positive first entry and a zero second entry
  REQUIRE(refs2[1].values.size() == 2);
  REQUIRE(refs2[1].values[0] > 0.0);
  REQUIRE(refs2[1].values[1] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("update_references: brute-force oracle on a 3-task instance") {
  const Index dim = 10;
  std::vector<SubspaceBasis> bases;
  std::vector<Matrix> acts;
  for (int t = 0; t < 3; ++t) {
    bases.push_back(SubspaceBasis{
        0, linalg::orthonormalize_columns(random_matrix(dim, 3, 50 + t),
                                          1e-10)});
    acts.push_back(random_matrix(dim, 6, 60 + t));
  }
  std::vector<fedcl::ReferenceVector> refs;
  for (std::size_t t = 0; t < 3; ++t) {
    refs = fedcl::update_references(
        2, bases[t], acts[t], std::move(refs),
        {bases.begin(), bases.begin() + static_cast<std::ptrdiff_t>(t) + 1},
        t);
  }
  // brute force: entry (tau, j <= tau) from stored raw activations
  for (std::size_t tau = 0; tau < 3; ++tau) {
    REQUIRE(refs[tau].values.size() == 3);
    for (std::size_t j = 0; j < 3; ++j) {
      if (j <= tau) {
        double expect = 0.0;
        for (Index c = 0; c < acts[tau].cols(); ++c) {
          const Vector a = acts[tau].col(c);
          expect += (bases[j].basis * (bases[j].basis.transpose() * a)).norm();
        }
        expect /= static_cast<double>(acts[tau].cols());
        REQUIRE(refs[tau].values[j] == Catch::Approx(expect).margin(1e-12));
      } else {
        REQUIRE(refs[tau].values[j] == 0.0);  // zero-padded by construction
      }
    }
  }
}

TEST_CASE("predict_task_from_features: single task, parallel match, plurality") {
  subspace::ProjectionMemory memory;
  memory.per_task_final.push_back(SubspaceBasis{
      2, linalg::orthonormalize_columns(random_matrix(8, 3, 70), 1e-10)});

  fedcl::ReferenceStore refs(3);
  for (std::size_t k = 0; k < 3; ++k)
    refs[k] = {fedcl::ReferenceVector{k, 0, {1.0}}};

  const Vector x = random_matrix(8, 1, 71).col(0);
  auto single = fedcl::predict_task_from_features(x, memory, refs, {0, 1, 2});
  REQUIRE(single.predicted_task == 0);

  // two tasks; make the relevance exactly proportional to every client's
  // task-2 reference
  memory.per_task_final.push_back(SubspaceBasis{
      2, linalg::orthonormalize_columns(random_matrix(8, 2, 72), 1e-10)});
  const Vector probe = random_matrix(8, 1, 73).col(0);
  std::vector<double> rel(2);
  for (std::size_t t = 0; t < 2; ++t)
    rel[t] =
        (memory.per_task_final[t].basis.transpose() * probe).norm();
  fedcl::ReferenceStore refs2(3);
  for (std::size_t k = 0; k < 3; ++k) {
    const double scale = 0.5 + static_cast<double>(k);
    refs2[k] = {fedcl::ReferenceVector{k, 0, {0.9, 0.05}},
                fedcl::ReferenceVector{k, 1, {scale * rel[0], scale * rel[1]}}};
  }
  auto matched = fedcl::predict_task_from_features(probe, memory, refs2,
                                                   {0, 1, 2});
  REQUIRE(matched.predicted_task == 1);
  for (const auto& v : matched.votes)
    REQUIRE(v.similarities[1] == Catch::Approx(1.0).margin(1e-12));

  // plurality with votes [0, 0, 1] picks task 0
  fedcl::ReferenceStore refs3(3);
  refs3[0] = {fedcl::ReferenceVector{0, 0, {rel[0], rel[1]}},
              fedcl::ReferenceVector{0, 1, {rel[1], rel[0] + 1.0}}};
  refs3[1] = refs3[0];
  refs3[1][0].client_id = refs3[1][1].client_id = 1;
  refs3[2] = {fedcl::ReferenceVector{2, 0, {rel[1], rel[0] + 1.0}},
              fedcl::ReferenceVector{2, 1, {rel[0], rel[1]}}};
  auto plural = fedcl::predict_task_from_features(probe, memory, refs3,
                                                  {0, 1, 2});
  REQUIRE(plural.votes[0].vote == 0);
  REQUIRE(plural.votes[1].vote == 0);
  REQUIRE(plural.votes[2].vote == 1);
  REQUIRE(plural.predicted_task == 0);
}

TEST_CASE("predict_task: scale invariance of the vote") {
  subspace::ProjectionMemory memory;
  for (int t = 0; t < 3; ++t)
    memory.per_task_final.push_back(SubspaceBasis{
        2, linalg::orthonormalize_columns(random_matrix(8, 2, 80 + t),
                                          1e-10)});
  fedcl::ReferenceStore refs(2);
  for (std::size_t k = 0; k < 2; ++k)
    refs[k] = {fedcl::ReferenceVector{k, 0, {1.0, 0.2, 0.1}},
               fedcl::ReferenceVector{k, 1, {0.1, 1.0, 0.3}},
               fedcl::ReferenceVector{k, 2, {0.2, 0.3, 1.0}}};

  const Vector x = random_matrix(8, 1, 90).col(0);
  auto base = fedcl::predict_task_from_features(x, memory, refs, {0, 1});
  for (double scale : {0.01, 3.0, 250.0}) {
    auto scaled =
        fedcl::predict_task_from_features(scale * x, memory, refs, {0, 1});
    REQUIRE(scaled.predicted_task == base.predicted_task);
    for (std::size_t k = 0; k < scaled.votes.size(); ++k) {
      REQUIRE(scaled.votes[k].vote == base.votes[k].vote);
      for (std::size_t t = 0; t < 3; ++t)
        REQUIRE(scaled.votes[k].similarities[t] ==
                Catch::Approx(base.votes[k].similarities[t]).margin(1e-9));
    }
  }
}

TEST_CASE("predict_task: zero-norm relevance falls back to the latest task") {
  subspace::ProjectionMemory memory;
  Matrix q = Matrix::Zero(6, 1);
  q(0, 0) = 1.0;
  memory.per_task_final.push_back(SubspaceBasis{2, q});
  memory.per_task_final.push_back(SubspaceBasis{2, q});
  fedcl::ReferenceStore refs(1);
  refs[0] = {fedcl::ReferenceVector{0, 0, {1.0, 0.0}},
             fedcl::ReferenceVector{0, 1, {1.0, 0.0}}};
  Vector x = Vector::Zero(6);
  x(3) = 1.0;  // orthogonal to every stored basis
  auto out = fedcl::predict_task_from_features(x, memory, refs, {0});
  REQUIRE(out.fallback_used);
  REQUIRE(out.predicted_task == 1);
}

TEST_CASE("end_of_task: populates memory, per-task finals, monotone rank") {
  const auto stream = data::generate_class_incremental(stream_cfg(3, 101));
  const auto plan = data::make_partition_plan(stream, 3, 0.5, 102);
  TrainingConfig cfg = small_training_cfg(3, 103);
  const ModelSpec spec = small_spec(3);

  ModelParams global = nn::init_params(spec, 104);
  subspace::ProjectionMemory memory;
  fedcl::ReferenceStore refs(3);
  subspace::CostLedger ledger(3);

  std::vector<Index> prev_ranks;
  for (std::size_t task = 0; task < 3; ++task) {
    global = nn::expand_head(std::move(global), 3, 105 + task);
    auto eot = fedcl::end_of_task(global, stream.tasks[task],
                                  plan.assignments[task], std::move(memory),
                                  std::move(refs), std::move(ledger), cfg,
                                  task);
    memory = std::move(eot.memory);
    refs = std::move(eot.refs);
    ledger = std::move(eot.ledger);

    REQUIRE(memory.per_task_final.size() == task + 1);
    REQUIRE(memory.merged.size() == 3);
    std::vector<Index> ranks;
    for (const auto& b : memory.merged) {
      if (task == 0) REQUIRE(b.rank() > 0);  // variance exists at task 1
      ranks.push_back(b.rank());
    }
    if (!prev_ranks.empty())
      for (std::size_t l = 0; l < ranks.size(); ++l)
        REQUIRE(ranks[l] >= prev_ranks[l]);
    prev_ranks = ranks;
    REQUIRE(ledger.per_task_uploaded_basis_floats[task] > 0);
  }
}

TEST_CASE("run_experiment: single client equals a centralized training loop") {
  const auto stream = data::generate_class_incremental(stream_cfg(2, 201));
  const auto plan = data::make_partition_plan(stream, 1, std::nullopt, 202);
  TrainingConfig cfg = small_training_cfg(1, 203);
  cfg.local_epochs = 2;
  const ModelSpec spec = small_spec(2);

  auto result = fedcl::run_experiment(stream, plan, spec, cfg,
                                      {EvalMode::task_aware});

  // centralized reference loop: same schedule, no federation
  ModelParams params =
      nn::init_params(spec, rng::derive_key(cfg.seed, {0x696e6974ULL}));
  subspace::ProjectionMemory memory;
  fedcl::ReferenceStore refs(1);
  subspace::CostLedger ledger(2);
  for (std::size_t task = 0; task < 2; ++task) {
    params = nn::expand_head(std::move(params), 3,
                             rng::derive_key(cfg.seed, {0x68656164ULL, task}));
    for (std::size_t round = 1; round <= cfg.global_rounds_per_task; ++round) {
      auto local = fedcl::client_local_train(
          params, stream.tasks[task], plan.assignments[task][0], memory, cfg,
          task, static_cast<Index>(task), round, 0);
      params = fedcl::server_aggregate({local->params}, {1.0});
    }
    auto eot = fedcl::end_of_task(params, stream.tasks[task],
                                  plan.assignments[task], std::move(memory),
                                  std::move(refs), std::move(ledger), cfg,
                                  task);
    memory = std::move(eot.memory);
    refs = std::move(eot.refs);
    ledger = std::move(eot.ledger);
  }
  REQUIRE(params_equal(result.params, params));
}

TEST_CASE("run_experiment: deterministic across repeats and thread counts") {
  const auto stream = data::generate_class_incremental(stream_cfg(2, 301));
  const auto plan = data::make_partition_plan(stream, 3, 0.5, 302);
  TrainingConfig cfg = small_training_cfg(3, 303);
  const ModelSpec spec = small_spec(2);
  const std::vector<EvalMode> modes = {EvalMode::task_aware,
                                       EvalMode::agnostic_no_tip,
                                       EvalMode::agnostic_tip};

  auto a = fedcl::run_experiment(stream, plan, spec, cfg, modes);
  auto b = fedcl::run_experiment(stream, plan, spec, cfg, modes);
  REQUIRE(params_equal(a.params, b.params));
  REQUIRE(fedcl::params_checksum(a.params) == fedcl::params_checksum(b.params));
  for (std::size_t m = 0; m < a.acc.size(); ++m)
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t i = t; i < 2; ++i)
        REQUIRE(a.acc[m].get(t, i) == b.acc[m].get(t, i));
  REQUIRE(a.rounds.size() == b.rounds.size());
  for (std::size_t r = 0; r < a.rounds.size(); ++r)
    REQUIRE(a.rounds[r].params_checksum == b.rounds[r].params_checksum);
}

TEST_CASE("run_experiment: projection-disabled, tip-disabled run is plain federated averaging") {
  const auto stream = data::generate_class_incremental(stream_cfg(2, 401));
  const auto plan = data::make_partition_plan(stream, 3, 0.5, 402);
  const ModelSpec spec = small_spec(2);

  TrainingConfig fedavg = small_training_cfg(3, 403);
  fedavg.projection_enabled = false;
  fedavg.tip_enabled = false;

  TrainingConfig protip = fedavg;  // same seed, same flags

  auto a = fedcl::run_experiment(stream, plan, spec, fedavg,
                                 {EvalMode::task_aware,
                                  EvalMode::agnostic_no_tip});
  auto b = fedcl::run_experiment(stream, plan, spec, protip,
                                 {EvalMode::task_aware,
                                  EvalMode::agnostic_no_tip});
  REQUIRE(params_equal(a.params, b.params));
  REQUIRE(a.ledger.per_task_uploaded_basis_floats ==
          b.ledger.per_task_uploaded_basis_floats);

  // and the first task of a projected run is bit-identical to fedavg
  TrainingConfig projected = small_training_cfg(3, 403);
  auto c = fedcl::run_experiment(stream, plan, spec, projected,
                                 {EvalMode::task_aware});
  const std::size_t rounds_per_task = projected.global_rounds_per_task;
  for (std::size_t r = 0; r < rounds_per_task; ++r)
    REQUIRE(a.rounds[r].params_checksum == c.rounds[r].params_checksum);
}

TEST_CASE("run_experiment: reference vectors are zero-padded for later tasks") {
  const auto stream = data::generate_class_incremental(stream_cfg(3, 501));
  const auto plan = data::make_partition_plan(stream, 2, 0.5, 502);
  TrainingConfig cfg = small_training_cfg(2, 503);
  const ModelSpec spec = small_spec(3);

  auto result = fedcl::run_experiment(stream, plan, spec, cfg,
                                      {EvalMode::agnostic_tip});
  for (const auto& client_refs : result.refs) {
    REQUIRE(client_refs.size() == 3);
    for (const auto& ref : client_refs) {
      REQUIRE(ref.values.size() == 3);
      for (std::size_t j = ref.task_id + 1; j < 3; ++j)
        REQUIRE(ref.values[j] == 0.0);
      for (double v : ref.values) REQUIRE(v >= 0.0);
    }
  }
}
