#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "cfx/metrics.hpp"
#include "cfx/pipeline.hpp"

using namespace cfx;

namespace {

DenseNet identity_predictor(int n) {
  DenseNet net;
  net.input_dim = net.output_dim = n;
  DenseLayer layer;
  layer.w = Matrix(n, n);
  for (int i = 0; i < n; ++i) layer.w(i, i) = 1.0;
  layer.b.assign(n, 0.0);
  net.layers.push_back(layer);
  return net;
}

Dataset small_grid_dataset(int n_samples, int n_x, int grid_n, uint64_t seed, GenSpec* out_spec) {
  GenSpec spec;
  spec.n_x = n_x;
  spec.layer = make_grid(grid_n);
  spec.n_samples = n_samples;
  spec.seed = seed;
  Dataset data = gen_dataset(spec);
  if (out_spec) *out_spec = spec;
  return data;
}

}  // namespace

TEST_CASE("pipeline_decide: identity predictor on unit-cost 2x2 grid") {
  const Pipeline p =
      make_pipeline(identity_predictor(4), make_grid(2), Sense::Minimize);
  const auto [theta, sol] = pipeline_decide(p, Vec(4, 1.0));
  CHECK(sol.objective == 2.0);
  CHECK(theta == Vec(4, 1.0));
}

TEST_CASE("pipeline_decide: zero-weight predictor gives the same decision everywhere") {
  Rng rng(3);
  DenseNet net = make_net({6, 12}, {Activation::Identity}, rng);
  for (double& w : net.layers[0].w.data) w = 0.0;
  for (double& b : net.layers[0].b) b = rng.uniform(0.1, 2.0);
  const Pipeline p = make_pipeline(std::move(net), make_grid(3), Sense::Minimize);
  const Vec y_ref = pipeline_decide(p, rng.normal_vec(6)).second.y;
  for (int rep = 0; rep < 5; ++rep)
    CHECK(pipeline_decide(p, rng.normal_vec(6)).second.y == y_ref);
}

TEST_CASE("pipeline_decide: matches enumeration oracle under predicted costs") {
  Rng rng(17);
  const Pipeline p = make_pipeline(make_net({5, 12}, {Activation::Identity}, rng),
                                   make_grid(3), Sense::Minimize);
  const std::vector<Vec> paths = enumerate_solutions(p.layer);
  for (int rep = 0; rep < 20; ++rep) {
    const Vec x = rng.normal_vec(5);
    const auto [theta, sol] = pipeline_decide(p, x);
    double best = std::numeric_limits<double>::infinity();
    for (const Vec& y : paths) best = std::min(best, dot(theta, y));
    CHECK(sol.objective == best);
  }
}

TEST_CASE("pipeline_decide: decision invariant under positive cost scaling") {
  Rng rng(23);
  DenseNet net = make_net({5, 12}, {Activation::Identity}, rng);
  DenseNet scaled = net;
  for (double& w : scaled.layers[0].w.data) w *= 37.5;
  for (double& b : scaled.layers[0].b) b *= 37.5;
  const Pipeline p1 = make_pipeline(std::move(net), make_grid(3), Sense::Minimize);
  const Pipeline p2 = make_pipeline(std::move(scaled), make_grid(3), Sense::Minimize);
  for (int rep = 0; rep < 10; ++rep) {
    const Vec x = rng.normal_vec(5);
    CHECK(pipeline_decide(p1, x).second.y == pipeline_decide(p2, x).second.y);
  }
}

TEST_CASE("make_pipeline: rejects mismatched dims") {
  Rng rng(2);
  CHECK_THROWS_AS(make_pipeline(make_net({5, 10}, {Activation::Identity}, rng), make_grid(3),
                                Sense::Minimize),
                  std::invalid_argument);
}

TEST_CASE("spo_plus_loss: zero at a perfect prediction") {
  Rng rng(5);
  const OptLayer layer = make_grid(3);
  Vec theta(cost_dim(layer));
  for (double& t : theta) t = rng.uniform(0.5, 3.0);
  const Vec y_true = solve_min(layer, theta).y;
  const SpoPlusResult r = spo_plus_loss(theta, theta, y_true, layer);
  CHECK(r.loss == Catch::Approx(0.0).margin(1e-12));
  CHECK(r.subgrad == Vec(theta.size(), 0.0));
}

TEST_CASE("spo_plus_loss: upper-bounds the SPO regret, checked by enumeration") {
  Rng rng(29);
  const OptLayer layer = make_grid(3);
  const std::vector<Vec> paths = enumerate_solutions(layer);
  for (int rep = 0; rep < 50; ++rep) {
    Vec theta(cost_dim(layer)), theta_hat(cost_dim(layer));
    for (double& t : theta) t = rng.uniform(0.5, 3.0);
    for (double& t : theta_hat) t = rng.normal();
    const Vec y_true = solve_min(layer, theta).y;
    const double loss = spo_plus_loss(theta_hat, theta, y_true, layer).loss;

    const Vec y_dec = solve_min(layer, theta_hat).y;
    double opt = std::numeric_limits<double>::infinity();
    for (const Vec& y : paths) opt = std::min(opt, dot(theta, y));
    const double regret = dot(theta, y_dec) - opt;
    CHECK(loss >= regret - 1e-9);
    CHECK(loss >= -1e-9);
  }
}

TEST_CASE("spo_plus_loss: 2*theta_hat - theta = theta reduces the inner term") {
  Rng rng(31);
  const OptLayer layer = make_grid(3);
  Vec theta(cost_dim(layer));
  for (double& t : theta) t = rng.uniform(0.5, 3.0);
  const Vec y_true = solve_min(layer, theta).y;
  // theta_hat = theta: inner argmin term equals min_y theta^T y
  const SpoPlusResult r = spo_plus_loss(theta, theta, y_true, layer);
  const double inner = -r.loss + 2.0 * dot(theta, y_true) - dot(theta, y_true);
  CHECK(inner == Catch::Approx(solve_min(layer, theta).objective).margin(1e-12));
}

TEST_CASE("train_spo: zero epochs leaves parameters unchanged") {
  GenSpec spec;
  Dataset data = small_grid_dataset(50, 5, 3, 7, &spec);
  Rng rng(1);
  Pipeline p = make_pipeline(make_net({5, 12}, {Activation::Identity}, rng), spec.layer,
                             Sense::Minimize);
  const Vec before = flatten_params(p.predictor);
  TrainConfig cfg;
  cfg.epochs = 0;
  train_spo(p, data, cfg);
  CHECK(flatten_params(p.predictor) == before);
}

TEST_CASE("train_spo: deterministic loss trace for a fixed seed") {
  GenSpec spec;
  Dataset data = small_grid_dataset(80, 5, 3, 11, &spec);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.lr = 1e-3;
  cfg.seed = 42;

  auto run = [&]() {
    Rng rng(1);
    Pipeline p = make_pipeline(make_net({5, 12}, {Activation::Identity}, rng), spec.layer,
                               Sense::Minimize);
    return train_spo(p, data, cfg);
  };
  const TrainTrace a = run();
  const TrainTrace b = run();
  CHECK(a.epoch_loss == b.epoch_loss);
}

TEST_CASE("train_spo: beats the untrained predictor on held-out regret") {
  GenSpec spec;
  Dataset data = small_grid_dataset(600, 8, 4, 2027, &spec);
  Rng rng(13);
  Pipeline p = make_pipeline(make_net({8, 24}, {Activation::Identity}, rng), spec.layer,
                             Sense::Minimize);

  auto mean_regret = [&]() {
    double s = 0.0;
    for (int i = 400; i < 600; ++i) {
      const Vec y = pipeline_decide(p, data.contexts.row(i)).second.y;
      s += relative_regret(y, data.costs.row(i), p.layer);
    }
    return s / 200.0;
  };
  const double before = mean_regret();

  Dataset train;
  train.contexts = Matrix(400, 8);
  train.costs = Matrix(400, 24);
  for (int i = 0; i < 400; ++i) {
    const Vec x = data.contexts.row(i);
    const Vec c = data.costs.row(i);
    std::copy(x.begin(), x.end(), &train.contexts(i, 0));
    std::copy(c.begin(), c.end(), &train.costs(i, 0));
    train.solutions.push_back(data.solutions[i]);
  }
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.lr = 1e-3;
  cfg.seed = 4;
  train_spo(p, train, cfg);
  CHECK(mean_regret() < before);
}

TEST_CASE("train_spo: early stopping keeps the best validation parameters") {
  GenSpec spec;
  Dataset data = small_grid_dataset(200, 5, 3, 5, &spec);
  Rng rng(8);
  Pipeline p = make_pipeline(
      make_net({5, 5, 12}, {Activation::Relu, Activation::Identity}, rng), spec.layer,
      Sense::Minimize);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.lr = 1e-3;
  cfg.seed = 3;
  cfg.early_stop = true;
  cfg.patience = 3;
  const TrainTrace trace = train_spo(p, data, cfg);
  CHECK(trace.val_loss.size() == static_cast<size_t>(trace.epochs_run));
}

TEST_CASE("train_spo: maximize-sense knapsack training runs and improves") {
  Rng lrng(6);
  GenSpec spec;
  spec.n_x = 5;
  spec.layer = default_knapsack(10, 2, lrng);
  spec.n_samples = 300;
  spec.seed = 21;
  Dataset data = gen_dataset(spec);

  Rng rng(10);
  Pipeline p = make_pipeline(make_net({5, 10}, {Activation::Identity}, rng), spec.layer,
                             Sense::Maximize);
  auto mean_regret = [&]() {
    double s = 0.0;
    for (int i = 200; i < 300; ++i) {
      const Vec y = pipeline_decide(p, data.contexts.row(i)).second.y;
      s += relative_regret(y, negated(data.costs.row(i)), p.layer);
    }
    return s / 100.0;
  };
  const double before = mean_regret();
  Dataset train;
  train.contexts = Matrix(200, 5);
  train.costs = Matrix(200, 10);
  for (int i = 0; i < 200; ++i) {
    const Vec x = data.contexts.row(i);
    const Vec c = data.costs.row(i);
    std::copy(x.begin(), x.end(), &train.contexts(i, 0));
    std::copy(c.begin(), c.end(), &train.costs(i, 0));
    train.solutions.push_back(data.solutions[i]);
  }
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.lr = 1e-3;
  cfg.seed = 12;
  train_spo(p, train, cfg);
  CHECK(mean_regret() < before);
}

TEST_CASE("pipeline bundle round-trips through a directory") {
  namespace fs = std::filesystem;
  Rng rng(14);
  const Pipeline p = make_pipeline(make_net({5, 12}, {Activation::Identity}, rng),
                                   make_grid(3), Sense::Minimize);
  const std::string dir = "test_pipeline_bundle";
  save_pipeline(p, dir);
  const Pipeline q = load_pipeline(dir);
  CHECK(flatten_params(q.predictor) == flatten_params(p.predictor));
  CHECK(q.sense == Sense::Minimize);
  const Vec x = rng.normal_vec(5);
  CHECK(pipeline_decide(q, x).second.y == pipeline_decide(p, x).second.y);
  fs::remove_all(dir);
}
