#pragma once

// Predictor + optimization layer composition, and end-to-end training of the
// predictor with the SPO+ loss. The knapsack layer maximizes, so its rewards
// are negated internally and every formula below is written once in minimize
// form.

#include <filesystem>

#include "cfx/nn.hpp"
#include "cfx/optlayers.hpp"
#include "json.hpp"

namespace cfx {

enum class Sense { Minimize, Maximize };

inline const char* sense_name(Sense s) { return s == Sense::Minimize ? "minimize" : "maximize"; }

inline Sense sense_from_name(const std::string& s) {
  if (s == "minimize") return Sense::Minimize;
  if (s == "maximize") return Sense::Maximize;
  throw std::invalid_argument("unknown sense: " + s);
}

struct Pipeline {
  DenseNet predictor;
  OptLayer layer;
  Sense sense = Sense::Minimize;
};

inline Pipeline make_pipeline(DenseNet predictor, OptLayer layer, Sense sense) {
  require(predictor.output_dim == cost_dim(layer),
          "make_pipeline: predictor output dim must match layer cost dim");
  return Pipeline{std::move(predictor), std::move(layer), sense};
}

inline double sense_sign(Sense s) { return s == Sense::Minimize ? 1.0 : -1.0; }

// native predictor output -> minimize-form costs
inline Vec min_costs(Sense s, const Vec& theta) {
  return s == Sense::Minimize ? theta : negated(theta);
}

// theta = predictor(x); y* optimal under theta in the pipeline's sense.
// Solution objective is reported in the native sense.
inline std::pair<Vec, Solution> pipeline_decide(const Pipeline& p, const Vec& x) {
  Vec theta = forward(p.predictor, x);
  Solution sol = solve_min(p.layer, min_costs(p.sense, theta));
  sol.objective = dot(theta, sol.y);
  return {std::move(theta), std::move(sol)};
}

struct Dataset {
  Matrix contexts;             // [N x n_x]
  Matrix costs;                // [N x n_y], native sense
  std::vector<Vec> solutions;  // optional; empty when not materialized

  int size() const { return contexts.rows; }
};

// --- SPO+ -------------------------------------------------------------------

struct SpoPlusResult {
  double loss = 0.0;
  Vec subgrad;  // w.r.t. theta_hat (minimize-form)
};

// loss = -min_y (2 theta_hat - theta)^T y + 2 theta_hat^T y_true - theta^T y_true,
// subgradient 2 (y_true - y*(2 theta_hat - theta)). Inputs in minimize form.
inline SpoPlusResult spo_plus_loss(const Vec& theta_hat, const Vec& theta, const Vec& y_true,
                                   const OptLayer& layer) {
  require(theta_hat.size() == theta.size() && theta.size() == y_true.size(),
          "spo_plus_loss: size mismatch");
  Vec shifted(theta.size());
  for (size_t i = 0; i < theta.size(); ++i) shifted[i] = 2.0 * theta_hat[i] - theta[i];
  const Solution inner = solve_min(layer, shifted);

  SpoPlusResult res;
  res.loss = -inner.objective + 2.0 * dot(theta_hat, y_true) - dot(theta, y_true);
  res.subgrad.assign(theta.size(), 0.0);
  for (size_t i = 0; i < theta.size(); ++i) res.subgrad[i] = 2.0 * (y_true[i] - inner.y[i]);
  return res;
}

struct TrainConfig {
  int epochs = 70;
  double lr = 3e-4;
  int batch_size = 32;  // <= 0 means full batch
  uint64_t seed = 0;
  bool early_stop = false;  // hold out val_fraction, stop on stalled SPO+ val loss
  double val_fraction = 0.1;
  int patience = 5;
};

struct TrainTrace {
  std::vector<double> epoch_loss;  // mean train SPO+ loss
  std::vector<double> val_loss;    // empty unless early_stop
  int epochs_run = 0;
};

// Adam on the mean SPO+ subgradient over shuffled minibatches. Training data
// is converted to minimize form once; solutions are computed from costs when
// absent.
inline TrainTrace train_spo(Pipeline& p, const Dataset& data, const TrainConfig& cfg) {
  require(data.size() > 0, "train_spo: empty dataset");
  require(data.contexts.cols == p.predictor.input_dim, "train_spo: context dim mismatch");
  require(data.costs.cols == p.predictor.output_dim, "train_spo: cost dim mismatch");

  const int n = data.size();
  const double sign = sense_sign(p.sense);
  std::vector<Vec> xs(n), cs(n), ys(n);
  for (int i = 0; i < n; ++i) {
    xs[i] = data.contexts.row(i);
    cs[i] = min_costs(p.sense, data.costs.row(i));
    ys[i] = data.solutions.empty() ? solve_min(p.layer, cs[i]).y : data.solutions[i];
  }

  Rng rng(cfg.seed);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);  // fixed split for validation, re-shuffled per epoch below

  int n_val = 0;
  if (cfg.early_stop) {
    n_val = std::max(1, static_cast<int>(std::floor(cfg.val_fraction * n)));
    require(n_val < n, "train_spo: validation split leaves no training data");
  }
  std::vector<int> train_idx(order.begin(), order.end() - n_val);
  const std::vector<int> val_idx(order.end() - n_val, order.end());

  const int batch = cfg.batch_size <= 0 ? static_cast<int>(train_idx.size())
                                        : std::min<int>(cfg.batch_size, train_idx.size());
  AdamState adam = make_adam(param_count(p.predictor), cfg.lr);
  Vec params = flatten_params(p.predictor);

  TrainTrace trace;
  double best_val = std::numeric_limits<double>::infinity();
  Vec best_params = params;
  int stall = 0;

  auto mean_val_loss = [&]() {
    double s = 0.0;
    for (int i : val_idx) {
      const Vec theta_hat = min_costs(p.sense, forward(p.predictor, xs[i]));
      s += spo_plus_loss(theta_hat, cs[i], ys[i], p.layer).loss;
    }
    return s / static_cast<double>(val_idx.size());
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(train_idx);
    double epoch_loss = 0.0;
    for (size_t start = 0; start < train_idx.size(); start += batch) {
      const size_t end = std::min(start + batch, train_idx.size());
      NetGrad acc = zero_grad(p.predictor);
      for (size_t k = start; k < end; ++k) {
        const int i = train_idx[k];
        const Vec theta_native = forward(p.predictor, xs[i]);
        const Vec theta_hat = min_costs(p.sense, theta_native);
        const SpoPlusResult r = spo_plus_loss(theta_hat, cs[i], ys[i], p.layer);
        epoch_loss += r.loss;
        // d loss / d theta_native = sign * subgrad
        Vec upstream = r.subgrad;
        for (double& u : upstream) u *= sign;
        accumulate(acc, grad_params(p.predictor, xs[i], upstream),
                   1.0 / static_cast<double>(end - start));
      }
      adam_step(params, flatten(acc), adam);
      set_params(p.predictor, params);
    }
    epoch_loss /= static_cast<double>(train_idx.size());
    if (!std::isfinite(epoch_loss))
      throw std::runtime_error(strprintf("train_spo: diverged at epoch %d", epoch));
    trace.epoch_loss.push_back(epoch_loss);
    trace.epochs_run = epoch + 1;

    if (cfg.early_stop) {
      const double vl = mean_val_loss();
      trace.val_loss.push_back(vl);
      if (vl < best_val) {
        best_val = vl;
        best_params = params;
        stall = 0;
      } else if (++stall >= cfg.patience) {
        set_params(p.predictor, best_params);
        break;
      }
    }
  }
  if (cfg.early_stop && trace.epochs_run == cfg.epochs) set_params(p.predictor, best_params);
  return trace;
}

// --- bundle persistence -------------------------------------------------------

inline void save_pipeline(const Pipeline& p, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_net(p.predictor, dir + "/predictor.net");
  save_layer(p.layer, dir + "/layer.txt");
  nlohmann::json manifest{{"kind", "pipeline"},
                          {"sense", sense_name(p.sense)},
                          {"predictor", "predictor.net"},
                          {"layer", "layer.txt"}};
  std::ofstream f(dir + "/manifest.json");
  if (!f) throw std::runtime_error("save_pipeline: cannot write manifest in " + dir);
  f << manifest.dump(2) << '\n';
}

inline Pipeline load_pipeline(const std::string& dir) {
  std::ifstream f(dir + "/manifest.json");
  if (!f) throw std::runtime_error("load_pipeline: cannot open manifest in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(f);
  if (manifest.at("kind").get<std::string>() != "pipeline")
    throw std::runtime_error("load_pipeline: manifest kind is not 'pipeline'");
  DenseNet predictor = load_net(dir + "/" + manifest.at("predictor").get<std::string>());
  OptLayer layer = load_layer(dir + "/" + manifest.at("layer").get<std::string>());
  return make_pipeline(std::move(predictor), std::move(layer),
                       sense_from_name(manifest.at("sense").get<std::string>()));
}

}  // namespace cfx
