#pragma once

// Synthetic data generation, solution-quality metrics, and the batch
// explanation runner with CSV reporting.
//
// The generator draws contexts x ~ N(0, I) and produces costs
//   theta_j = [ (1/3.5^4) ((B x)_j / sqrt(n_x) + 3)^4 + 1 ] * eps_j,
// eps_j ~ U(0.5, 1.5), with B a fixed 0/1 matrix sampled Bernoulli(0.5) once
// per dataset. Costs are therefore always >= 0.5.

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "cfx/explain.hpp"
#include "cfx/metrics_io.hpp"
#include "cfx/pipeline.hpp"
#include "cfx/vae.hpp"

namespace cfx {

struct GenSpec {
  int n_x = 10;
  OptLayer layer;
  int n_samples = 2000;
  uint64_t seed = 0;
  double noise_low = 0.5;
  double noise_high = 1.5;
  Matrix b;  // [n_y x n_x], 0/1; sampled when empty

  void validate() const {
    require(n_x >= 1, "GenSpec: n_x must be >= 1");
    require(n_samples >= 1, "GenSpec: n_samples must be >= 1");
    require(noise_low > 0.0 && noise_low <= noise_high, "GenSpec: bad noise bounds");
  }
};

inline Matrix sample_b_matrix(int n_y, int n_x, Rng& rng) {
  Matrix b(n_y, n_x);
  for (double& v : b.data) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return b;
}

// one cost vector for context x; noise drawn from rng
inline Vec gen_costs(const GenSpec& spec, const Vec& x, Rng& rng) {
  spec.validate();
  require(static_cast<int>(x.size()) == spec.n_x, "gen_costs: context dim mismatch");
  require(spec.b.rows == cost_dim(spec.layer) && spec.b.cols == spec.n_x,
          "gen_costs: B matrix not sampled or wrong shape");
  const int n_y = spec.b.rows;
  const double inv_sqrt_nx = 1.0 / std::sqrt(static_cast<double>(spec.n_x));
  const double scale = 1.0 / (3.5 * 3.5 * 3.5 * 3.5);
  Vec theta(n_y);
  for (int j = 0; j < n_y; ++j) {
    double bx = 0.0;
    for (int i = 0; i < spec.n_x; ++i) bx += spec.b(j, i) * x[i];
    const double base = inv_sqrt_nx * bx + 3.0;
    const double quartic = base * base * base * base;
    theta[j] = (scale * quartic + 1.0) * rng.uniform(spec.noise_low, spec.noise_high);
  }
  return theta;
}

// Full dataset: contexts, costs, and exact solutions (native sense of the
// layer: grid minimizes costs, knapsack maximizes rewards). Samples B when
// the spec does not carry one.
inline Dataset gen_dataset(GenSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const int n_y = cost_dim(spec.layer);
  if (spec.b.rows == 0) spec.b = sample_b_matrix(n_y, spec.n_x, rng);

  const bool maximize = std::holds_alternative<KnapsackInstance>(spec.layer);
  Dataset data;
  data.contexts = Matrix(spec.n_samples, spec.n_x);
  data.costs = Matrix(spec.n_samples, n_y);
  data.solutions.reserve(spec.n_samples);
  for (int i = 0; i < spec.n_samples; ++i) {
    Vec x = rng.normal_vec(spec.n_x);
    Vec theta = gen_costs(spec, x, rng);
    const Vec c = maximize ? negated(theta) : theta;
    data.solutions.push_back(solve_min(spec.layer, c).y);
    std::copy(x.begin(), x.end(), &data.contexts(i, 0));
    std::copy(theta.begin(), theta.end(), &data.costs(i, 0));
  }
  return data;
}

// default knapsack family: integer weights uniform in {3,...,8}, d
// dimensions, capacity = half the total weight per dimension
inline KnapsackInstance default_knapsack(int m, int d, Rng& rng) {
  Matrix w(d, m);
  for (double& v : w.data) v = static_cast<double>(3 + rng.uniform_int(6));
  Vec caps(d, 0.0);
  for (int k = 0; k < d; ++k) {
    double total = 0.0;
    for (int j = 0; j < m; ++j) total += w(k, j);
    caps[k] = 0.5 * total;
  }
  return make_knapsack(std::move(w), std::move(caps));
}

// --- metrics ---------------------------------------------------------------

// (theta^T y - theta^T y*) / |theta^T y*| for minimize-form costs theta
inline double relative_regret(const Vec& y, const Vec& theta, const OptLayer& layer) {
  const Solution opt = solve_min(layer, theta);
  const double denom = opt.objective;
  if (std::abs(denom) < 1e-12)
    throw std::runtime_error("relative_regret: optimal value is zero, metric undefined");
  return (dot(theta, y) - denom) / std::abs(denom);
}

// ||x - decode(encode_mean(x))||^2
inline double reconstruction_error(const Vae& v, const Vec& x) {
  return sq_dist(x, decode(v, encode_mean(v, x)));
}

// relative regret of the decision at x when re-costed through the VAE
// reconstruction of x
inline double decision_focused_recon(const Vae& v, const Pipeline& p, const Vec& x) {
  const Vec c = min_costs(p.sense, forward(p.predictor, x));
  const Vec y = solve_min(p.layer, c).y;
  const Vec xt = decode(v, encode_mean(v, x));
  const Vec ct = min_costs(p.sense, forward(p.predictor, xt));
  return relative_regret(y, ct, p.layer);
}

struct MetricReport {
  std::string name;
  int count = 0;
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double q25 = 0.0;
  double median = 0.0;
  double q75 = 0.0;
  double max = 0.0;
};

inline MetricReport aggregate_metric(const std::string& name, Vec values) {
  MetricReport r;
  r.name = name;
  r.count = static_cast<int>(values.size());
  if (values.empty()) return r;
  double s = 0.0;
  for (double v : values) s += v;
  r.mean = s / r.count;
  double ss = 0.0;
  for (double v : values) ss += (v - r.mean) * (v - r.mean);
  r.stddev = r.count > 1 ? std::sqrt(ss / (r.count - 1)) : 0.0;
  std::sort(values.begin(), values.end());
  auto quantile = [&](double q) {
    const double pos = q * (values.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - lo;
    return values[lo] * (1.0 - frac) + values[hi] * frac;
  };
  r.min = values.front();
  r.q25 = quantile(0.25);
  r.median = quantile(0.5);
  r.q75 = quantile(0.75);
  r.max = values.back();
  return r;
}

// --- batch explanation runner -------------------------------------------------

struct TaskRecord {
  int task_id = 0;
  TaskKind kind = TaskKind::Relative;
  double eps = 0.0;
  bool feasible = false;
  bool valid = false;  // criterion re-verified with the exact oracle
  int iterations = 0;
  double loss_best = 0.0;
  double sq_dist_x0 = 0.0;
  bool errored = false;
  std::string error;
};

struct BatchSpec {
  TaskKind kind = TaskKind::Relative;
  double eps = 1.0;
  int n_tasks = 100;
  uint64_t seed = 0;
  bool latent = false;  // feature-space search by default
  MdmmConfig mdmm;
};

// Samples explanation tasks from dataset rows: x0 from a random row; for
// relative/absolute tasks, y_alt is the stored decision of a second random
// row, resampled until it differs from the decision at x0. Task failures are
// recorded per row and never abort the batch.
inline std::vector<TaskRecord> batch_explain(const Pipeline& p, const Vae* vae,
                                             const Dataset& data, const BatchSpec& spec) {
  require(data.size() >= 2, "batch_explain: need at least two rows");
  spec.mdmm.validate();
  if (spec.latent) require(vae != nullptr, "batch_explain: latent search needs a VAE");

  Rng rng(spec.seed);
  std::vector<TaskRecord> records;
  records.reserve(spec.n_tasks);
  for (int t = 0; t < spec.n_tasks; ++t) {
    TaskRecord rec;
    rec.task_id = t;
    rec.kind = spec.kind;
    rec.eps = spec.kind == TaskKind::Epsilon ? spec.eps : 0.0;
    try {
      const int i = rng.uniform_int(data.size());
      const Vec x0 = data.contexts.row(i);
      ExplanationTask task;
      if (spec.kind == TaskKind::Epsilon) {
        task = make_epsilon_task(p, x0, spec.eps);
      } else {
        const Vec y0 = pipeline_decide(p, x0).second.y;
        int j = rng.uniform_int(data.size());
        int tries = 0;
        while (data.solutions[j] == y0 && tries++ < 1000) j = rng.uniform_int(data.size());
        if (data.solutions[j] == y0)
          throw std::runtime_error("batch_explain: could not sample a distinct y_alt");
        task = make_task(p, spec.kind, x0, data.solutions[j]);
      }
      const ExplanationResult res = spec.latent ? cf_opt_latent(task, p, *vae, spec.mdmm)
                                                : cf_opt_feature(task, p, spec.mdmm);
      rec.feasible = res.feasible;
      rec.iterations = res.iterations_run;
      rec.loss_best = res.loss_best;
      if (res.x_best) {
        rec.valid = criterion_satisfied(task, p, *res.x_best);
        rec.sq_dist_x0 = sq_dist(task.x0, *res.x_best);
      }
    } catch (const std::exception& ex) {
      rec.errored = true;
      rec.error = ex.what();
    }
    records.push_back(std::move(rec));
  }
  return records;
}

inline void write_task_records_csv(const std::string& path,
                                   const std::vector<TaskRecord>& records) {
  CsvWriter csv(path);
  csv.header({"task_id", "kind", "eps", "feasible", "valid", "iterations", "loss_best",
              "sq_dist_x0", "error"});
  for (const TaskRecord& r : records) {
    csv.field(r.task_id);
    csv.field(task_kind_name(r.kind));
    csv.field(r.eps);
    csv.field(r.feasible ? 1 : 0);
    csv.field(r.valid ? 1 : 0);
    csv.field(r.iterations);
    csv.field(r.loss_best);
    csv.field(r.sq_dist_x0);
    csv.field(r.errored ? r.error : "");
    csv.end_row();
  }
}

// --- dataset persistence ---------------------------------------------------------

inline void save_dataset(const Dataset& data, const GenSpec& spec, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_matrix_csv(dir + "/contexts.csv", data.contexts, "x");
  write_matrix_csv(dir + "/costs.csv", data.costs, "theta");
  Matrix sols(static_cast<int>(data.solutions.size()), data.costs.cols);
  for (int i = 0; i < sols.rows; ++i)
    std::copy(data.solutions[i].begin(), data.solutions[i].end(), &sols(i, 0));
  write_matrix_csv(dir + "/solutions.csv", sols, "y");
  write_matrix_csv(dir + "/b_matrix.csv", spec.b, "b");
  save_layer(spec.layer, dir + "/layer.txt");

  nlohmann::json manifest{{"kind", "dataset"},
                          {"n_x", spec.n_x},
                          {"n_samples", spec.n_samples},
                          {"seed", spec.seed},
                          {"noise_low", spec.noise_low},
                          {"noise_high", spec.noise_high},
                          {"layer", "layer.txt"},
                          {"files",
                           {{"contexts", "contexts.csv"},
                            {"costs", "costs.csv"},
                            {"solutions", "solutions.csv"},
                            {"b_matrix", "b_matrix.csv"}}}};
  std::ofstream f(dir + "/manifest.json");
  if (!f) throw std::runtime_error("save_dataset: cannot write manifest in " + dir);
  f << manifest.dump(2) << '\n';
}

struct LoadedDataset {
  Dataset data;
  GenSpec spec;
};

inline LoadedDataset load_dataset(const std::string& dir) {
  std::ifstream f(dir + "/manifest.json");
  if (!f) throw std::runtime_error("load_dataset: cannot open manifest in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(f);
  if (manifest.at("kind").get<std::string>() != "dataset")
    throw std::runtime_error("load_dataset: manifest kind is not 'dataset'");

  LoadedDataset out;
  out.spec.n_x = manifest.at("n_x").get<int>();
  out.spec.n_samples = manifest.at("n_samples").get<int>();
  out.spec.seed = manifest.at("seed").get<uint64_t>();
  out.spec.noise_low = manifest.at("noise_low").get<double>();
  out.spec.noise_high = manifest.at("noise_high").get<double>();
  out.spec.layer = load_layer(dir + "/" + manifest.at("layer").get<std::string>());

  const auto& files = manifest.at("files");
  out.data.contexts = read_matrix_csv(dir + "/" + files.at("contexts").get<std::string>());
  out.data.costs = read_matrix_csv(dir + "/" + files.at("costs").get<std::string>());
  const Matrix sols = read_matrix_csv(dir + "/" + files.at("solutions").get<std::string>());
  for (int i = 0; i < sols.rows; ++i) out.data.solutions.push_back(sols.row(i));
  out.spec.b = read_matrix_csv(dir + "/" + files.at("b_matrix").get<std::string>());

  require(out.data.contexts.rows == out.data.costs.rows &&
              out.data.costs.rows == static_cast<int>(out.data.solutions.size()),
          "load_dataset: row counts disagree");
  return out;
}

}  // namespace cfx
