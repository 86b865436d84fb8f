#pragma once

// Counterfactual-explanation solver. An explanation criterion h certifies a
// valid explanation when h(x) <= 0:
//   relative:  c(x)^T (y_alt - y0)
//   absolute:  c(x)^T (y_alt - y*(x))
//   epsilon:   c(x)^T ((1+eps) y*(x) - y0)   [(1-eps) when the optimum is
//              negative]
// with c(x) the minimize-form predicted costs. The constrained problem
// min l(x0, x) + Omega(z) s.t. h = 0 is relaxed into the augmented
// Lagrangian E = l + Omega + lambda h + rho/2 h^2 and solved by simultaneous
// primal descent / dual ascent, either in the latent space of a VAE or
// directly in feature space. y*(x) is piecewise constant, so it is treated
// as a constant when differentiating h.

#include <optional>

#include "cfx/pipeline.hpp"
#include "cfx/plausibility.hpp"
#include "cfx/vae.hpp"

namespace cfx {

enum class TaskKind { Relative, Absolute, Epsilon };

inline const char* task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::Relative: return "relative";
    case TaskKind::Absolute: return "absolute";
    case TaskKind::Epsilon: return "epsilon";
  }
  return "?";
}

inline TaskKind task_kind_from_name(const std::string& s) {
  if (s == "relative") return TaskKind::Relative;
  if (s == "absolute") return TaskKind::Absolute;
  if (s == "epsilon") return TaskKind::Epsilon;
  throw std::invalid_argument("unknown task kind: " + s);
}

struct ExplanationTask {
  TaskKind kind = TaskKind::Relative;
  Vec x0;
  Vec y_alt;        // relative/absolute only
  double eps = 0.0;  // epsilon only
  Vec y0;           // decision at x0, computed once at construction
};

inline ExplanationTask make_task(const Pipeline& p, TaskKind kind, const Vec& x0,
                                 const Vec& y_alt) {
  require(kind != TaskKind::Epsilon, "make_task: use make_epsilon_task for epsilon tasks");
  require(static_cast<int>(x0.size()) == p.predictor.input_dim, "make_task: x0 dim mismatch");
  require(static_cast<int>(y_alt.size()) == cost_dim(p.layer), "make_task: y_alt dim mismatch");
  require(is_feasible(p.layer, y_alt), "make_task: y_alt is not feasible for the layer");
  ExplanationTask task;
  task.kind = kind;
  task.x0 = x0;
  task.y_alt = y_alt;
  task.y0 = pipeline_decide(p, x0).second.y;
  require(task.y0 != task.y_alt, "make_task: y_alt equals the current decision (trivial task)");
  return task;
}

inline ExplanationTask make_epsilon_task(const Pipeline& p, const Vec& x0, double eps) {
  require(static_cast<int>(x0.size()) == p.predictor.input_dim,
          "make_epsilon_task: x0 dim mismatch");
  require(eps > 0.0, "make_epsilon_task: eps must be > 0");
  ExplanationTask task;
  task.kind = TaskKind::Epsilon;
  task.x0 = x0;
  task.eps = eps;
  task.y0 = pipeline_decide(p, x0).second.y;
  return task;
}

// h and the direction v such that h = c^T v; v is the constant vector
// multiplying the costs, reused for the gradient. Absolute and epsilon tasks
// need one layer solve, relative tasks none.
struct HEval {
  double h = 0.0;
  Vec v;  // minimize-form direction
};

inline HEval h_eval_from_costs(const ExplanationTask& task, const OptLayer& layer,
                               const Vec& c /* minimize form */) {
  HEval e;
  const size_t ny = c.size();
  e.v.assign(ny, 0.0);
  switch (task.kind) {
    case TaskKind::Relative:
      for (size_t i = 0; i < ny; ++i) e.v[i] = task.y_alt[i] - task.y0[i];
      break;
    case TaskKind::Absolute: {
      const Solution opt = solve_min(layer, c);
      for (size_t i = 0; i < ny; ++i) e.v[i] = task.y_alt[i] - opt.y[i];
      break;
    }
    case TaskKind::Epsilon: {
      const Solution opt = solve_min(layer, c);
      const double factor = opt.objective >= 0.0 ? 1.0 + task.eps : 1.0 - task.eps;
      for (size_t i = 0; i < ny; ++i) e.v[i] = factor * opt.y[i] - task.y0[i];
      break;
    }
  }
  e.h = dot(c, e.v);
  return e;
}

inline double h_value(const ExplanationTask& task, const Pipeline& p, const Vec& x) {
  const Vec c = min_costs(p.sense, forward(p.predictor, x));
  return h_eval_from_costs(task, p.layer, c).h;
}

inline Vec grad_h(const ExplanationTask& task, const Pipeline& p, const Vec& x) {
  const Vec c = min_costs(p.sense, forward(p.predictor, x));
  HEval e = h_eval_from_costs(task, p.layer, c);
  if (p.sense == Sense::Maximize)
    for (double& v : e.v) v = -v;  // c = -theta
  return vjp_input(p.predictor, x, e.v);
}

// whether x satisfies the declared criterion, re-evaluated from scratch with
// the exact layer oracle
inline bool criterion_satisfied(const ExplanationTask& task, const Pipeline& p, const Vec& x,
                                double tol = 1e-9) {
  return h_value(task, p, x) <= tol;
}

enum class Proximity { FeatureSqEuclid, LatentSqEuclid };

struct MdmmConfig {
  double gamma = 0.1;           // step size
  double rho = 1.0;             // damping
  int max_iters = 6000;         // K
  int max_non_improving = 10;   // c_max
  double update_tol = 0.9;      // u in (0, 1)
  double feas_tol = 1e-9;       // h <= feas_tol counts as satisfying the criterion
  RegularizerSpec reg;          // latent search only
  Proximity proximity = Proximity::FeatureSqEuclid;
  bool record_trace = false;

  void validate() const {
    require(gamma > 0.0, "MdmmConfig: gamma must be > 0");
    require(rho > 0.0, "MdmmConfig: rho must be > 0");
    require(max_iters >= 1, "MdmmConfig: max_iters must be >= 1");
    require(max_non_improving >= 1, "MdmmConfig: max_non_improving must be >= 1");
    require(update_tol > 0.0 && update_tol < 1.0, "MdmmConfig: update_tol must be in (0, 1)");
  }
};

struct TracePoint {
  double h = 0.0;
  double loss = 0.0;  // l + Omega at the iterate
  double lambda = 0.0;
};

struct ExplanationResult {
  std::optional<Vec> x_best;
  std::optional<Vec> z_best;  // latent search only
  double loss_best = std::numeric_limits<double>::infinity();
  bool feasible = false;
  int iterations_run = 0;
  std::vector<double> best_history;  // loss of each stored best, in order
  std::vector<TracePoint> trace;
};

struct EnergyEval {
  double e = 0.0;
  Vec grad_primal;
  double grad_lambda = 0.0;  // = h at the iterate
  double h = 0.0;
  double loss = 0.0;  // l + Omega part
};

// E(z, lambda) = l(x0, decode(z)) + Omega(z) + lambda h + rho/2 h^2 for the
// latent search; grad_primal chains through the decoder and the predictor.
inline EnergyEval energy(const Vec& z, double lambda, const ExplanationTask& task,
                         const Pipeline& p, const Vae& vae, const MdmmConfig& cfg,
                         const Vec* z0_enc = nullptr) {
  cfg.validate();
  ForwardTrace dec_trace;
  forward_traced(vae.decoder, z, &dec_trace);
  const Vec& x = dec_trace.post.back();

  const Vec theta = forward(p.predictor, x);
  const Vec c = min_costs(p.sense, theta);
  HEval he = h_eval_from_costs(task, p.layer, c);
  if (p.sense == Sense::Maximize)
    for (double& v : he.v) v = -v;

  const OmegaEval om = omega(z, cfg.reg);
  Vec z0_local;
  if (cfg.proximity == Proximity::LatentSqEuclid && z0_enc == nullptr) {
    z0_local = encode_mean(vae, task.x0);
    z0_enc = &z0_local;
  }
  const double prox = cfg.proximity == Proximity::FeatureSqEuclid ? sq_dist(task.x0, x)
                                                                  : sq_dist(*z0_enc, z);

  EnergyEval ev;
  ev.h = he.h;
  ev.loss = prox + om.value;
  ev.e = ev.loss + lambda * he.h + 0.5 * cfg.rho * he.h * he.h;
  ev.grad_lambda = he.h;

  // d E / d x, then pulled back through the decoder
  Vec dx(x.size(), 0.0);
  if (cfg.proximity == Proximity::FeatureSqEuclid)
    for (size_t i = 0; i < x.size(); ++i) dx[i] = 2.0 * (x[i] - task.x0[i]);
  const double mult = lambda + cfg.rho * he.h;
  axpy(mult, vjp_input(p.predictor, x, he.v), dx);

  ev.grad_primal = backward(vae.decoder, dec_trace, dx, nullptr);
  axpy(1.0, om.grad, ev.grad_primal);
  if (cfg.proximity == Proximity::LatentSqEuclid)
    for (size_t k = 0; k < z.size(); ++k) ev.grad_primal[k] += 2.0 * (z[k] - (*z0_enc)[k]);
  return ev;
}

// feature-space energy: primal variable is x itself, no Omega term
inline EnergyEval energy_feature(const Vec& x, double lambda, const ExplanationTask& task,
                                 const Pipeline& p, const MdmmConfig& cfg) {
  cfg.validate();
  const Vec theta = forward(p.predictor, x);
  const Vec c = min_costs(p.sense, theta);
  HEval he = h_eval_from_costs(task, p.layer, c);
  if (p.sense == Sense::Maximize)
    for (double& v : he.v) v = -v;

  EnergyEval ev;
  ev.h = he.h;
  ev.loss = sq_dist(task.x0, x);
  ev.e = ev.loss + lambda * he.h + 0.5 * cfg.rho * he.h * he.h;
  ev.grad_lambda = he.h;

  ev.grad_primal.assign(x.size(), 0.0);
  for (size_t i = 0; i < x.size(); ++i) ev.grad_primal[i] = 2.0 * (x[i] - task.x0[i]);
  const double mult = lambda + cfg.rho * he.h;
  axpy(mult, vjp_input(p.predictor, x, he.v), ev.grad_primal);
  return ev;
}

// Latent-space search. Starts from z = encode_mean(x0) (the only use of the
// encoder per task) with lambda = 0; stops after max_iters iterations or
// max_non_improving consecutive feasible iterations that fail to beat
// update_tol * best loss.
inline ExplanationResult cf_opt_latent(const ExplanationTask& task, const Pipeline& p,
                                       const Vae& vae, const MdmmConfig& cfg) {
  cfg.validate();
  require(static_cast<int>(task.x0.size()) == vae.n_x, "cf_opt_latent: x0/VAE dim mismatch");

  const Vec z0_enc = encode_mean(vae, task.x0);
  Vec z = z0_enc;
  double lambda = 0.0;
  int non_improving = 0;

  ExplanationResult res;
  for (int k = 1; k <= cfg.max_iters; ++k) {
    if (non_improving == cfg.max_non_improving) break;
    const EnergyEval ev = energy(z, lambda, task, p, vae, cfg, &z0_enc);
    res.iterations_run = k;
    if (ev.h <= cfg.feas_tol) {
      if (ev.loss < cfg.update_tol * res.loss_best) {
        res.x_best = forward(vae.decoder, z);
        res.z_best = z;
        res.loss_best = ev.loss;
        res.best_history.push_back(ev.loss);
        res.feasible = true;
        non_improving = 0;
      } else {
        ++non_improving;
      }
    }
    if (cfg.record_trace) res.trace.push_back({ev.h, ev.loss, lambda});
    axpy(-cfg.gamma, ev.grad_primal, z);
    lambda += cfg.gamma * ev.grad_lambda;
  }
  return res;
}

// Feature-space search (no VAE, no Omega); primal iterate starts at x0.
inline ExplanationResult cf_opt_feature(const ExplanationTask& task, const Pipeline& p,
                                        const MdmmConfig& cfg) {
  cfg.validate();
  Vec x = task.x0;
  double lambda = 0.0;
  int non_improving = 0;

  ExplanationResult res;
  for (int k = 1; k <= cfg.max_iters; ++k) {
    if (non_improving == cfg.max_non_improving) break;
    const EnergyEval ev = energy_feature(x, lambda, task, p, cfg);
    res.iterations_run = k;
    if (ev.h <= cfg.feas_tol) {
      if (ev.loss < cfg.update_tol * res.loss_best) {
        res.x_best = x;
        res.loss_best = ev.loss;
        res.best_history.push_back(ev.loss);
        res.feasible = true;
        non_improving = 0;
      } else {
        ++non_improving;
      }
    }
    if (cfg.record_trace) res.trace.push_back({ev.h, ev.loss, lambda});
    axpy(-cfg.gamma, ev.grad_primal, x);
    lambda += cfg.gamma * ev.grad_lambda;
  }
  return res;
}

}  // namespace cfx
