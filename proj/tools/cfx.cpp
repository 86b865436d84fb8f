// cfx: counterfactual explanations for predict-then-optimize pipelines.
//
// Subcommands: gen, train, train-vae, explain, bench, verify-region, table1.
// Every run is deterministic given --seed; data outputs carry no timestamps,
// so identical configurations produce byte-identical files.

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "cfx/explain.hpp"
#include "cfx/metrics.hpp"
#include "cfx/pipeline.hpp"
#include "cfx/plausibility.hpp"
#include "cfx/vae.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cfx;

namespace {

struct LayerFlags {
  std::string kind = "grid";
  int grid_n = 5;
  int items = 16;
  int dims = 2;

  void attach(CLI::App* cmd) {
    cmd->add_option("--layer", kind, "optimization layer: grid | knapsack")
        ->check(CLI::IsMember({"grid", "knapsack"}))
        ->capture_default_str();
    cmd->add_option("--grid-n", grid_n, "grid side length (grid layer)")->capture_default_str();
    cmd->add_option("--items", items, "item count (knapsack layer)")->capture_default_str();
    cmd->add_option("--dims", dims, "resource dimensions (knapsack layer)")
        ->capture_default_str();
  }

  OptLayer build(Rng& rng) const {
    if (kind == "grid") return make_grid(grid_n);
    return default_knapsack(items, dims, rng);
  }

  Sense sense() const { return kind == "grid" ? Sense::Minimize : Sense::Maximize; }
};

void write_manifest(const std::string& dir, const json& resolved) {
  std::ofstream f(dir + "/run_manifest.json");
  if (!f) throw std::runtime_error("cannot write run manifest in " + dir);
  f << resolved.dump(2) << '\n';
}

DenseNet make_predictor(int n_x, int n_y, int depth, Rng& rng) {
  require(depth >= 1, "predictor depth must be >= 1");
  std::vector<int> dims;
  std::vector<Activation> acts;
  dims.push_back(n_x);
  for (int l = 1; l < depth; ++l) {
    dims.push_back(n_x);
    acts.push_back(Activation::Relu);
  }
  dims.push_back(n_y);
  acts.push_back(Activation::Identity);
  return make_net(dims, acts, rng);
}

Dataset slice_dataset(const Dataset& data, int begin, int end) {
  Dataset out;
  out.contexts = Matrix(end - begin, data.contexts.cols);
  out.costs = Matrix(end - begin, data.costs.cols);
  for (int i = begin; i < end; ++i) {
    const Vec x = data.contexts.row(i);
    const Vec c = data.costs.row(i);
    std::copy(x.begin(), x.end(), &out.contexts(i - begin, 0));
    std::copy(c.begin(), c.end(), &out.costs(i - begin, 0));
    out.solutions.push_back(data.solutions[i]);
  }
  return out;
}

void write_summary_row(CsvWriter& csv, const std::string& sweep, double setting,
                       const std::string& kind, double eps,
                       const std::vector<TaskRecord>& records) {
  int feasible = 0, valid = 0, errored = 0;
  double iters = 0.0, dist = 0.0, loss = 0.0;
  int n_dist = 0;
  for (const TaskRecord& r : records) {
    feasible += r.feasible ? 1 : 0;
    valid += r.valid ? 1 : 0;
    errored += r.errored ? 1 : 0;
    iters += r.iterations;
    if (r.feasible) {
      dist += r.sq_dist_x0;
      loss += r.loss_best;
      ++n_dist;
    }
  }
  const double n = static_cast<double>(records.size());
  csv.field(sweep);
  csv.field(setting);
  csv.field(kind);
  csv.field(eps);
  csv.field(static_cast<int>(records.size()));
  csv.field(n > 0 ? feasible / n : 0.0);
  csv.field(n > 0 ? valid / n : 0.0);
  csv.field(n > 0 ? iters / n : 0.0);
  csv.field(n_dist > 0 ? dist / n_dist : 0.0);
  csv.field(n_dist > 0 ? loss / n_dist : 0.0);
  csv.field(errored);
  csv.end_row();
}

// --- gen -----------------------------------------------------------------

struct GenArgs {
  LayerFlags layer;
  int n_x = 10;
  int samples = 2000;
  uint64_t seed = 0;
  std::string out;
};

int run_gen(const GenArgs& a) {
  Rng layer_rng(a.seed ^ 0x67656e6c61796572ULL);  // layer structure stream
  GenSpec spec;
  spec.n_x = a.n_x;
  spec.n_samples = a.samples;
  spec.seed = a.seed;
  spec.layer = a.layer.build(layer_rng);

  const Dataset data = gen_dataset(spec);
  save_dataset(data, spec, a.out);
  write_manifest(a.out, json{{"command", "gen"},
                             {"layer", a.layer.kind},
                             {"grid_n", a.layer.grid_n},
                             {"items", a.layer.items},
                             {"dims", a.layer.dims},
                             {"n_x", a.n_x},
                             {"samples", a.samples},
                             {"seed", a.seed}});
  std::cout << "wrote dataset (" << data.size() << " rows) to " << a.out << "\n";
  return 0;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  int depth = 1;
  int epochs = 70;
  double lr = 3e-4;
  int batch = 32;
  int train_count = 0;  // 0: first half
  uint64_t seed = 0;
};

int run_train(const TrainArgs& a) {
  const LoadedDataset loaded = load_dataset(a.data);
  const int n = loaded.data.size();
  const int n_train = a.train_count > 0 ? std::min(a.train_count, n) : n / 2;
  require(n_train >= 1, "train: no training rows");

  Rng rng(a.seed);
  const Sense sense =
      std::holds_alternative<KnapsackInstance>(loaded.spec.layer) ? Sense::Maximize
                                                                  : Sense::Minimize;
  Pipeline p = make_pipeline(
      make_predictor(loaded.spec.n_x, cost_dim(loaded.spec.layer), a.depth, rng),
      loaded.spec.layer, sense);

  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.lr = a.lr;
  cfg.batch_size = a.batch;
  cfg.seed = rng.fork_seed();
  cfg.early_stop = a.depth > 1;  // deep predictors hold out a validation split
  const TrainTrace trace = train_spo(p, slice_dataset(loaded.data, 0, n_train), cfg);

  save_pipeline(p, a.out);
  {
    CsvWriter csv(a.out + "/loss_trace.csv");
    csv.header(trace.val_loss.empty() ? std::vector<std::string>{"epoch", "train_loss"}
                                      : std::vector<std::string>{"epoch", "train_loss",
                                                                 "val_loss"});
    for (size_t e = 0; e < trace.epoch_loss.size(); ++e) {
      csv.field(static_cast<int>(e));
      csv.field(trace.epoch_loss[e]);
      if (!trace.val_loss.empty()) csv.field(trace.val_loss[e]);
      csv.end_row();
    }
  }
  write_manifest(a.out, json{{"command", "train"},
                             {"data", a.data},
                             {"depth", a.depth},
                             {"epochs", a.epochs},
                             {"lr", a.lr},
                             {"batch", a.batch},
                             {"train_count", n_train},
                             {"seed", a.seed},
                             {"epochs_run", trace.epochs_run}});
  std::cout << "trained pipeline (" << trace.epochs_run << " epochs, final loss "
            << trace.epoch_loss.back() << ") to " << a.out << "\n";
  return 0;
}

// --- train-vae ---------------------------------------------------------------

struct TrainVaeArgs {
  std::string data;
  std::string pipeline;
  std::string out;
  double alpha = 0.0;
  int n_z = 8;
  int hidden = 32;
  int epochs = 100;
  double lr = 1e-3;
  int batch = 32;
  int train_count = 0;
  uint64_t seed = 0;
};

int run_train_vae(const TrainVaeArgs& a) {
  const LoadedDataset loaded = load_dataset(a.data);
  const int n = loaded.data.size();
  const int n_train = a.train_count > 0 ? std::min(a.train_count, n) : n / 2;

  Pipeline p;
  if (a.alpha > 0.0) {
    require(!a.pipeline.empty(), "train-vae: --pipeline required when --alpha > 0");
    p = load_pipeline(a.pipeline);
  }

  Rng rng(a.seed);
  Vae v = make_vae(loaded.spec.n_x, a.n_z, a.hidden, rng);
  VaeTrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.lr = a.lr;
  cfg.batch_size = a.batch;
  cfg.seed = rng.fork_seed();
  cfg.alpha = a.alpha;

  Matrix train(n_train, loaded.spec.n_x);
  for (int i = 0; i < n_train; ++i) {
    const Vec x = loaded.data.contexts.row(i);
    std::copy(x.begin(), x.end(), &train(i, 0));
  }
  const VaeTrace trace = train_vae(v, train, a.alpha > 0.0 ? &p.predictor : nullptr, cfg);

  save_vae(v, a.out);
  {
    CsvWriter csv(a.out + "/vae_trace.csv");
    csv.header({"epoch", "recon", "kl", "cost_recon", "elbo"});
    for (size_t e = 0; e < trace.elbo.size(); ++e) {
      csv.field(static_cast<int>(e));
      csv.field(trace.recon[e]);
      csv.field(trace.kl[e]);
      csv.field(trace.cost_recon[e]);
      csv.field(trace.elbo[e]);
      csv.end_row();
    }
  }
  write_manifest(a.out, json{{"command", "train-vae"},
                             {"data", a.data},
                             {"pipeline", a.pipeline},
                             {"alpha", a.alpha},
                             {"n_z", a.n_z},
                             {"hidden", a.hidden},
                             {"epochs", a.epochs},
                             {"lr", a.lr},
                             {"batch", a.batch},
                             {"train_count", n_train},
                             {"seed", a.seed},
                             {"epochs_run", trace.epochs_run}});
  std::cout << "trained VAE (" << trace.epochs_run << " epochs, final elbo "
            << trace.elbo.back() << ") to " << a.out << "\n";
  return 0;
}

// --- explain ------------------------------------------------------------------

struct ExplainArgs {
  std::string pipeline;
  std::string vae;
  std::string data;
  std::string context_file;
  int context_index = -1;
  int alt_index = -1;
  std::string kind = "relative";
  double eps = 1.0;
  bool latent = false;
  double gamma = 0.1;
  double rho = 1.0;
  int iters = 6000;
  int cmax = 10;
  double u = 0.9;
  std::string reg = "none";
  double beta = 0.0;
  std::string proximity = "feature";
  uint64_t seed = 0;
  std::string out;
  std::string trace_out;
};

int run_explain(const ExplainArgs& a) {
  const Pipeline p = load_pipeline(a.pipeline);

  Vec x0;
  Vec y_alt;
  if (!a.context_file.empty()) {
    const Matrix m = read_matrix_csv(a.context_file);
    require(m.rows >= 1, "explain: empty context file");
    x0 = m.row(0);
  } else {
    require(!a.data.empty() && a.context_index >= 0,
            "explain: need --context-file, or --data with --context-index");
    const LoadedDataset loaded = load_dataset(a.data);
    x0 = loaded.data.contexts.row(a.context_index);
    if (a.alt_index >= 0) y_alt = loaded.data.solutions[a.alt_index];
  }

  const TaskKind kind = task_kind_from_name(a.kind);
  ExplanationTask task;
  if (kind == TaskKind::Epsilon) {
    task = make_epsilon_task(p, x0, a.eps);
  } else {
    require(!y_alt.empty(), "explain: relative/absolute tasks need --alt-index");
    task = make_task(p, kind, x0, y_alt);
  }

  MdmmConfig cfg;
  cfg.gamma = a.gamma;
  cfg.rho = a.rho;
  cfg.max_iters = a.iters;
  cfg.max_non_improving = a.cmax;
  cfg.update_tol = a.u;
  cfg.record_trace = !a.trace_out.empty();
  cfg.proximity = a.proximity == "latent" ? Proximity::LatentSqEuclid
                                          : Proximity::FeatureSqEuclid;

  ExplanationResult res;
  Vae v;
  if (a.latent) {
    require(!a.vae.empty(), "explain: latent search needs --vae");
    v = load_vae(a.vae);
    const RegKind rk = reg_kind_from_name(a.reg);
    if (rk == RegKind::Hypersphere)
      cfg.reg = RegularizerSpec::hypersphere(a.beta, chi_mean(v.n_z));
    else if (rk == RegKind::LogLik)
      cfg.reg = RegularizerSpec::loglik(a.beta);
    res = cf_opt_latent(task, p, v, cfg);
  } else {
    res = cf_opt_feature(task, p, cfg);
  }

  json out{{"kind", a.kind},
           {"eps", kind == TaskKind::Epsilon ? a.eps : 0.0},
           {"latent", a.latent},
           {"feasible", res.feasible},
           {"iterations_run", res.iterations_run},
           {"loss_best", res.loss_best},
           {"config",
            {{"gamma", a.gamma},
             {"rho", a.rho},
             {"max_iters", a.iters},
             {"max_non_improving", a.cmax},
             {"update_tol", a.u},
             {"reg", a.reg},
             {"beta", a.beta},
             {"proximity", a.proximity},
             {"seed", a.seed}}}};
  if (res.x_best) {
    out["x_best"] = *res.x_best;
    out["sq_dist_x0"] = sq_dist(task.x0, *res.x_best);
    out["criterion_recheck"] = criterion_satisfied(task, p, *res.x_best);
  }
  if (res.z_best) out["z_best"] = *res.z_best;

  if (a.out.empty()) {
    std::cout << out.dump(2) << "\n";
  } else {
    std::ofstream f(a.out);
    if (!f) throw std::runtime_error("explain: cannot write " + a.out);
    f << out.dump(2) << '\n';
    std::cout << (res.feasible ? "feasible" : "infeasible") << " explanation, loss "
              << res.loss_best << ", written to " << a.out << "\n";
  }
  if (!a.trace_out.empty()) {
    CsvWriter csv(a.trace_out);
    csv.header({"iter", "h", "loss", "lambda"});
    for (size_t i = 0; i < res.trace.size(); ++i) {
      csv.field(static_cast<int>(i + 1));
      csv.field(res.trace[i].h);
      csv.field(res.trace[i].loss);
      csv.field(res.trace[i].lambda);
      csv.end_row();
    }
  }
  // an infeasible task is a valid outcome, reported in the JSON, not an error
  return 0;
}

// --- bench -----------------------------------------------------------------------

struct BenchArgs {
  std::string sweep = "epsilon";
  std::vector<double> values;
  std::string data;
  std::string pipeline;
  std::string vae;
  std::vector<std::string> kinds{"relative", "absolute", "epsilon"};
  double eps = 1.0;
  int n_exp = 100;
  int test_offset = 0;  // 0: second half of the dataset
  bool latent = false;
  double gamma = 0.1;
  double rho = 1.0;
  int iters = 6000;
  int cmax = 10;
  double u = 0.9;
  std::string reg = "none";
  double beta = 0.0;
  // train-on-the-fly settings for features/grid/items/depth sweeps
  LayerFlags layer;
  int n_x = 10;
  int samples = 2000;
  int train_count = 1000;
  int depth = 1;
  int epochs = 70;
  double lr = 3e-4;
  uint64_t seed = 0;
  std::string out;
};

int run_bench(const BenchArgs& a) {
  fs::create_directories(a.out);
  CsvWriter rows(a.out + "/results.csv");
  rows.header({"sweep", "setting", "kind", "eps", "task_id", "feasible", "valid", "iterations",
               "loss_best", "sq_dist_x0", "error"});
  CsvWriter summary(a.out + "/summary.csv");
  summary.header({"sweep", "setting", "kind", "eps", "n_tasks", "feasibility_rate",
                  "valid_rate", "mean_iterations", "mean_sq_dist_x0", "mean_loss_best",
                  "errors"});

  Rng master(a.seed);
  int total_errors = 0;

  auto run_setting = [&](double setting, const Pipeline& p, const Vae* vae,
                         const Dataset& test) {
    for (const std::string& kind_name : a.kinds) {
      BatchSpec spec;
      spec.kind = task_kind_from_name(kind_name);
      spec.eps = a.sweep == "epsilon" && spec.kind == TaskKind::Epsilon ? setting : a.eps;
      spec.n_tasks = a.n_exp;
      spec.seed = master.fork_seed();
      spec.latent = a.latent;
      spec.mdmm.gamma = a.gamma;
      spec.mdmm.rho = a.rho;
      spec.mdmm.max_iters = a.iters;
      spec.mdmm.max_non_improving = a.cmax;
      spec.mdmm.update_tol = a.u;
      if (a.latent && vae != nullptr) {
        const RegKind rk = reg_kind_from_name(a.reg);
        if (rk == RegKind::Hypersphere)
          spec.mdmm.reg = RegularizerSpec::hypersphere(a.beta, chi_mean(vae->n_z));
        else if (rk == RegKind::LogLik)
          spec.mdmm.reg = RegularizerSpec::loglik(a.beta);
      }
      const std::vector<TaskRecord> records = batch_explain(p, vae, test, spec);
      for (const TaskRecord& r : records) {
        rows.field(a.sweep);
        rows.field(setting);
        rows.field(kind_name);
        rows.field(spec.eps);
        rows.field(r.task_id);
        rows.field(r.feasible ? 1 : 0);
        rows.field(r.valid ? 1 : 0);
        rows.field(r.iterations);
        rows.field(r.loss_best);
        rows.field(r.sq_dist_x0);
        rows.field(r.errored ? r.error : "");
        rows.end_row();
        total_errors += r.errored ? 1 : 0;
      }
      write_summary_row(summary, a.sweep, setting, kind_name, spec.eps, records);
    }
  };

  if (a.sweep == "epsilon" || a.sweep == "none") {
    require(!a.data.empty() && !a.pipeline.empty(),
            "bench: epsilon sweep needs --data and --pipeline");
    const LoadedDataset loaded = load_dataset(a.data);
    const Pipeline p = load_pipeline(a.pipeline);
    Vae v;
    const Vae* vp = nullptr;
    if (a.latent) {
      v = load_vae(a.vae);
      vp = &v;
    }
    const int n = loaded.data.size();
    const int begin = a.test_offset > 0 ? a.test_offset : n / 2;
    const Dataset test = slice_dataset(loaded.data, begin, n);
    const std::vector<double> values = a.sweep == "none" ? std::vector<double>{a.eps}
                                                         : a.values;
    for (double setting : values) run_setting(setting, p, vp, test);
  } else {
    // train-on-the-fly sweeps: features | grid | items | depth
    require(!a.values.empty(), "bench: sweep needs --values");
    require(a.sweep != "grid" || a.layer.kind == "grid",
            "bench: the grid sweep needs --layer grid");
    require(a.sweep != "items" || a.layer.kind == "knapsack",
            "bench: the items sweep needs --layer knapsack");
    for (double setting : a.values) {
      GenSpec spec;
      spec.n_x = a.sweep == "features" ? static_cast<int>(setting) : a.n_x;
      spec.n_samples = a.samples;
      spec.seed = master.fork_seed();
      LayerFlags lf = a.layer;
      if (a.sweep == "grid") lf.grid_n = static_cast<int>(setting);
      if (a.sweep == "items") lf.items = static_cast<int>(setting);
      Rng layer_rng(master.fork_seed());
      spec.layer = lf.build(layer_rng);

      const Dataset data = gen_dataset(spec);
      const int depth = a.sweep == "depth" ? static_cast<int>(setting) : a.depth;
      Rng init_rng(master.fork_seed());
      Pipeline p = make_pipeline(
          make_predictor(spec.n_x, cost_dim(spec.layer), depth, init_rng), spec.layer,
          lf.sense());
      TrainConfig tc;
      tc.epochs = a.epochs;
      tc.lr = a.lr;
      tc.seed = master.fork_seed();
      tc.early_stop = depth > 1;
      train_spo(p, slice_dataset(data, 0, a.train_count), tc);

      const Dataset test = slice_dataset(data, a.train_count, data.size());
      run_setting(setting, p, nullptr, test);
    }
  }

  write_manifest(a.out, json{{"command", "bench"},
                             {"sweep", a.sweep},
                             {"values", a.values},
                             {"kinds", a.kinds},
                             {"eps", a.eps},
                             {"n_exp", a.n_exp},
                             {"latent", a.latent},
                             {"gamma", a.gamma},
                             {"rho", a.rho},
                             {"iters", a.iters},
                             {"cmax", a.cmax},
                             {"u", a.u},
                             {"reg", a.reg},
                             {"beta", a.beta},
                             {"seed", a.seed}});
  std::cout << "bench results written to " << a.out << " (" << total_errors
            << " task errors)\n";
  return total_errors == 0 ? 0 : 3;
}

// --- verify-region ------------------------------------------------------------------

struct VerifyRegionArgs {
  int n_z = 64;
  double eta = 1e-16;
  int grid = 1000;
  double rmax = 10.0;
  int threads = 0;  // set from the global --threads flag
  double kappa_max = 2.0;
  double kappa_step = 0.25;
  std::string out;
};

int run_verify_region(const VerifyRegionArgs& a) {
  const RegionOpt opt = verify_optimal_region(a.n_z, a.eta, a.grid, a.rmax, a.threads);
  const double c = chi_mean(a.n_z);
  std::cout << "a* = " << fmt_g17(opt.a) << "\n"
            << "b* = " << fmt_g17(opt.b) << "\n"
            << "objective = " << fmt_g17(opt.objective) << "\n"
            << "chi mean C_" << a.n_z << " = " << fmt_g17(c) << "\n";

  if (!a.out.empty()) {
    fs::create_directories(a.out);
    CsvWriter csv(a.out + "/prior_mass.csv");
    csv.header({"kappa", "prior_pct"});
    for (double kappa = 0.0; kappa <= a.kappa_max + 1e-12; kappa += a.kappa_step) {
      csv.field(kappa);
      csv.field(100.0 * prior_mass(make_annulus(std::max(0.0, c - kappa), c + kappa, a.n_z)));
      csv.end_row();
    }
    write_manifest(a.out, json{{"command", "verify-region"},
                               {"n_z", a.n_z},
                               {"eta", a.eta},
                               {"grid", a.grid},
                               {"rmax", a.rmax},
                               {"a_star", opt.a},
                               {"b_star", opt.b},
                               {"objective", opt.objective},
                               {"chi_mean", c}});
  }
  return 0;
}

// --- table1 ------------------------------------------------------------------------

struct Table1Args {
  std::string vae;
  std::string data;
  int train_count = 0;
  bool use_mean = false;
  double kappa_max = 2.0;
  double kappa_step = 0.25;
  uint64_t seed = 0;
  std::string out;
};

int run_table1(const Table1Args& a) {
  const Vae v = load_vae(a.vae);
  const LoadedDataset loaded = load_dataset(a.data);
  const int n = loaded.data.size();
  const int n_train = a.train_count > 0 ? std::min(a.train_count, n) : n / 2;

  Rng rng(a.seed);
  Matrix latents(n_train, v.n_z);
  for (int i = 0; i < n_train; ++i) {
    const Vec x = loaded.data.contexts.row(i);
    const Vec z = a.use_mean ? encode_mean(v, x) : sample_latent(v, x, rng).z;
    std::copy(z.begin(), z.end(), &latents(i, 0));
  }

  const double c = chi_mean(v.n_z);
  std::cout << "kappa,prior_pct,empirical_pct\n";
  std::vector<std::array<double, 3>> rows;
  for (double kappa = 0.0; kappa <= a.kappa_max + 1e-12; kappa += a.kappa_step) {
    const AnnulusRegion band = make_annulus(std::max(0.0, c - kappa), c + kappa, v.n_z);
    const double prior = 100.0 * prior_mass(band);
    const double empirical = 100.0 * empirical_mass(latents, band);
    rows.push_back({kappa, prior, empirical});
    std::cout << fmt_g17(kappa) << ',' << fmt_g17(prior) << ',' << fmt_g17(empirical) << "\n";
  }
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    CsvWriter csv(a.out + "/table1.csv");
    csv.header({"kappa", "prior_pct", "empirical_pct"});
    for (const auto& r : rows) {
      csv.field(r[0]);
      csv.field(r[1]);
      csv.field(r[2]);
      csv.end_row();
    }
    write_manifest(a.out, json{{"command", "table1"},
                               {"vae", a.vae},
                               {"data", a.data},
                               {"train_count", n_train},
                               {"use_mean", a.use_mean},
                               {"seed", a.seed}});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"counterfactual explanations for predict-then-optimize pipelines"};
  app.require_subcommand(1);
  // options may come from an INI/TOML file with one section per subcommand;
  // command-line flags take precedence and unknown keys are rejected
  app.set_config("--config", "", "read options from a config file");
  app.allow_config_extras(false);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads for parallel subcommands (0: hardware)")
      ->capture_default_str();

  GenArgs gen;
  CLI::App* cmd_gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen.layer.attach(cmd_gen);
  cmd_gen->add_option("--nx", gen.n_x, "context dimension")->capture_default_str();
  cmd_gen->add_option("--samples", gen.samples, "number of rows")->capture_default_str();
  cmd_gen->add_option("--seed", gen.seed, "RNG seed")->capture_default_str();
  cmd_gen->add_option("--out", gen.out, "output directory")
      ->envname("CFX_OUT")
      ->required();

  TrainArgs train;
  CLI::App* cmd_train = app.add_subcommand("train", "train a predictor with the SPO+ loss");
  cmd_train->add_option("--data", train.data, "dataset directory")->required();
  cmd_train->add_option("--out", train.out, "output bundle directory")
      ->envname("CFX_OUT")
      ->required();
  cmd_train->add_option("--depth", train.depth, "predictor depth (1 = linear)")
      ->capture_default_str();
  cmd_train->add_option("--epochs", train.epochs, "training epochs")->capture_default_str();
  cmd_train->add_option("--lr", train.lr, "Adam learning rate")->capture_default_str();
  cmd_train->add_option("--batch", train.batch, "minibatch size (<=0: full batch)")
      ->capture_default_str();
  cmd_train->add_option("--train-count", train.train_count,
                        "rows used for training (0: first half)")
      ->capture_default_str();
  cmd_train->add_option("--seed", train.seed, "RNG seed")->capture_default_str();

  TrainVaeArgs tv;
  CLI::App* cmd_tv = app.add_subcommand("train-vae", "train a (cost-aware) VAE");
  cmd_tv->add_option("--data", tv.data, "dataset directory")->required();
  cmd_tv->add_option("--pipeline", tv.pipeline, "pipeline bundle (cost term predictor)");
  cmd_tv->add_option("--out", tv.out, "output bundle directory")
      ->envname("CFX_OUT")
      ->required();
  cmd_tv->add_option("--alpha", tv.alpha, "cost-reconstruction weight")->capture_default_str();
  cmd_tv->add_option("--nz", tv.n_z, "latent dimension")->capture_default_str();
  cmd_tv->add_option("--hidden", tv.hidden, "hidden width")->capture_default_str();
  cmd_tv->add_option("--epochs", tv.epochs, "training epochs")->capture_default_str();
  cmd_tv->add_option("--lr", tv.lr, "Adam learning rate")->capture_default_str();
  cmd_tv->add_option("--batch", tv.batch, "minibatch size")->capture_default_str();
  cmd_tv->add_option("--train-count", tv.train_count, "rows used for training (0: first half)")
      ->capture_default_str();
  cmd_tv->add_option("--seed", tv.seed, "RNG seed")->capture_default_str();

  ExplainArgs ex;
  CLI::App* cmd_ex = app.add_subcommand("explain", "solve one explanation task");
  cmd_ex->add_option("--pipeline", ex.pipeline, "pipeline bundle")->required();
  cmd_ex->add_option("--vae", ex.vae, "VAE bundle (latent search)");
  cmd_ex->add_option("--data", ex.data, "dataset directory for --context-index");
  cmd_ex->add_option("--context-file", ex.context_file, "CSV with the initial context row");
  cmd_ex->add_option("--context-index", ex.context_index, "row index of the initial context");
  cmd_ex->add_option("--alt-index", ex.alt_index,
                     "row index whose stored decision is the alternative");
  cmd_ex->add_option("--task", ex.kind, "relative | absolute | epsilon")
      ->check(CLI::IsMember({"relative", "absolute", "epsilon"}))
      ->capture_default_str();
  cmd_ex->add_option("--eps", ex.eps, "epsilon for epsilon tasks")->capture_default_str();
  cmd_ex->add_flag("--latent", ex.latent, "search in the VAE latent space");
  cmd_ex->add_option("--gamma", ex.gamma, "step size")->capture_default_str();
  cmd_ex->add_option("--rho", ex.rho, "damping")->capture_default_str();
  cmd_ex->add_option("--iters", ex.iters, "max iterations")->capture_default_str();
  cmd_ex->add_option("--cmax", ex.cmax, "max non-improving iterations")->capture_default_str();
  cmd_ex->add_option("--u", ex.u, "update tolerance in (0,1)")->capture_default_str();
  cmd_ex->add_option("--reg", ex.reg, "latent regularizer: hypersphere | loglik | none")
      ->check(CLI::IsMember({"hypersphere", "loglik", "none"}))
      ->capture_default_str();
  cmd_ex->add_option("--beta", ex.beta, "regularizer weight")->capture_default_str();
  cmd_ex->add_option("--proximity", ex.proximity, "feature | latent")
      ->check(CLI::IsMember({"feature", "latent"}))
      ->capture_default_str();
  cmd_ex->add_option("--seed", ex.seed, "RNG seed")->capture_default_str();
  cmd_ex->add_option("--out", ex.out, "result JSON path (default: stdout)")->envname("CFX_OUT");
  cmd_ex->add_option("--trace", ex.trace_out, "per-iteration CSV trace path");

  BenchArgs bench;
  CLI::App* cmd_bench = app.add_subcommand("bench", "batch explanation sweeps");
  cmd_bench->add_option("--sweep", bench.sweep,
                        "epsilon | features | grid | items | depth | none")
      ->check(CLI::IsMember({"epsilon", "features", "grid", "items", "depth", "none"}))
      ->capture_default_str();
  cmd_bench->add_option("--values", bench.values, "sweep values")->delimiter(',');
  cmd_bench->add_option("--data", bench.data, "dataset directory (epsilon/none sweeps)");
  cmd_bench->add_option("--pipeline", bench.pipeline, "pipeline bundle (epsilon/none sweeps)");
  cmd_bench->add_option("--vae", bench.vae, "VAE bundle (latent search)");
  cmd_bench->add_option("--kinds", bench.kinds, "task kinds to run")->delimiter(',');
  cmd_bench->add_option("--eps", bench.eps, "epsilon for epsilon tasks")->capture_default_str();
  cmd_bench->add_option("--n-exp", bench.n_exp, "tasks per setting and kind")
      ->capture_default_str();
  cmd_bench->add_option("--test-offset", bench.test_offset,
                        "first test row (0: second half)")
      ->capture_default_str();
  cmd_bench->add_flag("--latent", bench.latent, "search in the VAE latent space");
  cmd_bench->add_option("--gamma", bench.gamma, "step size")->capture_default_str();
  cmd_bench->add_option("--rho", bench.rho, "damping")->capture_default_str();
  cmd_bench->add_option("--iters", bench.iters, "max iterations")->capture_default_str();
  cmd_bench->add_option("--cmax", bench.cmax, "max non-improving iterations")
      ->capture_default_str();
  cmd_bench->add_option("--u", bench.u, "update tolerance")->capture_default_str();
  cmd_bench->add_option("--reg", bench.reg, "latent regularizer")->capture_default_str();
  cmd_bench->add_option("--beta", bench.beta, "regularizer weight")->capture_default_str();
  bench.layer.attach(cmd_bench);
  cmd_bench->add_option("--nx", bench.n_x, "context dimension (on-the-fly sweeps)")
      ->capture_default_str();
  cmd_bench->add_option("--samples", bench.samples, "rows generated per setting")
      ->capture_default_str();
  cmd_bench->add_option("--train-count", bench.train_count, "training rows per setting")
      ->capture_default_str();
  cmd_bench->add_option("--depth", bench.depth, "predictor depth")->capture_default_str();
  cmd_bench->add_option("--epochs", bench.epochs, "training epochs per setting")
      ->capture_default_str();
  cmd_bench->add_option("--lr", bench.lr, "Adam learning rate")->capture_default_str();
  cmd_bench->add_option("--seed", bench.seed, "RNG seed")->capture_default_str();
  cmd_bench->add_option("--out", bench.out, "output directory")
      ->envname("CFX_OUT")
      ->required();

  VerifyRegionArgs vr;
  CLI::App* cmd_vr = app.add_subcommand("verify-region",
                                        "grid-search the optimal latent annulus region");
  cmd_vr->add_option("--nz", vr.n_z, "latent dimension")->capture_default_str();
  cmd_vr->add_option("--eta", vr.eta, "volume trade-off weight")->capture_default_str();
  cmd_vr->add_option("--grid", vr.grid, "grid points per axis")->capture_default_str();
  cmd_vr->add_option("--rmax", vr.rmax, "radius upper bound")->capture_default_str();
  cmd_vr->add_option("--kappa-max", vr.kappa_max, "largest band half-width")
      ->capture_default_str();
  cmd_vr->add_option("--kappa-step", vr.kappa_step, "band half-width step")
      ->capture_default_str();
  cmd_vr->add_option("--out", vr.out, "output directory (optional)")->envname("CFX_OUT");

  Table1Args t1;
  CLI::App* cmd_t1 =
      app.add_subcommand("table1", "prior vs. empirical latent band occupancy");
  cmd_t1->add_option("--vae", t1.vae, "VAE bundle")->required();
  cmd_t1->add_option("--data", t1.data, "dataset directory")->required();
  cmd_t1->add_option("--train-count", t1.train_count, "rows to embed (0: first half)")
      ->capture_default_str();
  cmd_t1->add_flag("--use-mean", t1.use_mean, "embed with the posterior mean, not a sample");
  cmd_t1->add_option("--kappa-max", t1.kappa_max, "largest band half-width")
      ->capture_default_str();
  cmd_t1->add_option("--kappa-step", t1.kappa_step, "band half-width step")
      ->capture_default_str();
  cmd_t1->add_option("--seed", t1.seed, "RNG seed for latent sampling")->capture_default_str();
  cmd_t1->add_option("--out", t1.out, "output directory (optional)")->envname("CFX_OUT");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_gen->parsed()) return run_gen(gen);
    if (cmd_train->parsed()) return run_train(train);
    if (cmd_tv->parsed()) return run_train_vae(tv);
    if (cmd_ex->parsed()) return run_explain(ex);
    if (cmd_bench->parsed()) return run_bench(bench);
    if (cmd_vr->parsed()) {
      vr.threads = threads;
      return run_verify_region(vr);
    }
    if (cmd_t1->parsed()) return run_table1(t1);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
