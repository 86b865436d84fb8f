#pragma once

// Fully-connected Gaussian VAE: encoder trunk with mean/log-variance heads,
// Gaussian decoder mean, closed-form KL, reparameterized sampling, and a
// cost-aware training objective that additionally penalizes
// ||phi(x) - phi(decode(z))||^2 against a frozen predictor.

#include <filesystem>

#include "cfx/nn.hpp"
#include "json.hpp"

namespace cfx {

constexpr double kLogvarClamp = 10.0;  // logvar limited to [-10, 10]

struct Vae {
  DenseNet encoder_trunk;
  DenseNet head_mu;
  DenseNet head_logvar;
  DenseNet decoder;
  int n_x = 0;
  int n_z = 0;
};

inline Vae make_vae(int n_x, int n_z, int hidden, Rng& rng) {
  require(n_x > 0 && n_z > 0 && hidden > 0, "make_vae: dims must be positive");
  Vae v;
  v.n_x = n_x;
  v.n_z = n_z;
  v.encoder_trunk = make_net({n_x, hidden}, {Activation::Relu}, rng);
  v.head_mu = make_net({hidden, n_z}, {Activation::Identity}, rng);
  v.head_logvar = make_net({hidden, n_z}, {Activation::Identity}, rng);
  v.decoder = make_net({n_z, hidden, n_x}, {Activation::Relu, Activation::Identity}, rng);
  return v;
}

inline Vec clamp_logvar(Vec lv) {
  for (double& x : lv) x = std::min(kLogvarClamp, std::max(-kLogvarClamp, x));
  return lv;
}

// posterior mean mu_phi(x)
inline Vec encode_mean(const Vae& v, const Vec& x) {
  require(static_cast<int>(x.size()) == v.n_x, "encode_mean: input dim mismatch");
  return forward(v.head_mu, forward(v.encoder_trunk, x));
}

inline Vec decode(const Vae& v, const Vec& z) {
  require(static_cast<int>(z.size()) == v.n_z, "decode: latent dim mismatch");
  return forward(v.decoder, z);
}

struct LatentSample {
  Vec z;
  Vec mu;
  Vec logvar;  // clamped
  Vec eps;
};

// z = mu + exp(logvar/2) .* eps with eps ~ N(0, I)
inline LatentSample sample_latent(const Vae& v, const Vec& x, Rng& rng) {
  require(static_cast<int>(x.size()) == v.n_x, "sample_latent: input dim mismatch");
  const Vec t = forward(v.encoder_trunk, x);
  LatentSample s;
  s.mu = forward(v.head_mu, t);
  s.logvar = clamp_logvar(forward(v.head_logvar, t));
  s.eps = rng.normal_vec(v.n_z);
  s.z.resize(v.n_z);
  for (int k = 0; k < v.n_z; ++k) s.z[k] = s.mu[k] + std::exp(0.5 * s.logvar[k]) * s.eps[k];
  return s;
}

// KL( N(mu, diag exp(logvar)) || N(0, I) ) = -1/2 sum (1 + logvar - e^logvar - mu^2)
inline double kl_closed_form(const Vec& mu, const Vec& logvar) {
  require(mu.size() == logvar.size(), "kl_closed_form: size mismatch");
  if (!all_finite(mu) || !all_finite(logvar))
    throw std::runtime_error("kl_closed_form: non-finite input");
  double s = 0.0;
  for (size_t k = 0; k < mu.size(); ++k)
    s += 1.0 + logvar[k] - std::exp(logvar[k]) - mu[k] * mu[k];
  return -0.5 * s;
}

struct ElboTerms {
  double recon = 0.0;       // mean_s -1/2 ||x - decode(z_s)||^2
  double kl = 0.0;          // >= 0
  double cost_recon = 0.0;  // mean_s ||phi(x) - phi(decode(z_s))||^2
  double total = 0.0;       // recon - kl - alpha * cost_recon (maximized)
};

struct VaeGrad {
  NetGrad trunk;
  NetGrad mu;
  NetGrad logvar;
  NetGrad decoder;
};

inline VaeGrad zero_vae_grad(const Vae& v) {
  return VaeGrad{zero_grad(v.encoder_trunk), zero_grad(v.head_mu), zero_grad(v.head_logvar),
                 zero_grad(v.decoder)};
}

struct ElboResult {
  ElboTerms terms;
  VaeGrad grad;  // gradient of terms.total w.r.t. VAE parameters
};

// Cost-aware objective for one sample, with explicit noise draws so gradient
// checks can freeze the randomness. The same z samples are used for both the
// feature-reconstruction and cost-reconstruction terms; the predictor is
// frozen (no gradient flows into it). predictor may be null when alpha == 0.
inline ElboResult cost_aware_elbo(const Vae& v, const DenseNet* predictor, const Vec& x,
                                  double alpha, const std::vector<Vec>& eps_draws) {
  require(static_cast<int>(x.size()) == v.n_x, "cost_aware_elbo: input dim mismatch");
  require(alpha >= 0.0, "cost_aware_elbo: alpha must be >= 0");
  require(!eps_draws.empty(), "cost_aware_elbo: need at least one noise draw");
  if (alpha > 0.0) {
    require(predictor != nullptr, "cost_aware_elbo: predictor required when alpha > 0");
    require(predictor->input_dim == v.n_x, "cost_aware_elbo: predictor input dim mismatch");
  }

  ForwardTrace trunk_trace, mu_trace, lv_trace;
  forward_traced(v.encoder_trunk, x, &trunk_trace);
  const Vec& t = trunk_trace.post.back();
  forward_traced(v.head_mu, t, &mu_trace);
  forward_traced(v.head_logvar, t, &lv_trace);
  const Vec& mu = mu_trace.post.back();
  const Vec& lv_raw = lv_trace.post.back();
  const Vec lv = clamp_logvar(lv_raw);

  const double inv_s = 1.0 / static_cast<double>(eps_draws.size());
  const Vec phi_x = alpha > 0.0 ? forward(*predictor, x) : Vec{};

  ElboResult res;
  res.grad = zero_vae_grad(v);
  Vec dmu(v.n_z, 0.0), dlv(v.n_z, 0.0);

  for (const Vec& eps : eps_draws) {
    require(static_cast<int>(eps.size()) == v.n_z, "cost_aware_elbo: bad noise draw size");
    Vec sigma_eps(v.n_z), z(v.n_z);
    for (int k = 0; k < v.n_z; ++k) {
      sigma_eps[k] = std::exp(0.5 * lv[k]) * eps[k];
      z[k] = mu[k] + sigma_eps[k];
    }
    ForwardTrace dec_trace;
    forward_traced(v.decoder, z, &dec_trace);
    const Vec& xt = dec_trace.post.back();

    res.terms.recon += -0.5 * sq_dist(x, xt) * inv_s;

    // d total / d xt, scaled by 1/S
    Vec u(v.n_x);
    for (int i = 0; i < v.n_x; ++i) u[i] = (x[i] - xt[i]) * inv_s;
    if (alpha > 0.0) {
      const Vec phi_xt = forward(*predictor, xt);
      res.terms.cost_recon += sq_dist(phi_x, phi_xt) * inv_s;
      Vec up(phi_xt.size());
      for (size_t j = 0; j < up.size(); ++j) up[j] = 2.0 * (phi_xt[j] - phi_x[j]);
      const Vec dcost = vjp_input(*predictor, xt, up);
      for (int i = 0; i < v.n_x; ++i) u[i] -= alpha * dcost[i] * inv_s;
    }

    const Vec dz = backward(v.decoder, dec_trace, u, &res.grad.decoder);
    for (int k = 0; k < v.n_z; ++k) {
      dmu[k] += dz[k];
      dlv[k] += dz[k] * 0.5 * sigma_eps[k];
    }
  }

  res.terms.kl = kl_closed_form(mu, lv);
  res.terms.total = res.terms.recon - res.terms.kl - alpha * res.terms.cost_recon;

  // KL contributions: total includes -kl
  for (int k = 0; k < v.n_z; ++k) {
    dmu[k] -= mu[k];
    dlv[k] -= 0.5 * (std::exp(lv[k]) - 1.0);
  }
  // clamp backward: gradient passes only where the raw value was inside
  Vec dlv_raw(v.n_z);
  for (int k = 0; k < v.n_z; ++k)
    dlv_raw[k] = std::abs(lv_raw[k]) < kLogvarClamp ? dlv[k] : 0.0;

  const Vec dt_mu = backward(v.head_mu, mu_trace, dmu, &res.grad.mu);
  const Vec dt_lv = backward(v.head_logvar, lv_trace, dlv_raw, &res.grad.logvar);
  Vec dt(dt_mu.size());
  for (size_t i = 0; i < dt.size(); ++i) dt[i] = dt_mu[i] + dt_lv[i];
  backward(v.encoder_trunk, trunk_trace, dt, &res.grad.trunk);
  return res;
}

inline ElboResult cost_aware_elbo(const Vae& v, const DenseNet* predictor, const Vec& x,
                                  double alpha, Rng& rng, int n_mc = 1) {
  require(n_mc >= 1, "cost_aware_elbo: n_mc must be >= 1");
  std::vector<Vec> draws(n_mc);
  for (Vec& e : draws) e = rng.normal_vec(v.n_z);
  return cost_aware_elbo(v, predictor, x, alpha, draws);
}

// --- flat parameter view (optimizer plumbing) --------------------------------

inline size_t vae_param_count(const Vae& v) {
  return param_count(v.encoder_trunk) + param_count(v.head_mu) + param_count(v.head_logvar) +
         param_count(v.decoder);
}

inline Vec flatten_vae_params(const Vae& v) {
  Vec flat = flatten_params(v.encoder_trunk);
  const Vec a = flatten_params(v.head_mu);
  const Vec b = flatten_params(v.head_logvar);
  const Vec c = flatten_params(v.decoder);
  flat.insert(flat.end(), a.begin(), a.end());
  flat.insert(flat.end(), b.begin(), b.end());
  flat.insert(flat.end(), c.begin(), c.end());
  return flat;
}

inline void set_vae_params(Vae& v, const Vec& flat) {
  require(flat.size() == vae_param_count(v), "set_vae_params: size mismatch");
  size_t pos = 0;
  for (DenseNet* net : {&v.encoder_trunk, &v.head_mu, &v.head_logvar, &v.decoder}) {
    const size_t n = param_count(*net);
    set_params(*net, Vec(flat.begin() + pos, flat.begin() + pos + n));
    pos += n;
  }
}

inline Vec flatten(const VaeGrad& g) {
  Vec flat = flatten(g.trunk);
  const Vec a = flatten(g.mu);
  const Vec b = flatten(g.logvar);
  const Vec c = flatten(g.decoder);
  flat.insert(flat.end(), a.begin(), a.end());
  flat.insert(flat.end(), b.begin(), b.end());
  flat.insert(flat.end(), c.begin(), c.end());
  return flat;
}

inline void accumulate(VaeGrad& acc, const VaeGrad& g, double scale = 1.0) {
  accumulate(acc.trunk, g.trunk, scale);
  accumulate(acc.mu, g.mu, scale);
  accumulate(acc.logvar, g.logvar, scale);
  accumulate(acc.decoder, g.decoder, scale);
}

// --- training -----------------------------------------------------------------

struct VaeTrainConfig {
  int epochs = 100;
  double lr = 1e-3;
  int batch_size = 32;
  uint64_t seed = 0;
  double alpha = 0.0;
  int n_mc = 1;
  bool early_stop = true;  // patience on validation ELBO
  double val_fraction = 0.1;
  int patience = 10;
};

struct VaeTrace {
  std::vector<double> recon;
  std::vector<double> kl;
  std::vector<double> cost_recon;
  std::vector<double> elbo;  // mean total per epoch
  int epochs_run = 0;
};

// Adam ascent on the mean cost-aware objective over shuffled minibatches.
inline VaeTrace train_vae(Vae& v, const Matrix& data, const DenseNet* predictor,
                          const VaeTrainConfig& cfg) {
  require(data.rows > 0, "train_vae: empty dataset");
  require(data.cols == v.n_x, "train_vae: data dim mismatch");

  const int n = data.rows;
  Rng rng(cfg.seed);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  int n_val = 0;
  if (cfg.early_stop) {
    n_val = std::max(1, static_cast<int>(std::floor(cfg.val_fraction * n)));
    require(n_val < n, "train_vae: validation split leaves no training data");
  }
  std::vector<int> train_idx(order.begin(), order.end() - n_val);
  const std::vector<int> val_idx(order.end() - n_val, order.end());
  const int batch = cfg.batch_size <= 0 ? static_cast<int>(train_idx.size())
                                        : std::min<int>(cfg.batch_size, train_idx.size());

  AdamState adam = make_adam(vae_param_count(v), cfg.lr);
  Vec params = flatten_vae_params(v);

  VaeTrace trace;
  double best_val = -std::numeric_limits<double>::infinity();
  Vec best_params = params;
  int stall = 0;

  auto mean_val_elbo = [&]() {
    // deterministic validation: zero-noise draws (posterior mean decode)
    const std::vector<Vec> zero_draw{Vec(v.n_z, 0.0)};
    double s = 0.0;
    for (int i : val_idx)
      s += cost_aware_elbo(v, predictor, data.row(i), cfg.alpha, zero_draw).terms.total;
    return s / static_cast<double>(val_idx.size());
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(train_idx);
    double e_recon = 0.0, e_kl = 0.0, e_cost = 0.0, e_total = 0.0;
    for (size_t start = 0; start < train_idx.size(); start += batch) {
      const size_t end = std::min(start + batch, train_idx.size());
      VaeGrad acc = zero_vae_grad(v);
      for (size_t k = start; k < end; ++k) {
        const ElboResult r =
            cost_aware_elbo(v, predictor, data.row(train_idx[k]), cfg.alpha, rng, cfg.n_mc);
        e_recon += r.terms.recon;
        e_kl += r.terms.kl;
        e_cost += r.terms.cost_recon;
        e_total += r.terms.total;
        accumulate(acc, r.grad, 1.0 / static_cast<double>(end - start));
      }
      // ascent: Adam minimizes, so feed the negated gradient
      Vec g = flatten(acc);
      for (double& x : g) x = -x;
      adam_step(params, g, adam);
      set_vae_params(v, params);
    }
    const double inv_n = 1.0 / static_cast<double>(train_idx.size());
    if (!std::isfinite(e_total))
      throw std::runtime_error(strprintf("train_vae: diverged at epoch %d", epoch));
    trace.recon.push_back(e_recon * inv_n);
    trace.kl.push_back(e_kl * inv_n);
    trace.cost_recon.push_back(e_cost * inv_n);
    trace.elbo.push_back(e_total * inv_n);
    trace.epochs_run = epoch + 1;

    if (cfg.early_stop) {
      const double ve = mean_val_elbo();
      if (ve > best_val) {
        best_val = ve;
        best_params = params;
        stall = 0;
      } else if (++stall >= cfg.patience) {
        set_vae_params(v, best_params);
        break;
      }
    }
  }
  if (cfg.early_stop && trace.epochs_run == cfg.epochs) set_vae_params(v, best_params);
  return trace;
}

// --- bundle persistence ---------------------------------------------------------

inline void save_vae(const Vae& v, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_net(v.encoder_trunk, dir + "/encoder_trunk.net");
  save_net(v.head_mu, dir + "/head_mu.net");
  save_net(v.head_logvar, dir + "/head_logvar.net");
  save_net(v.decoder, dir + "/decoder.net");
  nlohmann::json manifest{{"kind", "vae"}, {"n_x", v.n_x}, {"n_z", v.n_z},
                          {"encoder_trunk", "encoder_trunk.net"},
                          {"head_mu", "head_mu.net"},
                          {"head_logvar", "head_logvar.net"},
                          {"decoder", "decoder.net"}};
  std::ofstream f(dir + "/manifest.json");
  if (!f) throw std::runtime_error("save_vae: cannot write manifest in " + dir);
  f << manifest.dump(2) << '\n';
}

inline Vae load_vae(const std::string& dir) {
  std::ifstream f(dir + "/manifest.json");
  if (!f) throw std::runtime_error("load_vae: cannot open manifest in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(f);
  if (manifest.at("kind").get<std::string>() != "vae")
    throw std::runtime_error("load_vae: manifest kind is not 'vae'");
  Vae v;
  v.n_x = manifest.at("n_x").get<int>();
  v.n_z = manifest.at("n_z").get<int>();
  v.encoder_trunk = load_net(dir + "/" + manifest.at("encoder_trunk").get<std::string>());
  v.head_mu = load_net(dir + "/" + manifest.at("head_mu").get<std::string>());
  v.head_logvar = load_net(dir + "/" + manifest.at("head_logvar").get<std::string>());
  v.decoder = load_net(dir + "/" + manifest.at("decoder").get<std::string>());
  require(v.head_mu.output_dim == v.n_z && v.head_logvar.output_dim == v.n_z,
          "load_vae: head dims inconsistent with n_z");
  require(v.decoder.output_dim == v.n_x, "load_vae: decoder output dim mismatch");
  return v;
}

}  // namespace cfx
