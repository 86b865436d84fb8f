#include <catch2/catch_amalgamated.hpp>

#include "cfx/plausibility.hpp"
#include "cfx/vae.hpp"
#include "test_util.hpp"

using namespace cfx;
using testutil::fd_grad;
using testutil::max_rel_err;
using testutil::mean_se;

namespace {

// VAE whose decoder ignores z and always outputs `fixed`
Vae constant_decoder_vae(const Vec& fixed, int n_z, Rng& rng) {
  Vae v = make_vae(static_cast<int>(fixed.size()), n_z, 8, rng);
  for (DenseLayer& layer : v.decoder.layers) {
    std::fill(layer.w.data.begin(), layer.w.data.end(), 0.0);
    std::fill(layer.b.begin(), layer.b.end(), 0.0);
  }
  v.decoder.layers.back().b = fixed;
  return v;
}

}  // namespace

TEST_CASE("encode_mean: zero-weight head returns its bias") {
  Rng rng(1);
  Vae v = make_vae(4, 3, 8, rng);
  std::fill(v.head_mu.layers[0].w.data.begin(), v.head_mu.layers[0].w.data.end(), 0.0);
  v.head_mu.layers[0].b = {0.5, -1.0, 2.0};
  CHECK(encode_mean(v, rng.normal_vec(4)) == Vec{0.5, -1.0, 2.0});
}

TEST_CASE("encode_mean / decode: recomposition oracle and determinism") {
  Rng rng(2);
  const Vae v = make_vae(5, 3, 16, rng);
  const Vec x = rng.normal_vec(5);
  CHECK(encode_mean(v, x) == forward(v.head_mu, forward(v.encoder_trunk, x)));
  CHECK(encode_mean(v, x) == encode_mean(v, x));

  const Vec z = rng.normal_vec(3);
  CHECK(decode(v, z) == forward(v.decoder, z));
  CHECK(decode(v, z) == decode(v, z));
  CHECK_THROWS_AS(decode(v, rng.normal_vec(4)), std::invalid_argument);
  CHECK_THROWS_AS(encode_mean(v, rng.normal_vec(6)), std::invalid_argument);
}

TEST_CASE("sample_latent: clamped log-variance floor keeps z near the mean") {
  Rng rng(3);
  Vae v = make_vae(4, 3, 8, rng);
  std::fill(v.head_logvar.layers[0].w.data.begin(), v.head_logvar.layers[0].w.data.end(), 0.0);
  std::fill(v.head_logvar.layers[0].b.begin(), v.head_logvar.layers[0].b.end(), -1e9);
  const Vec x = rng.normal_vec(4);
  const Vec mu = encode_mean(v, x);
  Rng srng(7);
  for (int rep = 0; rep < 10; ++rep) {
    const LatentSample s = sample_latent(v, x, srng);
    CHECK(s.logvar == Vec(3, -kLogvarClamp));
    for (int k = 0; k < 3; ++k) CHECK(std::abs(s.z[k] - mu[k]) < 0.05);
  }
}

TEST_CASE("sample_latent: empirical mean of 1e4 samples concentrates at mu") {
  Rng rng(5);
  const Vae v = make_vae(4, 3, 8, rng);
  const Vec x = rng.normal_vec(4);
  const Vec mu = encode_mean(v, x);
  Rng srng(11);
  Vec acc(3, 0.0);
  Vec sigma;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const LatentSample s = sample_latent(v, x, srng);
    axpy(1.0, s.z, acc);
    if (sigma.empty()) {
      sigma.resize(3);
      for (int k = 0; k < 3; ++k) sigma[k] = std::exp(0.5 * s.logvar[k]);
    }
  }
  for (int k = 0; k < 3; ++k)
    CHECK(std::abs(acc[k] / n - mu[k]) < 4.0 * sigma[k] / 100.0);
}

TEST_CASE("sample_latent: fixed seed reproduces the draw") {
  Rng rng(6);
  const Vae v = make_vae(4, 3, 8, rng);
  const Vec x = rng.normal_vec(4);
  Rng a(123), b(123);
  CHECK(sample_latent(v, x, a).z == sample_latent(v, x, b).z);
}

TEST_CASE("kl_closed_form: known values and nonnegativity") {
  CHECK(kl_closed_form({0.0, 0.0}, {0.0, 0.0}) == 0.0);
  CHECK(kl_closed_form({1.0, 0.0}, {0.0, 0.0}) == Catch::Approx(0.5).epsilon(1e-14));
  Rng rng(8);
  for (int rep = 0; rep < 100; ++rep) {
    const Vec mu = rng.normal_vec(5);
    Vec lv(5);
    for (double& v : lv) v = rng.uniform(-2.0, 2.0);
    CHECK(kl_closed_form(mu, lv) >= 0.0);
  }
  CHECK_THROWS_AS(kl_closed_form({std::numeric_limits<double>::quiet_NaN()}, {0.0}),
                  std::runtime_error);
}

TEST_CASE("kl_closed_form: matches a Monte-Carlo log-density-ratio estimate") {
  Rng rng(9);
  for (int rep = 0; rep < 5; ++rep) {
    const Vec mu = rng.normal_vec(4);
    Vec lv(4);
    for (double& v : lv) v = rng.uniform(-1.5, 1.5);
    const int n = 100000;
    Vec ratios(n);
    Rng srng(100 + rep);
    for (int i = 0; i < n; ++i) {
      double lr = 0.0;
      for (int k = 0; k < 4; ++k) {
        const double sd = std::exp(0.5 * lv[k]);
        const double z = mu[k] + sd * srng.normal();
        const double lq = -0.5 * std::log(2.0 * M_PI) - 0.5 * lv[k] -
                          0.5 * (z - mu[k]) * (z - mu[k]) / (sd * sd);
        const double lp = -0.5 * std::log(2.0 * M_PI) - 0.5 * z * z;
        lr += lq - lp;
      }
      ratios[i] = lr;
    }
    const auto ms = mean_se(ratios);
    CHECK(std::abs(kl_closed_form(mu, lv) - ms.mean) <= 3.0 * ms.se);
  }
}

TEST_CASE("cost_aware_elbo: alpha = 0 gives the plain objective") {
  Rng rng(10);
  const Vae v = make_vae(5, 3, 8, rng);
  const Vec x = rng.normal_vec(5);
  const std::vector<Vec> draws{rng.normal_vec(3)};
  const ElboResult r = cost_aware_elbo(v, nullptr, x, 0.0, draws);
  CHECK(r.terms.cost_recon == 0.0);
  CHECK(r.terms.total == Catch::Approx(r.terms.recon - r.terms.kl).epsilon(1e-14));

  // recon term equals an independent recomputation of -1/2 squared distance
  Vec z(3);
  const Vec t = forward(v.encoder_trunk, x);
  const Vec mu = forward(v.head_mu, t);
  const Vec lv = clamp_logvar(forward(v.head_logvar, t));
  for (int k = 0; k < 3; ++k) z[k] = mu[k] + std::exp(0.5 * lv[k]) * draws[0][k];
  CHECK(r.terms.recon ==
        Catch::Approx(-0.5 * sq_dist(x, decode(v, z))).epsilon(1e-12));
  CHECK(r.terms.kl == Catch::Approx(kl_closed_form(mu, lv)).epsilon(1e-12));
}

TEST_CASE("cost_aware_elbo: perfect reconstruction zeroes the cost term") {
  Rng rng(11);
  const Vec x{0.3, -0.7, 1.1};
  const Vae v = constant_decoder_vae(x, 2, rng);
  const DenseNet predictor = make_net({3, 6}, {Activation::Identity}, rng);
  Rng srng(4);
  const ElboResult r = cost_aware_elbo(v, &predictor, x, 2.0, srng, 3);
  CHECK(r.terms.cost_recon == 0.0);
  CHECK(r.terms.recon == 0.0);
}

TEST_CASE("cost_aware_elbo: gradients match finite differences under frozen noise") {
  Rng rng(12);
  const DenseNet predictor = make_net({5, 7}, {Activation::Identity}, rng);
  const Vae v = make_vae(5, 3, 8, rng);
  const Vec x = rng.normal_vec(5);
  const std::vector<Vec> draws{rng.normal_vec(3), rng.normal_vec(3)};
  const double alpha = 1.5;

  const ElboResult r = cost_aware_elbo(v, &predictor, x, alpha, draws);
  const Vec analytic = flatten(r.grad);

  Vae probe = v;
  const Vec flat = flatten_vae_params(v);
  const Vec fd = fd_grad(
      [&](const Vec& params) {
        set_vae_params(probe, params);
        return cost_aware_elbo(probe, &predictor, x, alpha, draws).terms.total;
      },
      flat, 1e-5);
  CHECK(max_rel_err(analytic, fd) < 1e-4);
}

TEST_CASE("cost_aware_elbo: validates inputs") {
  Rng rng(13);
  const Vae v = make_vae(4, 2, 8, rng);
  const Vec x = rng.normal_vec(4);
  Rng srng(1);
  CHECK_THROWS_AS(cost_aware_elbo(v, nullptr, x, 2.0, srng, 1), std::invalid_argument);
  CHECK_THROWS_AS(cost_aware_elbo(v, nullptr, x, -1.0, srng, 1), std::invalid_argument);
  CHECK_THROWS_AS(cost_aware_elbo(v, nullptr, rng.normal_vec(3), 0.0, srng, 1),
                  std::invalid_argument);
}

TEST_CASE("train_vae: zero epochs leaves parameters unchanged") {
  Rng rng(14);
  Vae v = make_vae(4, 2, 8, rng);
  const Vec before = flatten_vae_params(v);
  Matrix data(10, 4);
  for (double& d : data.data) d = rng.normal();
  VaeTrainConfig cfg;
  cfg.epochs = 0;
  cfg.early_stop = false;
  train_vae(v, data, nullptr, cfg);
  CHECK(flatten_vae_params(v) == before);
}

TEST_CASE("train_vae: reconstruction improves on Gaussian-mixture data") {
  Rng rng(15);
  const int n = 400, n_x = 6;
  Matrix data(n, n_x);
  for (int i = 0; i < n; ++i) {
    const double center = (i % 2 == 0) ? 2.0 : -2.0;
    for (int d = 0; d < n_x; ++d) data(i, d) = center + 0.4 * rng.normal();
  }
  Vae v = make_vae(n_x, 2, 16, rng);
  auto mean_recon = [&]() {
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      const Vec x = data.row(i);
      s += sq_dist(x, decode(v, encode_mean(v, x)));
    }
    return s / n;
  };
  const double before = mean_recon();
  VaeTrainConfig cfg;
  cfg.epochs = 30;
  cfg.lr = 1e-3;
  cfg.seed = 7;
  cfg.early_stop = false;
  train_vae(v, data, nullptr, cfg);
  CHECK(mean_recon() < before);
}

TEST_CASE("train_vae: deterministic given a seed") {
  Rng rng(16);
  Matrix data(60, 4);
  for (double& d : data.data) d = rng.normal();
  VaeTrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 77;
  cfg.early_stop = false;

  auto run = [&]() {
    Rng init(5);
    Vae v = make_vae(4, 2, 8, init);
    train_vae(v, data, nullptr, cfg);
    return flatten_vae_params(v);
  };
  CHECK(run() == run());
}

TEST_CASE("train_vae: encoded population concentrates like the prior") {
  // after training, the fraction of sampled training latents in the
  // [C - kappa, C + kappa] band stays within 10 points of the prior mass
  Rng rng(901);
  const int n = 600, n_x = 10, n_z = 8;
  Matrix data(n, n_x);
  for (double& d : data.data) d = rng.normal();
  Vae v = make_vae(n_x, n_z, 32, rng);
  VaeTrainConfig cfg;
  cfg.epochs = 40;
  cfg.lr = 1e-3;
  cfg.seed = 19;
  cfg.early_stop = false;
  train_vae(v, data, nullptr, cfg);

  Rng srng(23);
  Matrix latents(n, n_z);
  for (int i = 0; i < n; ++i) {
    const Vec z = sample_latent(v, data.row(i), srng).z;
    std::copy(z.begin(), z.end(), &latents(i, 0));
  }
  const double c = chi_mean(n_z);
  for (double kappa : {0.5, 1.0}) {
    const AnnulusRegion band = make_annulus(std::max(0.0, c - kappa), c + kappa, n_z);
    CHECK(std::abs(empirical_mass(latents, band) - prior_mass(band)) < 0.10);
  }
}

TEST_CASE("vae bundle round-trips through a directory") {
  namespace fs = std::filesystem;
  Rng rng(18);
  const Vae v = make_vae(5, 3, 8, rng);
  save_vae(v, "test_vae_bundle");
  const Vae w = load_vae("test_vae_bundle");
  CHECK(flatten_vae_params(w) == flatten_vae_params(v));
  CHECK(w.n_z == 3);
  const Vec x = rng.normal_vec(5);
  CHECK(encode_mean(w, x) == encode_mean(v, x));
  fs::remove_all("test_vae_bundle");
}
