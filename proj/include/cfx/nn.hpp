#pragma once

// Minimal dense-MLP substrate: forward evaluation, reverse-mode gradients
// w.r.t. inputs and parameters, Adam, and text serialization. Only the fixed
// feed-forward topology is differentiated; this is all the predictors and
// VAE sub-networks need.

#include <fstream>

#include "cfx/common.hpp"

namespace cfx {

enum class Activation { Relu, Identity, Sigmoid };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Identity: return "identity";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "?";
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "identity") return Activation::Identity;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw std::invalid_argument("unknown activation: " + s);
}

struct DenseLayer {
  Matrix w;  // [out x in]
  Vec b;     // [out]
  Activation act = Activation::Identity;
};

struct DenseNet {
  std::vector<DenseLayer> layers;
  int input_dim = 0;
  int output_dim = 0;
};

// Glorot-uniform initialization, one activation per layer.
inline DenseNet make_net(const std::vector<int>& dims, const std::vector<Activation>& acts,
                         Rng& rng) {
  require(dims.size() >= 2, "make_net: need at least one layer");
  require(acts.size() == dims.size() - 1, "make_net: one activation per layer");
  DenseNet net;
  net.input_dim = dims.front();
  net.output_dim = dims.back();
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    const int in = dims[l];
    const int out = dims[l + 1];
    require(in > 0 && out > 0, "make_net: dims must be positive");
    DenseLayer layer;
    layer.w = Matrix(out, in);
    layer.b = Vec(out, 0.0);
    layer.act = acts[l];
    const double lim = std::sqrt(6.0 / (in + out));
    for (double& v : layer.w.data) v = rng.uniform(-lim, lim);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

inline double apply_activation(Activation a, double t) {
  switch (a) {
    case Activation::Relu: return t > 0.0 ? t : 0.0;
    case Activation::Identity: return t;
    case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-t));
  }
  return t;
}

// derivative as a function of pre-activation t (and post value s for sigmoid);
// relu subgradient at t == 0 is 0
inline double activation_deriv(Activation a, double t, double s) {
  switch (a) {
    case Activation::Relu: return t > 0.0 ? 1.0 : 0.0;
    case Activation::Identity: return 1.0;
    case Activation::Sigmoid: return s * (1.0 - s);
  }
  return 1.0;
}

struct ForwardTrace {
  std::vector<Vec> pre;   // pre-activations per layer
  std::vector<Vec> post;  // post[0] = input, post[l+1] = activations of layer l
};

inline Vec forward_traced(const DenseNet& net, const Vec& x, ForwardTrace* trace) {
  require(static_cast<int>(x.size()) == net.input_dim, "forward: input dim mismatch");
  Vec cur = x;
  if (trace) {
    trace->pre.clear();
    trace->post.clear();
    trace->post.push_back(cur);
  }
  for (const DenseLayer& layer : net.layers) {
    const int out = layer.w.rows;
    const int in = layer.w.cols;
    Vec pre(out);
    for (int r = 0; r < out; ++r) {
      double s = layer.b[r];
      const double* wr = &layer.w.data[static_cast<size_t>(r) * in];
      for (int c = 0; c < in; ++c) s += wr[c] * cur[c];
      pre[r] = s;
    }
    Vec post(out);
    for (int r = 0; r < out; ++r) post[r] = apply_activation(layer.act, pre[r]);
    if (trace) {
      trace->pre.push_back(std::move(pre));
      trace->post.push_back(post);
    }
    cur = std::move(post);
  }
  return cur;
}

inline Vec forward(const DenseNet& net, const Vec& x) { return forward_traced(net, x, nullptr); }

struct NetGrad {
  std::vector<Matrix> dw;
  std::vector<Vec> db;
};

inline NetGrad zero_grad(const DenseNet& net) {
  NetGrad g;
  for (const DenseLayer& layer : net.layers) {
    g.dw.emplace_back(layer.w.rows, layer.w.cols);
    g.db.emplace_back(layer.b.size(), 0.0);
  }
  return g;
}

// Backpropagates upstream through the traced forward pass. Returns
// d(upstream^T net(x))/dx; when grads != nullptr also accumulates the
// parameter partials into it.
inline Vec backward(const DenseNet& net, const ForwardTrace& trace, const Vec& upstream,
                    NetGrad* grads) {
  require(static_cast<int>(upstream.size()) == net.output_dim, "backward: upstream dim mismatch");
  Vec delta = upstream;
  for (int l = static_cast<int>(net.layers.size()) - 1; l >= 0; --l) {
    const DenseLayer& layer = net.layers[l];
    const int out = layer.w.rows;
    const int in = layer.w.cols;
    const Vec& pre = trace.pre[l];
    const Vec& post = trace.post[l + 1];
    const Vec& input = trace.post[l];
    Vec dpre(out);
    for (int r = 0; r < out; ++r)
      dpre[r] = delta[r] * activation_deriv(layer.act, pre[r], post[r]);
    if (grads) {
      Matrix& dw = grads->dw[l];
      Vec& db = grads->db[l];
      for (int r = 0; r < out; ++r) {
        db[r] += dpre[r];
        double* dwr = &dw.data[static_cast<size_t>(r) * in];
        for (int c = 0; c < in; ++c) dwr[c] += dpre[r] * input[c];
      }
    }
    Vec next(in, 0.0);
    for (int r = 0; r < out; ++r) {
      const double* wr = &layer.w.data[static_cast<size_t>(r) * in];
      for (int c = 0; c < in; ++c) next[c] += wr[c] * dpre[r];
    }
    delta = std::move(next);
  }
  return delta;
}

// gradient of v^T net(x) w.r.t. x
inline Vec vjp_input(const DenseNet& net, const Vec& x, const Vec& v) {
  ForwardTrace trace;
  forward_traced(net, x, &trace);
  return backward(net, trace, v, nullptr);
}

// gradient of upstream^T net(x) w.r.t. parameters
inline NetGrad grad_params(const DenseNet& net, const Vec& x, const Vec& upstream) {
  ForwardTrace trace;
  forward_traced(net, x, &trace);
  NetGrad g = zero_grad(net);
  backward(net, trace, upstream, &g);
  return g;
}

inline size_t param_count(const DenseNet& net) {
  size_t n = 0;
  for (const DenseLayer& layer : net.layers) n += layer.w.data.size() + layer.b.size();
  return n;
}

inline Vec flatten_params(const DenseNet& net) {
  Vec flat;
  flat.reserve(param_count(net));
  for (const DenseLayer& layer : net.layers) {
    flat.insert(flat.end(), layer.w.data.begin(), layer.w.data.end());
    flat.insert(flat.end(), layer.b.begin(), layer.b.end());
  }
  return flat;
}

inline void set_params(DenseNet& net, const Vec& flat) {
  require(flat.size() == param_count(net), "set_params: size mismatch");
  size_t pos = 0;
  for (DenseLayer& layer : net.layers) {
    std::copy(flat.begin() + pos, flat.begin() + pos + layer.w.data.size(),
              layer.w.data.begin());
    pos += layer.w.data.size();
    std::copy(flat.begin() + pos, flat.begin() + pos + layer.b.size(), layer.b.begin());
    pos += layer.b.size();
  }
}

inline Vec flatten(const NetGrad& g) {
  Vec flat;
  for (size_t l = 0; l < g.dw.size(); ++l) {
    flat.insert(flat.end(), g.dw[l].data.begin(), g.dw[l].data.end());
    flat.insert(flat.end(), g.db[l].begin(), g.db[l].end());
  }
  return flat;
}

inline void accumulate(NetGrad& acc, const NetGrad& g, double scale = 1.0) {
  for (size_t l = 0; l < acc.dw.size(); ++l) {
    for (size_t i = 0; i < acc.dw[l].data.size(); ++i) acc.dw[l].data[i] += scale * g.dw[l].data[i];
    for (size_t i = 0; i < acc.db[l].size(); ++i) acc.db[l][i] += scale * g.db[l][i];
  }
}

struct AdamState {
  Vec m;  // first moment
  Vec v;  // second moment
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline AdamState make_adam(size_t n, double lr) {
  AdamState st;
  st.m.assign(n, 0.0);
  st.v.assign(n, 0.0);
  st.lr = lr;
  return st;
}

inline void adam_step(Vec& params, const Vec& grad, AdamState& st) {
  require(params.size() == st.m.size() && grad.size() == st.m.size(),
          "adam_step: shape mismatch");
  if (!all_finite(grad)) throw std::runtime_error("adam_step: non-finite gradient");
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (size_t i = 0; i < params.size(); ++i) {
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad[i] * grad[i];
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    params[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
  }
}

// --- serialization -------------------------------------------------------
//
// cfx-net 1
// <n_layers> <input_dim> <output_dim>
// per layer: "<out> <in> <activation>", then <out> weight rows, then bias row

inline void save_net(const DenseNet& net, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_net: cannot open " + path);
  f << "cfx-net 1\n";
  f << net.layers.size() << ' ' << net.input_dim << ' ' << net.output_dim << '\n';
  for (const DenseLayer& layer : net.layers) {
    f << layer.w.rows << ' ' << layer.w.cols << ' ' << activation_name(layer.act) << '\n';
    for (int r = 0; r < layer.w.rows; ++r) {
      for (int c = 0; c < layer.w.cols; ++c) {
        if (c) f << ' ';
        f << fmt_g17(layer.w(r, c));
      }
      f << '\n';
    }
    for (size_t i = 0; i < layer.b.size(); ++i) {
      if (i) f << ' ';
      f << fmt_g17(layer.b[i]);
    }
    f << '\n';
  }
  if (!f) throw std::runtime_error("save_net: write failed for " + path);
}

inline DenseNet load_net(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_net: cannot open " + path);
  std::string magic;
  int version = 0;
  f >> magic >> version;
  if (magic != "cfx-net" || version != 1)
    throw std::runtime_error("load_net: bad header in " + path);
  size_t n_layers = 0;
  DenseNet net;
  f >> n_layers >> net.input_dim >> net.output_dim;
  for (size_t l = 0; l < n_layers; ++l) {
    int out = 0, in = 0;
    std::string act;
    f >> out >> in >> act;
    if (!f || out <= 0 || in <= 0) throw std::runtime_error("load_net: bad layer header");
    DenseLayer layer;
    layer.act = activation_from_name(act);
    layer.w = Matrix(out, in);
    for (double& v : layer.w.data) f >> v;
    layer.b.assign(out, 0.0);
    for (double& v : layer.b) f >> v;
    if (!f) throw std::runtime_error("load_net: truncated file " + path);
    net.layers.push_back(std::move(layer));
  }
  // dimension chaining
  int cur = net.input_dim;
  for (const DenseLayer& layer : net.layers) {
    if (layer.w.cols != cur) throw std::runtime_error("load_net: layer dims do not chain");
    cur = layer.w.rows;
  }
  if (cur != net.output_dim) throw std::runtime_error("load_net: output dim mismatch");
  return net;
}

}  // namespace cfx
