#pragma once

// Exact linear combinatorial optimization layers: shortest paths on an N x N
// right/down grid, and multi-dimensional 0/1 knapsack (DP over integer
// weights, branch-and-bound otherwise). Brute-force enumeration of feasible
// solutions is provided as a test oracle for small instances.

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <variant>

#include "cfx/common.hpp"

namespace cfx {

struct Solution {
  Vec y;  // 0/1 incidence vector
  double objective = 0.0;
};

// --- grid shortest path ---------------------------------------------------

// Nodes are row-major on an n x n grid; edges allow only right and down
// moves, so the graph is a DAG from node 0 to node n^2-1. Edges are indexed
// by enumerating nodes in row-major order, right edge before down edge.
struct GridGraph {
  int n = 0;

  int num_nodes() const { return n * n; }
  int num_edges() const { return 2 * n * (n - 1); }
};

inline GridGraph make_grid(int n) {
  require(n >= 2, "make_grid: need n >= 2");
  return GridGraph{n};
}

struct GridEdge {
  int from = 0;
  int to = 0;
};

inline std::vector<GridEdge> grid_edges(const GridGraph& g) {
  std::vector<GridEdge> edges;
  edges.reserve(g.num_edges());
  for (int r = 0; r < g.n; ++r) {
    for (int c = 0; c < g.n; ++c) {
      const int u = r * g.n + c;
      if (c + 1 < g.n) edges.push_back({u, u + 1});
      if (r + 1 < g.n) edges.push_back({u, u + g.n});
    }
  }
  return edges;
}

// Minimum-cost path from node 0 to node n^2-1 under edge costs theta.
// Negative costs are fine (DAG relaxation in topological order). Ties are
// broken deterministically: the first minimal predecessor in edge order wins.
inline Solution shortest_path(const GridGraph& g, const Vec& theta) {
  require(static_cast<int>(theta.size()) == g.num_edges(), "shortest_path: theta size mismatch");
  if (!all_finite(theta)) throw std::runtime_error("shortest_path: non-finite costs");

  const std::vector<GridEdge> edges = grid_edges(g);
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(g.num_nodes(), inf);
  std::vector<int> parent_edge(g.num_nodes(), -1);
  dist[0] = 0.0;

  // row-major node order is topological; per node the right edge precedes
  // the down edge, matching the global edge index order
  for (int e = 0; e < static_cast<int>(edges.size()); ++e) {
    const GridEdge& ed = edges[e];
    if (dist[ed.from] == inf) continue;
    const double cand = dist[ed.from] + theta[e];
    if (cand < dist[ed.to]) {
      dist[ed.to] = cand;
      parent_edge[ed.to] = e;
    }
  }

  Solution sol;
  sol.y.assign(g.num_edges(), 0.0);
  int node = g.num_nodes() - 1;
  while (node != 0) {
    const int e = parent_edge[node];
    sol.y[e] = 1.0;
    node = edges[e].from;
  }
  sol.objective = dot(theta, sol.y);
  return sol;
}

// All monotone 0 -> n^2-1 paths as edge-incidence vectors. Guarded: n <= 6.
inline std::vector<Vec> enumerate_grid_paths(const GridGraph& g) {
  if (g.n > 6) throw std::length_error("enumerate_grid_paths: n > 6");
  const std::vector<GridEdge> edges = grid_edges(g);
  // per-node outgoing edge ids in (right, down) order
  std::vector<std::vector<int>> out(g.num_nodes());
  for (int e = 0; e < static_cast<int>(edges.size()); ++e) out[edges[e].from].push_back(e);

  std::vector<Vec> paths;
  Vec cur(g.num_edges(), 0.0);
  const int target = g.num_nodes() - 1;
  auto walk = [&](auto&& self, int node) -> void {
    if (node == target) {
      paths.push_back(cur);
      return;
    }
    for (int e : out[node]) {
      cur[e] = 1.0;
      self(self, edges[e].to);
      cur[e] = 0.0;
    }
  };
  walk(walk, 0);
  return paths;
}

// --- multi-dimensional knapsack --------------------------------------------

struct KnapsackInstance {
  int m = 0;         // items
  int d = 0;         // resource dimensions
  Matrix weights;    // [d x m], nonnegative
  Vec capacities;    // [d], positive
};

inline KnapsackInstance make_knapsack(Matrix weights, Vec capacities) {
  KnapsackInstance inst;
  inst.d = weights.rows;
  inst.m = weights.cols;
  inst.weights = std::move(weights);
  inst.capacities = std::move(capacities);
  require(inst.d >= 1 && inst.m >= 1, "make_knapsack: empty instance");
  require(static_cast<int>(inst.capacities.size()) == inst.d,
          "make_knapsack: capacity count mismatch");
  for (double w : inst.weights.data) require(w >= 0.0, "make_knapsack: negative weight");
  for (double c : inst.capacities) require(c > 0.0, "make_knapsack: capacity must be positive");
  return inst;
}

inline bool knapsack_feasible(const KnapsackInstance& inst, const Vec& y) {
  for (int k = 0; k < inst.d; ++k) {
    double load = 0.0;
    for (int j = 0; j < inst.m; ++j) load += inst.weights(k, j) * y[j];
    if (load > inst.capacities[k] + 1e-9) return false;
  }
  return true;
}

namespace detail {

inline bool knapsack_is_integral(const KnapsackInstance& inst) {
  for (double w : inst.weights.data)
    if (std::abs(w - std::round(w)) > 1e-9) return false;
  return true;
}

// DP over the d-dimensional integer capacity lattice. Value table indexed by
// (item suffix, flattened remaining capacity); reconstruction prefers
// skipping an item on ties, so zero- or negative-reward items are never
// selected and the result is deterministic.
inline Solution knapsack_dp(const KnapsackInstance& inst, const Vec& theta) {
  std::vector<long> caps(inst.d);
  std::vector<long> stride(inst.d);
  long states = 1;
  for (int k = 0; k < inst.d; ++k) {
    caps[k] = static_cast<long>(std::floor(inst.capacities[k] + 1e-9));
    stride[k] = states;
    states *= caps[k] + 1;
  }
  std::vector<std::vector<long>> w(inst.m, std::vector<long>(inst.d));
  for (int j = 0; j < inst.m; ++j)
    for (int k = 0; k < inst.d; ++k) w[j][k] = static_cast<long>(std::llround(inst.weights(k, j)));

  // V[i][s]: best value over items i..m-1 with remaining capacity state s
  std::vector<std::vector<double>> value(inst.m + 1, std::vector<double>(states, 0.0));
  for (int i = inst.m - 1; i >= 0; --i) {
    const long wflat = std::inner_product(w[i].begin(), w[i].end(), stride.begin(), 0L);
    for (long s = 0; s < states; ++s) {
      double best = value[i + 1][s];
      bool fits = true;
      long rem = s;
      for (int k = inst.d - 1; k >= 0; --k) {
        const long sk = rem / stride[k];
        rem -= sk * stride[k];
        if (sk < w[i][k]) {
          fits = false;
          break;
        }
      }
      if (fits && theta[i] > 0.0) {
        const double take = theta[i] + value[i + 1][s - wflat];
        if (take > best) best = take;
      }
      value[i][s] = best;
    }
  }

  Solution sol;
  sol.y.assign(inst.m, 0.0);
  long s = states - 1;
  for (int i = 0; i < inst.m; ++i) {
    bool fits = theta[i] > 0.0;
    long rem = s;
    for (int k = inst.d - 1; fits && k >= 0; --k) {
      const long sk = rem / stride[k];
      rem -= sk * stride[k];
      if (sk < w[i][k]) fits = false;
    }
    if (fits) {
      const long wflat = std::inner_product(w[i].begin(), w[i].end(), stride.begin(), 0L);
      const double take = theta[i] + value[i + 1][s - wflat];
      if (take > value[i + 1][s]) {
        sol.y[i] = 1.0;
        s -= wflat;
      }
    }
  }
  sol.objective = dot(theta, sol.y);
  return sol;
}

// Branch-and-bound for fractional weights. Bound: min over dimensions of the
// single-constraint fractional relaxation, using per-dimension density
// orders precomputed once. Skip branch explored first; strict improvement
// only, so the incumbent is deterministic.
struct BnbContext {
  const KnapsackInstance* inst;
  const Vec* theta;
  std::vector<std::vector<int>> order;  // per dim, items by descending theta/w
  Vec suffix_pos;                       // suffix sums of positive rewards
  Vec best_y;
  double best_value = 0.0;
};

inline double bnb_bound(const BnbContext& ctx, int next, const Vec& remaining, double value) {
  const KnapsackInstance& inst = *ctx.inst;
  const Vec& theta = *ctx.theta;
  double bound = value + ctx.suffix_pos[next];
  for (int k = 0; k < inst.d; ++k) {
    double cap = remaining[k];
    double b = value;
    for (int j : ctx.order[k]) {
      if (j < next || theta[j] <= 0.0) continue;
      const double w = inst.weights(k, j);
      if (w <= cap) {
        cap -= w;
        b += theta[j];
      } else {
        if (w > 0.0) b += theta[j] * (cap / w);
        break;
      }
    }
    bound = std::min(bound, b);
  }
  return bound;
}

inline void bnb_search(BnbContext& ctx, int i, Vec& remaining, Vec& y, double value) {
  const KnapsackInstance& inst = *ctx.inst;
  const Vec& theta = *ctx.theta;
  if (i == inst.m) {
    if (value > ctx.best_value) {
      ctx.best_value = value;
      ctx.best_y = y;
    }
    return;
  }
  // the empty selection seeds the incumbent, so strict pruning is safe
  if (bnb_bound(ctx, i, remaining, value) <= ctx.best_value) return;

  bnb_search(ctx, i + 1, remaining, y, value);  // skip first

  if (theta[i] > 0.0) {
    bool fits = true;
    for (int k = 0; k < inst.d; ++k)
      if (inst.weights(k, i) > remaining[k] + 1e-12) {
        fits = false;
        break;
      }
    if (fits) {
      for (int k = 0; k < inst.d; ++k) remaining[k] -= inst.weights(k, i);
      y[i] = 1.0;
      bnb_search(ctx, i + 1, remaining, y, value + theta[i]);
      y[i] = 0.0;
      for (int k = 0; k < inst.d; ++k) remaining[k] += inst.weights(k, i);
    }
  }
}

inline Solution knapsack_bnb(const KnapsackInstance& inst, const Vec& theta) {
  BnbContext ctx;
  ctx.inst = &inst;
  ctx.theta = &theta;
  ctx.order.resize(inst.d);
  for (int k = 0; k < inst.d; ++k) {
    std::vector<int>& ord = ctx.order[k];
    ord.resize(inst.m);
    std::iota(ord.begin(), ord.end(), 0);
    std::stable_sort(ord.begin(), ord.end(), [&](int a, int b) {
      const double wa = std::max(inst.weights(k, a), 1e-12);
      const double wb = std::max(inst.weights(k, b), 1e-12);
      return theta[a] / wa > theta[b] / wb;
    });
  }
  ctx.suffix_pos.assign(inst.m + 1, 0.0);
  for (int i = inst.m - 1; i >= 0; --i)
    ctx.suffix_pos[i] = ctx.suffix_pos[i + 1] + std::max(theta[i], 0.0);
  ctx.best_y.assign(inst.m, 0.0);

  Vec remaining = inst.capacities;
  Vec y(inst.m, 0.0);
  bnb_search(ctx, 0, remaining, y, 0.0);

  Solution sol;
  sol.y = ctx.best_y;
  sol.objective = dot(theta, sol.y);
  return sol;
}

}  // namespace detail

// Maximizes theta^T y subject to W y <= capacities, y in {0,1}^m. Exact;
// items with nonpositive reward are never selected.
inline Solution knapsack_max(const KnapsackInstance& inst, const Vec& theta) {
  require(static_cast<int>(theta.size()) == inst.m, "knapsack_max: theta size mismatch");
  if (!all_finite(theta)) throw std::runtime_error("knapsack_max: non-finite rewards");
  if (detail::knapsack_is_integral(inst)) {
    long states = 1;
    bool small = true;
    for (int k = 0; k < inst.d; ++k) {
      states *= static_cast<long>(std::floor(inst.capacities[k] + 1e-9)) + 1;
      if (states > 4'000'000L / (inst.m + 1)) {
        small = false;
        break;
      }
    }
    if (small) return detail::knapsack_dp(inst, theta);
  }
  return detail::knapsack_bnb(inst, theta);
}

// All feasible item selections, in bitmask order. Guarded: m <= 20.
inline std::vector<Vec> enumerate_knapsack_solutions(const KnapsackInstance& inst) {
  if (inst.m > 20) throw std::length_error("enumerate_knapsack_solutions: m > 20");
  std::vector<Vec> sols;
  const uint32_t lim = 1u << inst.m;
  for (uint32_t mask = 0; mask < lim; ++mask) {
    Vec y(inst.m, 0.0);
    for (int j = 0; j < inst.m; ++j)
      if (mask & (1u << j)) y[j] = 1.0;
    if (knapsack_feasible(inst, y)) sols.push_back(std::move(y));
  }
  return sols;
}

// --- unified layer ----------------------------------------------------------

using OptLayer = std::variant<GridGraph, KnapsackInstance>;

inline int cost_dim(const OptLayer& layer) {
  if (const auto* g = std::get_if<GridGraph>(&layer)) return g->num_edges();
  return std::get<KnapsackInstance>(layer).m;
}

// argmin_{y feasible} c^T y; the knapsack (a maximization layer) is solved on
// negated costs so all downstream formulas are written once in minimize form.
inline Solution solve_min(const OptLayer& layer, const Vec& c) {
  if (const auto* g = std::get_if<GridGraph>(&layer)) return shortest_path(*g, c);
  Solution sol = knapsack_max(std::get<KnapsackInstance>(layer), negated(c));
  sol.objective = dot(c, sol.y);
  return sol;
}

inline std::vector<Vec> enumerate_solutions(const OptLayer& layer) {
  if (const auto* g = std::get_if<GridGraph>(&layer)) return enumerate_grid_paths(*g);
  return enumerate_knapsack_solutions(std::get<KnapsackInstance>(layer));
}

inline bool is_feasible(const OptLayer& layer, const Vec& y) {
  for (double v : y)
    if (v != 0.0 && v != 1.0) return false;
  if (const auto* g = std::get_if<GridGraph>(&layer)) {
    // flow conservation: unit out of node 0, unit into node n^2-1
    const std::vector<GridEdge> edges = grid_edges(*g);
    std::vector<double> net_flow(g->num_nodes(), 0.0);
    for (size_t e = 0; e < edges.size(); ++e) {
      net_flow[edges[e].from] += y[e];
      net_flow[edges[e].to] -= y[e];
    }
    for (int u = 0; u < g->num_nodes(); ++u) {
      const double want = (u == 0) ? 1.0 : (u == g->num_nodes() - 1 ? -1.0 : 0.0);
      if (net_flow[u] != want) return false;
    }
    return true;
  }
  return knapsack_feasible(std::get<KnapsackInstance>(layer), y);
}

// --- serialization ----------------------------------------------------------

inline void save_layer(const OptLayer& layer, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_layer: cannot open " + path);
  if (const auto* g = std::get_if<GridGraph>(&layer)) {
    f << "cfx-grid 1\n" << g->n << '\n';
  } else {
    const KnapsackInstance& inst = std::get<KnapsackInstance>(layer);
    f << "cfx-knapsack 1\n" << inst.m << ' ' << inst.d << '\n';
    for (int k = 0; k < inst.d; ++k) {
      for (int j = 0; j < inst.m; ++j) {
        if (j) f << ' ';
        f << fmt_g17(inst.weights(k, j));
      }
      f << '\n';
    }
    for (int k = 0; k < inst.d; ++k) {
      if (k) f << ' ';
      f << fmt_g17(inst.capacities[k]);
    }
    f << '\n';
  }
}

inline OptLayer load_layer(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_layer: cannot open " + path);
  std::string magic;
  int version = 0;
  f >> magic >> version;
  if (version != 1) throw std::runtime_error("load_layer: bad version in " + path);
  if (magic == "cfx-grid") {
    int n = 0;
    f >> n;
    if (!f) throw std::runtime_error("load_layer: truncated grid file");
    return make_grid(n);
  }
  if (magic == "cfx-knapsack") {
    int m = 0, d = 0;
    f >> m >> d;
    Matrix w(d, m);
    for (double& v : w.data) f >> v;
    Vec caps(d);
    for (double& v : caps) f >> v;
    if (!f) throw std::runtime_error("load_layer: truncated knapsack file");
    return make_knapsack(std::move(w), std::move(caps));
  }
  throw std::runtime_error("load_layer: unknown layer type " + magic);
}

}  // namespace cfx
