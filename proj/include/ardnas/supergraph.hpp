#ifndef ARDNAS_SUPERGRAPH_HPP
#define ARDNAS_SUPERGRAPH_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ardnas/error.hpp"
#include "ardnas/layers.hpp"
#include "ardnas/network.hpp"
#include "ardnas/tensor.hpp"

namespace ardnas {

/// gamma at or below this value has non-positive differential entropy 1/2 ln(2 pi e gamma).
inline constexpr double kEntropyThreshold = 1.0 / (2.0 * std::numbers::pi * std::numbers::e);

enum class OpKind { Identity, FullyConnected, Conv3x3, Conv5x5, MaxPool, AvgPool, ZeroGateIdentity };

inline std::string_view to_string(OpKind k) {
  switch (k) {
    case OpKind::Identity: return "identity";
    case OpKind::FullyConnected: return "fc";
    case OpKind::Conv3x3: return "conv3x3";
    case OpKind::Conv5x5: return "conv5x5";
    case OpKind::MaxPool: return "maxpool";
    case OpKind::AvgPool: return "avgpool";
    case OpKind::ZeroGateIdentity: return "gate";
  }
  return "identity";
}

inline OpKind op_from_string(std::string_view s) {
  for (OpKind k : {OpKind::Identity, OpKind::FullyConnected, OpKind::Conv3x3, OpKind::Conv5x5, OpKind::MaxPool,
                   OpKind::AvgPool, OpKind::ZeroGateIdentity}) {
    if (to_string(k) == s) return k;
  }
  throw ParseError("unknown operation '" + std::string(s) + "'");
}

inline bool op_is_parametric(OpKind k) {
  return k == OpKind::FullyConnected || k == OpKind::Conv3x3 || k == OpKind::Conv5x5;
}
inline bool op_has_layer(OpKind k) { return k != OpKind::Identity && k != OpKind::ZeroGateIdentity; }

/// Shape-preserving layer template for an operation on nodes of the given sample shape.
inline Layer make_op_layer(OpKind k, const Shape& node_shape, Activation act) {
  const bool spatial = node_shape.size() == 3;
  switch (k) {
    case OpKind::FullyConnected:
      if (node_shape.size() != 1) throw DimensionError("fc operation needs rank-1 node features");
      return Layer::fully_connected(node_shape[0], node_shape[0], act);
    case OpKind::Conv3x3:
    case OpKind::Conv5x5: {
      if (!spatial) throw DimensionError("conv operation needs (C,H,W) node features");
      const std::size_t kk = k == OpKind::Conv3x3 ? 3 : 5;
      return Layer::conv2d(node_shape[0], node_shape[0], kk, kk, 1, kk / 2, act);
    }
    case OpKind::MaxPool:
    case OpKind::AvgPool:
      if (!spatial) throw DimensionError("pooling operation needs (C,H,W) node features");
      return k == OpKind::MaxPool ? Layer::max_pool(3, 1, 1) : Layer::avg_pool(3, 1, 1);
    default: return {};
  }
}

struct Edge {
  std::size_t from = 0;
  std::size_t to = 0;
  OpKind op = OpKind::Identity;
  Layer layer;          // operation parameters (empty for identity / gate)
  double w = 1.0;       // architecture scalar
  double s = 1.0;       // switch variance
  double gamma = 1.0;   // dependency variance
  double omega = 0.0;   // reweighting coefficient
  double c = 1.0;       // posterior variance
  double hess = 0.0;    // curvature of E_D in w
  int group = -1;
  bool alive = true;
  bool is_gate = false;
};

struct SuperGraph {
  std::size_t num_nodes = 0;
  std::size_t input = 0;
  std::size_t output = 0;
  Shape node_shape;  // per-sample feature shape shared by every node
  Activation op_activation = Activation::Tanh;
  std::vector<Edge> edges;
  std::vector<long> gate_edge_of_node;  // node -> gate edge id, -1 if none
  std::vector<long> gated_node_of;      // gate node -> the node it guards, -1 otherwise
  bool gated = false;

  std::size_t alive_count() const {
    return static_cast<std::size_t>(std::count_if(edges.begin(), edges.end(), [](const Edge& e) { return e.alive; }));
  }

  std::vector<std::size_t> incoming(std::size_t node, bool alive_only = true) const {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < edges.size(); ++i)
      if (edges[i].to == node && (!alive_only || edges[i].alive)) ids.push_back(i);
    return ids;
  }

  std::vector<std::size_t> outgoing(std::size_t node, bool alive_only = true) const {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < edges.size(); ++i)
      if (edges[i].from == node && (!alive_only || edges[i].alive)) ids.push_back(i);
    return ids;
  }

  std::vector<bool> alive_mask() const {
    std::vector<bool> m(edges.size());
    for (std::size_t i = 0; i < edges.size(); ++i) m[i] = edges[i].alive;
    return m;
  }
};

/// Adds an edge with a freshly shaped layer (weights zero until initialised).
inline std::size_t add_edge(SuperGraph& g, std::size_t from, std::size_t to, OpKind op) {
  if (from >= to || to >= g.num_nodes) {
    throw UsageError("edge " + std::to_string(from) + "->" + std::to_string(to) + " violates topological order");
  }
  if (op == OpKind::ZeroGateIdentity) throw UsageError("gate edges are created by insert_zero_gates only");
  Edge e;
  e.from = from;
  e.to = to;
  e.op = op;
  e.layer = make_op_layer(op, g.node_shape, g.op_activation);
  g.edges.push_back(std::move(e));
  return g.edges.size() - 1;
}

inline SuperGraph make_graph(std::size_t nodes, Shape node_shape, Activation act = Activation::Tanh) {
  if (nodes < 2) throw UsageError("a search graph needs at least an input and an output node");
  SuperGraph g;
  g.num_nodes = nodes;
  g.input = 0;
  g.output = nodes - 1;
  g.node_shape = std::move(node_shape);
  g.op_activation = act;
  g.gate_edge_of_node.assign(nodes, -1);
  g.gated_node_of.assign(nodes, -1);
  return g;
}

/// Every pair i<j gets one edge per listed operation.
inline SuperGraph make_dense_graph(std::size_t nodes, Shape node_shape, const std::vector<OpKind>& ops,
                                   Activation act = Activation::Tanh) {
  SuperGraph g = make_graph(nodes, std::move(node_shape), act);
  for (std::size_t j = 1; j < nodes; ++j)
    for (std::size_t i = 0; i < j; ++i)
      for (OpKind op : ops) add_edge(g, i, j, op);
  return g;
}

template <class Rng>
void init_op_weights(SuperGraph& g, Rng& rng) {
  for (Edge& e : g.edges) init_layer(e.layer, rng);
}

// ---------------------------------------------------------------- forward / backward

struct EdgeCache {
  Tensor op_out;  // o(z_from)
  LayerCache layer;
};

struct GraphCache {
  std::vector<Tensor> z;       // node outputs
  std::vector<EdgeCache> edge;  // per edge; empty for dead edges
  std::vector<Tensor> gz;      // dE/dz per node (after backward)
  bool has_backward = false;
};

inline Tensor apply_op(const Edge& e, const Tensor& z, LayerCache* cache) {
  if (!op_has_layer(e.op)) return z;
  return layer_forward(e.layer, z, cache);
}

/// z_j = sum over alive edges into j of w * o(z_i). Nodes without alive in-flow output zeros.
inline Tensor mix_output(const SuperGraph& g, std::size_t j, const std::vector<Tensor>& z,
                         std::vector<EdgeCache>* caches = nullptr) {
  if (z.empty() || z[g.input].empty()) throw UsageError("mix_output: input node output missing");
  Shape shape{z[g.input].dim(0)};
  shape.insert(shape.end(), g.node_shape.begin(), g.node_shape.end());
  Tensor out(shape);
  for (std::size_t id = 0; id < g.edges.size(); ++id) {
    const Edge& e = g.edges[id];
    if (!e.alive || e.to != j) continue;
    if (e.from >= z.size() || z[e.from].empty()) {
      throw UsageError("mix_output: upstream output of node " + std::to_string(e.from) + " missing for node " +
                       std::to_string(j));
    }
    LayerCache* lc = caches ? &(*caches)[id].layer : nullptr;
    Tensor o = apply_op(e, z[e.from], lc);
    axpy(e.w, o, out);
    if (caches) (*caches)[id].op_out = std::move(o);
  }
  return out;
}

inline GraphCache graph_forward(const SuperGraph& g, const Tensor& x) {
  Shape expect{x.dim(0)};
  expect.insert(expect.end(), g.node_shape.begin(), g.node_shape.end());
  if (x.shape() != expect) {
    throw DimensionError("graph input " + shape_string(x.shape()) + " does not match node shape " +
                         shape_string(g.node_shape));
  }
  GraphCache gc;
  gc.z.resize(g.num_nodes);
  gc.edge.resize(g.edges.size());
  gc.z[g.input] = x;
  for (std::size_t j = 0; j < g.num_nodes; ++j) {
    if (j == g.input) continue;
    gc.z[j] = mix_output(g, j, gc.z, &gc.edge);
  }
  return gc;
}

inline Tensor graph_predict(const SuperGraph& g, const Tensor& x) { return graph_forward(g, x).z[g.output]; }

struct GraphGradients {
  std::vector<double> w;        // per edge
  std::vector<Tensor> weights;  // per edge op layer
  std::vector<Tensor> bias;
};

inline GraphGradients graph_backward(const SuperGraph& g, GraphCache& gc, const Tensor& out_grad) {
  if (gc.z.size() != g.num_nodes || gc.z[g.output].empty()) throw UsageError("graph backward without forward cache");
  GraphGradients gr;
  gr.w.assign(g.edges.size(), 0.0);
  gr.weights.resize(g.edges.size());
  gr.bias.resize(g.edges.size());
  gc.gz.assign(g.num_nodes, Tensor());
  for (std::size_t j = 0; j < g.num_nodes; ++j) gc.gz[j] = zeros_like(gc.z[j]);
  gc.gz[g.output] = out_grad;
  for (std::size_t j = g.num_nodes; j-- > 0;) {
    for (std::size_t id = g.edges.size(); id-- > 0;) {
      const Edge& e = g.edges[id];
      if (!e.alive || e.to != j) continue;
      EdgeCache& ec = gc.edge[id];
      gr.w[id] = dot(gc.gz[j], ec.op_out);
      Tensor go = scaled(gc.gz[j], e.w);
      if (op_has_layer(e.op)) {
        Tensor gin = layer_backward(e.layer, ec.layer, go, e.layer.has_weights() ? &gr.weights[id] : nullptr,
                                    e.layer.has_bias() ? &gr.bias[id] : nullptr, id);
        add_inplace(gc.gz[e.from], gin);
      } else {
        add_inplace(gc.gz[e.from], go);
      }
    }
  }
  gc.has_backward = true;
  return gr;
}

// ---------------------------------------------------------------- dependency variance

namespace detail {

inline double harmonic(std::initializer_list<double> terms) {
  double inv = 0.0;
  for (double t : terms) {
    if (t == 0.0) return 0.0;
    inv += 1.0 / t;
  }
  return 1.0 / inv;
}

inline void check_switch(double s, std::size_t id) {
  if (!(s >= 0.0) || !std::isfinite(s)) {
    throw NumericError("switch of edge " + std::to_string(id) + " must be finite and non-negative, got " +
                       std::to_string(s));
  }
}

}  // namespace detail

/// Sum of alive switches entering `node`.
inline double predecessor_mass(const SuperGraph& g, std::size_t node) {
  double m = 0.0;
  for (std::size_t id : g.incoming(node)) {
    detail::check_switch(g.edges[id].s, id);
    m += g.edges[id].s;
  }
  return m;
}

/// Harmonic combination of gate, predecessor-mass and own switch variances.
/// Terms that do not exist (input node, ungated graph) are omitted; a zero term gives zero.
inline double gamma_of_edge(const SuperGraph& g, std::size_t id) {
  const Edge& e = g.edges.at(id);
  detail::check_switch(e.s, id);
  if (e.is_gate) {
    if (e.from == g.input) return e.s;
    return detail::harmonic({predecessor_mass(g, e.from), e.s});
  }
  std::size_t src = e.from;
  if (g.gated && g.gated_node_of[src] >= 0) {
    const std::size_t guarded = static_cast<std::size_t>(g.gated_node_of[src]);
    const long gid = g.gate_edge_of_node[guarded];
    const Edge& gate = g.edges[static_cast<std::size_t>(gid)];
    detail::check_switch(gate.s, static_cast<std::size_t>(gid));
    const double gs = gate.alive ? gate.s : 0.0;
    if (guarded == g.input) return detail::harmonic({gs, e.s});
    return detail::harmonic({gs, predecessor_mass(g, guarded), e.s});
  }
  if (src == g.input) return e.s;
  return detail::harmonic({predecessor_mass(g, src), e.s});
}

inline void recompute_gammas(SuperGraph& g) {
  std::vector<double> next(g.edges.size());
  for (std::size_t id = 0; id < g.edges.size(); ++id) next[id] = g.edges[id].alive ? gamma_of_edge(g, id) : 0.0;
  for (std::size_t id = 0; id < g.edges.size(); ++id)
    if (g.edges[id].alive) g.edges[id].gamma = next[id];
}

inline std::vector<std::size_t> entropy_prune_mask(const SuperGraph& g, double threshold = kEntropyThreshold) {
  std::vector<std::size_t> kill;
  for (std::size_t id = 0; id < g.edges.size(); ++id)
    if (g.edges[id].alive && g.edges[id].gamma <= threshold) kill.push_back(id);
  return kill;
}

// ---------------------------------------------------------------- pruning

struct PruneReport {
  std::vector<std::size_t> entropy_killed;
  std::vector<std::size_t> cascade_killed;
  std::vector<std::size_t> dead_end_killed;
  std::vector<std::size_t> fallback_path;  // edges kept alive by the degenerate-graph policy
  bool degenerate = false;
};

/// Nodes reachable from the input through alive edges.
inline std::vector<bool> forward_reachable(const SuperGraph& g) {
  std::vector<bool> r(g.num_nodes, false);
  r[g.input] = true;
  for (std::size_t j = 0; j < g.num_nodes; ++j) {
    if (!r[j]) continue;
    for (const Edge& e : g.edges)
      if (e.alive && e.from == j) r[e.to] = true;
  }
  return r;
}

/// Nodes from which the output is reachable through alive edges.
inline std::vector<bool> backward_reachable(const SuperGraph& g) {
  std::vector<bool> r(g.num_nodes, false);
  r[g.output] = true;
  for (std::size_t j = g.num_nodes; j-- > 0;) {
    if (!r[j]) continue;
    for (const Edge& e : g.edges)
      if (e.alive && e.to == j) r[e.from] = true;
  }
  return r;
}

namespace detail {

// Fixpoint: a node whose alive incoming edges are all dead loses every outgoing edge.
inline std::vector<std::size_t> cascade(SuperGraph& g) {
  std::vector<std::size_t> killed;
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t j = 0; j < g.num_nodes; ++j) {
      if (j == g.input) continue;
      bool inflow = false;
      for (const Edge& e : g.edges) inflow = inflow || (e.alive && e.to == j);
      if (inflow) continue;
      for (std::size_t id = 0; id < g.edges.size(); ++id) {
        if (g.edges[id].alive && g.edges[id].from == j) {
          g.edges[id].alive = false;
          killed.push_back(id);
          changed = true;
        }
      }
    }
  }
  std::sort(killed.begin(), killed.end());
  return killed;
}

// Path input->output over edges alive in `mask` maximising the smallest gamma along it.
inline std::vector<std::size_t> widest_path(const SuperGraph& g, const std::vector<bool>& mask) {
  const double ninf = -std::numeric_limits<double>::infinity();
  std::vector<double> best(g.num_nodes, ninf);
  std::vector<long> via(g.num_nodes, -1);
  best[g.input] = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < g.num_nodes; ++j) {
    if (best[j] == ninf) continue;
    for (std::size_t id = 0; id < g.edges.size(); ++id) {
      const Edge& e = g.edges[id];
      if (!mask[id] || e.from != j) continue;
      const double v = std::min(best[j], e.gamma);
      if (v > best[e.to]) {
        best[e.to] = v;
        via[e.to] = static_cast<long>(id);
      }
    }
  }
  std::vector<std::size_t> path;
  if (best[g.output] == ninf) return path;
  for (std::size_t n = g.output; n != g.input;) {
    const std::size_t id = static_cast<std::size_t>(via[n]);
    path.push_back(id);
    n = g.edges[id].from;
  }
  std::reverse(path.begin(), path.end());
  return path;
}

}  // namespace detail

/// Applies `entropy_killed`, then cascades to the fixpoint. When `prune_dead_ends`
/// is set, edges that can no longer reach the output are also removed. If the output becomes
/// unreachable, the widest surviving path from before this step is kept and the report is flagged.
inline PruneReport propagate_dependency_prune(SuperGraph& g, const std::vector<std::size_t>& entropy_killed,
                                              bool prune_dead_ends = false) {
  PruneReport rep;
  const std::vector<bool> before = g.alive_mask();
  for (std::size_t id : entropy_killed) {
    if (g.edges.at(id).alive) {
      g.edges[id].alive = false;
      rep.entropy_killed.push_back(id);
    }
  }
  std::sort(rep.entropy_killed.begin(), rep.entropy_killed.end());
  rep.cascade_killed = detail::cascade(g);

  if (!forward_reachable(g)[g.output]) {
    const std::vector<std::size_t> path = detail::widest_path(g, before);
    if (!path.empty()) {
      rep.degenerate = true;
      rep.fallback_path = path;
      for (std::size_t id = 0; id < g.edges.size(); ++id) g.edges[id].alive = before[id];
      std::vector<bool> keep(g.edges.size(), false);
      for (std::size_t id : path) keep[id] = true;
      std::set<std::size_t> requested(entropy_killed.begin(), entropy_killed.end());
      rep.entropy_killed.clear();
      for (std::size_t id : requested)
        if (!keep[id] && g.edges[id].alive) {
          g.edges[id].alive = false;
          rep.entropy_killed.push_back(id);
        }
      rep.cascade_killed = detail::cascade(g);
    }
  }
  if (prune_dead_ends) {
    const std::vector<bool> reach = backward_reachable(g);
    for (std::size_t id = 0; id < g.edges.size(); ++id) {
      if (g.edges[id].alive && !reach[g.edges[id].to]) {
        g.edges[id].alive = false;
        rep.dead_end_killed.push_back(id);
      }
    }
  }
  return rep;
}

/// Reference set: an edge survives iff it was alive and its source is reachable from the input.
inline std::vector<bool> reachability_filter(const SuperGraph& g) {
  const std::vector<bool> r = forward_reachable(g);
  std::vector<bool> m(g.edges.size());
  for (std::size_t id = 0; id < g.edges.size(); ++id) m[id] = g.edges[id].alive && r[g.edges[id].from];
  return m;
}

// ---------------------------------------------------------------- zero gates

/// Every node with outgoing mixed edges (the input included) gets a gate node right after it;
/// its outgoing edges are re-sourced to the gate node. Node count grows by the number of gates.
inline void insert_zero_gates(SuperGraph& g) {
  if (g.gated) throw UsageError("zero gates already inserted");
  std::vector<bool> needs(g.num_nodes, false);
  for (const Edge& e : g.edges) needs[e.from] = true;
  std::vector<std::size_t> new_id(g.num_nodes);
  std::size_t shift = 0;
  for (std::size_t v = 0; v < g.num_nodes; ++v) {
    new_id[v] = v + shift;
    if (needs[v]) ++shift;
  }
  const std::size_t total = g.num_nodes + shift;
  std::vector<long> gate_edge(total, -1), guarded(total, -1);
  for (Edge& e : g.edges) {
    e.from = new_id[e.from] + 1;  // the gate node sits right after its node
    e.to = new_id[e.to];
  }
  for (std::size_t v = 0; v < g.num_nodes; ++v) {
    if (!needs[v]) continue;
    Edge gate;
    gate.from = new_id[v];
    gate.to = new_id[v] + 1;
    gate.op = OpKind::ZeroGateIdentity;
    gate.is_gate = true;
    g.edges.push_back(gate);
    gate_edge[new_id[v]] = static_cast<long>(g.edges.size() - 1);
    guarded[new_id[v] + 1] = static_cast<long>(new_id[v]);
  }
  g.input = new_id[g.input];
  g.output = new_id[g.output];
  g.num_nodes = total;
  g.gate_edge_of_node = std::move(gate_edge);
  g.gated_node_of = std::move(guarded);
  g.gated = true;
}

// ---------------------------------------------------------------- export

struct ArchEdgeRecord {
  std::size_t id = 0;
  std::size_t from = 0;
  std::size_t to = 0;
  OpKind op = OpKind::Identity;
  double w = 1.0;
  double s = 1.0;
  double gamma = 1.0;
  int group = -1;
  bool is_gate = false;
  bool alive = true;
  std::vector<double> weights;
  std::vector<double> bias;
};

struct ArchExport {
  std::string schema = "1";
  std::size_t num_nodes = 0;
  std::size_t input = 0;
  std::size_t output = 0;
  Shape node_shape;
  Activation op_activation = Activation::Tanh;
  bool gated = false;
  bool degenerate = false;
  std::vector<ArchEdgeRecord> edges;         // alive
  std::vector<ArchEdgeRecord> pruned_edges;  // dead, kept for topology
  std::string config_hash;
  std::uint64_t seed = 0;
};

inline ArchExport export_architecture(const SuperGraph& g) {
  ArchExport ex;
  ex.num_nodes = g.num_nodes;
  ex.input = g.input;
  ex.output = g.output;
  ex.node_shape = g.node_shape;
  ex.op_activation = g.op_activation;
  ex.gated = g.gated;
  for (std::size_t id = 0; id < g.edges.size(); ++id) {
    const Edge& e = g.edges[id];
    ArchEdgeRecord r{id, e.from, e.to, e.op, e.w, e.s, e.gamma, e.group, e.is_gate, e.alive,
                     e.layer.weights.storage(), e.layer.bias.storage()};
    (e.alive ? ex.edges : ex.pruned_edges).push_back(std::move(r));
  }
  ex.degenerate = ex.edges.empty() || !forward_reachable(g)[g.output];
  return ex;
}

inline SuperGraph import_architecture(const ArchExport& ex) {
  if (ex.schema != "1") throw ParseError("unsupported architecture schema '" + ex.schema + "'");
  SuperGraph g = make_graph(ex.num_nodes, ex.node_shape, ex.op_activation);
  g.input = ex.input;
  g.output = ex.output;
  std::vector<const ArchEdgeRecord*> all;
  for (const auto& r : ex.edges) all.push_back(&r);
  for (const auto& r : ex.pruned_edges) all.push_back(&r);
  std::sort(all.begin(), all.end(), [](auto* a, auto* b) { return a->id < b->id; });
  g.edges.resize(all.size());
  for (std::size_t k = 0; k < all.size(); ++k) {
    const ArchEdgeRecord& r = *all[k];
    if (r.id != k) throw ParseError("edge ids must be 0..n-1 without gaps");
    if (r.from >= r.to || r.to >= g.num_nodes) throw ParseError("edge " + std::to_string(r.id) + " is not topological");
    Edge& e = g.edges[k];
    e.from = r.from;
    e.to = r.to;
    e.op = r.op;
    e.w = r.w;
    e.s = r.s;
    e.gamma = r.gamma;
    e.group = r.group;
    e.is_gate = r.is_gate;
    e.alive = r.alive;
    e.layer = make_op_layer(r.op, g.node_shape, g.op_activation);
    if (e.layer.has_weights()) {
      if (r.weights.size() != e.layer.weights.size() || r.bias.size() != e.layer.bias.size()) {
        throw ParseError("edge " + std::to_string(r.id) + ": operation weights have the wrong length");
      }
      e.layer.weights.storage() = r.weights;
      e.layer.bias.storage() = r.bias;
    }
    if (e.is_gate) {
      g.gate_edge_of_node[e.from] = static_cast<long>(k);
      g.gated_node_of[e.to] = static_cast<long>(e.from);
    }
  }
  g.gated = ex.gated;
  return g;
}

}  // namespace ardnas

#endif  // ARDNAS_SUPERGRAPH_HPP
