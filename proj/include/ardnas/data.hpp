#ifndef ARDNAS_DATA_HPP
#define ARDNAS_DATA_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ardnas/error.hpp"
#include "ardnas/network.hpp"
#include "ardnas/supergraph.hpp"
#include "ardnas/tensor.hpp"

namespace ardnas {

struct Dataset {
  Tensor x_train, y_train;
  Tensor x_test, y_test;
  EnergyKind kind = EnergyKind::MSE;
  double mean = 0.0;  // normalisation applied to inputs (x - mean) / stddev
  double stddev = 1.0;

  std::size_t train_size() const { return x_train.empty() ? 0 : x_train.dim(0); }
  std::size_t test_size() const { return x_test.empty() ? 0 : x_test.dim(0); }
};

// ---------------------------------------------------------------- IDX

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
};

namespace detail {

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off, const std::string& path) {
  if (off + 4 > b.size()) {
    throw ParseError(path + ": truncated header at byte offset " + std::to_string(off) + " (file has " +
                     std::to_string(b.size()) + " bytes)");
  }
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

inline void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

}  // namespace detail

/// Parses an unsigned-byte IDX buffer; `path` only labels error messages.
inline IdxArray parse_idx(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  const std::uint32_t magic = detail::read_be32(bytes, 0, path);
  if ((magic & 0xFFFFFF00u) != 0x00000800u || (magic & 0xFFu) == 0) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08X", magic);
    throw ParseError(path + ": bad IDX magic " + std::string(buf) + " at byte offset 0");
  }
  IdxArray a;
  const std::size_t rank = magic & 0xFFu;
  std::size_t count = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    a.dims.push_back(detail::read_be32(bytes, 4 + 4 * d, path));
    count *= a.dims.back();
  }
  const std::size_t off = 4 + 4 * rank;
  if (bytes.size() < off + count) {
    throw ParseError(path + ": truncated data at byte offset " + std::to_string(bytes.size()) + " (expected " +
                     std::to_string(off + count) + " bytes)");
  }
  if (bytes.size() > off + count) {
    throw ParseError(path + ": " + std::to_string(bytes.size() - off - count) + " trailing bytes after byte offset " +
                     std::to_string(off + count));
  }
  a.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off), bytes.end());
  return a;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline IdxArray read_idx(const std::string& path) { return parse_idx(read_file_bytes(path), path); }

inline void write_idx(const std::string& path, const IdxArray& a) {
  std::vector<std::uint8_t> b;
  detail::put_be32(b, 0x00000800u | static_cast<std::uint32_t>(a.dims.size()));
  for (std::uint32_t d : a.dims) detail::put_be32(b, d);
  b.insert(b.end(), a.data.begin(), a.data.end());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

/// Images as (n, 1, rows, cols) scaled to [0, 1]; labels as (n) with values checked against 0..9.
inline std::pair<Tensor, Tensor> load_idx_pair(const std::string& images_path, const std::string& labels_path) {
  const IdxArray im = read_idx(images_path);
  const IdxArray lb = read_idx(labels_path);
  if (im.dims.size() != 3) throw ParseError(images_path + ": image file must have 3 dimensions");
  if (lb.dims.size() != 1) throw ParseError(labels_path + ": label file must have 1 dimension");
  if (im.dims[0] != lb.dims[0]) {
    throw ParseError("count mismatch: " + std::to_string(im.dims[0]) + " images vs " + std::to_string(lb.dims[0]) +
                     " labels");
  }
  const std::size_t n = im.dims[0], r = im.dims[1], c = im.dims[2];
  Tensor x({n, 1, r, c});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = im.data[i] / 255.0;
  Tensor y({n});
  for (std::size_t i = 0; i < n; ++i) {
    if (lb.data[i] > 9) {
      throw ParseError(labels_path + ": label " + std::to_string(lb.data[i]) + " outside 0-9 at byte offset " +
                       std::to_string(8 + i));
    }
    y[i] = lb.data[i];
  }
  return {std::move(x), std::move(y)};
}

/// Standard MNIST file names under `dir`; standardised by the training-set pixel mean/std.
inline Dataset load_mnist_idx(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path d(dir);
  Dataset ds;
  ds.kind = EnergyKind::SoftmaxCrossEntropy;
  std::tie(ds.x_train, ds.y_train) =
      load_idx_pair((d / "train-images-idx3-ubyte").string(), (d / "train-labels-idx1-ubyte").string());
  std::tie(ds.x_test, ds.y_test) =
      load_idx_pair((d / "t10k-images-idx3-ubyte").string(), (d / "t10k-labels-idx1-ubyte").string());
  double s = 0.0, sq = 0.0;
  for (double v : ds.x_train.storage()) {
    s += v;
    sq += v * v;
  }
  const double n = static_cast<double>(ds.x_train.size());
  ds.mean = s / n;
  ds.stddev = std::sqrt(sq / n - ds.mean * ds.mean);
  for (Tensor* t : {&ds.x_train, &ds.x_test})
    for (double& v : t->storage()) v = (v - ds.mean) / ds.stddev;
  return ds;
}

inline bool mnist_available(const std::string& dir) {
  namespace fs = std::filesystem;
  for (const char* f : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
                        "t10k-labels-idx1-ubyte"})
    if (!fs::exists(fs::path(dir) / f)) return false;
  return true;
}

/// Keeps the first n training samples (0 keeps all).
inline void limit_train(Dataset& ds, std::size_t n) {
  if (n == 0 || n >= ds.train_size()) return;
  ds.x_train = ds.x_train.slice_rows(0, n);
  ds.y_train = ds.y_train.slice_rows(0, n);
}

// ---------------------------------------------------------------- batching

/// Shuffled minibatch index lists for one epoch.
template <class Rng>
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch, Rng& rng) {
  if (batch == 0) throw UsageError("batch size must be positive");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> d(0, i - 1);
    std::swap(idx[i - 1], idx[d(rng)]);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch) out.emplace_back(idx.begin() + b, idx.begin() + std::min(n, b + batch));
  return out;
}

template <class Rng>
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, Rng& rng) {
  auto b = epoch_batches(n, std::max<std::size_t>(1, std::min(n, k)), rng);
  return b.front();
}

// ---------------------------------------------------------------- synthetic tasks

struct SyntheticTask {
  SuperGraph graph;          // ungated supergraph, all edges alive, w = 1
  Dataset data;
  std::vector<bool> planted;  // over graph.edges
};

/// True when every planted edge lies on an input->output path inside the planted subgraph.
inline bool planted_connected(const SuperGraph& g, const std::vector<bool>& planted) {
  SuperGraph h = g;
  for (std::size_t id = 0; id < h.edges.size(); ++id) h.edges[id].alive = planted[id];
  const std::vector<bool> f = forward_reachable(h), b = backward_reachable(h);
  bool any = false;
  for (std::size_t id = 0; id < h.edges.size(); ++id) {
    if (!planted[id]) continue;
    any = true;
    if (!f[h.edges[id].from] || !b[h.edges[id].to]) return false;
  }
  return any && f[h.output];
}

/// Targets of the planted subgraph with every planted w = 1, plus Gaussian noise of variance sigma2.
template <class Rng>
Tensor planted_targets(const SuperGraph& g, const std::vector<bool>& planted, const Tensor& x, double sigma2, Rng& rng) {
  if (!planted_connected(g, planted)) throw UsageError("planted subset does not connect input to output");
  SuperGraph h = g;
  for (std::size_t id = 0; id < h.edges.size(); ++id) {
    h.edges[id].alive = planted[id];
    h.edges[id].w = 1.0;
  }
  Tensor y = graph_predict(h, x);
  if (sigma2 > 0.0) {
    std::normal_distribution<double> nd(0.0, std::sqrt(sigma2));
    for (double& v : y.storage()) v += nd(rng);
  }
  return y;
}

template <class Rng>
Tensor gaussian_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> nd(0.0, 1.0);
  for (double& v : t.storage()) v = nd(rng);
  return t;
}

namespace detail {

struct Slot {
  std::size_t from, to;
  OpKind op;
};

// Picks `planted` slots forming an input->output path (extra ones chained onto it), then fills up
// to `edges` slots at random. Returns slots sorted topologically and the planted flags.
template <class Rng>
std::pair<std::vector<Slot>, std::vector<bool>> random_slots(std::size_t nodes, std::size_t edges, std::size_t planted,
                                                            Rng& rng) {
  std::vector<Slot> all;
  for (std::size_t j = 1; j < nodes; ++j)
    for (std::size_t i = 0; i < j; ++i)
      for (OpKind op : {OpKind::FullyConnected, OpKind::Identity}) all.push_back({i, j, op});
  if (edges > all.size()) {
    throw UsageError("cannot place " + std::to_string(edges) + " edges on " + std::to_string(nodes) + " nodes");
  }
  if (planted == 0 || planted > edges) throw UsageError("planted subset size must be in [1, edges]");
  std::vector<bool> used(all.size(), false), plant(all.size(), false);
  auto index_of = [&](std::size_t i, std::size_t j, OpKind op) {
    for (std::size_t k = 0; k < all.size(); ++k)
      if (all[k].from == i && all[k].to == j && all[k].op == op) return k;
    return all.size();
  };
  std::size_t placed = 0;
  if (planted == edges) {
    // every edge planted: a random slot set that is entirely connected
    for (int attempt = 0; attempt < 10000; ++attempt) {
      std::vector<std::size_t> perm(all.size());
      for (std::size_t k = 0; k < perm.size(); ++k) perm[k] = k;
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<bool> pick(all.size(), false);
      for (std::size_t k = 0; k < edges; ++k) pick[perm[k]] = true;
      SuperGraph g = make_graph(nodes, {1});
      std::vector<bool> flags;
      for (std::size_t k = 0; k < all.size(); ++k)
        if (pick[k]) {
          add_edge(g, all[k].from, all[k].to, all[k].op);
          flags.push_back(true);
        }
      if (planted_connected(g, flags)) {
        used = pick;
        plant = pick;
        placed = edges;
        break;
      }
    }
    if (placed != edges) throw UsageError("no connected arrangement of the requested edges");
  } else {
    const std::size_t hops = std::min(planted, nodes - 1);
    std::vector<std::size_t> inner(nodes - 2);
    for (std::size_t k = 0; k < inner.size(); ++k) inner[k] = k + 1;
    std::shuffle(inner.begin(), inner.end(), rng);
    std::vector<std::size_t> path{0};
    std::vector<std::size_t> mid(inner.begin(), inner.begin() + static_cast<std::ptrdiff_t>(hops - 1));
    std::sort(mid.begin(), mid.end());
    path.insert(path.end(), mid.begin(), mid.end());
    path.push_back(nodes - 1);
    for (std::size_t k = 0; k + 1 < path.size(); ++k) {
      const std::size_t s = index_of(path[k], path[k + 1], OpKind::FullyConnected);
      used[s] = plant[s] = true;
      ++placed;
    }
    // extra planted edges between path nodes keep the subset connected
    std::vector<std::size_t> extra;
    for (std::size_t a = 0; a < path.size(); ++a)
      for (std::size_t b = a + 1; b < path.size(); ++b)
        for (OpKind op : {OpKind::FullyConnected, OpKind::Identity}) {
          const std::size_t s = index_of(path[a], path[b], op);
          if (!used[s]) extra.push_back(s);
        }
    std::shuffle(extra.begin(), extra.end(), rng);
    for (std::size_t s : extra) {
      if (placed == planted) break;
      used[s] = plant[s] = true;
      ++placed;
    }
    if (placed != planted) throw UsageError("planted subset size too large for a connected path");
    std::vector<std::size_t> rest;
    for (std::size_t k = 0; k < all.size(); ++k)
      if (!used[k]) rest.push_back(k);
    std::shuffle(rest.begin(), rest.end(), rng);
    for (std::size_t k = 0; k + planted < edges; ++k) used[rest[k]] = true;
  }
  std::vector<Slot> slots;
  std::vector<bool> flags;
  for (std::size_t k = 0; k < all.size(); ++k)
    if (used[k]) {
      slots.push_back(all[k]);
      flags.push_back(plant[k]);
    }
  return {slots, flags};
}

}  // namespace detail

/// Planted-subgraph regression task on a random supergraph of FC / identity edges.
/// With train_op_weights = false the returned graph carries the generating operation weights.
inline SyntheticTask gen_synthetic_dag_task(std::uint64_t seed, std::size_t nodes, std::size_t edges, std::size_t planted,
                                            std::size_t width, std::size_t n_train, std::size_t n_test, double sigma2,
                                            bool train_op_weights = false) {
  if (nodes < 2) throw UsageError("synthetic task needs at least 2 nodes");
  std::mt19937_64 rng(seed);
  auto [slots, flags] = detail::random_slots(nodes, edges, planted, rng);
  SyntheticTask t;
  t.graph = make_graph(nodes, {width}, Activation::Tanh);
  for (const auto& s : slots) add_edge(t.graph, s.from, s.to, s.op);
  t.planted = flags;
  // generator weights: larger than the default init so each planted FC edge is clearly nonlinear
  std::uniform_real_distribution<double> wd(-1.5, 1.5), bd(-0.5, 0.5);
  for (Edge& e : t.graph.edges) {
    if (!e.layer.has_weights()) continue;
    for (double& v : e.layer.weights.storage()) v = wd(rng);
    for (double& v : e.layer.bias.storage()) v = bd(rng);
  }
  t.data.kind = EnergyKind::MSE;
  t.data.x_train = gaussian_tensor({n_train, width}, rng);
  t.data.x_test = gaussian_tensor({n_test, width}, rng);
  t.data.y_train = planted_targets(t.graph, t.planted, t.data.x_train, sigma2, rng);
  t.data.y_test = planted_targets(t.graph, t.planted, t.data.x_test, sigma2, rng);
  if (train_op_weights) init_op_weights(t.graph, rng);
  return t;
}

/// Stacks `cells` copies of a template cell; cell c spans nodes [c (k-1), c (k-1) + k - 1] so
/// consecutive cells share their boundary node. Every copy of template edge e gets group e.
inline SuperGraph build_cell_stack(std::size_t cells, std::size_t cell_nodes,
                                   const std::vector<std::pair<std::size_t, std::size_t>>& links,
                                   const std::vector<OpKind>& ops, Shape node_shape, Activation act = Activation::Tanh) {
  if (cells == 0 || cell_nodes < 2) throw UsageError("cell stack needs at least one cell of two nodes");
  if (links.size() != ops.size()) throw UsageError("cell template: one op per link required");
  SuperGraph g = make_graph(cells * (cell_nodes - 1) + 1, std::move(node_shape), act);
  for (std::size_t c = 0; c < cells; ++c) {
    const std::size_t base = c * (cell_nodes - 1);
    for (std::size_t e = 0; e < links.size(); ++e) {
      if (links[e].second >= cell_nodes) throw UsageError("cell template edge leaves the cell");
      const std::size_t id = add_edge(g, base + links[e].first, base + links[e].second, ops[e]);
      g.edges[id].group = static_cast<int>(e);
    }
  }
  return g;
}

/// Inserts zero gates into a cell stack and ties each gate to its node's position in the cell:
/// gate groups are numbered after the template edges.
inline void gate_cell_stack(SuperGraph& g, std::size_t cell_nodes, std::size_t template_edges) {
  std::vector<bool> needs(g.num_nodes, false);
  for (const Edge& e : g.edges) needs[e.from] = true;
  const std::size_t first_gate = g.edges.size();
  insert_zero_gates(g);
  std::size_t k = first_gate;
  for (std::size_t v = 0; v < needs.size(); ++v) {
    if (!needs[v]) continue;
    g.edges[k++].group = static_cast<int>(template_edges + v % (cell_nodes - 1));
  }
}

/// Planted shared-cell task: the same planted cell support in every cell.
inline SyntheticTask gen_synthetic_cell_task(std::uint64_t seed, std::size_t cells, std::size_t cell_nodes,
                                             std::size_t cell_edges, std::size_t planted, std::size_t width,
                                             std::size_t n_train, std::size_t n_test, double sigma2) {
  std::mt19937_64 rng(seed);
  auto [slots, flags] = detail::random_slots(cell_nodes, cell_edges, planted, rng);
  std::vector<std::pair<std::size_t, std::size_t>> links;
  std::vector<OpKind> ops;
  for (const auto& s : slots) {
    links.emplace_back(s.from, s.to);
    ops.push_back(s.op);
  }
  SyntheticTask t;
  t.graph = build_cell_stack(cells, cell_nodes, links, ops, {width}, Activation::Tanh);
  std::uniform_real_distribution<double> wd(-1.5, 1.5), bd(-0.5, 0.5);
  // tied cells share operation weights so the template is identifiable
  std::vector<Tensor> tw(links.size()), tb(links.size());
  for (std::size_t e = 0; e < links.size(); ++e) {
    const Edge& ed = t.graph.edges[e];
    if (!ed.layer.has_weights()) continue;
    tw[e] = Tensor(ed.layer.weights.shape());
    tb[e] = Tensor(ed.layer.bias.shape());
    for (double& v : tw[e].storage()) v = wd(rng);
    for (double& v : tb[e].storage()) v = bd(rng);
  }
  for (Edge& e : t.graph.edges) {
    if (!e.layer.has_weights()) continue;
    e.layer.weights = tw[static_cast<std::size_t>(e.group)];
    e.layer.bias = tb[static_cast<std::size_t>(e.group)];
  }
  for (std::size_t c = 0; c < cells; ++c) t.planted.insert(t.planted.end(), flags.begin(), flags.end());
  t.data.kind = EnergyKind::MSE;
  t.data.x_train = gaussian_tensor({n_train, width}, rng);
  t.data.x_test = gaussian_tensor({n_test, width}, rng);
  t.data.y_train = planted_targets(t.graph, t.planted, t.data.x_train, sigma2, rng);
  t.data.y_test = planted_targets(t.graph, t.planted, t.data.x_test, sigma2, rng);
  return t;
}

// ---------------------------------------------------------------- reference networks

inline std::vector<Layer> make_lenet300() {
  return {Layer::fully_connected(784, 300, Activation::ReLU), Layer::fully_connected(300, 100, Activation::ReLU),
          Layer::fully_connected(100, 10, Activation::Identity)};
}

inline std::vector<Layer> make_lenet5() {
  return {Layer::conv2d(1, 20, 5, 5, 1, 0, Activation::ReLU),
          Layer::max_pool(2, 2),
          Layer::conv2d(20, 50, 5, 5, 1, 0, Activation::ReLU),
          Layer::max_pool(2, 2),
          Layer::fully_connected(800, 500, Activation::ReLU),
          Layer::fully_connected(500, 10, Activation::Identity)};
}

}  // namespace ardnas

#endif  // ARDNAS_DATA_HPP
