#ifndef ARDNAS_SEARCH_HPP
#define ARDNAS_SEARCH_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ardnas/arch_curvature.hpp"
#include "ardnas/config.hpp"
#include "ardnas/curvature.hpp"
#include "ardnas/data.hpp"
#include "ardnas/groups.hpp"
#include "ardnas/hyper.hpp"
#include "ardnas/optim.hpp"
#include "ardnas/supergraph.hpp"

namespace ardnas {

/// One metrics.csv row: one per (iteration, epoch); prune counts sit on the iteration's last epoch.
struct IterationRecord {
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double test_error = 0.0;
  std::size_t alive_edges = 0;
  double min_gamma = 0.0;
  double median_gamma = 0.0;
  std::size_t pruned_entropy = 0;
  std::size_t pruned_cascade = 0;
};

/// Per-iteration hyper-parameter snapshot of one edge (or group for compression).
struct HyperSnapshot {
  std::vector<double> s, omega, gamma;
  std::vector<bool> alive;
};

struct SearchReport {
  std::vector<IterationRecord> history;
  std::vector<HyperSnapshot> snapshots;  // one per completed iteration
  std::size_t iterations = 0;
  bool early_stopped = false;
  bool degenerate = false;
  bool severed = false;
  double test_error_before_retrain = std::numeric_limits<double>::quiet_NaN();
  double test_error_after_retrain = std::numeric_limits<double>::quiet_NaN();
  // compression only
  std::vector<std::size_t> surviving_widths;
  std::size_t baseline_params = 0;
  std::size_t surviving_params = 0;
};

struct SearchResult {
  SuperGraph graph;
  SearchReport report;
};

struct CompressResult {
  std::vector<Layer> net;
  SearchReport report;
};

inline HessianMode hessian_mode_from_string(const std::string& s) {
  if (s == "exact") return HessianMode::Exact;
  if (s == "diagonal") return HessianMode::Diagonal;
  if (s == "approx-hessian" || s == "approx") return HessianMode::Approx;
  throw ConfigError("hessian_mode: expected exact, diagonal or approx-hessian, got '" + s + "'");
}

inline ArchHessianMode arch_mode_from_string(const std::string& s) {
  switch (hessian_mode_from_string(s)) {
    case HessianMode::Exact: return ArchHessianMode::Exact;
    case HessianMode::Diagonal: return ArchHessianMode::Diagonal;
    case HessianMode::Approx: return ArchHessianMode::Approx;
  }
  return ArchHessianMode::Exact;
}

namespace detail {

inline constexpr std::uint64_t kCurvatureStream = 0x9E3779B97F4A7C15ull;

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <class PredictFn>
double evaluate(PredictFn&& predict_fn, const Tensor& x, const Tensor& y, EnergyKind kind, std::size_t chunk = 500) {
  const std::size_t n = x.dim(0);
  double acc = 0.0;
  for (std::size_t b = 0; b < n; b += chunk) {
    const std::size_t e = std::min(n, b + chunk);
    const Tensor out = predict_fn(x.slice_rows(b, e));
    const Tensor yy = y.slice_rows(b, e);
    const double v = kind == EnergyKind::MSE ? energy(out, yy, kind).value : classification_error(out, yy);
    acc += v * static_cast<double>(e - b);
  }
  return acc / static_cast<double>(n);
}

inline void gamma_stats(const SuperGraph& g, IterationRecord& r) {
  std::vector<double> gam;
  for (const Edge& e : g.edges)
    if (e.alive) gam.push_back(e.gamma);
  r.alive_edges = gam.size();
  r.min_gamma = gam.empty() ? 0.0 : *std::min_element(gam.begin(), gam.end());
  r.median_gamma = median_of(gam);
}

inline HyperSnapshot snapshot(const SuperGraph& g) {
  HyperSnapshot s;
  for (const Edge& e : g.edges) {
    s.s.push_back(e.s);
    s.omega.push_back(e.omega);
    s.gamma.push_back(e.gamma);
    s.alive.push_back(e.alive);
  }
  return s;
}

// Edge ids per group, ordered by id; validates that tied slots agree in op and span.
inline std::vector<std::vector<std::size_t>> edge_groups(const SuperGraph& g) {
  std::map<int, std::vector<std::size_t>> by;
  for (std::size_t id = 0; id < g.edges.size(); ++id) {
    if (g.edges[id].group < 0) throw UsageError("edge " + std::to_string(id) + " has no group id");
    by[g.edges[id].group].push_back(id);
  }
  std::vector<std::vector<std::size_t>> out;
  std::size_t size = 0;
  for (auto& [gid, members] : by) {
    if (out.empty()) size = members.size();
    if (members.size() != size) {
      throw UsageError("inconsistent group topology: group " + std::to_string(gid) + " has " +
                       std::to_string(members.size()) + " members, expected " + std::to_string(size));
    }
    const Edge& f = g.edges[members.front()];
    for (std::size_t id : members) {
      const Edge& e = g.edges[id];
      if (e.op != f.op || e.to - e.from != f.to - f.from || e.is_gate != f.is_gate) {
        throw UsageError("inconsistent group topology: edge " + std::to_string(id) + " differs from edge " +
                         std::to_string(members.front()) + " in group " + std::to_string(gid));
      }
    }
    out.push_back(std::move(members));
  }
  return out;
}

inline std::vector<std::vector<std::size_t>> singleton_groups(const SuperGraph& g) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t id = 0; id < g.edges.size(); ++id) out.push_back({id});
  return out;
}

// Kills every member of a group with a dead member, cascading until stable.
inline void enforce_tied_masks(SuperGraph& g, const std::vector<std::vector<std::size_t>>& groups, PruneReport& rep,
                               bool dead_ends) {
  for (;;) {
    std::vector<std::size_t> kill;
    for (const auto& m : groups) {
      bool any_dead = false, any_alive = false;
      for (std::size_t id : m) (g.edges[id].alive ? any_alive : any_dead) = true;
      if (any_dead && any_alive)
        for (std::size_t id : m)
          if (g.edges[id].alive) kill.push_back(id);
    }
    if (kill.empty()) return;
    PruneReport r = propagate_dependency_prune(g, kill, dead_ends);
    rep.cascade_killed.insert(rep.cascade_killed.end(), r.entropy_killed.begin(), r.entropy_killed.end());
    rep.cascade_killed.insert(rep.cascade_killed.end(), r.cascade_killed.begin(), r.cascade_killed.end());
    rep.dead_end_killed.insert(rep.dead_end_killed.end(), r.dead_end_killed.begin(), r.dead_end_killed.end());
    rep.degenerate = rep.degenerate || r.degenerate;
  }
}

inline void train_graph_epoch(SuperGraph& g, const Dataset& data, const GraphStepOptions& opt, MomentumSgd& sgd,
                              std::size_t batch, std::mt19937_64& rng, double& mean_loss) {
  const auto batches = epoch_batches(data.train_size(), batch, rng);
  double acc = 0.0;
  for (const auto& idx : batches) {
    const StepStats st = penalized_sgd_step(g, data.x_train.gather_rows(idx), data.y_train.gather_rows(idx), data.kind,
                                            opt, sgd);
    acc += st.energy;
  }
  mean_loss = acc / static_cast<double>(batches.size());
}

inline double graph_test_error(const SuperGraph& g, const Dataset& data) {
  if (data.test_size() == 0) return 0.0;
  return evaluate([&](const Tensor& x) { return graph_predict(g, x); }, data.x_test, data.y_test, data.kind);
}

inline SearchResult search_loop(SuperGraph g, const Dataset& data, const SearchConfig& cfg, bool grouped) {
  if (data.train_size() == 0) throw UsageError("search needs training data");
  if (cfg.epochs_per_iteration == 0) throw ConfigError("epochs_per_iteration must be at least 1");
  SearchResult res;
  if (cfg.t_max == 0) {
    res.graph = std::move(g);
    return res;
  }
  if (grouped && !g.gated) throw UsageError("proxy-cell search expects a gated cell stack (see gate_cell_stack)");
  if (!g.gated) insert_zero_gates(g);
  const auto groups = grouped ? edge_groups(g) : singleton_groups(g);
  const ArchHessianMode mode = arch_mode_from_string(cfg.hessian_mode);
  for (Edge& e : g.edges) {
    e.w = 1.0;
    e.s = 1.0;
    e.gamma = 1.0;
    e.omega = 0.0;
    e.c = 1.0;
  }
  std::mt19937_64 rng(cfg.seed), crng(cfg.seed ^ kCurvatureStream);
  MomentumSgd sgd(cfg.learning_rate, cfg.momentum);
  std::vector<double> group_omega(groups.size(), 0.0);
  GraphStepOptions opt;
  opt.lambda_w = cfg.lambda_w;
  opt.lambda = cfg.lambda;
  opt.train_ops = cfg.train_op_weights;
  opt.proximal = cfg.proximal;
  if (grouped) {
    opt.w_groups = &groups;
    opt.group_omega = &group_omega;
  }

  for (std::size_t t = 1; t <= cfg.t_max; ++t) {
    for (std::size_t ep = 1; ep <= cfg.epochs_per_iteration; ++ep) {
      IterationRecord r;
      r.iteration = t;
      r.epoch = ep;
      train_graph_epoch(g, data, opt, sgd, cfg.batch_size, rng, r.loss);
      res.report.history.push_back(r);
    }

    const auto cidx = sample_indices(data.train_size(), cfg.curvature_batch, crng);
    std::vector<double> h =
        arch_scalar_hessian(g, data.x_train.gather_rows(cidx), data.y_train.gather_rows(cidx), data.kind, mode);
    for (double& v : h) v *= cfg.curvature_scale / cfg.sigma2;
    std::vector<double> prev_gamma(g.edges.size());
    for (std::size_t id = 0; id < g.edges.size(); ++id) prev_gamma[id] = g.edges[id].gamma;

    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const auto& m = groups[gi];
      if (!g.edges[m.front()].alive || !(g.edges[m.front()].gamma > 0.0)) continue;
      std::vector<double> w, gp, c;
      for (std::size_t id : m) {
        Edge& e = g.edges[id];
        e.hess = h[id];
        e.c = update_posterior_variance(e.gamma, h[id]);
        w.push_back(e.w);
        gp.push_back(e.gamma);
        c.push_back(e.c);
      }
      if (m.size() == 1) {
        Edge& e = g.edges[m.front()];
        e.omega = update_omega(e.gamma, e.c, cfg.omega_floor);
        e.s = update_switch(e.w, e.omega, cfg.switch_cap);
      } else {
        const GroupUpdate u = group_update(w, gp, c, cfg.omega_floor, cfg.switch_cap);
        for (std::size_t id : m) {
          g.edges[id].omega = u.omega;
          g.edges[id].s = u.s;
        }
      }
      group_omega[gi] = g.edges[m.front()].omega;
    }
    recompute_gammas(g);
    if (grouped) {
      for (const auto& m : groups)
        for (std::size_t id : m) g.edges[id].gamma = g.edges[m.front()].gamma;
    }

    PruneReport rep = propagate_dependency_prune(g, entropy_prune_mask(g, cfg.prune_threshold), cfg.prune_dead_ends);
    if (grouped) enforce_tied_masks(g, groups, rep, cfg.prune_dead_ends);
    res.report.degenerate = res.report.degenerate || rep.degenerate;

    IterationRecord& last = res.report.history.back();
    last.pruned_entropy = rep.entropy_killed.size();
    last.pruned_cascade = rep.cascade_killed.size() + rep.dead_end_killed.size();
    const double terr = graph_test_error(g, data);
    for (std::size_t k = res.report.history.size() - cfg.epochs_per_iteration; k < res.report.history.size(); ++k) {
      gamma_stats(g, res.report.history[k]);
      res.report.history[k].test_error = terr;
    }
    res.report.snapshots.push_back(snapshot(g));
    res.report.iterations = t;

    double moved = 0.0;
    for (std::size_t id = 0; id < g.edges.size(); ++id)
      if (g.edges[id].alive) moved = std::max(moved, std::abs(g.edges[id].gamma - prev_gamma[id]));
    const bool pruned_any = last.pruned_entropy + last.pruned_cascade > 0;
    if (!pruned_any && moved < cfg.early_stop_tol) {
      res.report.early_stopped = true;
      break;
    }
  }
  res.report.test_error_before_retrain = graph_test_error(g, data);
  res.graph = std::move(g);
  return res;
}

}  // namespace detail

/// Edge-level search: train, curvature, (C, omega, s) per edge, gamma, entropy prune, cascade.
/// Retraining is a separate step (retrain_pruned).
inline SearchResult run_proxyless(SuperGraph g, const Dataset& data, const SearchConfig& cfg) {
  return detail::search_loop(std::move(g), data, cfg, false);
}

/// Tied-cell search: every group shares (s, omega, gamma) and its prune decision.
inline SearchResult run_proxy_cells(SuperGraph g, const Dataset& data, const SearchConfig& cfg) {
  return detail::search_loop(std::move(g), data, cfg, true);
}

/// Standard training of the surviving graph with w frozen at 1; returns the test error.
inline double retrain_pruned(SuperGraph& g, const Dataset& data, const SearchConfig& cfg) {
  for (Edge& e : g.edges)
    if (e.alive) e.w = 1.0;
  if (cfg.retrain_epochs == 0) return detail::graph_test_error(g, data);
  std::mt19937_64 rng(cfg.seed + 1);
  MomentumSgd sgd(cfg.retrain_learning_rate, cfg.momentum);
  GraphStepOptions opt;
  opt.lambda = cfg.lambda;
  opt.freeze_w = true;
  opt.train_ops = true;
  double loss = 0.0;
  for (std::size_t ep = 0; ep < cfg.retrain_epochs; ++ep) detail::train_graph_epoch(g, data, opt, sgd, cfg.batch_size, rng, loss);
  return detail::graph_test_error(g, data);
}

// ---------------------------------------------------------------- compression

/// One pattern's groups and state on one weighted layer.
struct LayerGroupState {
  std::size_t layer = 0;
  GroupPattern pattern = GroupPattern::ShapeWise;
  std::vector<GroupSpec> specs;
  std::vector<std::vector<std::size_t>> members;
  GroupHyper hyper;
  double lambda = 0.0;
};

inline std::vector<std::size_t> weighted_layers(const std::vector<Layer>& net) {
  std::vector<std::size_t> w;
  for (std::size_t i = 0; i < net.size(); ++i)
    if (net[i].has_weights()) w.push_back(i);
  return w;
}

/// Conv layers: output filters with any alive weight. FC layers: input columns with any alive weight.
inline std::vector<std::size_t> surviving_widths(const std::vector<Layer>& net) {
  std::vector<std::size_t> out;
  for (const Layer& l : net) {
    if (!l.has_weights()) continue;
    auto alive = [&](std::size_t i) { return (!l.has_mask() || l.mask[i] != 0.0) && l.weights[i] != 0.0; };
    std::size_t n = 0;
    if (l.kind == LayerKind::Conv2D) {
      const std::size_t per = l.weights.size() / l.geom.out_channels;
      for (std::size_t f = 0; f < l.geom.out_channels; ++f) {
        bool any = false;
        for (std::size_t i = 0; i < per && !any; ++i) any = alive(f * per + i);
        n += any;
      }
    } else {
      const std::size_t in = l.geom.in_channels, outc = l.geom.out_channels;
      for (std::size_t c = 0; c < in; ++c) {
        bool any = false;
        for (std::size_t r = 0; r < outc && !any; ++r) any = alive(r * in + c);
        n += any;
      }
    }
    out.push_back(n);
  }
  return out;
}

inline std::size_t count_alive_weights(const std::vector<Layer>& net) {
  std::size_t n = 0;
  for (const Layer& l : net)
    if (l.has_weights()) n += l.alive_weights();
  return n;
}

inline double net_test_error(const std::vector<Layer>& net, const Dataset& data) {
  if (data.test_size() == 0) return 0.0;
  return detail::evaluate([&](const Tensor& x) { return predict(net, x); }, data.x_test, data.y_test, data.kind);
}

namespace detail {

inline double train_net_epoch(std::vector<Layer>& net, const Dataset& data, double decay,
                              const std::vector<LayerPenalty>& pen, MomentumSgd& sgd, std::size_t batch,
                              std::mt19937_64& rng, bool proximal) {
  const auto batches = epoch_batches(data.train_size(), batch, rng);
  double acc = 0.0;
  for (const auto& idx : batches) {
    acc += penalized_sgd_step(net, data.x_train.gather_rows(idx), data.y_train.gather_rows(idx), data.kind, decay, pen,
                              sgd, proximal)
               .energy;
  }
  return acc / static_cast<double>(batches.size());
}

}  // namespace detail

/// Structured compression: group-penalised training, layer Hessians, group hyperparameter updates, group pruning
/// by persistent zero masks. `patterns[k]` and `layer_lambda[k]` refer to the k-th weighted layer.
inline CompressResult run_compression(std::vector<Layer> net, const Dataset& data, const SearchConfig& cfg,
                                      const std::vector<std::vector<GroupPattern>>& patterns,
                                      const std::vector<double>& layer_lambda) {
  const std::vector<std::size_t> wl = weighted_layers(net);
  if (patterns.size() != wl.size() || layer_lambda.size() != wl.size()) {
    throw ConfigError("patterns/layer_lambda: need one entry per weighted layer (" + std::to_string(wl.size()) + ")");
  }
  for (std::size_t k = 0; k < wl.size(); ++k) {
    Layer& l = net[wl[k]];
    if (!l.has_mask()) l.mask = Tensor(l.weights.shape(), 1.0);
  }
  std::vector<LayerGroupState> states;
  for (std::size_t k = 0; k < wl.size(); ++k) {
    if (layer_lambda[k] < 0.0) throw ConfigError("layer_lambda must be non-negative");
    for (GroupPattern p : patterns[k]) {
      LayerGroupState s;
      s.layer = wl[k];
      s.pattern = p;
      s.specs = make_groups(p, net[wl[k]].weights.shape());
      for (const auto& sp : s.specs) s.members.push_back(sp.members);
      s.hyper = GroupHyper::initial(s.specs.size());
      s.lambda = layer_lambda[k];
      states.push_back(std::move(s));
    }
  }
  CompressResult res;
  res.report.baseline_params = 0;
  for (std::size_t i : wl) res.report.baseline_params += net[i].weights.size();
  const HessianMode mode = hessian_mode_from_string(cfg.hessian_mode);
  std::mt19937_64 rng(cfg.seed), crng(cfg.seed ^ detail::kCurvatureStream);
  MomentumSgd sgd(cfg.learning_rate, cfg.momentum);

  auto penalties = [&] {
    std::vector<LayerPenalty> pen;
    for (const auto& s : states) pen.push_back({s.layer, &s.members, &s.hyper.omega, s.lambda});
    return pen;
  };

  for (std::size_t t = 1; t <= cfg.t_max; ++t) {
    const auto pen = penalties();
    for (std::size_t ep = 1; ep <= cfg.epochs_per_iteration; ++ep) {
      IterationRecord r;
      r.iteration = t;
      r.epoch = ep;
      r.loss = detail::train_net_epoch(net, data, cfg.lambda, pen, sgd, cfg.batch_size, rng, cfg.proximal);
      res.report.history.push_back(r);
    }
    const auto cidx = sample_indices(data.train_size(), cfg.curvature_batch, crng);
    CurvatureCache cc =
        network_hessians(net, data.x_train.gather_rows(cidx), data.y_train.gather_rows(cidx), data.kind, mode);
    for (auto& h : cc.weight_hessian)
      for (double& v : h.storage()) v *= cfg.curvature_scale;

    std::vector<Tensor> masks(net.size());
    for (std::size_t i : wl) masks[i] = net[i].mask;
    std::vector<double> prev;
    std::size_t pruned = 0;
    std::vector<GroupHyper> saved;
    for (auto& s : states) {
      saved.push_back(s.hyper);
      prev.insert(prev.end(), s.hyper.gamma.begin(), s.hyper.gamma.end());
      if (s.lambda == 0.0) continue;  // layer not under the sparsity prior
      structural_update(net[s.layer].weights, cc.weight_hessian[s.layer], s.specs, s.hyper, cfg.omega_floor);
      pruned += prune_groups(s.specs, s.hyper, masks[s.layer], cfg.compress_threshold);
    }
    bool severed = false;
    for (std::size_t i : wl) {
      bool any = false;
      for (double m : masks[i].storage()) any = any || m != 0.0;
      severed = severed || !any;
    }
    if (severed) {
      for (std::size_t k = 0; k < states.size(); ++k) states[k].hyper = saved[k];
      res.report.severed = true;
      pruned = 0;
    } else {
      for (std::size_t i : wl) {
        net[i].mask = masks[i];
        net[i].apply_mask();
      }
    }

    IterationRecord& last = res.report.history.back();
    last.pruned_entropy = pruned;
    std::vector<double> gam;
    HyperSnapshot snap;
    double moved = 0.0;
    std::size_t k = 0;
    for (const auto& s : states)
      for (std::size_t gi = 0; gi < s.hyper.gamma.size(); ++gi, ++k) {
        if (s.hyper.alive[gi]) {
          gam.push_back(s.hyper.gamma[gi]);
          moved = std::max(moved, std::abs(s.hyper.gamma[gi] - prev[k]));
        }
        snap.gamma.push_back(s.hyper.gamma[gi]);
        snap.omega.push_back(s.hyper.omega[gi]);
        snap.s.push_back(s.hyper.gamma[gi]);
        snap.alive.push_back(s.hyper.alive[gi]);
      }
    const double terr = net_test_error(net, data);
    const std::size_t alive_w = count_alive_weights(net);
    for (std::size_t r = res.report.history.size() - cfg.epochs_per_iteration; r < res.report.history.size(); ++r) {
      auto& rec = res.report.history[r];
      rec.test_error = terr;
      rec.alive_edges = alive_w;
      rec.min_gamma = gam.empty() ? 0.0 : *std::min_element(gam.begin(), gam.end());
      rec.median_gamma = detail::median_of(gam);
    }
    res.report.snapshots.push_back(std::move(snap));
    res.report.iterations = t;
    if (severed) break;
    if (pruned == 0 && moved < cfg.early_stop_tol) {
      res.report.early_stopped = true;
      break;
    }
  }
  res.report.test_error_before_retrain = net_test_error(net, data);
  res.report.surviving_widths = surviving_widths(net);
  res.report.surviving_params = count_alive_weights(net);
  res.net = std::move(net);
  return res;
}

/// Standard training of a (masked) network; masked weights stay zero. Returns the test error.
inline double retrain_pruned(std::vector<Layer>& net, const Dataset& data, const SearchConfig& cfg) {
  std::mt19937_64 rng(cfg.seed + 1);
  MomentumSgd sgd(cfg.retrain_learning_rate, cfg.momentum);
  for (std::size_t ep = 0; ep < cfg.retrain_epochs; ++ep)
    detail::train_net_epoch(net, data, cfg.lambda, {}, sgd, cfg.batch_size, rng, false);
  return net_test_error(net, data);
}

}  // namespace ardnas

#endif  // ARDNAS_SEARCH_HPP
