#ifndef ARDNAS_OPTIM_HPP
#define ARDNAS_OPTIM_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ardnas/error.hpp"
#include "ardnas/hyper.hpp"
#include "ardnas/network.hpp"
#include "ardnas/supergraph.hpp"

namespace ardnas {

/// Heavy-ball SGD: v = mu v + g; p -= lr v. One velocity buffer per parameter slot.
class MomentumSgd {
 public:
  MomentumSgd(double lr, double mu) : lr_(lr), mu_(mu) {}

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  void step(std::size_t slot, std::span<double> p, std::span<const double> g, const Tensor* mask = nullptr) {
    if (p.size() != g.size()) throw DimensionError("sgd: parameter and gradient lengths differ");
    if (slot >= vel_.size()) vel_.resize(slot + 1);
    std::vector<double>& v = vel_[slot];
    if (v.size() != p.size()) v.assign(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (mask && (*mask)[i] == 0.0) {
        v[i] = 0.0;
        p[i] = 0.0;
        continue;
      }
      v[i] = mu_ * v[i] + g[i];
      p[i] -= lr_ * v[i];
    }
  }

  void reset() { vel_.clear(); }

 private:
  double lr_;
  double mu_;
  std::vector<std::vector<double>> vel_;
};

struct StepStats {
  double energy = 0.0;
  double penalty = 0.0;
};

/// Penalty on architecture scalars: nullptr groups = per-edge reweighted l1 with edge omegas;
/// otherwise a group l2 over edge-id groups with one omega per group.
struct GraphStepOptions {
  double lambda_w = 0.0;
  double lambda = 0.0;
  bool freeze_w = false;
  bool train_ops = true;
  bool proximal = false;
  const std::vector<std::vector<std::size_t>>* w_groups = nullptr;
  const std::vector<double>* group_omega = nullptr;
};

namespace detail {

inline void check_finite_loss(double v, const char* where) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string(where) + ": loss became " + std::to_string(v) +
                       " (try a smaller learning rate or stronger weight decay)");
  }
}

// Block soft-threshold of v over each group by t * omega_g.
inline void group_soft_threshold(std::vector<double>& v, const std::vector<std::vector<std::size_t>>& groups,
                                 const std::vector<double>& omega, double t) {
  for (std::size_t g = 0; g < groups.size(); ++g) {
    double sq = 0.0;
    for (std::size_t i : groups[g]) sq += v[i] * v[i];
    const double norm = std::sqrt(sq);
    const double shrink = t * omega[g];
    const double f = norm <= shrink ? 0.0 : 1.0 - shrink / norm;
    for (std::size_t i : groups[g]) v[i] *= f;
  }
}

}  // namespace detail

/// One step on E_D + lambda ||W||^2 + lambda_w R(omega, w) for a supergraph.
inline StepStats penalized_sgd_step(SuperGraph& g, const Tensor& x, const Tensor& y, EnergyKind kind,
                                    const GraphStepOptions& opt, MomentumSgd& sgd) {
  GraphCache gc = graph_forward(g, x);
  EnergyResult e = energy(gc.z[g.output], y, kind);
  detail::check_finite_loss(e.value, "search step");
  GraphGradients gr = graph_backward(g, gc, e.grad);
  StepStats st;
  st.energy = e.value;

  const std::size_t E = g.edges.size();
  if (opt.train_ops) {
    for (std::size_t id = 0; id < E; ++id) {
      Edge& ed = g.edges[id];
      if (!ed.alive || !ed.layer.has_weights()) continue;
      Tensor& gw = gr.weights[id];
      if (opt.lambda != 0.0) {
        for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += 2.0 * opt.lambda * ed.layer.weights[i];
        st.penalty += opt.lambda * squared_norm(ed.layer.weights.storage());
      }
      sgd.step(1 + 2 * id, ed.layer.weights.storage(), gw.storage(), ed.layer.has_mask() ? &ed.layer.mask : nullptr);
      if (ed.layer.has_bias()) sgd.step(2 + 2 * id, ed.layer.bias.storage(), gr.bias[id].storage());
    }
  }
  if (opt.freeze_w) return st;

  std::vector<double> w(E), gw = gr.w;
  for (std::size_t id = 0; id < E; ++id) w[id] = g.edges[id].alive ? g.edges[id].w : 0.0;
  std::vector<std::vector<std::size_t>> singles;
  std::vector<double> omegas;
  const std::vector<std::vector<std::size_t>>* groups = opt.w_groups;
  const std::vector<double>* gomega = opt.group_omega;
  if (!groups) {
    for (std::size_t id = 0; id < E; ++id) omegas.push_back(g.edges[id].alive ? g.edges[id].omega : 0.0);
    if (opt.proximal) {
      for (std::size_t id = 0; id < E; ++id) singles.push_back({id});
      groups = &singles;
      gomega = &omegas;
    }
  }
  if (opt.lambda_w != 0.0 && !opt.proximal) {
    const PenaltyResult p = groups ? group_l2_penalty(w, *groups, *gomega, opt.lambda_w)
                                   : reweighted_l1_penalty(w, omegas, opt.lambda_w);
    st.penalty += p.value;
    for (std::size_t id = 0; id < E; ++id) gw[id] += p.grad[id];
  }
  Tensor alive({E});
  for (std::size_t id = 0; id < E; ++id) alive[id] = g.edges[id].alive ? 1.0 : 0.0;
  sgd.step(0, w, gw, &alive);
  if (opt.proximal && opt.lambda_w != 0.0) detail::group_soft_threshold(w, *groups, *gomega, sgd.lr() * opt.lambda_w);
  for (std::size_t id = 0; id < E; ++id)
    if (g.edges[id].alive) g.edges[id].w = w[id];
  return st;
}

/// Group penalty lambda^l sum_g omega_g ||W_g|| on one layer for one pattern.
struct LayerPenalty {
  std::size_t layer = 0;
  const std::vector<std::vector<std::size_t>>* groups = nullptr;
  const std::vector<double>* omega = nullptr;
  double lambda = 0.0;
};

/// One step on E_D + weight_decay ||W||^2 + sum of layer group penalties for a plain network.
/// Masked weights stay exactly zero.
inline StepStats penalized_sgd_step(std::vector<Layer>& net, const Tensor& x, const Tensor& y, EnergyKind kind,
                                    double weight_decay, const std::vector<LayerPenalty>& penalties, MomentumSgd& sgd,
                                    bool proximal = false) {
  ForwardResult fr = forward(net, x);
  EnergyResult e = energy(fr.output, y, kind);
  detail::check_finite_loss(e.value, "training step");
  Gradients gr = backward(net, fr.caches, e.grad);
  StepStats st;
  st.energy = e.value;
  for (const LayerPenalty& lp : penalties) {
    if (lp.lambda == 0.0 || proximal) continue;
    const PenaltyResult p = group_l2_penalty(net[lp.layer].weights.storage(), *lp.groups, *lp.omega, lp.lambda);
    st.penalty += p.value;
    Tensor& gw = gr.weights[lp.layer];
    for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += p.grad[i];
  }
  for (std::size_t li = 0; li < net.size(); ++li) {
    Layer& l = net[li];
    if (!l.has_weights()) continue;
    Tensor& gw = gr.weights[li];
    if (weight_decay != 0.0) {
      for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += 2.0 * weight_decay * l.weights[i];
      st.penalty += weight_decay * squared_norm(l.weights.storage());
    }
    sgd.step(2 * li, l.weights.storage(), gw.storage(), l.has_mask() ? &l.mask : nullptr);
    if (l.has_bias()) sgd.step(2 * li + 1, l.bias.storage(), gr.bias[li].storage());
  }
  if (proximal) {
    for (const LayerPenalty& lp : penalties) {
      if (lp.lambda == 0.0) continue;
      detail::group_soft_threshold(net[lp.layer].weights.storage(), *lp.groups, *lp.omega, sgd.lr() * lp.lambda);
    }
  }
  return st;
}

}  // namespace ardnas

#endif  // ARDNAS_OPTIM_HPP
