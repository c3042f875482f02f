#ifndef ARDNAS_ARCH_CURVATURE_HPP
#define ARDNAS_ARCH_CURVATURE_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "ardnas/curvature.hpp"
#include "ardnas/supergraph.hpp"

namespace ardnas {

/// Exact: true d2E/dw2 by forward-mode second-order propagation along each w.
/// Diagonal: batch sum of o(z_i)^2 * H_j with a diagonal node-Hessian recursion.
/// Approx: (mean |o(z_i)|)^2 * H_j per feature.
enum class ArchHessianMode { Exact, Diagonal, Approx };

/// Everything the scalar-curvature formulas read. Built once; the formulas never look at w of the
/// edge being evaluated, only at downstream quantities.
struct ArchCurvatureCache {
  GraphCache graph;
  std::vector<Tensor> node_hessian;  // per-sample diagonal of d2E_D/dz_j^2
  Tensor output;
  Tensor target;
  EnergyKind kind = EnergyKind::MSE;
};

namespace detail {

// Linear part of an operation (no bias, no activation), reusing the forward argmax for max pooling.
inline Tensor op_linear(const Edge& e, const LayerCache& c, const Tensor& v) {
  const Layer& l = e.layer;
  switch (e.op) {
    case OpKind::Identity:
    case OpKind::ZeroGateIdentity: return v;
    case OpKind::MaxPool: {
      Tensor out(c.preact.shape());
      const std::size_t per_in = v.row_size(), per_out = out.row_size(), b = v.dim(0);
      for (std::size_t n = 0; n < b; ++n)
        for (std::size_t o = 0; o < per_out; ++o) out[n * per_out + o] = v[n * per_in + c.argmax[n * per_out + o]];
      return out;
    }
    case OpKind::AvgPool: return pool_forward(l, v, nullptr);
    case OpKind::FullyConnected:
    case OpKind::Conv3x3:
    case OpKind::Conv5x5: {
      Layer lin = l;
      lin.activation = Activation::Identity;
      lin.bias = Tensor();
      return layer_forward(lin, v, nullptr);
    }
  }
  return v;
}

// Per-sample diagonal of J^T diag(p) J through the linear part of an operation.
inline Tensor op_diag_backprop(const Edge& e, const LayerCache& c, const Tensor& p) {
  switch (e.op) {
    case OpKind::Identity:
    case OpKind::ZeroGateIdentity: return p;
    case OpKind::MaxPool:
    case OpKind::AvgPool: return pool_diag_backprop(e.layer, c, p);
    case OpKind::FullyConnected: {
      const std::size_t b = c.input.dim(0), in = c.input.row_size(), out = c.preact.row_size();
      Tensor hin(c.input.shape());
      for (std::size_t n = 0; n < b; ++n) diag_backprop_sample(e.layer, c, n, p.data() + n * out, hin.data() + n * in);
      return hin;
    }
    case OpKind::Conv3x3:
    case OpKind::Conv5x5: return conv_diag_backprop(e.layer, c, p);
  }
  return p;
}

inline Tensor loss_diag(const Tensor& output, const Tensor& target, EnergyKind kind) {
  Tensor h(output.shape());
  const std::size_t b = output.dim(0), k = output.row_size();
  for (std::size_t n = 0; n < b; ++n) {
    const std::vector<double> d = loss_hessian_diag_sample(output, target, kind, n);
    for (std::size_t j = 0; j < k; ++j) h[n * k + j] = d[j];
  }
  return h;
}

}  // namespace detail

/// Forward, backward and the diagonal node-Hessian recursion on one batch.
inline ArchCurvatureCache build_arch_curvature_cache(const SuperGraph& g, const Tensor& x, const Tensor& target,
                                                     EnergyKind kind) {
  ArchCurvatureCache ac;
  ac.graph = graph_forward(g, x);
  ac.output = ac.graph.z[g.output];
  ac.target = target;
  ac.kind = kind;
  EnergyResult e = energy(ac.output, target, kind);
  graph_backward(g, ac.graph, e.grad);

  ac.node_hessian.assign(g.num_nodes, Tensor());
  for (std::size_t j = 0; j < g.num_nodes; ++j) ac.node_hessian[j] = zeros_like(ac.graph.z[j]);
  ac.node_hessian[g.output] = detail::loss_diag(ac.output, target, kind);
  for (std::size_t j = g.num_nodes; j-- > 0;) {
    for (std::size_t id = g.edges.size(); id-- > 0;) {
      const Edge& e = g.edges[id];
      if (!e.alive || e.to != j) continue;
      const Tensor& hj = ac.node_hessian[j];
      if (!op_has_layer(e.op)) {
        axpy(e.w * e.w, hj, ac.node_hessian[e.from]);
        continue;
      }
      const LayerCache& c = ac.graph.edge[id].layer;
      // pre-activation diagonal: B^2 (w^2 H_j) + D, with D = sigma'' * (w * dE/dz_j)
      Tensor p(c.preact.shape());
      for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = (c.B[i] * ((e.w * e.w) * hj[i])) * c.B[i] + c.D[i];
      }
      add_inplace(ac.node_hessian[e.from], detail::op_diag_backprop(e, c, p));
    }
  }
  return ac;
}

/// Scalar curvature of one edge from a prebuilt cache.
inline double arch_edge_hessian(const SuperGraph& g, const ArchCurvatureCache& ac, std::size_t id, ArchHessianMode mode) {
  const Edge& e = g.edges.at(id);
  if (!e.alive) return 0.0;
  const Tensor& o = ac.graph.edge[id].op_out;
  const Tensor& hj = ac.node_hessian[e.to];
  if (mode == ArchHessianMode::Diagonal) {
    double s = 0.0;
    for (std::size_t i = 0; i < o.size(); ++i) s += (o[i] * o[i]) * hj[i];
    return s;
  }
  if (mode == ArchHessianMode::Approx) {
    const std::size_t b = o.dim(0), f = o.row_size();
    double s = 0.0;
    for (std::size_t k = 0; k < f; ++k) {
      double ma = 0.0, sh = 0.0;
      for (std::size_t n = 0; n < b; ++n) {
        ma += std::abs(o[n * f + k]);
        sh += hj[n * f + k];
      }
      ma /= static_cast<double>(b);
      s += (ma * ma) * sh;
    }
    return s;
  }

  // Exact: propagate (dz/dw, d2z/dw2) forward from the edge.
  const GraphCache& gc = ac.graph;
  std::vector<Tensor> dz(g.num_nodes), ddz(g.num_nodes);
  for (std::size_t j = 0; j < g.num_nodes; ++j) {
    dz[j] = zeros_like(gc.z[j]);
    ddz[j] = zeros_like(gc.z[j]);
  }
  for (std::size_t j = e.to; j < g.num_nodes; ++j) {
    for (std::size_t k = 0; k < g.edges.size(); ++k) {
      const Edge& ek = g.edges[k];
      if (!ek.alive || ek.to != j) continue;
      const bool upstream_moves = ek.from >= e.to;
      if (!upstream_moves && k != id) continue;
      const LayerCache& c = gc.edge[k].layer;
      Tensor d1, d2;
      if (upstream_moves) {
        if (!op_has_layer(ek.op) || ek.op == OpKind::MaxPool || ek.op == OpKind::AvgPool) {
          d1 = detail::op_linear(ek, c, dz[ek.from]);
          d2 = detail::op_linear(ek, c, ddz[ek.from]);
          if (op_has_layer(ek.op) && ek.layer.activation != Activation::Identity) {
            throw UsageError("activated pooling operations are not supported by the exact arch Hessian");
          }
        } else {
          const Tensor l1 = detail::op_linear(ek, c, dz[ek.from]);
          const Tensor l2 = detail::op_linear(ek, c, ddz[ek.from]);
          d1 = Tensor(l1.shape());
          d2 = Tensor(l1.shape());
          for (std::size_t i = 0; i < l1.size(); ++i) {
            d1[i] = c.B[i] * l1[i];
            d2[i] = c.B[i] * l2[i] + activate_d2(ek.layer.activation, c.preact[i]) * l1[i] * l1[i];
          }
        }
        axpy(ek.w, d1, dz[j]);
        axpy(ek.w, d2, ddz[j]);
      }
      if (k == id) {
        add_inplace(dz[j], gc.edge[k].op_out);
        if (upstream_moves) axpy(2.0, d1, ddz[j]);
      }
    }
  }
  const Tensor& v = dz[g.output];
  const std::size_t b = v.dim(0), f = v.row_size();
  double total = dot(gc.gz[g.output], ddz[g.output]);
  for (std::size_t n = 0; n < b; ++n) {
    const RowMatrix H = loss_hessian_sample(ac.output, ac.target, ac.kind, n);
    Eigen::Map<const Eigen::VectorXd> vn(v.data() + n * f, static_cast<Eigen::Index>(f));
    total += vn.dot(H * vn);
  }
  return total;
}

/// Per-edge scalar curvature (raw, unclamped); dead edges get 0.
inline std::vector<double> arch_scalar_hessian(const SuperGraph& g, const ArchCurvatureCache& ac, ArchHessianMode mode) {
  std::vector<double> h(g.edges.size(), 0.0);
  for (std::size_t id = 0; id < g.edges.size(); ++id) h[id] = arch_edge_hessian(g, ac, id, mode);
  return h;
}

inline std::vector<double> arch_scalar_hessian(const SuperGraph& g, const Tensor& x, const Tensor& target,
                                               EnergyKind kind, ArchHessianMode mode) {
  return arch_scalar_hessian(g, build_arch_curvature_cache(g, x, target, kind), mode);
}

}  // namespace ardnas

#endif  // ARDNAS_ARCH_CURVATURE_HPP
