#ifndef ARDNAS_CURVATURE_HPP
#define ARDNAS_CURVATURE_HPP

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ardnas/error.hpp"
#include "ardnas/layers.hpp"
#include "ardnas/network.hpp"
#include "ardnas/tensor.hpp"

namespace ardnas {

/// Exact: full per-sample pre-activation Hessians, true weight-Hessian diagonal.
/// Diagonal: diagonal recursion, conv weights from per-position blocks.
/// Approx: diagonal recursion, conv weights from feature-map means.
enum class HessianMode { Exact, Diagonal, Approx };

struct CurvatureCache {
  std::vector<Tensor> weight_hessian;  // diagonal, shaped like weights; empty for weightless layers
  std::vector<Tensor> bias_hessian;
  std::vector<Tensor> preact_hessian;  // diagonal, shaped like preact (per sample, E_D scale)
  std::vector<std::vector<RowMatrix>> preact_full;  // Exact mode only: [layer][sample]
  Tensor input_hessian;                // diagonal w.r.t. the network input
};

// Loss Hessians are w.r.t. one sample's output and already carry the 1/b of the batch mean,
// so summing per-sample contributions gives the Hessian of E_D.
inline RowMatrix loss_hessian_sample(const Tensor& output, const Tensor& target, EnergyKind kind, std::size_t n) {
  const std::size_t b = output.dim(0), k = output.row_size();
  const double inv_b = 1.0 / static_cast<double>(b);
  RowMatrix H = RowMatrix::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  if (kind == EnergyKind::MSE) {
    for (std::size_t j = 0; j < k; ++j) H(j, j) = inv_b;
    return H;
  }
  checked_label(target[n], k, n);
  const std::vector<double> p = softmax_row(output.data() + n * k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) H(i, j) = ((i == j ? p[i] : 0.0) - p[i] * p[j]) * inv_b;
  return H;
}

inline std::vector<double> loss_hessian_diag_sample(const Tensor& output, const Tensor& target, EnergyKind kind,
                                                    std::size_t n) {
  const std::size_t b = output.dim(0), k = output.row_size();
  const double inv_b = 1.0 / static_cast<double>(b);
  std::vector<double> d(k, inv_b);
  if (kind == EnergyKind::SoftmaxCrossEntropy) {
    checked_label(target[n], k, n);
    const std::vector<double> p = softmax_row(output.data() + n * k, k);
    for (std::size_t j = 0; j < k; ++j) d[j] = (p[j] - p[j] * p[j]) * inv_b;
  }
  return d;
}

/// Dense Jacobian of one sample's pre-activation w.r.t. that sample's layer input.
inline RowMatrix layer_input_jacobian(const Layer& l, const LayerCache& c, std::size_t n) {
  const std::size_t in_units = c.input.row_size(), out_units = c.preact.row_size();
  RowMatrix J = RowMatrix::Zero(static_cast<Eigen::Index>(out_units), static_cast<Eigen::Index>(in_units));
  switch (l.kind) {
    case LayerKind::FullyConnected:
      for (std::size_t o = 0; o < out_units; ++o)
        for (std::size_t i = 0; i < in_units; ++i) J(o, i) = l.weights[o * in_units + i];
      break;
    case LayerKind::Conv2D:
    case LayerKind::AvgPool2D: {
      const std::size_t C = c.input.dim(1), H = c.input.dim(2), W = c.input.dim(3);
      const std::size_t Co = c.preact.dim(1), Ho = c.preact.dim(2), Wo = c.preact.dim(3);
      const Geometry& g = l.geom;
      const double avg = 1.0 / static_cast<double>(g.kh * g.kw);
      for (std::size_t o = 0; o < Co; ++o)
        for (std::size_t ho = 0; ho < Ho; ++ho)
          for (std::size_t wo = 0; wo < Wo; ++wo)
            for (std::size_t p = 0; p < g.kh; ++p)
              for (std::size_t q = 0; q < g.kw; ++q) {
                const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(ho * g.stride + p) - static_cast<std::ptrdiff_t>(g.pad);
                const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(wo * g.stride + q) - static_cast<std::ptrdiff_t>(g.pad);
                if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(H) || x >= static_cast<std::ptrdiff_t>(W)) continue;
                const std::size_t row = (o * Ho + ho) * Wo + wo;
                if (l.kind == LayerKind::AvgPool2D) {
                  J(row, (o * H + y) * W + x) += avg;
                } else {
                  for (std::size_t ci = 0; ci < C; ++ci)
                    J(row, (ci * H + y) * W + x) += l.weights[((o * C + ci) * g.kh + p) * g.kw + q];
                }
              }
      break;
    }
    case LayerKind::MaxPool2D:
      for (std::size_t o = 0; o < out_units; ++o) J(o, c.argmax[n * out_units + o]) = 1.0;
      break;
  }
  return J;
}

namespace detail {

inline void require_backward(const std::vector<LayerCache>& caches) {
  if (caches.empty()) throw UsageError("curvature: no layer caches");
  for (std::size_t i = 0; i < caches.size(); ++i) {
    if (!caches[i].has_forward || !caches[i].has_backward) {
      throw UsageError("curvature: layer " + std::to_string(i) + " is missing its backward pass");
    }
  }
}

// Jt * H * J with a fixed summation order: T = H J, then Jt T.
inline RowMatrix sandwich(const RowMatrix& J, const RowMatrix& H) {
  const Eigen::Index m = J.rows(), k = J.cols();
  RowMatrix T = RowMatrix::Zero(m, k);
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index i = 0; i < k; ++i) {
      double acc = 0.0;
      for (Eigen::Index jj = 0; jj < m; ++jj) acc += H(j, jj) * J(jj, i);
      T(j, i) = acc;
    }
  RowMatrix R = RowMatrix::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index ii = 0; ii < k; ++ii) {
      double acc = 0.0;
      for (Eigen::Index j = 0; j < m; ++j) acc += J(j, i) * T(j, ii);
      R(i, ii) = acc;
    }
  return R;
}

// Diagonal of Jt diag(h) J for one sample, for a layer's input; same arithmetic as `sandwich`
// when every dimension is one.
inline void diag_backprop_sample(const Layer& l, const LayerCache& c, std::size_t n, const double* h, double* out) {
  const std::size_t in_units = c.input.row_size(), out_units = c.preact.row_size();
  switch (l.kind) {
    case LayerKind::FullyConnected:
      for (std::size_t i = 0; i < in_units; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < out_units; ++j) {
          const double w = l.weights[j * in_units + i];
          acc += w * (h[j] * w);
        }
        out[i] = acc;
      }
      break;
    case LayerKind::MaxPool2D:
      for (std::size_t i = 0; i < in_units; ++i) out[i] = 0.0;
      for (std::size_t o = 0; o < out_units; ++o) out[c.argmax[n * out_units + o]] += h[o];
      break;
    case LayerKind::AvgPool2D:
    case LayerKind::Conv2D: {
      RowMatrix J = layer_input_jacobian(l, c, n);
      for (std::size_t i = 0; i < in_units; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < out_units; ++j) acc += J(j, i) * (h[j] * J(j, i));
        out[i] = acc;
      }
      break;
    }
  }
}

// Batched conv version: rows of H (b*P x Cout) pushed through W^2 then col2im.
inline Tensor conv_diag_backprop(const Layer& l, const LayerCache& c, const Tensor& h_preact) {
  const Geometry& g = l.geom;
  const Tensor hrows = nchw_to_rows(h_preact);
  const std::size_t rows = hrows.dim(0), K = c.cols.dim(1);
  RowMatrix W2 = ConstMatrixMap(l.weights.data(), static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(K))
                     .array()
                     .square()
                     .matrix();
  Tensor hcols({rows, K});
  hcols.as_matrix(rows).noalias() = hrows.as_matrix(rows) * W2;
  return col2im(hcols, c.input.shape(), g.kh, g.kw, g.stride, g.pad);
}

inline Tensor pool_diag_backprop(const Layer& l, const LayerCache& c, const Tensor& h_preact) {
  if (l.kind == LayerKind::MaxPool2D) return pool_backward(l, c.input.shape(), h_preact, c.argmax);
  // avg pool: J entries are 1/k^2, so the diagonal picks up 1/k^4
  const double inv = 1.0 / static_cast<double>(l.geom.kh * l.geom.kw);
  return pool_backward(l, c.input.shape(), scaled(h_preact, inv), c.argmax);
}

}  // namespace detail

/// Weight-Hessian diagonal of a conv layer from per-position blocks, summed over positions and samples.
inline Tensor conv_weight_hessian_per_position(const Layer& l, const LayerCache& c, const Tensor& h_preact) {
  const Tensor hrows = nchw_to_rows(h_preact);
  const std::size_t rows = c.cols.dim(0), K = c.cols.dim(1), Co = l.geom.out_channels;
  RowMatrix M2 = c.cols.as_matrix(rows).array().square().matrix();
  Tensor out(l.weights.shape());
  out.as_matrix(Co).noalias() = hrows.as_matrix(rows).transpose() * M2;
  (void)K;
  return out;
}

/// Weight-Hessian diagonal of a conv layer from feature-map means:
/// rows * E(M^2) (x) E(H) over the b*P patch rows.
inline Tensor conv_weight_hessian_approx(const Layer& l, const LayerCache& c, const Tensor& h_preact) {
  const Tensor hrows = nchw_to_rows(h_preact);
  const std::size_t rows = c.cols.dim(0), K = c.cols.dim(1), Co = l.geom.out_channels;
  std::vector<double> em(K, 0.0), eh(Co, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < K; ++k) em[k] += c.cols[r * K + k] * c.cols[r * K + k];
    for (std::size_t o = 0; o < Co; ++o) eh[o] += hrows[r * Co + o];
  }
  const double inv = 1.0 / static_cast<double>(rows);
  Tensor out(l.weights.shape());
  for (std::size_t o = 0; o < Co; ++o)
    for (std::size_t k = 0; k < K; ++k) out[o * K + k] = static_cast<double>(rows) * (em[k] * inv) * (eh[o] * inv);
  return out;
}

/// Recursive Hessian pass. Requires forward + backward caches; `output`/`target` are the
/// network output and energy target used for the loss seed.
inline CurvatureCache layer_hessians(const std::vector<Layer>& layers, std::vector<LayerCache>& caches,
                                     const Tensor& output, const Tensor& target, EnergyKind kind, HessianMode mode) {
  detail::require_backward(caches);
  if (caches.size() != layers.size()) throw UsageError("curvature: cache count does not match layers");
  const std::size_t L = layers.size();
  const std::size_t b = output.dim(0);
  CurvatureCache cc;
  cc.weight_hessian.resize(L);
  cc.bias_hessian.resize(L);
  cc.preact_hessian.resize(L);

  if (mode == HessianMode::Exact) {
    cc.preact_full.assign(L, std::vector<RowMatrix>(b));
    std::vector<RowMatrix> Hout(b);
    for (std::size_t n = 0; n < b; ++n) Hout[n] = loss_hessian_sample(output, target, kind, n);
    for (std::size_t li = L; li-- > 0;) {
      const Layer& l = layers[li];
      LayerCache& c = caches[li];
      const std::size_t units = c.preact.row_size();
      Tensor hdiag(c.preact.shape());
      for (std::size_t n = 0; n < b; ++n) {
        RowMatrix Hp(static_cast<Eigen::Index>(units), static_cast<Eigen::Index>(units));
        const double* B = c.B.data() + n * units;
        const double* D = c.D.data() + n * units;
        for (std::size_t i = 0; i < units; ++i)
          for (std::size_t j = 0; j < units; ++j) {
            const double v = (B[i] * Hout[n](i, j)) * B[j];
            Hp(i, j) = i == j ? v + D[i] : v;
          }
        for (std::size_t i = 0; i < units; ++i) hdiag[n * units + i] = Hp(i, i);
        cc.preact_full[li][n] = std::move(Hp);
      }
      if (l.kind == LayerKind::FullyConnected) {
        const std::size_t in = l.geom.in_channels, out = l.geom.out_channels;
        Tensor hw(l.weights.shape());
        for (std::size_t n = 0; n < b; ++n) {
          const double* a = c.input.data() + n * in;
          const RowMatrix& Hp = cc.preact_full[li][n];
          for (std::size_t o = 0; o < out; ++o)
            for (std::size_t i = 0; i < in; ++i) hw[o * in + i] += (a[i] * a[i]) * Hp(o, o);
        }
        cc.weight_hessian[li] = std::move(hw);
      } else if (l.kind == LayerKind::Conv2D) {
        const std::size_t Co = l.geom.out_channels, K = c.cols.dim(1);
        const std::size_t P = c.preact.dim(2) * c.preact.dim(3);
        Tensor hw(l.weights.shape());
        for (std::size_t n = 0; n < b; ++n) {
          const RowMatrix& Hp = cc.preact_full[li][n];
          const double* M = c.cols.data() + n * P * K;
          for (std::size_t o = 0; o < Co; ++o)
            for (std::size_t k = 0; k < K; ++k) {
              double acc = 0.0;
              for (std::size_t p = 0; p < P; ++p)
                for (std::size_t pp = 0; pp < P; ++pp)
                  acc += M[p * K + k] * M[pp * K + k] * Hp(o * P + p, o * P + pp);
              hw[o * K + k] += acc;
            }
        }
        cc.weight_hessian[li] = std::move(hw);
      }
      if (l.has_bias()) {
        Tensor hb(l.bias.shape());
        const std::size_t Co = l.geom.out_channels, P = units / Co;
        for (std::size_t n = 0; n < b; ++n)
          for (std::size_t o = 0; o < Co; ++o)
            for (std::size_t p = 0; p < P; ++p)
              for (std::size_t pp = 0; pp < P; ++pp) hb[o] += cc.preact_full[li][n](o * P + p, o * P + pp);
        cc.bias_hessian[li] = std::move(hb);
      }
      c.preact_hessian_diag = hdiag;
      cc.preact_hessian[li] = std::move(hdiag);
      for (std::size_t n = 0; n < b; ++n) Hout[n] = detail::sandwich(layer_input_jacobian(l, c, n), cc.preact_full[li][n]);
    }
    const std::size_t in_units = caches[0].input.row_size();
    cc.input_hessian = Tensor(caches[0].input.shape());
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t i = 0; i < in_units; ++i) cc.input_hessian[n * in_units + i] = Hout[n](i, i);
    return cc;
  }

  // Diagonal recursion. `hout` holds the diagonal w.r.t. the current layer's output.
  Tensor hout(output.shape());
  {
    const std::size_t k = output.row_size();
    for (std::size_t n = 0; n < b; ++n) {
      const std::vector<double> d = loss_hessian_diag_sample(output, target, kind, n);
      for (std::size_t j = 0; j < k; ++j) hout[n * k + j] = d[j];
    }
  }
  for (std::size_t li = L; li-- > 0;) {
    const Layer& l = layers[li];
    LayerCache& c = caches[li];
    Tensor hp(c.preact.shape());
    for (std::size_t i = 0; i < hp.size(); ++i) hp[i] = (c.B[i] * hout[i]) * c.B[i] + c.D[i];

    if (l.kind == LayerKind::FullyConnected) {
      const std::size_t in = l.geom.in_channels, out = l.geom.out_channels;
      Tensor hw(l.weights.shape());
      for (std::size_t n = 0; n < b; ++n) {
        const double* a = c.input.data() + n * in;
        for (std::size_t o = 0; o < out; ++o) {
          const double h = hp[n * out + o];
          double* row = hw.data() + o * in;
          for (std::size_t i = 0; i < in; ++i) row[i] += (a[i] * a[i]) * h;
        }
      }
      cc.weight_hessian[li] = std::move(hw);
    } else if (l.kind == LayerKind::Conv2D) {
      cc.weight_hessian[li] = mode == HessianMode::Approx ? conv_weight_hessian_approx(l, c, hp)
                                                          : conv_weight_hessian_per_position(l, c, hp);
    }
    if (l.has_bias()) {
      Tensor hb(l.bias.shape());
      const std::size_t Co = l.geom.out_channels, per = c.preact.row_size(), P = per / Co;
      for (std::size_t n = 0; n < b; ++n)
        for (std::size_t o = 0; o < Co; ++o)
          for (std::size_t p = 0; p < P; ++p) hb[o] += hp[n * per + o * P + p];
      cc.bias_hessian[li] = std::move(hb);
    }

    Tensor hin(c.input.shape());
    if (l.kind == LayerKind::FullyConnected) {
      const std::size_t in = c.input.row_size(), out = c.preact.row_size();
      for (std::size_t n = 0; n < b; ++n) detail::diag_backprop_sample(l, c, n, hp.data() + n * out, hin.data() + n * in);
    } else if (l.kind == LayerKind::Conv2D) {
      hin = detail::conv_diag_backprop(l, c, hp);
    } else {
      hin = detail::pool_diag_backprop(l, c, hp);
    }
    c.preact_hessian_diag = hp;
    cc.preact_hessian[li] = std::move(hp);
    hout = std::move(hin);
  }
  cc.input_hessian = std::move(hout);
  return cc;
}

inline CurvatureCache fc_hessian_exact(const std::vector<Layer>& layers, std::vector<LayerCache>& caches,
                                       const Tensor& output, const Tensor& target, EnergyKind kind) {
  return layer_hessians(layers, caches, output, target, kind, HessianMode::Exact);
}

inline CurvatureCache fc_hessian_diag(const std::vector<Layer>& layers, std::vector<LayerCache>& caches,
                                      const Tensor& output, const Tensor& target, EnergyKind kind) {
  return layer_hessians(layers, caches, output, target, kind, HessianMode::Diagonal);
}

/// Conv-aware entry point: exact -> true diagonal; approx -> feature-map-mean form.
inline CurvatureCache conv_hessian(const std::vector<Layer>& layers, std::vector<LayerCache>& caches,
                                   const Tensor& output, const Tensor& target, EnergyKind kind, bool exact) {
  return layer_hessians(layers, caches, output, target, kind, exact ? HessianMode::Exact : HessianMode::Approx);
}

/// Convenience: forward + energy + backward + Hessian pass on one batch.
inline CurvatureCache network_hessians(const std::vector<Layer>& layers, const Tensor& x, const Tensor& target,
                                       EnergyKind kind, HessianMode mode) {
  ForwardResult fr = forward(layers, x);
  EnergyResult e = energy(fr.output, target, kind);
  backward(layers, fr.caches, e.grad);
  return layer_hessians(layers, fr.caches, fr.output, target, kind, mode);
}

// Multiply-accumulate counts for one n x m layer.
inline double mac_count_exact(double n, double m) { return n * (2 * m * m + 2 * n * n + 4 * m * n + 3 * m - 1); }
inline double mac_count_diag(double n, double m) { return n * (2 + 4 * m); }

inline void clamp_nonnegative(Tensor& t) {
  for (double& v : t.storage()) v = v < 0.0 ? 0.0 : v;
}

/// Central second differences of `energy_fn` w.r.t. each selected scalar.
inline std::vector<double> finite_diff_hessian(const std::function<double()>& energy_fn,
                                               const std::vector<double*>& params, double step) {
  if (!(step >= 1e-6 && step <= 1e-3)) throw UsageError("finite-difference step must lie in [1e-6, 1e-3]");
  std::vector<double> out;
  out.reserve(params.size());
  const double e0 = energy_fn();
  if (!std::isfinite(e0)) throw NumericError("finite differences: non-finite energy");
  for (double* p : params) {
    const double v = *p;
    *p = v + step;
    const double ep = energy_fn();
    *p = v - step;
    const double em = energy_fn();
    *p = v;
    if (!std::isfinite(ep) || !std::isfinite(em)) throw NumericError("finite differences: non-finite energy");
    out.push_back((ep - 2.0 * e0 + em) / (step * step));
  }
  return out;
}

}  // namespace ardnas

#endif  // ARDNAS_CURVATURE_HPP
