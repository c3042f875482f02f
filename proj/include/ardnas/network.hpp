#ifndef ARDNAS_NETWORK_HPP
#define ARDNAS_NETWORK_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ardnas/activation.hpp"
#include "ardnas/error.hpp"
#include "ardnas/layers.hpp"
#include "ardnas/tensor.hpp"

namespace ardnas {

struct LayerCache {
  Tensor input;    // a_i
  Tensor preact;   // h
  Tensor output;   // sigma(h)
  Tensor B;        // sigma'(h)
  Tensor cols;     // conv only: im2col(input)
  std::vector<std::size_t> argmax;  // max-pool only
  // filled by backward
  Tensor grad_wrt_output;
  Tensor grad_wrt_preact;
  Tensor D;  // sigma''(h) * dE/da
  // filled by curvature passes
  Tensor preact_hessian_diag;
  bool has_forward = false;
  bool has_backward = false;
};

struct ForwardResult {
  Tensor output;
  std::vector<LayerCache> caches;
};

struct Gradients {
  std::vector<Tensor> weights;  // empty tensor for weightless layers
  std::vector<Tensor> bias;
  Tensor input;
};

inline Tensor flatten_batch(const Tensor& t) { return t.reshaped({t.dim(0), t.row_size()}); }

/// One layer forward. Fills `cache` when non-null.
inline Tensor layer_forward(const Layer& l, const Tensor& x, LayerCache* cache, std::size_t index = 0) {
  if (x.rank() < 2) {
    throw DimensionError("layer " + std::to_string(index) + ": input needs a leading batch axis, got " +
                         shape_string(x.shape()));
  }
  const Shape out_sample = layer_output_shape(l, x.sample_shape(), index);
  const std::size_t b = x.dim(0);
  Shape out_shape{b};
  out_shape.insert(out_shape.end(), out_sample.begin(), out_sample.end());
  Tensor h(out_shape);
  Tensor cols;
  std::vector<std::size_t> argmax;

  switch (l.kind) {
    case LayerKind::FullyConnected: {
      const std::size_t in = l.geom.in_channels, out = l.geom.out_channels;
      ConstMatrixMap A(x.data(), static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(in));
      ConstMatrixMap W(l.weights.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
      MatrixMap Hm(h.data(), static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(out));
      Hm.noalias() = A * W.transpose();
      if (l.has_bias()) {
        for (std::size_t n = 0; n < b; ++n)
          for (std::size_t o = 0; o < out; ++o) h[n * out + o] += l.bias[o];
      }
      break;
    }
    case LayerKind::Conv2D: {
      const Geometry& g = l.geom;
      cols = im2col(x, g.kh, g.kw, g.stride, g.pad);
      const std::size_t rows = cols.dim(0), K = cols.dim(1);
      Tensor out_rows({rows, g.out_channels});
      ConstMatrixMap Cm(cols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(K));
      ConstMatrixMap W(l.weights.data(), static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(K));
      out_rows.as_matrix(rows).noalias() = Cm * W.transpose();
      h = rows_to_nchw(out_rows, b, g.out_channels, out_sample[1], out_sample[2]);
      if (l.has_bias()) {
        const std::size_t P = out_sample[1] * out_sample[2];
        for (std::size_t n = 0; n < b; ++n)
          for (std::size_t c = 0; c < g.out_channels; ++c)
            for (std::size_t p = 0; p < P; ++p) h[(n * g.out_channels + c) * P + p] += l.bias[c];
      }
      break;
    }
    case LayerKind::MaxPool2D:
    case LayerKind::AvgPool2D:
      h = pool_forward(l, x, cache ? &argmax : nullptr);
      break;
  }

  Tensor a(h.shape());
  for (std::size_t i = 0; i < h.size(); ++i) a[i] = activate(l.activation, h[i]);
  if (!a.all_finite()) throw NumericError("layer " + std::to_string(index) + ": non-finite activation");

  if (cache) {
    cache->input = x;
    cache->B = Tensor(h.shape());
    for (std::size_t i = 0; i < h.size(); ++i) cache->B[i] = activate_d1(l.activation, h[i]);
    cache->preact = std::move(h);
    cache->output = a;
    cache->cols = std::move(cols);
    cache->argmax = std::move(argmax);
    cache->grad_wrt_output = Tensor();
    cache->grad_wrt_preact = Tensor();
    cache->D = Tensor();
    cache->preact_hessian_diag = Tensor();
    cache->has_forward = true;
    cache->has_backward = false;
  }
  return a;
}

inline ForwardResult forward(const std::vector<Layer>& layers, const Tensor& x) {
  ForwardResult r;
  r.caches.resize(layers.size());
  Tensor cur = x;
  for (std::size_t i = 0; i < layers.size(); ++i) cur = layer_forward(layers[i], cur, &r.caches[i], i);
  r.output = std::move(cur);
  return r;
}

/// Inference-only forward (no caches).
inline Tensor predict(const std::vector<Layer>& layers, const Tensor& x) {
  Tensor cur = x;
  for (std::size_t i = 0; i < layers.size(); ++i) cur = layer_forward(layers[i], cur, nullptr, i);
  return cur;
}

/// Backward through one layer given dE/d(output). Returns dE/d(input); writes weight/bias grads.
inline Tensor layer_backward(const Layer& l, LayerCache& c, const Tensor& grad_out, Tensor* gw, Tensor* gb,
                             std::size_t index = 0) {
  if (!c.has_forward) throw UsageError("layer " + std::to_string(index) + ": backward without a forward cache");
  if (grad_out.shape() != c.output.shape()) {
    throw DimensionError("layer " + std::to_string(index) + ": output gradient shape " +
                         shape_string(grad_out.shape()) + " vs output " + shape_string(c.output.shape()));
  }
  Tensor gp(grad_out.shape());
  Tensor D(grad_out.shape());
  for (std::size_t i = 0; i < gp.size(); ++i) {
    gp[i] = grad_out[i] * c.B[i];
    D[i] = activate_d2(l.activation, c.preact[i]) * grad_out[i];
  }
  const std::size_t b = c.input.dim(0);
  Tensor gin;

  switch (l.kind) {
    case LayerKind::FullyConnected: {
      const std::size_t in = l.geom.in_channels, out = l.geom.out_channels;
      ConstMatrixMap A(c.input.data(), static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(in));
      ConstMatrixMap G(gp.data(), static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(out));
      ConstMatrixMap W(l.weights.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
      if (gw) {
        *gw = Tensor(l.weights.shape());
        gw->as_matrix(out).noalias() = G.transpose() * A;
      }
      if (gb && l.has_bias()) {
        *gb = Tensor(l.bias.shape());
        for (std::size_t n = 0; n < b; ++n)
          for (std::size_t o = 0; o < out; ++o) (*gb)[o] += gp[n * out + o];
      }
      gin = Tensor(c.input.shape());
      MatrixMap Gi(gin.data(), static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(in));
      Gi.noalias() = G * W;
      break;
    }
    case LayerKind::Conv2D: {
      const Geometry& g = l.geom;
      const Tensor grows = nchw_to_rows(gp);
      const std::size_t rows = grows.dim(0), K = c.cols.dim(1);
      ConstMatrixMap G(grows.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(g.out_channels));
      ConstMatrixMap Cm(c.cols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(K));
      ConstMatrixMap W(l.weights.data(), static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(K));
      if (gw) {
        *gw = Tensor(l.weights.shape());
        gw->as_matrix(g.out_channels).noalias() = G.transpose() * Cm;
      }
      if (gb && l.has_bias()) {
        *gb = Tensor(l.bias.shape());
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t o = 0; o < g.out_channels; ++o) (*gb)[o] += grows[r * g.out_channels + o];
      }
      Tensor dcols({rows, K});
      dcols.as_matrix(rows).noalias() = G * W;
      gin = col2im(dcols, c.input.shape(), g.kh, g.kw, g.stride, g.pad);
      break;
    }
    case LayerKind::MaxPool2D:
    case LayerKind::AvgPool2D:
      gin = pool_backward(l, c.input.shape(), gp, c.argmax);
      break;
  }
  c.grad_wrt_output = grad_out;
  c.grad_wrt_preact = std::move(gp);
  c.D = std::move(D);
  c.has_backward = true;
  return gin;
}

inline Gradients backward(const std::vector<Layer>& layers, std::vector<LayerCache>& caches, const Tensor& loss_grad) {
  if (caches.size() != layers.size() || caches.empty()) throw UsageError("backward: caches missing or stale");
  Gradients g;
  g.weights.resize(layers.size());
  g.bias.resize(layers.size());
  Tensor cur = loss_grad;
  for (std::size_t i = layers.size(); i-- > 0;) {
    cur = layer_backward(layers[i], caches[i], cur, layers[i].has_weights() ? &g.weights[i] : nullptr,
                         layers[i].has_bias() ? &g.bias[i] : nullptr, i);
  }
  g.input = std::move(cur);
  return g;
}

enum class EnergyKind { MSE, SoftmaxCrossEntropy };

struct EnergyResult {
  double value = 0.0;
  Tensor grad;
};

inline std::vector<double> softmax_row(const double* z, std::size_t k) {
  double m = z[0];
  for (std::size_t j = 1; j < k; ++j) m = std::max(m, z[j]);
  std::vector<double> p(k);
  double s = 0.0;
  for (std::size_t j = 0; j < k; ++j) s += (p[j] = std::exp(z[j] - m));
  for (double& v : p) v /= s;
  return p;
}

inline std::size_t checked_label(double v, std::size_t classes, std::size_t n) {
  if (!(v >= 0.0) || v != std::floor(v) || v >= static_cast<double>(classes)) {
    throw DimensionError("label " + std::to_string(v) + " of sample " + std::to_string(n) + " outside [0," +
                         std::to_string(classes) + ")");
  }
  return static_cast<std::size_t>(v);
}

/// Batch-mean energy E_D and its gradient. MSE: 1/2 ||y - t||^2 per sample.
/// Cross-entropy: output (b, K) logits, target (b) class indices.
inline EnergyResult energy(const Tensor& output, const Tensor& target, EnergyKind kind) {
  EnergyResult r;
  r.grad = Tensor(output.shape());
  const std::size_t b = output.dim(0);
  const double inv_b = 1.0 / static_cast<double>(b);
  if (kind == EnergyKind::MSE) {
    require_same_shape(output, target, "energy");
    double s = 0.0;
    for (std::size_t i = 0; i < output.size(); ++i) {
      const double d = output[i] - target[i];
      s += d * d;
      r.grad[i] = d * inv_b;
    }
    r.value = 0.5 * s * inv_b;
  } else {
    if (output.rank() != 2 || target.size() != b) {
      throw DimensionError("cross-entropy expects (b,K) logits and b labels, got " + shape_string(output.shape()) +
                           " and " + shape_string(target.shape()));
    }
    const std::size_t k = output.dim(1);
    double s = 0.0;
    for (std::size_t n = 0; n < b; ++n) {
      const std::size_t y = checked_label(target[n], k, n);
      const double* z = output.data() + n * k;
      double m = z[0];
      for (std::size_t j = 1; j < k; ++j) m = std::max(m, z[j]);
      double se = 0.0;
      for (std::size_t j = 0; j < k; ++j) se += std::exp(z[j] - m);
      const double lse = m + std::log(se);
      s += lse - z[y];
      for (std::size_t j = 0; j < k; ++j) r.grad[n * k + j] = std::exp(z[j] - lse) * inv_b;
      r.grad[n * k + y] -= inv_b;
    }
    r.value = s * inv_b;
  }
  if (!std::isfinite(r.value)) throw NumericError("energy is not finite");
  return r;
}

/// Fraction of misclassified samples (argmax of logits vs label).
inline double classification_error(const Tensor& logits, const Tensor& labels) {
  const std::size_t b = logits.dim(0), k = logits.row_size();
  std::size_t wrong = 0;
  for (std::size_t n = 0; n < b; ++n) {
    const double* z = logits.data() + n * k;
    const std::size_t arg = static_cast<std::size_t>(std::max_element(z, z + k) - z);
    wrong += arg != static_cast<std::size_t>(labels[n]);
  }
  return static_cast<double>(wrong) / static_cast<double>(b);
}

}  // namespace ardnas

#endif  // ARDNAS_NETWORK_HPP
