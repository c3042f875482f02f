#ifndef ARDNAS_LAYERS_HPP
#define ARDNAS_LAYERS_HPP

#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "ardnas/activation.hpp"
#include "ardnas/error.hpp"
#include "ardnas/tensor.hpp"

namespace ardnas {

enum class LayerKind { FullyConnected, Conv2D, MaxPool2D, AvgPool2D };

inline std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::FullyConnected: return "fc";
    case LayerKind::Conv2D: return "conv";
    case LayerKind::MaxPool2D: return "maxpool";
    case LayerKind::AvgPool2D: return "avgpool";
  }
  return "fc";
}

struct Geometry {
  std::size_t in_channels = 0;   // FC: in_features
  std::size_t out_channels = 0;  // FC: out_features
  std::size_t kh = 1;
  std::size_t kw = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  friend bool operator==(const Geometry&, const Geometry&) = default;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw GeometryError("stride must be positive");
  if (in + 2 * pad < k) {
    throw GeometryError("kernel " + std::to_string(k) + " larger than padded input " + std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - k) / stride + 1;
}

struct Layer {
  LayerKind kind = LayerKind::FullyConnected;
  Activation activation = Activation::Identity;
  Geometry geom;
  Tensor weights;  // FC (out, in); conv (Cout, Cin, kh, kw); empty for pooling
  Tensor bias;     // empty when the layer has no bias
  Tensor mask;     // same shape as weights, 0/1; empty means dense

  static Layer fully_connected(std::size_t in, std::size_t out, Activation act, bool with_bias = true) {
    Layer l;
    l.kind = LayerKind::FullyConnected;
    l.activation = act;
    l.geom.in_channels = in;
    l.geom.out_channels = out;
    l.weights = Tensor({out, in});
    if (with_bias) l.bias = Tensor({out});
    return l;
  }

  static Layer conv2d(std::size_t cin, std::size_t cout, std::size_t kh, std::size_t kw, std::size_t stride,
                      std::size_t pad, Activation act, bool with_bias = true) {
    Layer l;
    l.kind = LayerKind::Conv2D;
    l.activation = act;
    l.geom = {cin, cout, kh, kw, stride, pad};
    l.weights = Tensor({cout, cin, kh, kw});
    if (with_bias) l.bias = Tensor({cout});
    return l;
  }

  static Layer max_pool(std::size_t k, std::size_t stride, std::size_t pad = 0) {
    Layer l;
    l.kind = LayerKind::MaxPool2D;
    l.geom = {0, 0, k, k, stride, pad};
    return l;
  }

  static Layer avg_pool(std::size_t k, std::size_t stride, std::size_t pad = 0) {
    Layer l;
    l.kind = LayerKind::AvgPool2D;
    l.geom = {0, 0, k, k, stride, pad};
    return l;
  }

  bool has_weights() const { return (kind == LayerKind::FullyConnected || kind == LayerKind::Conv2D) && !weights.empty(); }
  bool has_bias() const { return !bias.empty(); }
  bool has_mask() const { return !mask.empty(); }

  std::size_t fan_in() const { return geom.in_channels * geom.kh * geom.kw; }

  /// Zero every masked weight.
  void apply_mask() {
    if (!has_mask()) return;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (mask[i] == 0.0) weights[i] = 0.0;
    }
  }

  std::size_t alive_weights() const {
    if (!has_weights()) return 0;
    if (!has_mask()) return weights.size();
    std::size_t n = 0;
    for (double m : mask.storage()) n += m != 0.0;
    return n;
  }
};

/// Output sample shape for a layer given an input sample shape (no batch axis).
inline Shape layer_output_shape(const Layer& l, const Shape& in, std::size_t index = 0) {
  auto fail = [&](const std::string& why) {
    return DimensionError("layer " + std::to_string(index) + " (" + std::string(to_string(l.kind)) + "): " + why +
                          ", input sample shape " + shape_string(in));
  };
  switch (l.kind) {
    case LayerKind::FullyConnected:
      if (shape_size(in) != l.geom.in_channels) {
        throw fail("expected " + std::to_string(l.geom.in_channels) + " input features");
      }
      return {l.geom.out_channels};
    case LayerKind::Conv2D:
      if (in.size() != 3 || in[0] != l.geom.in_channels) {
        throw fail("expected (" + std::to_string(l.geom.in_channels) + ",H,W)");
      }
      return {l.geom.out_channels, conv_out_extent(in[1], l.geom.kh, l.geom.stride, l.geom.pad),
              conv_out_extent(in[2], l.geom.kw, l.geom.stride, l.geom.pad)};
    case LayerKind::MaxPool2D:
    case LayerKind::AvgPool2D:
      if (in.size() != 3) throw fail("expected (C,H,W)");
      if (l.geom.pad >= l.geom.kh) throw GeometryError("pooling padding must be smaller than the window");
      return {in[0], conv_out_extent(in[1], l.geom.kh, l.geom.stride, l.geom.pad),
              conv_out_extent(in[2], l.geom.kw, l.geom.stride, l.geom.pad)};
  }
  return in;
}

/// Patch matrix: row (b, ho, wo), column (c, p, q). Padding reads as zero.
inline Tensor im2col(const Tensor& input, std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad) {
  if (input.rank() != 4) throw DimensionError("im2col expects a b x C x H x W tensor, got " + shape_string(input.shape()));
  const std::size_t b = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Ho = conv_out_extent(H, kh, stride, pad);
  const std::size_t Wo = conv_out_extent(W, kw, stride, pad);
  const std::size_t K = C * kh * kw;
  Tensor cols({b * Ho * Wo, K});
  double* out = cols.data();
  const double* in = input.data();
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t ho = 0; ho < Ho; ++ho) {
      for (std::size_t wo = 0; wo < Wo; ++wo) {
        double* row = out + ((n * Ho + ho) * Wo + wo) * K;
        for (std::size_t c = 0; c < C; ++c) {
          const double* plane = in + (n * C + c) * H * W;
          for (std::size_t p = 0; p < kh; ++p) {
            const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(ho * stride + p) - static_cast<std::ptrdiff_t>(pad);
            for (std::size_t q = 0; q < kw; ++q) {
              const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(wo * stride + q) - static_cast<std::ptrdiff_t>(pad);
              const bool inside = y >= 0 && x >= 0 && y < static_cast<std::ptrdiff_t>(H) && x < static_cast<std::ptrdiff_t>(W);
              row[(c * kh + p) * kw + q] = inside ? plane[y * static_cast<std::ptrdiff_t>(W) + x] : 0.0;
            }
          }
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col: scatter-add patch rows back onto a b x C x H x W grid.
inline Tensor col2im(const Tensor& cols, const Shape& input_shape, std::size_t kh, std::size_t kw, std::size_t stride,
                     std::size_t pad) {
  const std::size_t b = input_shape.at(0), C = input_shape.at(1), H = input_shape.at(2), W = input_shape.at(3);
  const std::size_t Ho = conv_out_extent(H, kh, stride, pad);
  const std::size_t Wo = conv_out_extent(W, kw, stride, pad);
  const std::size_t K = C * kh * kw;
  if (cols.rank() != 2 || cols.dim(0) != b * Ho * Wo || cols.dim(1) != K) {
    throw DimensionError("col2im: patch matrix " + shape_string(cols.shape()) + " does not match input " +
                         shape_string(input_shape));
  }
  Tensor out(input_shape);
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t ho = 0; ho < Ho; ++ho) {
      for (std::size_t wo = 0; wo < Wo; ++wo) {
        const double* row = cols.data() + ((n * Ho + ho) * Wo + wo) * K;
        for (std::size_t c = 0; c < C; ++c) {
          double* plane = out.data() + (n * C + c) * H * W;
          for (std::size_t p = 0; p < kh; ++p) {
            const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(ho * stride + p) - static_cast<std::ptrdiff_t>(pad);
            if (y < 0 || y >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t q = 0; q < kw; ++q) {
              const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(wo * stride + q) - static_cast<std::ptrdiff_t>(pad);
              if (x < 0 || x >= static_cast<std::ptrdiff_t>(W)) continue;
              plane[y * static_cast<std::ptrdiff_t>(W) + x] += row[(c * kh + p) * kw + q];
            }
          }
        }
      }
    }
  }
  return out;
}

/// (b*P) x Cout row layout <-> b x Cout x Ho x Wo.
inline Tensor rows_to_nchw(const Tensor& rows, std::size_t b, std::size_t C, std::size_t Ho, std::size_t Wo) {
  Tensor out({b, C, Ho, Wo});
  const std::size_t P = Ho * Wo;
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t c = 0; c < C; ++c) out[(n * C + c) * P + p] = rows[(n * P + p) * C + c];
  return out;
}

inline Tensor nchw_to_rows(const Tensor& t) {
  const std::size_t b = t.dim(0), C = t.dim(1), P = t.dim(2) * t.dim(3);
  Tensor out({b * P, C});
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) out[(n * P + p) * C + c] = t[(n * C + c) * P + p];
  return out;
}

/// Pooling forward. For max pooling `argmax` receives, per output entry, the flat input index
/// within the sample (C*H*W space). Average pooling divides by the full window (padding counts).
inline Tensor pool_forward(const Layer& l, const Tensor& input, std::vector<std::size_t>* argmax) {
  const std::size_t b = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t k = l.geom.kh, kw = l.geom.kw, s = l.geom.stride, pad = l.geom.pad;
  const std::size_t Ho = conv_out_extent(H, k, s, pad), Wo = conv_out_extent(W, kw, s, pad);
  Tensor out({b, C, Ho, Wo});
  const bool is_max = l.kind == LayerKind::MaxPool2D;
  if (is_max && argmax) argmax->assign(out.size(), 0);
  const double inv = 1.0 / static_cast<double>(k * kw);
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = c * H * W;
      const double* plane = input.data() + n * C * H * W + base;
      for (std::size_t ho = 0; ho < Ho; ++ho) {
        for (std::size_t wo = 0; wo < Wo; ++wo) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          double acc = 0.0;
          for (std::size_t p = 0; p < k; ++p) {
            const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(ho * s + p) - static_cast<std::ptrdiff_t>(pad);
            if (y < 0 || y >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t q = 0; q < kw; ++q) {
              const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(wo * s + q) - static_cast<std::ptrdiff_t>(pad);
              if (x < 0 || x >= static_cast<std::ptrdiff_t>(W)) continue;
              const std::size_t idx = static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x);
              const double v = plane[idx];
              acc += v;
              if (v > best) {
                best = v;
                best_idx = base + idx;
              }
            }
          }
          const std::size_t o = ((n * C + c) * Ho + ho) * Wo + wo;
          if (is_max) {
            out[o] = best;
            if (argmax) (*argmax)[o] = best_idx;
          } else {
            out[o] = acc * inv;
          }
        }
      }
    }
  }
  return out;
}

/// Pooling adjoint: routes `grad_out` (b x C x Ho x Wo) to the input grid.
inline Tensor pool_backward(const Layer& l, const Shape& input_shape, const Tensor& grad_out,
                            const std::vector<std::size_t>& argmax) {
  const std::size_t b = input_shape[0], C = input_shape[1], H = input_shape[2], W = input_shape[3];
  const std::size_t Ho = grad_out.dim(2), Wo = grad_out.dim(3);
  const std::size_t k = l.geom.kh, kw = l.geom.kw, s = l.geom.stride, pad = l.geom.pad;
  Tensor gin(input_shape);
  const std::size_t per_in = C * H * W, per_out = C * Ho * Wo;
  if (l.kind == LayerKind::MaxPool2D) {
    if (argmax.size() != grad_out.size()) throw UsageError("max-pool backward without forward argmax");
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t o = 0; o < per_out; ++o) gin[n * per_in + argmax[n * per_out + o]] += grad_out[n * per_out + o];
    return gin;
  }
  const double inv = 1.0 / static_cast<double>(k * kw);
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      double* plane = gin.data() + n * per_in + c * H * W;
      for (std::size_t ho = 0; ho < Ho; ++ho) {
        for (std::size_t wo = 0; wo < Wo; ++wo) {
          const double g = grad_out[((n * C + c) * Ho + ho) * Wo + wo] * inv;
          for (std::size_t p = 0; p < k; ++p) {
            const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(ho * s + p) - static_cast<std::ptrdiff_t>(pad);
            if (y < 0 || y >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t q = 0; q < kw; ++q) {
              const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(wo * s + q) - static_cast<std::ptrdiff_t>(pad);
              if (x < 0 || x >= static_cast<std::ptrdiff_t>(W)) continue;
              plane[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)] += g;
            }
          }
        }
      }
    }
  }
  return gin;
}

/// Uniform fan-in initialisation (He-style bound for ReLU, Glorot-style otherwise); biases zero.
template <class Rng>
void init_layer(Layer& l, Rng& rng) {
  if (!l.has_weights()) return;
  const double fan_in = static_cast<double>(l.fan_in());
  const double fan_out = static_cast<double>(l.geom.out_channels * l.geom.kh * l.geom.kw);
  const double bound = l.activation == Activation::ReLU ? std::sqrt(6.0 / fan_in) : std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& w : l.weights.storage()) w = dist(rng);
  if (l.has_bias()) l.bias.fill(0.0);
  l.apply_mask();
}

template <class Rng>
void init_layers(std::vector<Layer>& layers, Rng& rng) {
  for (Layer& l : layers) init_layer(l, rng);
}

}  // namespace ardnas

#endif  // ARDNAS_LAYERS_HPP
