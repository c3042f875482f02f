#ifndef ARDNAS_TEST_UTIL_HPP
#define ARDNAS_TEST_UTIL_HPP

#include <cmath>
#include <random>
#include <vector>

#include "ardnas/layers.hpp"
#include "ardnas/network.hpp"
#include "ardnas/tensor.hpp"

namespace testutil {

using namespace ardnas;

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : t.storage()) v = d(rng);
  return t;
}

inline void randomize(Layer& l, std::mt19937_64& rng, double scale = 1.0) {
  if (!l.has_weights()) return;
  l.weights = random_tensor(l.weights.shape(), rng, -scale, scale);
  if (l.has_bias()) l.bias = random_tensor(l.bias.shape(), rng, -0.5 * scale, 0.5 * scale);
}

inline std::vector<Layer> random_mlp(const std::vector<std::size_t>& widths, Activation act, std::mt19937_64& rng,
                                     bool last_identity = true) {
  std::vector<Layer> net;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    net.push_back(Layer::fully_connected(widths[i], widths[i + 1], last && last_identity ? Activation::Identity : act));
    randomize(net.back(), rng);
  }
  return net;
}

// Straight-line reference: a = act(W a + b) layer by layer, plain loops.
inline std::vector<double> hand_mlp(const std::vector<Layer>& net, std::vector<double> a) {
  for (const Layer& l : net) {
    const std::size_t in = l.geom.in_channels, out = l.geom.out_channels;
    std::vector<double> z(out);
    for (std::size_t o = 0; o < out; ++o) {
      double s = l.has_bias() ? l.bias[o] : 0.0;
      for (std::size_t i = 0; i < in; ++i) s += l.weights[o * in + i] * a[i];
      switch (l.activation) {
        case Activation::Tanh: z[o] = std::tanh(s); break;
        case Activation::ReLU: z[o] = s > 0 ? s : 0; break;
        case Activation::Softplus: z[o] = std::log(1.0 + std::exp(s)); break;
        default: z[o] = s;
      }
    }
    a = std::move(z);
  }
  return a;
}

// Sliding-window convolution without im2col.
inline Tensor direct_conv(const Tensor& x, const Tensor& w, const Tensor* bias, std::size_t stride, std::size_t pad) {
  const std::size_t b = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor out({b, Co, Ho, Wo});
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t o = 0; o < Co; ++o)
      for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t xx = 0; xx < Wo; ++xx) {
          double s = bias ? (*bias)[o] : 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < kh; ++p)
              for (std::size_t q = 0; q < kw; ++q) {
                const long iy = static_cast<long>(y * stride + p) - static_cast<long>(pad);
                const long ix = static_cast<long>(xx * stride + q) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                s += w[((o * C + c) * kh + p) * kw + q] * x[((n * C + c) * H + iy) * W + ix];
              }
          out[((n * Co + o) * Ho + y) * Wo + xx] = s;
        }
  return out;
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace testutil

#endif  // ARDNAS_TEST_UTIL_HPP
