#ifndef ARDNAS_ACTIVATION_HPP
#define ARDNAS_ACTIVATION_HPP

#include <cmath>
#include <string>
#include <string_view>

#include "ardnas/error.hpp"

namespace ardnas {

enum class Activation { Identity, ReLU, Tanh, Softplus };

inline double activate(Activation a, double h) {
  switch (a) {
    case Activation::Identity: return h;
    case Activation::ReLU: return h > 0.0 ? h : 0.0;
    case Activation::Tanh: return std::tanh(h);
    case Activation::Softplus: return h > 0.0 ? h + std::log1p(std::exp(-h)) : std::log1p(std::exp(h));
  }
  return h;
}

// ReLU'(0) = 0.
inline double activate_d1(Activation a, double h) {
  switch (a) {
    case Activation::Identity: return 1.0;
    case Activation::ReLU: return h > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: {
      const double t = std::tanh(h);
      return 1.0 - t * t;
    }
    case Activation::Softplus: return h >= 0.0 ? 1.0 / (1.0 + std::exp(-h)) : std::exp(h) / (1.0 + std::exp(h));
  }
  return 1.0;
}

inline double activate_d2(Activation a, double h) {
  switch (a) {
    case Activation::Identity:
    case Activation::ReLU: return 0.0;
    case Activation::Tanh: {
      const double t = std::tanh(h);
      return -2.0 * t * (1.0 - t * t);
    }
    case Activation::Softplus: {
      const double p = activate_d1(Activation::Softplus, h);
      return p * (1.0 - p);
    }
  }
  return 0.0;
}

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::ReLU: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Softplus: return "softplus";
  }
  return "identity";
}

inline Activation activation_from_string(std::string_view s) {
  if (s == "identity") return Activation::Identity;
  if (s == "relu") return Activation::ReLU;
  if (s == "tanh") return Activation::Tanh;
  if (s == "softplus") return Activation::Softplus;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

}  // namespace ardnas

#endif  // ARDNAS_ACTIVATION_HPP
