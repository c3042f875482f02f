#ifndef ARDNAS_HYPER_HPP
#define ARDNAS_HYPER_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ardnas/error.hpp"

namespace ardnas {

// Gamma hyperprior shape/rate; both zero, so the prior on switches is flat in log-scale.
inline constexpr double kHyperpriorA = 0.0;
inline constexpr double kHyperpriorB = 0.0;

inline constexpr double kDefaultOmegaFloor = 1e-8;
inline constexpr double kDefaultSwitchCap = 1e6;

/// C = (1/gamma + H)^-1, with negative curvature clamped to zero.
inline double update_posterior_variance(double gamma, double hess) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw NumericError("posterior variance needs gamma > 0, got " + std::to_string(gamma));
  }
  if (std::isnan(hess)) throw NumericError("posterior variance: curvature is NaN");
  const double h = hess < 0.0 ? 0.0 : hess;
  const double c = 1.0 / (1.0 / gamma + h);
  return c > gamma ? gamma : c;  // 1/(1/gamma) can round above gamma
}

/// omega = sqrt(gamma_prev - C) / gamma_prev, floored.
inline double update_omega(double gamma_prev, double c, double floor = kDefaultOmegaFloor) {
  if (!(gamma_prev > 0.0)) throw NumericError("omega update needs gamma > 0");
  if (c > gamma_prev + 1e-12) {
    throw NumericError("posterior variance " + std::to_string(c) + " exceeds prior variance " +
                       std::to_string(gamma_prev));
  }
  const double d = gamma_prev - c;
  const double omega = std::sqrt(d > 0.0 ? d : 0.0) / gamma_prev;
  return omega < floor ? floor : omega;
}

/// s = |w / omega|, capped.
inline double update_switch(double w, double omega, double cap = kDefaultSwitchCap) {
  const double s = std::abs(w) / omega;
  return s > cap || std::isnan(s) ? cap : s;
}

struct PenaltyResult {
  double value = 0.0;
  std::vector<double> grad;
};

/// lambda_w * sum omega_i |w_i|; subgradient uses sign(0) = 0.
inline PenaltyResult reweighted_l1_penalty(std::span<const double> w, std::span<const double> omega, double lambda_w) {
  if (w.size() != omega.size()) throw DimensionError("reweighted l1: w and omega lengths differ");
  PenaltyResult r;
  r.grad.resize(w.size());
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    s += std::abs(omega[i] * w[i]);
    const double sg = w[i] > 0.0 ? 1.0 : (w[i] < 0.0 ? -1.0 : 0.0);
    r.grad[i] = lambda_w * omega[i] * sg;
  }
  r.value = lambda_w * s;
  return r;
}

/// lambda_w * sum_g omega_g ||w_g||_2 over index groups (members may repeat).
inline PenaltyResult group_l2_penalty(std::span<const double> w, const std::vector<std::vector<std::size_t>>& groups,
                                      std::span<const double> omega_g, double lambda_w) {
  if (groups.size() != omega_g.size()) throw DimensionError("group penalty: one omega per group required");
  PenaltyResult r;
  r.grad.assign(w.size(), 0.0);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    double sq = 0.0;
    for (std::size_t i : groups[g]) sq += w[i] * w[i];
    const double norm = std::sqrt(sq);
    r.value += lambda_w * omega_g[g] * norm;
    if (norm == 0.0) continue;
    for (std::size_t i : groups[g]) r.grad[i] += lambda_w * omega_g[g] * (w[i] / norm);
  }
  return r;
}

struct GroupUpdate {
  double s = 0.0;
  double omega = 0.0;
};

/// Grouped switch/reweighting update: omega_g = sqrt(sum omega_i^2) with omega_i the scalar rule,
/// s_g = ||w_g|| / omega_g. A singleton reproduces update_omega / update_switch bitwise.
inline GroupUpdate group_update(std::span<const double> w, std::span<const double> gamma_prev, std::span<const double> c,
                                double floor = kDefaultOmegaFloor, double cap = kDefaultSwitchCap) {
  if (w.empty()) throw UsageError("group update on an empty group");
  if (gamma_prev.size() != w.size() || c.size() != w.size()) throw DimensionError("group update: member lengths differ");
  double osq = 0.0, wsq = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double o = update_omega(gamma_prev[i], c[i], floor);
    osq += o * o;
    wsq += w[i] * w[i];
  }
  GroupUpdate u;
  u.omega = std::sqrt(osq);
  u.s = update_switch(std::sqrt(wsq), u.omega, cap);
  return u;
}

/// Per-parameter (or per-group) hyper-parameter state.
struct HyperState {
  std::vector<double> gamma;
  std::vector<double> omega;
  std::vector<double> s;
  std::vector<double> c;
  std::vector<double> hess;
  std::vector<double> alpha;
  std::size_t t = 0;

  static HyperState initial(std::size_t n, double gamma0 = 1.0, double omega0 = 0.0) {
    HyperState h;
    h.gamma.assign(n, gamma0);
    h.omega.assign(n, omega0);
    h.s.assign(n, 1.0);
    h.c.assign(n, gamma0);
    h.hess.assign(n, 0.0);
    h.alpha.assign(n, 0.0);
    return h;
  }
};

}  // namespace ardnas

#endif  // ARDNAS_HYPER_HPP
