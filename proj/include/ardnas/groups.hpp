#ifndef ARDNAS_GROUPS_HPP
#define ARDNAS_GROUPS_HPP

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "ardnas/error.hpp"
#include "ardnas/hyper.hpp"
#include "ardnas/tensor.hpp"

namespace ardnas {

enum class GroupPattern {
  EdgeSingleton,
  CellTied,
  ShapeWise,          // (a) per (c, p, q), over filters
  RowWise,            // (b) per (c, p)
  ColumnWise,         // (c) per (c, q)
  RowAndColumn,       // (d) row p and column q of channel c, concatenated
  ChannelWise,        // (e) per c
  GroupShapeWise,     // (f) per (p, q), over filters and channels
  GroupRowWise,       // (g) per p
  GroupColumnWise,    // (h) per q
  GroupRowAndColumn,  // (i) row p and column q over all filters and channels
  FilterWise,         // (j) per filter n
};

inline std::string_view to_string(GroupPattern p) {
  switch (p) {
    case GroupPattern::EdgeSingleton: return "edge";
    case GroupPattern::CellTied: return "cell";
    case GroupPattern::ShapeWise: return "shape";
    case GroupPattern::RowWise: return "row";
    case GroupPattern::ColumnWise: return "column";
    case GroupPattern::RowAndColumn: return "row+column";
    case GroupPattern::ChannelWise: return "channel";
    case GroupPattern::GroupShapeWise: return "group-shape";
    case GroupPattern::GroupRowWise: return "group-row";
    case GroupPattern::GroupColumnWise: return "group-column";
    case GroupPattern::GroupRowAndColumn: return "group-row+column";
    case GroupPattern::FilterWise: return "filter";
  }
  return "edge";
}

inline GroupPattern group_pattern_from_string(std::string_view s) {
  for (int i = 0; i <= static_cast<int>(GroupPattern::FilterWise); ++i) {
    const auto p = static_cast<GroupPattern>(i);
    if (to_string(p) == s) return p;
  }
  throw ConfigError("unknown group pattern '" + std::string(s) + "'");
}

struct GroupSpec {
  std::size_t id = 0;
  std::vector<std::size_t> members;  // flat indices into the weight tensor; may repeat for Row&Column variants
  GroupPattern pattern = GroupPattern::EdgeSingleton;
};

/// Index sets for one structured-sparsity pattern. 4-D weights are (N, C, m, k); 2-D FC weights (out, in) use
/// matrix semantics: rows are output units, columns are input features.
inline std::vector<GroupSpec> make_groups(GroupPattern pattern, const Shape& wshape) {
  std::vector<GroupSpec> out;
  auto push = [&](std::vector<std::size_t> m) {
    GroupSpec g;
    g.id = out.size();
    g.members = std::move(m);
    g.pattern = pattern;
    out.push_back(std::move(g));
  };
  if (pattern == GroupPattern::CellTied) throw DimensionError("cell-tied groups apply to edges, not weight tensors");

  if (wshape.size() == 2) {
    const std::size_t R = wshape[0], Cn = wshape[1];
    auto row = [&](std::size_t r, std::vector<std::size_t>& m) {
      for (std::size_t c = 0; c < Cn; ++c) m.push_back(r * Cn + c);
    };
    auto col = [&](std::size_t c, std::vector<std::size_t>& m) {
      for (std::size_t r = 0; r < R; ++r) m.push_back(r * Cn + c);
    };
    switch (pattern) {
      case GroupPattern::EdgeSingleton:
        for (std::size_t i = 0; i < R * Cn; ++i) push({i});
        break;
      case GroupPattern::RowWise:
      case GroupPattern::FilterWise:
        for (std::size_t r = 0; r < R; ++r) {
          std::vector<std::size_t> m;
          row(r, m);
          push(std::move(m));
        }
        break;
      case GroupPattern::ColumnWise:
      case GroupPattern::ShapeWise:
      case GroupPattern::ChannelWise:
        for (std::size_t c = 0; c < Cn; ++c) {
          std::vector<std::size_t> m;
          col(c, m);
          push(std::move(m));
        }
        break;
      case GroupPattern::RowAndColumn:
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t c = 0; c < Cn; ++c) {
            std::vector<std::size_t> m;
            row(r, m);
            col(c, m);
            push(std::move(m));
          }
        break;
      default: {
        std::vector<std::size_t> m(R * Cn);
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = i;
        push(std::move(m));
      }
    }
    return out;
  }

  if (wshape.size() != 4) {
    throw DimensionError("group pattern '" + std::string(to_string(pattern)) + "' needs a 2-D or 4-D weight, got " +
                         shape_string(wshape));
  }
  const std::size_t N = wshape[0], C = wshape[1], M = wshape[2], K = wshape[3];
  auto at = [&](std::size_t n, std::size_t c, std::size_t p, std::size_t q) { return ((n * C + c) * M + p) * K + q; };
  // Collect members over the free axes for fixed values of the bound ones (npos = free).
  constexpr std::size_t F = static_cast<std::size_t>(-1);
  auto collect = [&](std::size_t n0, std::size_t c0, std::size_t p0, std::size_t q0, std::vector<std::size_t>& m) {
    for (std::size_t n = 0; n < N; ++n) {
      if (n0 != F && n != n0) continue;
      for (std::size_t c = 0; c < C; ++c) {
        if (c0 != F && c != c0) continue;
        for (std::size_t p = 0; p < M; ++p) {
          if (p0 != F && p != p0) continue;
          for (std::size_t q = 0; q < K; ++q) {
            if (q0 != F && q != q0) continue;
            m.push_back(at(n, c, p, q));
          }
        }
      }
    }
  };
  auto one = [&](std::size_t n0, std::size_t c0, std::size_t p0, std::size_t q0) {
    std::vector<std::size_t> m;
    collect(n0, c0, p0, q0, m);
    push(std::move(m));
  };
  switch (pattern) {
    case GroupPattern::EdgeSingleton:
      for (std::size_t i = 0; i < N * C * M * K; ++i) push({i});
      break;
    case GroupPattern::ShapeWise:
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t p = 0; p < M; ++p)
          for (std::size_t q = 0; q < K; ++q) one(F, c, p, q);
      break;
    case GroupPattern::RowWise:
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t p = 0; p < M; ++p) one(F, c, p, F);
      break;
    case GroupPattern::ColumnWise:
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t q = 0; q < K; ++q) one(F, c, F, q);
      break;
    case GroupPattern::RowAndColumn:
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t p = 0; p < M; ++p)
          for (std::size_t q = 0; q < K; ++q) {
            std::vector<std::size_t> m;
            collect(F, c, p, F, m);
            collect(F, c, F, q, m);
            push(std::move(m));
          }
      break;
    case GroupPattern::ChannelWise:
      for (std::size_t c = 0; c < C; ++c) one(F, c, F, F);
      break;
    case GroupPattern::GroupShapeWise:
      for (std::size_t p = 0; p < M; ++p)
        for (std::size_t q = 0; q < K; ++q) one(F, F, p, q);
      break;
    case GroupPattern::GroupRowWise:
      for (std::size_t p = 0; p < M; ++p) one(F, F, p, F);
      break;
    case GroupPattern::GroupColumnWise:
      for (std::size_t q = 0; q < K; ++q) one(F, F, F, q);
      break;
    case GroupPattern::GroupRowAndColumn:
      for (std::size_t p = 0; p < M; ++p)
        for (std::size_t q = 0; q < K; ++q) {
          std::vector<std::size_t> m;
          collect(F, F, p, F, m);
          collect(F, F, F, q, m);
          push(std::move(m));
        }
      break;
    case GroupPattern::FilterWise:
      for (std::size_t n = 0; n < N; ++n) one(n, F, F, F);
      break;
    case GroupPattern::CellTied: break;
  }
  return out;
}

/// Per-group state of one pattern on one layer.
struct GroupHyper {
  std::vector<double> gamma;
  std::vector<double> omega;
  std::vector<double> alpha;  // sum of |alpha_i| over members
  std::vector<bool> alive;

  static GroupHyper initial(std::size_t groups) {
    GroupHyper h;
    h.gamma.assign(groups, 1.0);
    h.omega.assign(groups, 1.0);
    h.alpha.assign(groups, 0.0);
    h.alive.assign(groups, true);
    return h;
  }
};

inline double group_norm(const Tensor& w, const GroupSpec& g) {
  double sq = 0.0;
  for (std::size_t i : g.members) sq += w[i] * w[i];
  return std::sqrt(sq);
}

/// Group update for every alive group: gamma = ||W_g|| / omega_prev, C_i = (1/gamma + H_i)^-1,
/// alpha_i = -C_i/gamma^2 + 1/gamma, omega = sqrt(sum |alpha_i|). A group whose weights are all zero
/// gets gamma = 0 and keeps its omega.
inline void structural_update(const Tensor& w, const Tensor& hess, const std::vector<GroupSpec>& groups, GroupHyper& st,
                              double floor = kDefaultOmegaFloor) {
  if (hess.size() != w.size()) throw DimensionError("structural update: Hessian and weights differ in size");
  if (st.gamma.size() != groups.size()) throw DimensionError("structural update: state does not match group count");
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (!st.alive[g]) continue;
    for (std::size_t i : groups[g].members)
      if (i >= w.size()) throw DimensionError("group member index out of range for weight " + shape_string(w.shape()));
    const double gamma = group_norm(w, groups[g]) / st.omega[g];
    st.gamma[g] = gamma;
    if (!(gamma > 0.0)) continue;
    double asum = 0.0;
    for (std::size_t i : groups[g].members) {
      const double c = update_posterior_variance(gamma, hess[i]);
      asum += std::abs(-c / (gamma * gamma) + 1.0 / gamma);
    }
    st.alpha[g] = asum;
    const double omega = std::sqrt(asum);
    st.omega[g] = omega < floor ? floor : omega;
  }
}

/// Marks groups with gamma <= threshold as pruned and zeroes their entries in `mask`.
inline std::size_t prune_groups(const std::vector<GroupSpec>& groups, GroupHyper& st, Tensor& mask, double threshold) {
  std::size_t n = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (!st.alive[g] || st.gamma[g] > threshold) continue;
    st.alive[g] = false;
    ++n;
    for (std::size_t i : groups[g].members) mask[i] = 0.0;
  }
  return n;
}

}  // namespace ardnas

#endif  // ARDNAS_GROUPS_HPP
