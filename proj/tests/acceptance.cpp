// Acceptance harness: one PASS/FAIL line per criterion. Exit 0 when every selected criterion passes,
// 77 when only MNIST criteria were selected and the data is missing, 1 otherwise.

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "ardnas/app.hpp"
#include "ardnas/ardnas.hpp"
#include "test_util.hpp"

using namespace ardnas;
using testutil::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  bool skipped = false;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// ---------------------------------------------------------------- 1

double worst_fd_error(std::vector<Layer>& net, const Tensor& x, const Tensor& t) {
  const CurvatureCache cc = network_hessians(net, x, t, EnergyKind::MSE, HessianMode::Exact);
  auto e = [&] { return energy(predict(net, x), t, EnergyKind::MSE).value; };
  double worst = 0.0;
  for (std::size_t li = 0; li < net.size(); ++li) {
    if (!net[li].has_weights()) continue;
    std::vector<double*> ps;
    for (double& w : net[li].weights.storage()) ps.push_back(&w);
    // Richardson combination of two central differences: O(h^4) truncation with little round-off
    const std::vector<double> d1 = finite_diff_hessian(e, ps, 5e-4), d2 = finite_diff_hessian(e, ps, 1e-3);
    for (std::size_t i = 0; i < d1.size(); ++i)
      worst = std::max(worst, testutil::rel_err(cc.weight_hessian[li][i], (4.0 * d1[i] - d2[i]) / 3.0, 1e-3));
  }
  return worst;
}

Outcome hessian_oracle() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t fc = 0, conv = 0;
  for (int seed = 0; seed < 24; ++seed, ++fc) {
    std::mt19937_64 rng(7000 + seed);
    std::uniform_int_distribution<std::size_t> width(1, 8), depth(1, 4);
    std::vector<std::size_t> widths{width(rng)};
    const std::size_t d = depth(rng);
    for (std::size_t k = 0; k < d; ++k) widths.push_back(width(rng));
    auto net = testutil::random_mlp(widths, seed % 2 ? Activation::Tanh : Activation::Softplus, rng);
    const Tensor x = random_tensor({3, widths.front()}, rng);
    worst = std::max(worst, worst_fd_error(net, x, random_tensor({3, widths.back()}, rng)));
  }
  for (int seed = 0; seed < 12; ++seed, ++conv) {
    std::mt19937_64 rng(8000 + seed);
    std::uniform_int_distribution<std::size_t> ch(1, 3), k(1, 3), hw(3, 5);
    const std::size_t cin = ch(rng), cout = ch(rng), kh = k(rng), kw = k(rng), h = hw(rng) + 1, w = hw(rng) + 1;
    const std::size_t stride = seed % 3 == 2 ? 2 : 1, pad = seed % 2;
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
    std::vector<Layer> net{Layer::conv2d(cin, cout, kh, kw, stride, pad, seed % 2 ? Activation::Tanh : Activation::Softplus),
                           Layer::fully_connected(cout * oh * ow, 2, Activation::Identity)};
    for (auto& l : net) testutil::randomize(l, rng);
    const Tensor x = random_tensor({2, cin, h, w}, rng);
    worst = std::max(worst, worst_fd_error(net, x, random_tensor({2, 2}, rng)));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 120.0, std::to_string(fc) + " fc + " + std::to_string(conv) +
                                             " conv nets, worst rel err " + fmt("%.2e", worst) + ", " +
                                             fmt("%.1f", secs) + " s"};
}

// ---------------------------------------------------------------- 2

Outcome width_one_equivalence() {
  bool ok = true;
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(9000 + seed);
    auto net = testutil::random_mlp({1, 1, 1, 1, 1}, seed % 2 ? Activation::Tanh : Activation::Softplus, rng);
    const Tensor x = random_tensor({6, 1}, rng), t = random_tensor({6, 1}, rng);
    const auto ex = network_hessians(net, x, t, EnergyKind::MSE, HessianMode::Exact);
    const auto dg = network_hessians(net, x, t, EnergyKind::MSE, HessianMode::Diagonal);
    for (std::size_t li = 0; li < net.size(); ++li)
      ok = ok && same_bits(ex.weight_hessian[li].storage(), dg.weight_hessian[li].storage());
  }
  return {ok, "10 seeds, depth-4 chains"};
}

// ---------------------------------------------------------------- 3

Outcome conv_equivalence() {
  double worst = 0.0;
  for (int seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(10000 + seed);
    std::uniform_int_distribution<std::size_t> ch(1, 4), k(1, 4), hw(4, 9), st(1, 3), pd(0, 2), nb(1, 3);
    const std::size_t kh = k(rng), kw = k(rng), pad = std::min(pd(rng), std::min(kh, kw) - 1);
    Layer l = Layer::conv2d(ch(rng), ch(rng), kh, kw, st(rng), pad, Activation::Identity);
    testutil::randomize(l, rng);
    const Tensor x = random_tensor({nb(rng), l.geom.in_channels, hw(rng), hw(rng)}, rng);
    const Tensor ref = testutil::direct_conv(x, l.weights, &l.bias, l.geom.stride, l.geom.pad);
    worst = std::max(worst, max_abs_diff(predict({l}, x), ref));
  }
  return {worst <= 1e-12, "50 geometries, max abs diff " + fmt("%.2e", worst)};
}

// ---------------------------------------------------------------- 4

Outcome update_algebra() {
  std::mt19937_64 rng(11000);
  std::uniform_real_distribution<double> lg(-8.0, 8.0), u(-1.0, 1.0);
  std::size_t bad = 0;
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double gamma = std::pow(10.0, lg(rng) / 2);
    const double h = i % 7 == 0 ? 0.0 : std::pow(10.0, lg(rng));
    const double w = u(rng) * std::pow(10.0, lg(rng) / 4);
    const double c = update_posterior_variance(gamma, h);
    const double omega = update_omega(gamma, c);
    const double s = update_switch(w, omega);
    bool ok = std::isfinite(c) && c > 0.0 && c <= gamma && std::isfinite(omega) && omega >= 0.0 && std::isfinite(s) &&
              s >= 0.0;
    if (ok && omega > kDefaultOmegaFloor) {
      const double r = std::abs(omega * omega * gamma * gamma + c - gamma) / std::max(1.0, gamma);
      worst = std::max(worst, r);
      ok = r <= 1e-10;
    }
    bad += !ok;
  }
  return {bad == 0, "10000 triples, " + std::to_string(bad) + " violations, worst identity residual " +
                        fmt("%.2e", worst)};
}

// ---------------------------------------------------------------- 5

Outcome cccp_monotone() {
  using Eigen::MatrixXd;
  using Eigen::VectorXd;
  const int n = 10;
  std::mt19937_64 rng(12000);
  std::normal_distribution<double> nd;
  MatrixXd R(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) R(i, j) = nd(rng);
  const MatrixXd A = R.transpose() * R / n + 0.2 * MatrixXd::Identity(n, n);
  VectorXd wtrue = VectorXd::Zero(n);
  wtrue(2) = 1.0;
  wtrue(5) = -1.7;
  wtrue(8) = 0.6;
  VectorXd b = A * wtrue;
  for (int i = 0; i < n; ++i) b(i) += 0.05 * nd(rng);

  // L(gamma) = min_w [w'Aw - 2b'w + sum w_i^2 / gamma_i] + log det(I + Gamma A), gamma_i = 0 pins w_i = 0
  auto cost = [&](const VectorXd& gamma) {
    std::vector<int> act;
    for (int i = 0; i < n; ++i)
      if (gamma(i) > 0) act.push_back(i);
    const int k = static_cast<int>(act.size());
    MatrixXd M(k, k);
    VectorXd rhs(k);
    for (int a = 0; a < k; ++a) {
      rhs(a) = b(act[a]);
      for (int c = 0; c < k; ++c) M(a, c) = A(act[a], act[c]);
      M(a, a) += 1.0 / gamma(act[a]);
    }
    const VectorXd ws = M.ldlt().solve(rhs);
    double v = 0.0;
    VectorXd w = VectorXd::Zero(n);
    for (int a = 0; a < k; ++a) w(act[a]) = ws(a);
    v = w.dot(A * w) - 2 * b.dot(w);
    for (int a = 0; a < k; ++a) v += w(act[a]) * w(act[a]) / gamma(act[a]);
    return v + std::log((MatrixXd::Identity(n, n) + gamma.asDiagonal() * A).determinant());
  };

  VectorXd gamma = VectorXd::Ones(n);
  double prev = cost(gamma), worst_rise = -1e300;
  std::ostringstream trace;
  trace << fmt("%.6f", prev);
  for (int t = 0; t < 10; ++t) {
    const MatrixXd Inv = (MatrixXd::Identity(n, n) + A * gamma.asDiagonal()).inverse();
    const MatrixXd D = Inv * A;
    const MatrixXd C = gamma.asDiagonal() * Inv;
    VectorXd omega(n);
    for (int i = 0; i < n; ++i)
      omega(i) = gamma(i) > 0 ? update_omega(gamma(i), std::min(C(i, i), gamma(i)), 0.0) : std::sqrt(D(i, i));
    VectorXd w = VectorXd::Zero(n);
    for (int sweep = 0; sweep < 20000; ++sweep) {
      double moved = 0.0;
      for (int i = 0; i < n; ++i) {
        const double r = b(i) - A.row(i).dot(w) + A(i, i) * w(i);
        const double nw = (r > omega(i) ? r - omega(i) : (r < -omega(i) ? r + omega(i) : 0.0)) / A(i, i);
        moved = std::max(moved, std::abs(nw - w(i)));
        w(i) = nw;
      }
      if (moved < 1e-15) break;
    }
    for (int i = 0; i < n; ++i) gamma(i) = w(i) == 0.0 ? 0.0 : update_switch(w(i), omega(i), 1e300);
    const double cur = cost(gamma);
    worst_rise = std::max(worst_rise, cur - prev);
    trace << " " << fmt("%.6f", cur);
    prev = cur;
  }
  return {worst_rise <= 1e-8, "10 iterations, largest step change " + fmt("%.2e", worst_rise) + ", cost " + trace.str()};
}

// ---------------------------------------------------------------- 6

// Alive set after killing `kill`: an edge survives iff its source is reachable from the input through surviving edges.
std::vector<bool> bfs_oracle(const SuperGraph& g, const std::set<std::size_t>& kill) {
  std::vector<bool> reach(g.num_nodes, false);
  std::queue<std::size_t> q;
  reach[g.input] = true;
  q.push(g.input);
  while (!q.empty()) {
    const std::size_t v = q.front();
    q.pop();
    for (std::size_t id = 0; id < g.edges.size(); ++id) {
      const Edge& e = g.edges[id];
      if (e.from != v || kill.count(id) || reach[e.to]) continue;
      reach[e.to] = true;
      q.push(e.to);
    }
  }
  std::vector<bool> alive(g.edges.size());
  for (std::size_t id = 0; id < g.edges.size(); ++id) alive[id] = !kill.count(id) && reach[g.edges[id].from];
  return alive;
}

Outcome dependency_pruning() {
  std::size_t compared = 0, mismatched = 0, degenerate = 0;
  for (int seed = 0; compared < 100 && seed < 1000; ++seed) {
    std::mt19937_64 rng(13000 + seed);
    std::uniform_int_distribution<std::size_t> nn(4, 9);
    SuperGraph g = make_graph(nn(rng), {2});
    std::bernoulli_distribution keep(0.45);
    for (std::size_t j = 1; j < g.num_nodes; ++j) {
      add_edge(g, j - 1, j, OpKind::Identity);
      for (std::size_t i = 0; i + 1 < j; ++i)
        if (keep(rng)) add_edge(g, i, j, OpKind::Identity);
    }
    std::uniform_real_distribution<double> lg(-2.5, 0.5);
    for (Edge& e : g.edges) e.gamma = std::pow(10.0, lg(rng));
    const std::vector<std::size_t> kill = entropy_prune_mask(g);
    const std::vector<bool> expect = bfs_oracle(g, {kill.begin(), kill.end()});
    const PruneReport r = propagate_dependency_prune(g, kill);
    if (r.degenerate) {
      ++degenerate;
      continue;
    }
    ++compared;
    mismatched += g.alive_mask() != expect;
  }
  return {mismatched == 0 && compared == 100, std::to_string(compared) + " DAGs compared, " +
                                                 std::to_string(mismatched) + " mismatches, " +
                                                 std::to_string(degenerate) + " degenerate draws skipped (widest-path fallback)"};
}

// ---------------------------------------------------------------- 7

Outcome entropy_threshold() {
  const double expect = 1.0 / (2.0 * M_PI * std::exp(1.0));
  const bool exact = std::abs(kEntropyThreshold - expect) <= 1e-15;
  const bool sig3 = fmt("%.3g", kEntropyThreshold) == "0.0585";
  const bool boundary = 0.5 * std::log(2 * M_PI * M_E * kEntropyThreshold) <= 1e-15;
  return {exact && sig3 && boundary, "threshold " + fmt("%.6f", kEntropyThreshold)};
}

// ---------------------------------------------------------------- 8, 11, 12

SearchConfig load_shipped(const char* name) {
  return parse_config((std::string(ARDNAS_SOURCE_DIR) + "/configs/" + name).c_str());
}

Outcome synthetic_recovery() {
  const auto t0 = Clock::now();
  SearchConfig c = load_shipped("synthetic.json");
  std::size_t ok = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    c.seed = seed;
    const SyntheticTask t = app::make_synthetic(c);
    const SearchResult r = run_proxyless(t.graph, t.data, c);
    bool rec = r.report.iterations <= 20;
    for (std::size_t id = 0; id < t.planted.size(); ++id) rec = rec && r.graph.edges[id].alive == t.planted[id];
    ok += rec;
    per_seed += rec ? "+" : "-";
  }
  const double secs = seconds_since(t0);
  return {ok >= 9 && secs < 300.0,
          std::to_string(ok) + "/10 seeds recovered [" + per_seed + "], " + fmt("%.1f", secs) + " s"};
}

Outcome group_tying() {
  SearchConfig c = load_shipped("proxy.json");
  std::size_t checks = 0, bad = 0;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    c.seed = seed;
    const SyntheticTask t = app::make_synthetic(c);
    const auto groups = detail::edge_groups(t.graph);
    const SearchResult r = run_proxy_cells(t.graph, t.data, c);
    for (const auto& snap : r.report.snapshots)
      for (const auto& m : groups) {
        if (m.size() < 2) continue;
        for (std::size_t id : m) {
          ++checks;
          bad += !same_bits({snap.s[id], snap.omega[id]}, {snap.s[m[0]], snap.omega[m[0]]}) ||
                 snap.alive[id] != snap.alive[m[0]];
        }
      }
  }
  return {bad == 0 && checks > 0,
          std::to_string(checks) + " tied (s, omega, mask) comparisons over 3 seeds, " + std::to_string(bad) + " differ"};
}

Outcome determinism() {
  SearchConfig c = load_shipped("synthetic.json");
  c.seed = 4;
  std::string csv[2], arch[2];
  for (int run = 0; run < 2; ++run) {
    const SyntheticTask t = app::make_synthetic(c);
    const SearchResult r = run_proxyless(t.graph, t.data, c);
    ArchExport ex = export_architecture(r.graph);
    ex.config_hash = config_hash(c);
    ex.seed = c.seed;
    csv[run] = metrics_csv(r.report.history);
    arch[run] = arch_to_json(ex).dump(2);
  }
  return {csv[0] == csv[1] && arch[0] == arch[1],
          "metrics.csv " + std::string(csv[0] == csv[1] ? "identical" : "differs") + " (" +
              std::to_string(csv[0].size()) + " bytes), ArchExport " + (arch[0] == arch[1] ? "identical" : "differs")};
}

// ---------------------------------------------------------------- 9, 10

Outcome mnist_compression(const std::string& data, const char* config, double max_error, double max_ratio,
                          const char* reference_widths) {
  if (!mnist_available(data)) return {false, "MNIST IDX files not found under '" + data + "'", true};
  const auto t0 = Clock::now();
  const SearchConfig c = load_shipped(config);
  CliOptions o;
  o.command = "compress";
  o.data = data;
  std::vector<Layer> net = app::make_network(c);
  const Dataset ds = app::load_mnist_for(c, o);
  std::mt19937_64 rng(c.seed);
  init_layers(net, rng);
  CompressResult r = run_compression(std::move(net), ds, c, app::patterns_of(c), c.layer_lambda);
  if (r.report.severed) return {false, "run stopped: an update would have removed a whole layer"};
  const double err = retrain_pruned(r.net, ds, c);
  const double ratio = static_cast<double>(r.report.surviving_params) / static_cast<double>(r.report.baseline_params);
  std::string widths;
  for (std::size_t w : r.report.surviving_widths) widths += (widths.empty() ? "" : "-") + std::to_string(w);
  return {err <= max_error && ratio <= max_ratio,
          "test error " + fmt("%.2f", 100 * err) + "% (before retrain " +
              fmt("%.2f", 100 * r.report.test_error_before_retrain) + "%), parameters " +
              std::to_string(r.report.surviving_params) + "/" + std::to_string(r.report.baseline_params) + " (" +
              fmt("%.1f", 100 * ratio) + "%), widths " + widths + " (reference " + reference_widths + "), " +
              fmt("%.0f", seconds_since(t0)) + " s"};
}

std::set<int> parse_list(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.insert(std::stoi(tok));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"acceptance criteria"};
  std::string only, skip, data = ARDNAS_MNIST_DIR;
  cli.add_option("--only", only, "comma-separated criteria to run");
  cli.add_option("--skip", skip, "comma-separated criteria to skip");
  cli.add_option("--data", data, "MNIST IDX directory");
  CLI11_PARSE(cli, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"hessian finite-difference oracle", hessian_oracle},
      {"width-1 diagonal equals exact", width_one_equivalence},
      {"im2col equals direct convolution", conv_equivalence},
      {"update-rule algebra", update_algebra},
      {"CCCP surrogate monotone", cccp_monotone},
      {"dependency pruning fixpoint", dependency_pruning},
      {"entropy threshold constant", entropy_threshold},
      {"synthetic support recovery", synthetic_recovery},
      {"MNIST LeNet-300-100 compression",
       [&] { return mnist_compression(data, "lenet300.json", 0.020, 0.25, "465-37-90"); }},
      {"MNIST LeNet-5 compression", [&] { return mnist_compression(data, "lenet5.json", 0.013, 0.30, "5-10-65-25"); }},
      {"group tying across cells", group_tying},
      {"determinism of metrics and export", determinism},
  };
  const std::set<int> want = parse_list(only), drop = parse_list(skip);
  std::size_t ran = 0, failed = 0, skipped = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if ((!want.empty() && !want.count(id)) || drop.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    ++ran;
    if (o.skipped) {
      ++skipped;
      std::cout << "SKIP " << id << " " << criteria[i].first << ": " << o.detail << std::endl;
      continue;
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << id << " " << criteria[i].first << ": " << o.detail << std::endl;
  }
  if (failed) return 1;
  if (ran > 0 && skipped == ran) return 77;
  return 0;
}
