#ifndef ARDNAS_APP_HPP
#define ARDNAS_APP_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "ardnas/config.hpp"
#include "ardnas/data.hpp"
#include "ardnas/io.hpp"
#include "ardnas/search.hpp"

namespace ardnas {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

struct CliOptions {
  std::string command;
  std::string config;
  std::string out = ".";
  std::string data;
  std::string mode;  // overrides hessian_mode when set
  std::string arch;  // input export for retrain / eval / export
  std::string format = "json";
  std::optional<std::uint64_t> seed;
};

namespace app {

inline std::string join(const std::string& dir, const char* name) { return (std::filesystem::path(dir) / name).string(); }

inline SearchConfig load_config(const CliOptions& o) {
  if (o.config.empty()) throw ConfigError("--config is required for '" + o.command + "'");
  SearchConfig c = parse_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.mode.empty()) {
    if (o.mode != "exact" && o.mode != "approx-hessian" && o.mode != "diagonal") {
      throw ConfigError("--mode must be exact or approx-hessian, got '" + o.mode + "'");
    }
    c.hessian_mode = o.mode;
  }
  return c;
}

inline SyntheticTask make_synthetic(const SearchConfig& c) {
  if (c.task == "synthetic") {
    return gen_synthetic_dag_task(c.seed, c.nodes, c.edges, c.planted, c.width, c.train_samples, c.test_samples,
                                  c.sigma2, c.train_op_weights);
  }
  if (c.task == "proxy-synthetic") {
    SyntheticTask t = gen_synthetic_cell_task(c.seed, c.cells, c.cell_nodes, c.edges, c.planted, c.width,
                                              c.train_samples, c.test_samples, c.sigma2);
    gate_cell_stack(t.graph, c.cell_nodes, c.edges);
    return t;
  }
  throw ConfigError("field 'task' must be synthetic or proxy-synthetic for this command, got '" + c.task + "'");
}

inline Dataset load_mnist_for(const SearchConfig& c, const CliOptions& o) {
  if (o.data.empty()) throw ConfigError("--data DIR (MNIST IDX files) is required for task '" + c.task + "'");
  Dataset ds = load_mnist_idx(o.data);
  limit_train(ds, c.train_limit);
  if (c.task == "mnist-lenet300") {
    ds.x_train = ds.x_train.reshaped({ds.train_size(), 784});
    ds.x_test = ds.x_test.reshaped({ds.test_size(), 784});
  }
  return ds;
}

inline std::vector<Layer> make_network(const SearchConfig& c) {
  if (c.task == "mnist-lenet300") return make_lenet300();
  if (c.task == "mnist-lenet5") return make_lenet5();
  throw ConfigError("field 'task' must be mnist-lenet300 or mnist-lenet5 for compress, got '" + c.task + "'");
}

inline std::vector<std::vector<GroupPattern>> patterns_of(const SearchConfig& c) {
  std::vector<std::vector<GroupPattern>> out;
  for (const auto& layer : c.patterns) {
    out.emplace_back();
    for (const auto& p : layer) out.back().push_back(group_pattern_from_string(p));
  }
  return out;
}

inline void write_outputs(const std::string& dir, const std::vector<IterationRecord>& hist, Json report) {
  write_text_file(join(dir, "metrics.csv"), metrics_csv(hist));
  write_text_file(join(dir, "report.json"), report.dump(2) + "\n");
}

inline int cmd_search(const CliOptions& o, std::ostream& log, bool proxy) {
  SearchConfig c = load_config(o);
  if (proxy && c.task == "synthetic") c.task = "proxy-synthetic";
  if (!proxy && c.task == "proxy-synthetic") throw ConfigError("task proxy-synthetic needs the proxy-search command");
  SyntheticTask task = make_synthetic(c);
  SearchResult res = proxy ? run_proxy_cells(task.graph, task.data, c) : run_proxyless(task.graph, task.data, c);
  bool recovered = true;
  for (std::size_t id = 0; id < task.planted.size(); ++id) recovered = recovered && res.graph.edges[id].alive == task.planted[id];
  SuperGraph searched = res.graph;
  res.report.test_error_after_retrain = retrain_pruned(res.graph, task.data, c);
  ArchExport ex = export_architecture(searched);
  ex.config_hash = config_hash(c);
  ex.seed = c.seed;
  write_text_file(join(o.out, "arch.json"), arch_to_json(ex).dump(2) + "\n");
  write_text_file(join(o.out, "arch.dot"), arch_to_dot(ex));
  ArchExport rex = export_architecture(res.graph);
  rex.config_hash = ex.config_hash;
  rex.seed = c.seed;
  write_text_file(join(o.out, "retrained.json"), arch_to_json(rex).dump(2) + "\n");
  Json rep = report_to_json(res.report);
  rep["planted_recovered"] = recovered;
  rep["alive_edges"] = searched.alive_count();
  rep["config_hash"] = ex.config_hash;
  write_outputs(o.out, res.report.history, rep);
  log << "iterations " << res.report.iterations << ", alive edges " << searched.alive_count() << "/"
      << searched.edges.size() << ", planted support " << (recovered ? "recovered" : "not recovered")
      << ", test error " << res.report.test_error_before_retrain << " -> " << res.report.test_error_after_retrain
      << " after retraining\n";
  if (res.report.degenerate) log << "warning: the search pruned every path; the widest path was kept\n";
  return kExitOk;
}

inline int cmd_compress(const CliOptions& o, std::ostream& log) {
  SearchConfig c = load_config(o);
  std::vector<Layer> net = make_network(c);
  Dataset ds = load_mnist_for(c, o);
  std::mt19937_64 rng(c.seed);
  init_layers(net, rng);
  CompressResult res = run_compression(std::move(net), ds, c, patterns_of(c), c.layer_lambda);
  if (!res.report.severed) res.report.test_error_after_retrain = retrain_pruned(res.net, ds, c);
  NetExport ex{"1", res.net, res.report.surviving_widths, config_hash(c), c.seed};
  write_text_file(join(o.out, "masks.json"), net_to_json(ex).dump() + "\n");
  write_text_file(join(o.out, "network.dot"), net_to_dot(ex));
  write_outputs(o.out, res.report.history, report_to_json(res.report));
  log << "surviving widths";
  for (std::size_t w : res.report.surviving_widths) log << " " << w;
  log << ", parameters " << res.report.surviving_params << "/" << res.report.baseline_params << ", test error "
      << res.report.test_error_before_retrain << " -> " << res.report.test_error_after_retrain << "\n";
  if (res.report.severed) {
    log << "error: an update would have removed every weight of a layer; run stopped\n";
    return kExitRuntime;
  }
  return kExitOk;
}

inline Json load_export(const CliOptions& o) {
  if (o.arch.empty()) throw ConfigError("--arch PATH is required for '" + o.command + "'");
  Json j = read_json_file(o.arch);
  if (!j.is_object() || !j.contains("kind")) throw ParseError(o.arch + ": not an ardnas export");
  return j;
}

inline int cmd_retrain_or_eval(const CliOptions& o, std::ostream& log, bool train) {
  SearchConfig c = load_config(o);
  Json j = load_export(o);
  Json rep;
  if (j["kind"] == "architecture") {
    SuperGraph g = import_architecture(arch_from_json(j));
    Dataset ds = make_synthetic(c).data;
    const double before = detail::graph_test_error(g, ds);
    double after = before;
    if (train) {
      after = retrain_pruned(g, ds, c);
      ArchExport ex = export_architecture(g);
      ex.config_hash = config_hash(c);
      ex.seed = c.seed;
      write_text_file(join(o.out, "retrained.json"), arch_to_json(ex).dump(2) + "\n");
    }
    rep = {{"test_error", after}, {"test_error_before", before}, {"alive_edges", g.alive_count()}};
  } else {
    NetExport ne = net_from_json(j);
    Dataset ds = load_mnist_for(c, o);
    const double before = net_test_error(ne.layers, ds);
    double after = before;
    if (train) {
      after = retrain_pruned(ne.layers, ds, c);
      ne.config_hash = config_hash(c);
      write_text_file(join(o.out, "retrained.json"), net_to_json(ne).dump() + "\n");
    }
    rep = {{"test_error", after}, {"test_error_before", before}, {"surviving_params", count_alive_weights(ne.layers)}};
  }
  write_text_file(join(o.out, train ? "retrain.json" : "eval.json"), rep.dump(2) + "\n");
  log << "test error " << rep["test_error"].get<double>() << "\n";
  return kExitOk;
}

inline int cmd_export(const CliOptions& o, std::ostream& log) {
  Json j = load_export(o);
  if (o.format != "json" && o.format != "dot") throw ConfigError("--format must be json or dot");
  std::string text;
  std::string name;
  if (j["kind"] == "architecture") {
    const ArchExport ex = arch_from_json(j);
    text = o.format == "json" ? arch_to_json(ex).dump(2) + "\n" : arch_to_dot(ex);
    name = "arch." + o.format;
  } else {
    const NetExport ex = net_from_json(j);
    text = o.format == "json" ? net_to_json(ex).dump() + "\n" : net_to_dot(ex);
    name = "network." + o.format;
  }
  const std::string path = join(o.out, name.c_str());
  write_text_file(path, text);
  log << "wrote " << path << "\n";
  return kExitOk;
}

}  // namespace app

inline const char* kUsage =
    "usage: ardnas <command> [options]\n"
    "commands: search | proxy-search | compress | retrain | eval | export\n"
    "options: --config PATH --seed N --out DIR --data DIR --mode exact|approx-hessian --arch PATH --format json|dot\n";

/// Runs one command; maps validation failures to exit 1 and runtime failures to exit 2.
inline int run_cli(const CliOptions& o, std::ostream& log, std::ostream& err) {
  try {
    if (o.command == "search") return app::cmd_search(o, log, false);
    if (o.command == "proxy-search") return app::cmd_search(o, log, true);
    if (o.command == "compress") return app::cmd_compress(o, log);
    if (o.command == "retrain") return app::cmd_retrain_or_eval(o, log, true);
    if (o.command == "eval") return app::cmd_retrain_or_eval(o, log, false);
    if (o.command == "export") return app::cmd_export(o, log);
    err << "unknown command '" << o.command << "'\n" << kUsage;
    return kExitValidation;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace ardnas

#endif  // ARDNAS_APP_HPP
