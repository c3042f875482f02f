#ifndef ARDNAS_IO_HPP
#define ARDNAS_IO_HPP

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ardnas/config.hpp"
#include "ardnas/error.hpp"
#include "ardnas/groups.hpp"
#include "ardnas/search.hpp"
#include "ardnas/supergraph.hpp"

namespace ardnas {

using Json = nlohmann::json;

// ---------------------------------------------------------------- files

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------- config

inline Json config_to_json(const SearchConfig& c) {
  return Json{{"lambda_w", c.lambda_w},
              {"lambda", c.lambda},
              {"sigma2", c.sigma2},
              {"curvature_scale", c.curvature_scale},
              {"t_max", c.t_max},
              {"epochs_per_iteration", c.epochs_per_iteration},
              {"curvature_batch", c.curvature_batch},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"momentum", c.momentum},
              {"seed", c.seed},
              {"omega_floor", c.omega_floor},
              {"switch_cap", c.switch_cap},
              {"prune_threshold", c.prune_threshold},
              {"hessian_mode", c.hessian_mode},
              {"proximal", c.proximal},
              {"prune_dead_ends", c.prune_dead_ends},
              {"early_stop_tol", c.early_stop_tol},
              {"retrain_epochs", c.retrain_epochs},
              {"retrain_learning_rate", c.retrain_learning_rate},
              {"task", c.task},
              {"nodes", c.nodes},
              {"edges", c.edges},
              {"planted", c.planted},
              {"width", c.width},
              {"train_samples", c.train_samples},
              {"test_samples", c.test_samples},
              {"cells", c.cells},
              {"cell_nodes", c.cell_nodes},
              {"train_op_weights", c.train_op_weights},
              {"patterns", c.patterns},
              {"layer_lambda", c.layer_lambda},
              {"compress_threshold", c.compress_threshold},
              {"train_limit", c.train_limit}};
}

/// Hash of the canonical (sorted-key, round-trip precision) JSON of every effective field.
inline std::string config_hash(const SearchConfig& c) { return fnv1a_hex(config_to_json(c).dump()); }

namespace detail {

template <class T>
void read_field(const Json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("field '") + key + "' has the wrong type (" + it->type_name() + ")");
  }
}

// Non-negative integers only; JSON floats and negatives are rejected.
inline void read_count(const Json& j, const char* key, std::size_t& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_number_unsigned()) throw ConfigError(std::string("field '") + key + "' must be a non-negative integer");
  out = it->get<std::size_t>();
}

inline void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError("field '" + field + "' " + what);
}

}  // namespace detail

inline void validate_config(const SearchConfig& c) {
  using detail::require;
  require(c.lambda_w > 0.0, "lambda_w", "must be > 0");
  require(c.lambda >= 0.0, "lambda", "must be >= 0");
  require(c.sigma2 > 0.0, "sigma2", "must be > 0");
  require(c.curvature_scale > 0.0, "curvature_scale", "must be > 0");
  require(c.epochs_per_iteration >= 1, "epochs_per_iteration", "must be >= 1");
  require(c.curvature_batch >= 1, "curvature_batch", "must be >= 1");
  require(c.batch_size >= 1, "batch_size", "must be >= 1");
  require(c.learning_rate > 0.0, "learning_rate", "must be > 0");
  require(c.momentum >= 0.0 && c.momentum < 1.0, "momentum", "must be in [0, 1)");
  require(c.omega_floor > 0.0, "omega_floor", "must be > 0");
  require(c.switch_cap > 0.0, "switch_cap", "must be > 0");
  require(c.prune_threshold > 0.0, "prune_threshold", "must be > 0");
  require(c.early_stop_tol >= 0.0, "early_stop_tol", "must be >= 0");
  require(c.retrain_learning_rate > 0.0, "retrain_learning_rate", "must be > 0");
  require(c.compress_threshold > 0.0, "compress_threshold", "must be > 0");
  try {
    hessian_mode_from_string(c.hessian_mode);
  } catch (const ConfigError&) {
    throw ConfigError("field 'hessian_mode' must be exact, diagonal or approx-hessian");
  }
  static const std::set<std::string> tasks{"synthetic", "proxy-synthetic", "mnist-lenet300", "mnist-lenet5"};
  require(tasks.count(c.task) == 1, "task", "must be one of synthetic, proxy-synthetic, mnist-lenet300, mnist-lenet5");
  require(c.nodes >= 2, "nodes", "must be >= 2");
  require(c.width >= 1, "width", "must be >= 1");
  require(c.train_samples >= 1, "train_samples", "must be >= 1");
  require(c.cells >= 1, "cells", "must be >= 1");
  require(c.cell_nodes >= 2, "cell_nodes", "must be >= 2");
  require(c.planted >= 1 && c.planted <= c.edges, "planted", "must be in [1, edges]");
  for (const auto& layer : c.patterns)
    for (const auto& p : layer) {
      try {
        group_pattern_from_string(p);
      } catch (const ConfigError&) {
        throw ConfigError("field 'patterns' has unknown pattern '" + p + "'");
      }
    }
  for (double v : c.layer_lambda) require(v >= 0.0, "layer_lambda", "entries must be >= 0");
}

/// Parses a JSON config text; unknown keys are rejected and every field is validated.
inline SearchConfig parse_config_text(const std::string& text, const std::string& origin = "config") {
  SearchConfig c;
  bool blank = true;
  for (char ch : text) blank = blank && std::isspace(static_cast<unsigned char>(ch));
  if (blank) return c;
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(origin + ": not valid JSON (" + e.what() + ")");
  }
  if (!j.is_object()) throw ConfigError(origin + ": top level must be a JSON object");
  const Json known = config_to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.contains(it.key())) throw ConfigError(origin + ": unknown field '" + it.key() + "'");
  using detail::read_count;
  using detail::read_field;
  read_field(j, "lambda_w", c.lambda_w);
  read_field(j, "lambda", c.lambda);
  read_field(j, "sigma2", c.sigma2);
  read_field(j, "curvature_scale", c.curvature_scale);
  read_count(j, "t_max", c.t_max);
  read_count(j, "epochs_per_iteration", c.epochs_per_iteration);
  read_count(j, "curvature_batch", c.curvature_batch);
  read_count(j, "batch_size", c.batch_size);
  read_field(j, "learning_rate", c.learning_rate);
  read_field(j, "momentum", c.momentum);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw ConfigError("field 'seed' must be a non-negative integer");
    c.seed = j["seed"].get<std::uint64_t>();
  }
  read_field(j, "omega_floor", c.omega_floor);
  read_field(j, "switch_cap", c.switch_cap);
  read_field(j, "prune_threshold", c.prune_threshold);
  read_field(j, "hessian_mode", c.hessian_mode);
  read_field(j, "proximal", c.proximal);
  read_field(j, "prune_dead_ends", c.prune_dead_ends);
  read_field(j, "early_stop_tol", c.early_stop_tol);
  read_count(j, "retrain_epochs", c.retrain_epochs);
  read_field(j, "retrain_learning_rate", c.retrain_learning_rate);
  read_field(j, "task", c.task);
  read_count(j, "nodes", c.nodes);
  read_count(j, "edges", c.edges);
  read_count(j, "planted", c.planted);
  read_count(j, "width", c.width);
  read_count(j, "train_samples", c.train_samples);
  read_count(j, "test_samples", c.test_samples);
  read_count(j, "cells", c.cells);
  read_count(j, "cell_nodes", c.cell_nodes);
  read_field(j, "train_op_weights", c.train_op_weights);
  read_field(j, "patterns", c.patterns);
  read_field(j, "layer_lambda", c.layer_lambda);
  read_field(j, "compress_threshold", c.compress_threshold);
  read_count(j, "train_limit", c.train_limit);
  validate_config(c);
  return c;
}

inline SearchConfig parse_config(const std::string& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse_config_text(text, path);
}

// ---------------------------------------------------------------- architecture export

inline Json arch_edge_to_json(const ArchEdgeRecord& r) {
  return Json{{"id", r.id},         {"from", r.from},       {"to", r.to},        {"op", std::string(to_string(r.op))},
              {"w", r.w},           {"s", r.s},             {"gamma", r.gamma},  {"group", r.group},
              {"is_gate", r.is_gate}, {"alive", r.alive},   {"weights", r.weights}, {"bias", r.bias}};
}

namespace detail {

inline void reject_unknown(const Json& j, const std::set<std::string>& keys, const std::string& what) {
  if (!j.is_object()) throw ParseError(what + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!keys.count(it.key())) throw ParseError(what + ": unknown field '" + it.key() + "'");
  for (const auto& k : keys)
    if (!j.contains(k)) throw ParseError(what + ": missing field '" + k + "'");
}

template <class T>
T get_as(const Json& j, const char* key, const std::string& what) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(what + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace detail

inline ArchEdgeRecord arch_edge_from_json(const Json& j) {
  detail::reject_unknown(j, {"id", "from", "to", "op", "w", "s", "gamma", "group", "is_gate", "alive", "weights", "bias"},
                         "edge record");
  using detail::get_as;
  ArchEdgeRecord r;
  r.id = get_as<std::size_t>(j, "id", "edge record");
  r.from = get_as<std::size_t>(j, "from", "edge record");
  r.to = get_as<std::size_t>(j, "to", "edge record");
  r.op = op_from_string(get_as<std::string>(j, "op", "edge record"));
  r.w = get_as<double>(j, "w", "edge record");
  r.s = get_as<double>(j, "s", "edge record");
  r.gamma = get_as<double>(j, "gamma", "edge record");
  r.group = get_as<int>(j, "group", "edge record");
  r.is_gate = get_as<bool>(j, "is_gate", "edge record");
  r.alive = get_as<bool>(j, "alive", "edge record");
  r.weights = get_as<std::vector<double>>(j, "weights", "edge record");
  r.bias = get_as<std::vector<double>>(j, "bias", "edge record");
  return r;
}

inline Json arch_to_json(const ArchExport& ex) {
  Json edges = Json::array(), pruned = Json::array();
  for (const auto& r : ex.edges) edges.push_back(arch_edge_to_json(r));
  for (const auto& r : ex.pruned_edges) pruned.push_back(arch_edge_to_json(r));
  return Json{{"schema", ex.schema},
              {"kind", "architecture"},
              {"num_nodes", ex.num_nodes},
              {"input", ex.input},
              {"output", ex.output},
              {"node_shape", ex.node_shape},
              {"op_activation", std::string(to_string(ex.op_activation))},
              {"gated", ex.gated},
              {"degenerate", ex.degenerate},
              {"edges", edges},
              {"pruned_edges", pruned},
              {"config_hash", ex.config_hash},
              {"seed", ex.seed}};
}

inline ArchExport arch_from_json(const Json& j) {
  if (j.is_object() && j.contains("schema") && j["schema"] != "1") {
    throw ParseError("unsupported architecture schema " + j["schema"].dump());
  }
  detail::reject_unknown(j,
                         {"schema", "kind", "num_nodes", "input", "output", "node_shape", "op_activation", "gated",
                          "degenerate", "edges", "pruned_edges", "config_hash", "seed"},
                         "architecture");
  using detail::get_as;
  const std::string w = "architecture";
  if (get_as<std::string>(j, "kind", w) != "architecture") throw ParseError("not an architecture export");
  ArchExport ex;
  ex.schema = get_as<std::string>(j, "schema", w);
  ex.num_nodes = get_as<std::size_t>(j, "num_nodes", w);
  ex.input = get_as<std::size_t>(j, "input", w);
  ex.output = get_as<std::size_t>(j, "output", w);
  ex.node_shape = get_as<Shape>(j, "node_shape", w);
  ex.op_activation = activation_from_string(get_as<std::string>(j, "op_activation", w));
  ex.gated = get_as<bool>(j, "gated", w);
  ex.degenerate = get_as<bool>(j, "degenerate", w);
  for (const auto& e : j.at("edges")) ex.edges.push_back(arch_edge_from_json(e));
  for (const auto& e : j.at("pruned_edges")) ex.pruned_edges.push_back(arch_edge_from_json(e));
  ex.config_hash = get_as<std::string>(j, "config_hash", w);
  ex.seed = get_as<std::uint64_t>(j, "seed", w);
  return ex;
}

/// DOT rendering: alive edges solid, pruned edges dashed, gate edges dotted grey when alive.
inline std::string arch_to_dot(const ArchExport& ex) {
  std::ostringstream o;
  o << "digraph arch {\n  rankdir=LR;\n";
  for (std::size_t v = 0; v < ex.num_nodes; ++v) {
    o << "  n" << v << " [label=\"" << v;
    if (v == ex.input) o << " (in)";
    if (v == ex.output) o << " (out)";
    o << "\"];\n";
  }
  auto edge = [&](const ArchEdgeRecord& r) {
    char wbuf[64];
    std::snprintf(wbuf, sizeof wbuf, "%.3g", r.w);
    o << "  n" << r.from << " -> n" << r.to << " [label=\"" << to_string(r.op) << " w=" << wbuf << "\"";
    if (!r.alive) o << ", style=dashed";
    else if (r.is_gate) o << ", style=dotted, color=grey40";
    o << "];\n";
  };
  for (const auto& r : ex.edges) edge(r);
  for (const auto& r : ex.pruned_edges) edge(r);
  o << "}\n";
  return o.str();
}

// ---------------------------------------------------------------- network / mask export

inline Json layer_to_json(const Layer& l) {
  return Json{{"kind", std::string(to_string(l.kind))},
              {"activation", std::string(to_string(l.activation))},
              {"in_channels", l.geom.in_channels},
              {"out_channels", l.geom.out_channels},
              {"kh", l.geom.kh},
              {"kw", l.geom.kw},
              {"stride", l.geom.stride},
              {"pad", l.geom.pad},
              {"weights", l.weights.storage()},
              {"bias", l.bias.storage()},
              {"mask", l.mask.storage()}};
}

inline Layer layer_from_json(const Json& j) {
  detail::reject_unknown(
      j, {"kind", "activation", "in_channels", "out_channels", "kh", "kw", "stride", "pad", "weights", "bias", "mask"},
      "layer");
  using detail::get_as;
  const std::string w = "layer";
  const std::string kind = get_as<std::string>(j, "kind", w);
  const Activation act = activation_from_string(get_as<std::string>(j, "activation", w));
  const auto in = get_as<std::size_t>(j, "in_channels", w), out = get_as<std::size_t>(j, "out_channels", w);
  const auto kh = get_as<std::size_t>(j, "kh", w), kw = get_as<std::size_t>(j, "kw", w);
  const auto stride = get_as<std::size_t>(j, "stride", w), pad = get_as<std::size_t>(j, "pad", w);
  const auto bias = get_as<std::vector<double>>(j, "bias", w);
  Layer l;
  if (kind == "fc") l = Layer::fully_connected(in, out, act, !bias.empty());
  else if (kind == "conv") l = Layer::conv2d(in, out, kh, kw, stride, pad, act, !bias.empty());
  else if (kind == "maxpool") l = Layer::max_pool(kh, stride, pad);
  else if (kind == "avgpool") l = Layer::avg_pool(kh, stride, pad);
  else throw ParseError("layer: unknown kind '" + kind + "'");
  if (l.has_weights()) {
    auto weights = get_as<std::vector<double>>(j, "weights", w);
    auto mask = get_as<std::vector<double>>(j, "mask", w);
    if (weights.size() != l.weights.size()) throw ParseError("layer: weight count does not match its geometry");
    if (bias.size() != l.bias.size()) throw ParseError("layer: bias count does not match its geometry");
    if (!mask.empty() && mask.size() != l.weights.size()) throw ParseError("layer: mask count does not match weights");
    l.weights.storage() = std::move(weights);
    if (!bias.empty()) l.bias.storage() = bias;
    if (!mask.empty()) l.mask = Tensor(l.weights.shape(), std::move(mask));
  }
  return l;
}

struct NetExport {
  std::string schema = "1";
  std::vector<Layer> layers;
  std::vector<std::size_t> surviving_widths;
  std::string config_hash;
  std::uint64_t seed = 0;
};

inline Json net_to_json(const NetExport& ex) {
  Json layers = Json::array();
  for (const Layer& l : ex.layers) layers.push_back(layer_to_json(l));
  return Json{{"schema", ex.schema},
              {"kind", "network"},
              {"layers", layers},
              {"surviving_widths", ex.surviving_widths},
              {"config_hash", ex.config_hash},
              {"seed", ex.seed}};
}

inline NetExport net_from_json(const Json& j) {
  if (j.is_object() && j.contains("schema") && j["schema"] != "1") {
    throw ParseError("unsupported network schema " + j["schema"].dump());
  }
  detail::reject_unknown(j, {"schema", "kind", "layers", "surviving_widths", "config_hash", "seed"}, "network");
  using detail::get_as;
  if (get_as<std::string>(j, "kind", "network") != "network") throw ParseError("not a network export");
  NetExport ex;
  for (const auto& l : j.at("layers")) ex.layers.push_back(layer_from_json(l));
  ex.surviving_widths = get_as<std::vector<std::size_t>>(j, "surviving_widths", "network");
  ex.config_hash = get_as<std::string>(j, "config_hash", "network");
  ex.seed = get_as<std::uint64_t>(j, "seed", "network");
  return ex;
}

inline std::string net_to_dot(const NetExport& ex) {
  std::ostringstream o;
  o << "digraph network {\n  rankdir=LR;\n  l0 [label=\"input\"];\n";
  std::size_t k = 0;
  for (std::size_t i = 0; i < ex.layers.size(); ++i) {
    const Layer& l = ex.layers[i];
    o << "  l" << i + 1 << " [label=\"" << to_string(l.kind);
    if (l.has_weights()) {
      o << " " << l.alive_weights() << "/" << l.weights.size();
      if (k < ex.surviving_widths.size()) o << " width " << ex.surviving_widths[k];
      ++k;
    }
    o << "\"];\n  l" << i << " -> l" << i + 1 << ";\n";
  }
  o << "}\n";
  return o.str();
}

inline Json read_json_file(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": not valid JSON (" + e.what() + ")");
  }
}

// ---------------------------------------------------------------- metrics

inline constexpr const char* kMetricsHeader =
    "iteration,epoch,loss,test_error,alive_edges,min_gamma,median_gamma,pruned_entropy,pruned_cascade";

inline std::string metrics_csv(const std::vector<IterationRecord>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%zu,%.17g,%.17g,%zu,%zu\n", r.iteration, r.epoch, r.loss,
                  r.test_error, r.alive_edges, r.min_gamma, r.median_gamma, r.pruned_entropy, r.pruned_cascade);
    out += buf;
  }
  return out;
}

inline Json report_to_json(const SearchReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  return Json{{"iterations", r.iterations},
              {"early_stopped", r.early_stopped},
              {"degenerate", r.degenerate},
              {"severed", r.severed},
              {"test_error_before_retrain", num(r.test_error_before_retrain)},
              {"test_error_after_retrain", num(r.test_error_after_retrain)},
              {"surviving_widths", r.surviving_widths},
              {"baseline_params", r.baseline_params},
              {"surviving_params", r.surviving_params}};
}

}  // namespace ardnas

#endif  // ARDNAS_IO_HPP
