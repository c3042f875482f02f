#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include "ardnas/app.hpp"
#include "ardnas/data.hpp"
#include "ardnas/io.hpp"
#include "test_util.hpp"

using namespace ardnas;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("ardnas_cli_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::uint8_t> idx_bytes(const IdxArray& a) {
  const fs::path p = scratch("bytes") / "a.idx";
  write_idx(p.string(), a);
  return read_file_bytes(p.string());
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

int run_cli_process(const std::string& args) {
  const std::string cmd = std::string(ARDNAS_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

const char* kSmallConfig = R"({
  "task": "synthetic", "nodes": 4, "edges": 6, "planted": 2, "width": 3,
  "train_samples": 256, "test_samples": 64, "t_max": 3, "epochs_per_iteration": 2,
  "learning_rate": 0.01, "momentum": 0.5, "lambda": 0.0001, "retrain_epochs": 1, "seed": 3
})";

}  // namespace

// ---------------------------------------------------------------- IDX

TEST(Idx, RoundTripBytes) {
  IdxArray a;
  a.dims = {3, 2, 2};
  for (int i = 0; i < 12; ++i) a.data.push_back(static_cast<std::uint8_t>(i * 20));
  const auto bytes = idx_bytes(a);
  ASSERT_EQ(bytes.size(), 4u + 12u + 12u);
  EXPECT_EQ(bytes[2], 0x08);
  EXPECT_EQ(bytes[3], 3);
  EXPECT_EQ(bytes[7], 3);
  const IdxArray b = parse_idx(bytes, "mem");
  EXPECT_EQ(b.dims, a.dims);
  EXPECT_EQ(b.data, a.data);
}

TEST(Idx, TruncatedFileNamesOffset) {
  IdxArray a;
  a.dims = {4, 2, 2};
  a.data.assign(16, 7);
  auto bytes = idx_bytes(a);
  bytes.resize(bytes.size() - 5);
  const std::string msg = error_of([&] { parse_idx(bytes, "cut.idx"); });
  EXPECT_NE(msg.find("cut.idx"), std::string::npos);
  EXPECT_NE(msg.find("byte offset " + std::to_string(bytes.size())), std::string::npos) << msg;
  EXPECT_THROW(parse_idx(std::vector<std::uint8_t>{0, 0, 8}, "tiny"), ParseError);
  std::vector<std::uint8_t> header_cut = {0, 0, 8, 3, 0, 0, 0, 4, 0, 0};
  const std::string m2 = error_of([&] { parse_idx(header_cut, "h"); });
  EXPECT_NE(m2.find("byte offset 8"), std::string::npos) << m2;
}

TEST(Idx, BadMagicAndTrailingBytes) {
  std::vector<std::uint8_t> b = {0x12, 0x34, 0x08, 0x01, 0, 0, 0, 1, 5};
  const std::string msg = error_of([&] { parse_idx(b, "m"); });
  EXPECT_NE(msg.find("0x12340801"), std::string::npos) << msg;
  std::vector<std::uint8_t> extra = {0, 0, 8, 1, 0, 0, 0, 1, 5, 6};
  EXPECT_THROW(parse_idx(extra, "x"), ParseError);
}

TEST(Idx, LabelRangeAndCountMismatch) {
  const fs::path d = scratch("labels");
  IdxArray im;
  im.dims = {2, 2, 2};
  im.data = {0, 255, 51, 102, 0, 0, 0, 0};
  write_idx((d / "im").string(), im);
  IdxArray lb;
  lb.dims = {2};
  lb.data = {3, 10};
  write_idx((d / "lb").string(), lb);
  const std::string msg = error_of([&] { load_idx_pair((d / "im").string(), (d / "lb").string()); });
  EXPECT_NE(msg.find("label 10"), std::string::npos) << msg;
  EXPECT_NE(msg.find("byte offset 9"), std::string::npos) << msg;

  lb.dims = {3};
  lb.data = {1, 2, 3};
  write_idx((d / "lb").string(), lb);
  EXPECT_THROW(load_idx_pair((d / "im").string(), (d / "lb").string()), ParseError);

  lb.dims = {2};
  lb.data = {9, 0};
  write_idx((d / "lb").string(), lb);
  auto [x, y] = load_idx_pair((d / "im").string(), (d / "lb").string());
  EXPECT_EQ(x.shape(), (Shape{2, 1, 2, 2}));
  EXPECT_DOUBLE_EQ(x[1], 1.0);
  EXPECT_DOUBLE_EQ(x[2], 0.2);
  EXPECT_DOUBLE_EQ(y[0], 9.0);
}

TEST(Idx, MissingFileIsIoError) { EXPECT_THROW(read_idx("/nonexistent/ardnas.idx"), IoError); }

// ---------------------------------------------------------------- config

TEST(Config, EmptyTextGivesDefaults) {
  const SearchConfig c = parse_config_text("");
  EXPECT_DOUBLE_EQ(c.lambda_w, 0.01);
  EXPECT_DOUBLE_EQ(c.sigma2, 0.01);
  EXPECT_EQ(c.t_max, 20u);
  EXPECT_EQ(c.hessian_mode, "exact");
  EXPECT_EQ(config_hash(c), config_hash(parse_config_text("{}")));
}

TEST(Config, RejectsBadValues) {
  const std::string neg = error_of([] { parse_config_text(R"({"lambda_w": -1})"); });
  EXPECT_NE(neg.find("lambda_w"), std::string::npos) << neg;
  EXPECT_THROW(parse_config_text(R"({"lambda_w": -1})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"lambda_ww": 1})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"t_max": "ten"})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"t_max": -2})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"hessian_mode": "full"})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"task": "cifar"})"), ConfigError);
  EXPECT_THROW(parse_config_text(R"({"patterns": [["diagonal"]]})"), ConfigError);
  EXPECT_THROW(parse_config_text("[1, 2]"), ConfigError);
  EXPECT_THROW(parse_config_text("{"), ConfigError);
  EXPECT_THROW(parse_config("/nonexistent/cfg.json"), ConfigError);
}

TEST(Config, HashTracksEveryField) {
  const SearchConfig a = parse_config_text(kSmallConfig);
  EXPECT_EQ(config_hash(a), config_hash(parse_config_text(kSmallConfig)));
  SearchConfig b = a;
  b.lambda_w = 0.02;
  EXPECT_NE(config_hash(a), config_hash(b));
  b = a;
  b.seed = 4;
  EXPECT_NE(config_hash(a), config_hash(b));
  b = a;
  b.hessian_mode = "diagonal";
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"synthetic.json", "proxy.json", "lenet300.json", "lenet5.json"}) {
    const fs::path p = fs::path(ARDNAS_SOURCE_DIR) / "configs" / name;
    EXPECT_NO_THROW(parse_config(p.string())) << name;
  }
}

// ---------------------------------------------------------------- architecture export

namespace {

SuperGraph small_searched_graph() {
  SyntheticTask t = gen_synthetic_dag_task(5, 4, 6, 2, 3, 16, 8, 0.01);
  std::mt19937_64 rng(1);
  for (Edge& e : t.graph.edges) {
    e.w = std::uniform_real_distribution<double>(-1, 1)(rng);
    e.gamma = std::uniform_real_distribution<double>(0, 1)(rng);
  }
  t.graph.edges[1].alive = false;
  t.graph.edges[1].w = 0.0;
  return t.graph;
}

}  // namespace

TEST(ArchExport, JsonRoundTripIsIdentical) {
  const SuperGraph g = small_searched_graph();
  ArchExport ex = export_architecture(g);
  ex.config_hash = "0123456789abcdef";
  ex.seed = 5;
  const std::string text = arch_to_json(ex).dump(2);
  const ArchExport back = arch_from_json(Json::parse(text));
  EXPECT_EQ(arch_to_json(back).dump(2), text);
  const SuperGraph h = import_architecture(back);
  std::mt19937_64 rng(2);
  const Tensor x = testutil::random_tensor({7, 3}, rng);
  const Tensor a = graph_predict(g, x), b = graph_predict(h, x);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_EQ(ex.pruned_edges.size(), 1u);
}

TEST(ArchExport, EmptyGraphIsValidJson) {
  SuperGraph g = make_graph(3, {2});
  const Json j = arch_to_json(export_architecture(g));
  const Json re = Json::parse(j.dump());
  EXPECT_TRUE(re["edges"].is_array());
  EXPECT_TRUE(re["edges"].empty());
  EXPECT_NO_THROW(arch_from_json(re));
}

TEST(ArchExport, RejectsUnknownAndMissingFields) {
  Json j = arch_to_json(export_architecture(small_searched_graph()));
  Json extra = j;
  extra["colour"] = "red";
  EXPECT_THROW(arch_from_json(extra), ParseError);
  Json missing = j;
  missing.erase("edges");
  EXPECT_THROW(arch_from_json(missing), ParseError);
  Json bad_edge = j;
  bad_edge["edges"][0]["op"] = "conv7x7";
  EXPECT_ANY_THROW(arch_from_json(bad_edge));
  Json schema = j;
  schema["schema"] = "2";
  EXPECT_THROW(arch_from_json(schema), ParseError);
}

TEST(ArchExport, DotMarksPrunedEdgesDashed) {
  const std::string dot = arch_to_dot(export_architecture(small_searched_graph()));
  EXPECT_EQ(dot.rfind("digraph arch {", 0), 0u);
  std::size_t dashed = 0, lines = 0;
  for (std::size_t p = dot.find("->"); p != std::string::npos; p = dot.find("->", p + 1)) ++lines;
  for (std::size_t p = dot.find("dashed"); p != std::string::npos; p = dot.find("dashed", p + 1)) ++dashed;
  EXPECT_EQ(lines, 6u);
  EXPECT_EQ(dashed, 1u);
  EXPECT_EQ(dot.back(), '\n');
}

TEST(ArchExport, DotParsesWithPydotWhenAvailable) {
  if (std::system("python3 -c 'import pydot' > /dev/null 2>&1") != 0) GTEST_SKIP() << "pydot not installed";
  const fs::path d = scratch("pydot");
  write_text_file((d / "a.dot").string(), arch_to_dot(export_architecture(small_searched_graph())));
  const std::string cmd = "python3 -c \"import pydot,sys; g=pydot.graph_from_dot_file(sys.argv[1])[0]; "
                          "sys.exit(0 if len(g.get_edges())==6 else 1)\" " +
                          (d / "a.dot").string() + " > /dev/null 2>&1";
  EXPECT_EQ(std::system(cmd.c_str()), 0);
}

TEST(NetExport, RoundTripKeepsWeightsAndMasks) {
  std::vector<Layer> net = make_lenet5();
  std::mt19937_64 rng(0);
  init_layers(net, rng);
  net[0].mask = Tensor(net[0].weights.shape());
  net[0].mask.fill(1.0);
  net[0].mask[3] = 0.0;
  net[0].apply_mask();
  NetExport ex{"1", net, {19, 50, 500, 10}, "abc", 9};
  const std::string text = net_to_json(ex).dump();
  const NetExport back = net_from_json(Json::parse(text));
  EXPECT_EQ(net_to_json(back).dump(), text);
  EXPECT_EQ(back.layers[0].mask[3], 0.0);
  EXPECT_EQ(back.layers.size(), net.size());
  Json bad = Json::parse(text);
  bad["layers"][0]["weights"].erase(0);
  EXPECT_THROW(net_from_json(bad), ParseError);
  const std::string dot = net_to_dot(ex);
  EXPECT_NE(dot.find("width 19"), std::string::npos);
}

// ---------------------------------------------------------------- metrics

TEST(Metrics, HeaderAndRows) {
  std::vector<IterationRecord> rows(3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].iteration = 1 + i / 2;
    rows[i].epoch = 1 + i % 2;
    rows[i].loss = 0.1;
  }
  const std::string csv = metrics_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kMetricsHeader);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_NE(csv.find("\n1,2,0.10000000000000001,"), std::string::npos);
}

TEST(Metrics, OneRowPerEpochOfEveryIteration) {
  SearchConfig c = parse_config_text(kSmallConfig);
  c.early_stop_tol = 0.0;
  SyntheticTask t = app::make_synthetic(c);
  const SearchResult r = run_proxyless(t.graph, t.data, c);
  EXPECT_EQ(r.report.history.size(), r.report.iterations * c.epochs_per_iteration);
  const std::string csv = metrics_csv(r.report.history);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), r.report.history.size() + 1);
}

// ---------------------------------------------------------------- synthetic generator

TEST(Synthetic, SameSeedSameBits) {
  const SyntheticTask a = gen_synthetic_dag_task(7, 5, 12, 3, 4, 64, 16, 0.01);
  const SyntheticTask b = gen_synthetic_dag_task(7, 5, 12, 3, 4, 64, 16, 0.01);
  EXPECT_EQ(a.planted, b.planted);
  EXPECT_EQ(a.data.x_train.storage(), b.data.x_train.storage());
  EXPECT_EQ(a.data.y_train.storage(), b.data.y_train.storage());
  EXPECT_EQ(std::count(a.planted.begin(), a.planted.end(), true), 3);
  const SyntheticTask c = gen_synthetic_dag_task(8, 5, 12, 3, 4, 64, 16, 0.01);
  EXPECT_NE(a.data.y_train.storage(), c.data.y_train.storage());
}

TEST(Synthetic, NoiselessLinearTargetsMatchHandComputation) {
  // 0 -fc-> 1 -fc-> 2 plus a 0 -identity-> 2 skip, linear ops, width 2
  SuperGraph g = make_graph(3, {2}, Activation::Identity);
  add_edge(g, 0, 1, OpKind::FullyConnected);
  add_edge(g, 1, 2, OpKind::FullyConnected);
  add_edge(g, 0, 2, OpKind::Identity);
  const double W1[2][2] = {{1, 2}, {-1, 0.5}}, b1[2] = {0.25, -1};
  const double W2[2][2] = {{0, 3}, {2, -2}}, b2[2] = {1, 0};
  for (int i = 0; i < 2; ++i) {
    g.edges[0].layer.bias[i] = b1[i];
    g.edges[1].layer.bias[i] = b2[i];
    for (int j = 0; j < 2; ++j) {
      g.edges[0].layer.weights[2 * i + j] = W1[i][j];
      g.edges[1].layer.weights[2 * i + j] = W2[i][j];
    }
  }
  Tensor x({2, 2}, {1, -2, 0.5, 3});
  std::mt19937_64 rng(0);
  const Tensor y = planted_targets(g, {true, true, true}, x, 0.0, rng);
  for (int n = 0; n < 2; ++n) {
    double h[2], out[2];
    for (int i = 0; i < 2; ++i) h[i] = W1[i][0] * x[2 * n] + W1[i][1] * x[2 * n + 1] + b1[i];
    for (int i = 0; i < 2; ++i) out[i] = W2[i][0] * h[0] + W2[i][1] * h[1] + b2[i] + x[2 * n + i];
    EXPECT_DOUBLE_EQ(y[2 * n], out[0]);
    EXPECT_DOUBLE_EQ(y[2 * n + 1], out[1]);
  }
  // skip edge alone: targets equal the inputs
  const Tensor skip = planted_targets(g, {false, false, true}, x, 0.0, rng);
  EXPECT_EQ(skip.storage(), x.storage());
}

TEST(Synthetic, DisconnectedPlantedSetIsError) {
  SuperGraph g = make_graph(4, {2}, Activation::Identity);
  add_edge(g, 0, 1, OpKind::Identity);
  add_edge(g, 1, 3, OpKind::Identity);
  add_edge(g, 0, 2, OpKind::Identity);
  Tensor x({1, 2}, {1, 2});
  std::mt19937_64 rng(0);
  EXPECT_THROW(planted_targets(g, {false, true, true}, x, 0.0, rng), UsageError);
  EXPECT_THROW(planted_targets(g, {false, false, false}, x, 0.0, rng), UsageError);
  EXPECT_NO_THROW(planted_targets(g, {true, true, false}, x, 0.0, rng));
}

// ---------------------------------------------------------------- CLI

TEST(Cli, ValidationErrorsExitOne) {
  const fs::path d = scratch("cli_errors");
  EXPECT_EQ(run_cli_process("search"), 1);
  EXPECT_EQ(run_cli_process("frobnicate --config x.json"), 1);
  EXPECT_EQ(run_cli_process("search --config /nonexistent/x.json"), 1);
  write_text_file((d / "bad.json").string(), R"({"lambda_w": -1})");
  EXPECT_EQ(run_cli_process("search --config " + (d / "bad.json").string()), 1);
  write_text_file((d / "l5.json").string(), R"({"task": "mnist-lenet5"})");
  EXPECT_EQ(run_cli_process("compress --config " + (d / "l5.json").string() + " --out " + d.string()), 1);
  write_text_file((d / "ok.json").string(), kSmallConfig);
  EXPECT_EQ(run_cli_process("search --config " + (d / "ok.json").string() + " --mode hutchinson"), 1);
  EXPECT_EQ(run_cli_process("export --arch /nonexistent/arch.json"), 2);
}

TEST(Cli, SearchIsDeterministicAndExports) {
  const fs::path d = scratch("cli_search");
  write_text_file((d / "cfg.json").string(), kSmallConfig);
  for (const char* run : {"a", "b"}) {
    fs::create_directories(d / run);
    ASSERT_EQ(run_cli_process("search --config " + (d / "cfg.json").string() + " --out " + (d / run).string()), 0);
  }
  for (const char* f : {"metrics.csv", "arch.json", "arch.dot", "report.json", "retrained.json"}) {
    ASSERT_TRUE(fs::exists(d / "a" / f)) << f;
    EXPECT_EQ(read_text_file((d / "a" / f).string()), read_text_file((d / "b" / f).string())) << f;
  }
  const Json arch = read_json_file((d / "a" / "arch.json").string());
  EXPECT_EQ(arch["config_hash"], config_hash(parse_config_text(kSmallConfig)));
  EXPECT_EQ(arch["seed"], 3);

  fs::create_directories(d / "seed9");
  ASSERT_EQ(run_cli_process("search --config " + (d / "cfg.json").string() + " --seed 9 --out " +
                            (d / "seed9").string()),
            0);
  EXPECT_EQ(read_json_file((d / "seed9" / "arch.json").string())["seed"], 9);

  ASSERT_EQ(run_cli_process("export --arch " + (d / "a" / "arch.json").string() + " --format dot --out " +
                            (d / "b").string()),
            0);
  EXPECT_EQ(read_text_file((d / "b" / "arch.dot").string()), read_text_file((d / "a" / "arch.dot").string()));
  ASSERT_EQ(run_cli_process("eval --config " + (d / "cfg.json").string() + " --arch " +
                            (d / "a" / "retrained.json").string() + " --out " + (d / "b").string()),
            0);
  EXPECT_TRUE(read_json_file((d / "b" / "eval.json").string())["test_error"].is_number());
}
