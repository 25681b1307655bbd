#include "graphloc/error.hpp"
#include "graphloc/harness.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

using namespace graphloc;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

DatasetConfig tiny_dataset() {
  DatasetConfig c;
  c.seed = 3;
  c.node_count = 6;
  c.feature_dim = 32;
  c.regions_per_node = 6;
  c.seen_environments = 2;
  c.unseen_environments = 1;
  c.test_environments = 1;
  c.pretrain_environments = 1;
  c.train_episodes = 200;
  c.val_seen_episodes = 20;
  c.val_unseen_episodes = 20;
  c.test_episodes = 20;
  c.captions_per_node = 2;
  c.instructions_per_node = 2;
  return c;
}

LedBertConfig tiny_model() {
  LedBertConfig m;
  m.feature_dim = 0;
  m.text_hidden = 16;
  m.visual_hidden = 16;
  m.heads = 2;
  m.text_layers = 1;
  m.visual_layers = 1;
  m.co_attention_layers = {0};
  m.max_text_length = 96;
  m.max_regions = 6;
  return m;
}

class HarnessData : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("graphloc_harness_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    generate_dataset(tiny_dataset(), root_ / "data");
    data_ = new Dataset(load_dataset(root_ / "data"));
  }
  static void TearDownTestSuite() {
    delete data_;
    fs::remove_all(root_);
  }

  TrainConfig config(Stage stage, const std::string& out) const {
    TrainConfig c;
    c.stage = stage;
    c.data_dir = (root_ / "data").string();
    c.output_checkpoint = (root_ / out).string();
    c.batch_size = 4;
    c.seed = 11;
    c.model = tiny_model();
    return c;
  }

  static fs::path root_;
  static Dataset* data_;
};

fs::path HarnessData::root_;
Dataset* HarnessData::data_ = nullptr;

Episode episode(std::string id, std::string env, std::string target) {
  return Episode{std::move(id), std::move(env), Dialog{{{Speaker::observer, "a red chair"}}},
                 std::move(target), Split::val_seen};
}

NavGraph line_graph(const std::string& env, int n, double spacing) {
  std::vector<NavNode> nodes;
  std::vector<NavEdge> edges;
  for (int i = 0; i < n; ++i) {
    NavNode node;
    node.id = "p" + std::to_string(100 + i);
    node.pose.position = {spacing * i, 0, 0};
    nodes.push_back(node);
    if (i > 0) edges.push_back({nodes[static_cast<std::size_t>(i - 1)].id, node.id, 0.0});
  }
  return NavGraph(env, nodes, edges);
}

EvalReport golden_rows_led() {
  EvalReport r;
  r.method = "LED-Bert";
  r.splits[Split::val_seen] = {200, 0.456, 0.1234, {{0.0, 0.905}, {5.0, 0.98}}};
  r.splits[Split::val_unseen] = {200, 2.5, 0.3, {{0.0, 0.61}, {5.0, 0.9}}};
  r.splits[Split::test] = {200, 3.14159, 0.271828, {{0.0, 0.5}, {5.0, 0.875}}};
  return r;
}

EvalReport golden_rows_random() {
  EvalReport r;
  r.method = "Random";
  r.splits[Split::val_seen] = {200, 7.777, 0.5, {{0.0, 0.085}, {5.0, 0.4}}};
  return r;
}

}  // namespace

// ------------------------------------------------------------------ config

TEST(TrainConfig, JsonRoundTripAndUnknownKeys) {
  TrainConfig c;
  c.stage = Stage::baseline;
  c.baseline_kind = BaselineKind::gcn;
  c.epochs = 3;
  c.model.text_hidden = 32;
  const auto back = train_config_from_json(to_json(c));
  EXPECT_EQ(back.stage, Stage::baseline);
  EXPECT_EQ(back.baseline_kind, BaselineKind::gcn);
  EXPECT_EQ(back.epochs, 3);
  EXPECT_EQ(back.model, c.model);
  EXPECT_EQ(back.optimizer, c.optimizer);
  EXPECT_THROW(train_config_from_json({{"epochz", 2}}), ValidationError);
  EXPECT_THROW(train_config_from_json({{"stage", "s7"}}), ValidationError);
}

TEST(TrainConfig, Overrides) {
  nlohmann::json j = nlohmann::json::object();
  apply_override(j, "optimizer.learning_rate=0.5");
  apply_override(j, "stage=s2");
  apply_override(j, "model.co_attention_layers=[0,1]");
  EXPECT_DOUBLE_EQ(j["optimizer"]["learning_rate"].get<double>(), 0.5);
  EXPECT_EQ(j["stage"], "s2");
  const auto c = train_config_from_json(j);
  EXPECT_EQ(c.stage, Stage::s2_align);
  EXPECT_EQ(c.model.co_attention_layers, (std::vector<int>{0, 1}));
  EXPECT_THROW(apply_override(j, "no_equals_sign"), ValidationError);
}

TEST(DatasetConfig, RejectsUnknownFields) {
  EXPECT_THROW((nlohmann::json{{"nodes", 3}}.get<DatasetConfig>()), ValidationError);
  nlohmann::json j = tiny_dataset();
  EXPECT_EQ(j.get<DatasetConfig>(), tiny_dataset());
}

TEST(Seeds, DerivedStreamsDiffer) {
  EXPECT_EQ(derive_seed(1, "a"), derive_seed(1, "a"));
  EXPECT_NE(derive_seed(1, "a"), derive_seed(1, "b"));
  EXPECT_NE(derive_seed(1, "a"), derive_seed(2, "a"));
  EXPECT_EQ(content_hash("").size(), 16u);
}

// ------------------------------------------------------------------ dataset

TEST_F(HarnessData, GeneratedSplitsHaveRequestedSizes) {
  EXPECT_EQ(data_->split(Split::train).size(), 200u);
  EXPECT_EQ(data_->split(Split::val_seen).size(), 20u);
  EXPECT_EQ(data_->split(Split::val_unseen).size(), 20u);
  EXPECT_EQ(data_->split(Split::test).size(), 20u);
  std::set<std::string> train_envs;
  for (const auto& ep : data_->split(Split::train)) train_envs.insert(ep.environment_id);
  for (const auto& ep : data_->split(Split::val_seen)) EXPECT_TRUE(train_envs.count(ep.environment_id));
  for (const auto& ep : data_->split(Split::val_unseen)) EXPECT_FALSE(train_envs.count(ep.environment_id));
  for (const auto& ep : data_->split(Split::test)) EXPECT_FALSE(train_envs.count(ep.environment_id));
  for (const auto& [env, panos] : data_->panos) {
    EXPECT_EQ(panos.size(), 6u);
    EXPECT_TRUE(std::is_sorted(panos.begin(), panos.end(),
                               [](const auto& a, const auto& b) { return a.node_id < b.node_id; }));
  }
  EXPECT_FALSE(data_->captions.empty());
  EXPECT_FALSE(data_->instructions.empty());
}

TEST_F(HarnessData, GenerationIsByteDeterministic) {
  generate_dataset(tiny_dataset(), root_ / "again");
  for (const char* f : {"dataset.json", "vocab.json", "episodes.jsonl", "captions.jsonl",
                        "instructions.jsonl"}) {
    EXPECT_EQ(slurp(root_ / "data" / f), slurp(root_ / "again" / f)) << f;
  }
  for (const auto& [env, g] : data_->graphs) {
    EXPECT_EQ(slurp(root_ / "data" / "features" / (env + ".bin")),
              slurp(root_ / "again" / "features" / (env + ".bin")));
  }
}

TEST_F(HarnessData, MissingDirectoryIsDataError) {
  EXPECT_THROW(load_dataset(root_ / "nowhere"), DataError);
}

// ------------------------------------------------------------------ training

TEST_F(HarnessData, TextMlmLossFallsOverFirstFiftySteps) {
  auto c = config(Stage::s1_text_mlm, "s1.ckpt");
  const auto r = run_stage(c, *data_);
  ASSERT_EQ(r.losses.size(), 50u);  // 200 episodes, batch 4, one epoch
  // Per-step losses are noisy (fresh masks, different batches); compare the
  // first and last ten-step windows.
  const double first = std::accumulate(r.losses.begin(), r.losses.begin() + 10, 0.0) / 10;
  const double last = std::accumulate(r.losses.end() - 10, r.losses.end(), 0.0) / 10;
  EXPECT_LT(last, first);
  EXPECT_TRUE(fs::exists(r.checkpoint));
  const auto log = slurp(r.log);
  EXPECT_EQ(log.rfind("step,loss\n", 0), 0u);
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 51);
  EXPECT_TRUE(fs::exists(r.checkpoint.string() + ".manifest.json"));
}

TEST_F(HarnessData, RerunIsBitIdentical) {
  auto a = config(Stage::s4_finetune, "det_a.ckpt");
  a.max_steps = 6;
  a.negative_samples = 3;
  auto b = a;
  b.output_checkpoint = (root_ / "det_b.ckpt").string();
  const auto ra = run_stage(a, *data_);
  const auto rb = run_stage(b, *data_);
  EXPECT_EQ(slurp(ra.checkpoint), slurp(rb.checkpoint));
  EXPECT_EQ(slurp(ra.log), slurp(rb.log));
  auto c = a;
  c.seed = 12;
  c.output_checkpoint = (root_ / "det_c.ckpt").string();
  EXPECT_NE(slurp(run_stage(c, *data_).checkpoint), slurp(ra.checkpoint));
}

TEST_F(HarnessData, StagesChainThroughCheckpoints) {
  std::string previous;
  for (auto [stage, name] : {std::pair{Stage::s1_text_mlm, "c1.ckpt"}, std::pair{Stage::s2_align, "c2.ckpt"},
                             std::pair{Stage::s3_align, "c3.ckpt"}, std::pair{Stage::s4_finetune, "c4.ckpt"}}) {
    auto c = config(stage, name);
    c.max_steps = 2;
    c.init_checkpoint = previous;
    const auto r = run_stage(c, *data_);
    EXPECT_EQ(r.losses.size(), 2u);
    for (double l : r.losses) EXPECT_TRUE(std::isfinite(l));
    previous = r.checkpoint.string();
  }
  const auto ckpt = load_checkpoint(previous);
  EXPECT_EQ(ckpt.meta.model_kind, "ledbert");
  EXPECT_EQ(ckpt.meta.stage, "s4");
  EXPECT_EQ(method_name(previous), "LED-Bert");
}

TEST_F(HarnessData, MismatchedVocabularyReportedPerTensor) {
  auto s2 = config(Stage::s2_align, "bigvocab.ckpt");
  s2.max_steps = 1;
  s2.model.vocab_size = static_cast<int>(data_->vocab.size()) + 3;
  run_stage(s2, *data_);
  auto s4 = config(Stage::s4_finetune, "never.ckpt");
  s4.init_checkpoint = s2.output_checkpoint;
  try {
    run_stage(s4, *data_);
    FAIL() << "expected a mismatch";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("text.token_embedding"), std::string::npos) << msg;
    EXPECT_NE(msg.find("mlm.weight"), std::string::npos) << msg;
    EXPECT_EQ(msg.find("special.cls"), std::string::npos) << msg;
  }
  EXPECT_FALSE(fs::exists(s4.output_checkpoint));
}

TEST_F(HarnessData, BaselineInitMustMatchKind) {
  auto lf = config(Stage::baseline, "lf.ckpt");
  lf.baseline_kind = BaselineKind::late_fusion;
  lf.baseline.hidden = 8;
  lf.baseline.embed_dim = 8;
  lf.max_steps = 2;
  run_stage(lf, *data_);
  EXPECT_EQ(method_name(lf.output_checkpoint), "Late Fusion");
  auto s4 = config(Stage::s4_finetune, "never.ckpt");
  s4.init_checkpoint = lf.output_checkpoint;
  EXPECT_THROW(run_stage(s4, *data_), ValidationError);
  const auto predict = make_predictor(lf.output_checkpoint, *data_);
  const auto m = evaluate(predict, data_->graphs, data_->split(Split::val_seen));
  EXPECT_EQ(m.count, 20u);
}

TEST_F(HarnessData, MissingInitCheckpointIsDataError) {
  auto c = config(Stage::s4_finetune, "never.ckpt");
  c.init_checkpoint = (root_ / "absent.ckpt").string();
  EXPECT_THROW(run_stage(c, *data_), DataError);
}

// ------------------------------------------------------------------ evaluation

TEST(Evaluate, OraclePredictorIsPerfect) {
  std::map<std::string, NavGraph> graphs{{"e", line_graph("e", 5, 2.0)}};
  std::vector<Episode> eps;
  for (int i = 0; i < 10; ++i) eps.push_back(episode("x" + std::to_string(i), "e", "p10" + std::to_string(i % 5)));
  const auto m = evaluate([](const Episode& ep) { return ep.target_node; }, graphs, eps);
  EXPECT_EQ(m.count, 10u);
  EXPECT_EQ(m.le_mean, 0.0);
  EXPECT_EQ(m.le_stderr, 0.0);
  EXPECT_EQ(m.acc(0), 1.0);
  EXPECT_EQ(m.acc(5), 1.0);
}

TEST(Evaluate, FixedNodeOnTwoNodeEnvironment) {
  std::map<std::string, NavGraph> graphs{{"e", line_graph("e", 2, 3.0)}};
  std::vector<Episode> eps;
  for (int i = 0; i < 10; ++i) eps.push_back(episode("x" + std::to_string(i), "e", i % 2 ? "p101" : "p100"));
  const auto m = evaluate([](const Episode&) { return std::string("p100"); }, graphs, eps);
  EXPECT_DOUBLE_EQ(m.le_mean, 1.5);
  EXPECT_DOUBLE_EQ(m.acc(0), 0.5);
  EXPECT_DOUBLE_EQ(m.acc(5), 1.0);
  // Sample stdev of five 0s and five 3s is sqrt(22.5/9); over sqrt(10).
  EXPECT_NEAR(m.le_stderr, std::sqrt(22.5 / 9.0) / std::sqrt(10.0), 1e-12);
  const auto tight = evaluate([](const Episode&) { return std::string("p100"); }, graphs, eps, {0, 2.9, 3.0});
  EXPECT_DOUBLE_EQ(tight.acc(2.9), 0.5);
  EXPECT_DOUBLE_EQ(tight.acc(3.0), 1.0);
}

TEST(Evaluate, MissingEnvironmentListsEpisodes) {
  std::map<std::string, NavGraph> graphs{{"e", line_graph("e", 2, 3.0)}};
  const std::vector<Episode> eps = {episode("ok", "e", "p100"), episode("lost1", "f", "p100"),
                                    episode("lost2", "g", "p100")};
  try {
    evaluate([](const Episode& ep) { return ep.target_node; }, graphs, eps);
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("lost1"), std::string::npos);
    EXPECT_NE(msg.find("lost2"), std::string::npos);
    EXPECT_EQ(msg.find("ok"), std::string::npos);
  }
}

TEST(Evaluate, RandomBaselineWithinFourSigma) {
  Dataset data;
  data.graphs.emplace("e", line_graph("e", 20, 1.0));
  std::vector<Episode> eps;
  std::mt19937_64 rng(4);
  for (int i = 0; i < 5000; ++i) {
    eps.push_back(episode("r" + std::to_string(i), "e",
                          "p" + std::to_string(100 + std::uniform_int_distribution<int>(0, 19)(rng))));
  }
  const auto m = evaluate(make_predictor("random", data, 9), data.graphs, eps);
  const double p = 1.0 / 20.0;
  EXPECT_LT(std::abs(m.acc(0) - p), 4 * std::sqrt(p * (1 - p) / 5000.0)) << m.acc(0);
  const auto again = evaluate(make_predictor("random", data, 9), data.graphs, eps);
  EXPECT_EQ(again.acc(0), m.acc(0));
  EXPECT_EQ(again.le_mean, m.le_mean);
}

TEST(Evaluate, OrderIndependent) {
  Dataset data;
  data.graphs.emplace("e", line_graph("e", 9, 1.7));
  std::vector<Episode> eps;
  for (int i = 0; i < 300; ++i) eps.push_back(episode("o" + std::to_string(i), "e", "p10" + std::to_string(i % 9)));
  const auto predict = make_predictor("random", data, 1);
  const auto a = evaluate(predict, data.graphs, eps);
  std::mt19937_64 rng(2);
  std::shuffle(eps.begin(), eps.end(), rng);
  const auto b = evaluate(predict, data.graphs, eps);
  EXPECT_EQ(a.le_mean, b.le_mean);
  EXPECT_EQ(a.le_stderr, b.le_stderr);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_LE(a.acc(0), a.acc(5));
}

TEST(Evaluate, CenterPredictorUsesCentroid) {
  Dataset data;
  data.graphs.emplace("e", line_graph("e", 5, 1.0));
  EXPECT_EQ(make_predictor("center", data)(episode("c", "e", "p100")), "p102");
}

// ------------------------------------------------------------------ reports

TEST(Report, MarkdownMatchesGoldenFile) {
  const auto text = render_report({golden_rows_led(), golden_rows_random()}, ReportFormat::markdown);
  EXPECT_EQ(text, slurp(fs::path(GRAPHLOC_GOLDEN_DIR) / "report.md"));
}

TEST(Report, MarkdownHasOneRowPerModel) {
  for (std::size_t models : {0u, 1u, 4u}) {
    std::vector<EvalReport> rows(models, golden_rows_led());
    const auto text = render_report(rows, ReportFormat::markdown);
    EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), 2 + models);
  }
}

TEST(Report, CsvRoundTrip) {
  auto led = golden_rows_led();
  led.method = "LED-Bert, \"pretrained\"";
  const std::vector<EvalReport> rows = {led, golden_rows_random()};
  const auto csv = render_report(rows, ReportFormat::csv);
  const auto parsed = parse_report_csv(csv);
  ASSERT_EQ(parsed.size(), 2u);
  EXPECT_EQ(parsed[0].method, led.method);
  EXPECT_EQ(parsed[0].splits.size(), 3u);
  EXPECT_EQ(parsed[1].splits.size(), 1u);
  EXPECT_NEAR(parsed[0].splits.at(Split::val_seen).acc(0), 0.905, 1e-12);
  EXPECT_NEAR(parsed[0].splits.at(Split::test).le_mean, 3.14, 1e-12);
  EXPECT_EQ(render_report(parsed, ReportFormat::csv), csv);
  EXPECT_THROW(parse_report_csv("nope\n"), DataError);
}

TEST(Report, RejectsNonMonotoneAccuracy) {
  auto r = golden_rows_led();
  r.splits[Split::test].accuracy = {{0.0, 0.6}, {5.0, 0.5}};
  EXPECT_THROW(render_report({r}, ReportFormat::markdown), ValidationError);
  EXPECT_THROW(eval_report_from_json(to_json(r)), ValidationError);
  EXPECT_THROW(parse_report_format("html"), ValidationError);
}

TEST(Report, JsonRoundTrip) {
  const auto r = golden_rows_led();
  const auto back = eval_report_from_json(to_json(r));
  EXPECT_EQ(back.method, r.method);
  for (const auto& [s, m] : r.splits) {
    EXPECT_EQ(back.splits.at(s).le_mean, m.le_mean);
    EXPECT_EQ(back.splits.at(s).accuracy, m.accuracy);
  }
}

// ------------------------------------------------------------------ command line

namespace {

int run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " '" + std::string(GRAPHLOC_CLI) + "' " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Cli, SeedEnvironmentVariableAndExitCodes) {
  const auto dir = fs::temp_directory_path() / ("graphloc_cli_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  const std::string small =
      " --set node_count=4 --set feature_dim=32 --set regions_per_node=4 --set seen_environments=1"
      " --set unseen_environments=1 --set test_environments=1 --set pretrain_environments=1"
      " --set train_episodes=8 --set val_seen_episodes=4 --set val_unseen_episodes=4 --set test_episodes=4";
  ASSERT_EQ(run_cli("generate --out '" + (dir / "d").string() + "'" + small, "GRAPHLOC_SEED=5"), 0);
  const auto meta = nlohmann::json::parse(slurp(dir / "d" / "dataset.json"));
  EXPECT_EQ(meta["config"]["seed"], 5);
  EXPECT_TRUE(fs::exists(dir / "d" / "manifest.json"));

  EXPECT_EQ(run_cli("generate --out '" + (dir / "e").string() + "' --set node_count=0"), 2);
  EXPECT_EQ(run_cli("train --stage s9 --data '" + (dir / "d").string() + "'"), 2);
  EXPECT_EQ(run_cli("train --stage s1 --data '" + (dir / "missing").string() + "' --out x.ckpt"), 3);
  EXPECT_EQ(run_cli("evaluate --model random --data '" + (dir / "d").string() + "' --out '" +
                    (dir / "r.json").string() + "'"),
            0);
  EXPECT_EQ(run_cli("report --format markdown --input '" + (dir / "r.json").string() + "' --out '" +
                    (dir / "r.md").string() + "'"),
            0);
  EXPECT_NE(slurp(dir / "r.md").find("| Random |"), std::string::npos);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  fs::remove_all(dir);
}
