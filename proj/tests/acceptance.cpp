// Property-based acceptance run: one PASS/FAIL line per criterion.

#include "gradcheck.hpp"

#include "graphloc/error.hpp"
#include "graphloc/harness.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

using namespace graphloc;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  int id = 0;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

std::vector<Outcome> outcomes;

void record(int id, const std::function<std::pair<bool, std::string>()>& body, double limit_s) {
  const auto start = Clock::now();
  Outcome o;
  o.id = id;
  try {
    auto [ok, detail] = body();
    o.pass = ok;
    o.detail = std::move(detail);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  o.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  if (limit_s > 0 && o.seconds > limit_s) {
    o.pass = false;
    o.detail += "; runtime over limit";
  }
  std::printf("criterion %d: %s (%.1f s) %s\n", id, o.pass ? "PASS" : "FAIL", o.seconds,
              o.detail.c_str());
  std::fflush(stdout);
  outcomes.push_back(std::move(o));
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ------------------------------------------------------------------ criterion 1

Eigen::MatrixXd floyd_warshall(const NavGraph& g) {
  const auto n = static_cast<Eigen::Index>(g.size());
  Eigen::MatrixXd d = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < n; ++i) d(i, i) = 0.0;
  for (const auto& e : g.edges()) {
    const auto a = static_cast<Eigen::Index>(g.index_of(e.a));
    const auto b = static_cast<Eigen::Index>(g.index_of(e.b));
    const double len = (g.nodes()[static_cast<std::size_t>(a)].pose.position -
                        g.nodes()[static_cast<std::size_t>(b)].pose.position)
                           .norm();
    d(a, b) = std::min(d(a, b), len);
    d(b, a) = std::min(d(b, a), len);
  }
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) d(i, j) = std::min(d(i, j), d(i, k) + d(k, j));
    }
  }
  return d;
}

NavGraph random_graph(std::mt19937_64& rng, int index) {
  const int n = std::uniform_int_distribution<int>(1, 20)(rng);
  std::uniform_real_distribution<double> coord(-10.0, 10.0);
  std::vector<NavNode> nodes;
  for (int i = 0; i < n; ++i) {
    NavNode node;
    node.id = fmt("v%02d", i);
    node.pose.position = {coord(rng), coord(rng), 0.1 * coord(rng)};
    nodes.push_back(node);
  }
  std::vector<NavEdge> edges;
  std::bernoulli_distribution keep(std::uniform_real_distribution<double>(0.05, 0.5)(rng));
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (keep(rng)) edges.push_back({nodes[static_cast<std::size_t>(i)].id, nodes[static_cast<std::size_t>(j)].id, 0.0});
    }
  }
  return NavGraph("g" + std::to_string(index), nodes, edges);
}

std::pair<bool, std::string> geodesic_oracle() {
  std::mt19937_64 rng(20240601);
  double worst = 0.0;
  int inf_mismatch = 0;
  for (int g = 0; g < 200; ++g) {
    const auto graph = random_graph(rng, g);
    const auto fast = geodesic_distance_matrix(graph);
    const auto oracle = floyd_warshall(graph);
    for (Eigen::Index i = 0; i < fast.rows(); ++i) {
      for (Eigen::Index j = 0; j < fast.cols(); ++j) {
        if (std::isinf(oracle(i, j)) || std::isinf(fast(i, j))) {
          if (std::isinf(oracle(i, j)) != std::isinf(fast(i, j))) ++inf_mismatch;
          continue;
        }
        worst = std::max(worst, std::abs(fast(i, j) - oracle(i, j)));
      }
    }
  }
  return {worst <= 1e-9 && inf_mismatch == 0,
          fmt("200 graphs, max |dijkstra - floyd_warshall| = %.3g, reachability mismatches %d", worst,
              inf_mismatch)};
}

// ------------------------------------------------------------------ criterion 2

std::pair<bool, std::string> spatial_encoding() {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> heading(-4 * std::numbers::pi, 4 * std::numbers::pi);
  std::uniform_real_distribution<double> elevation(-std::numbers::pi / 2, std::numbers::pi / 2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double circle = 0.0;
  double period = 0.0;
  int wrong_length = 0;
  for (int i = 0; i < 10000; ++i) {
    RegionBox b{heading(rng), elevation(rng), heading(rng), elevation(rng), unit(rng), elevation(rng)};
    const SpatialCode s = encode_region_spatial(b);
    if (s.size() != kSpatialDim) ++wrong_length;
    for (int p : {0, 2, 4, 6, 9}) circle = std::max(circle, std::abs(s(p) * s(p) + s(p + 1) * s(p + 1) - 1.0));
    RegionBox shifted = b;
    shifted.tl_heading += 2 * std::numbers::pi;
    shifted.br_heading -= 2 * std::numbers::pi;
    period = std::max(period, (encode_region_spatial(shifted) - s).cwiseAbs().maxCoeff());
  }
  return {wrong_length == 0 && circle <= 1e-12 && period <= 1e-12,
          fmt("10000 boxes, length errors %d, max |cos^2+sin^2-1| = %.2g, max 2pi-shift change = %.2g",
              wrong_length, circle, period)};
}

// ------------------------------------------------------------------ criterion 3

LedBertConfig desk_ledbert() {
  LedBertConfig c;
  c.vocab_size = 20;
  c.feature_dim = 6;
  c.text_hidden = 8;
  c.visual_hidden = 8;
  c.heads = 2;
  c.text_layers = 2;
  c.visual_layers = 2;
  c.co_attention_layers = {1};
  c.max_text_length = 16;
  c.max_regions = 4;
  return c;
}

BaselineConfig desk_baseline(BaselineKind kind, int feature_dim = 6, int vocab = 20) {
  BaselineConfig c;
  c.kind = kind;
  c.vocab_size = vocab;
  c.feature_dim = feature_dim;
  c.embed_dim = 5;
  c.hidden = 4;
  c.gcn_layers = 2;
  c.max_text_length = 32;
  return c;
}

std::vector<PanoTensor<double>> desk_panos(int n, int k, std::mt19937_64& rng) {
  std::vector<PanoTensor<double>> panos;
  const auto grid = panorama_grid(k);
  for (int i = 0; i < n; ++i) {
    PanoTensor<double> p;
    p.node_id = std::string(1, static_cast<char>('a' + i));
    p.visual = autodiff::random_normal<double>(k, 6, 1.0, rng);
    p.spatial.resize(k, kSpatialDim);
    for (int r = 0; r < k; ++r) p.spatial.row(r) = encode_region_spatial(grid[static_cast<std::size_t>(r)]).transpose();
    panos.push_back(std::move(p));
  }
  return panos;
}

NavGraph desk_graph(int n) {
  std::vector<NavNode> nodes;
  std::vector<NavEdge> edges;
  for (int i = 0; i < n; ++i) {
    NavNode node;
    node.id = std::string(1, static_cast<char>('a' + i));
    node.pose.position = {1.5 * i, 0.4 * i * i, 0.0};
    node.pose.heading = 0.7 * i;
    nodes.push_back(node);
    if (i > 0) edges.push_back({nodes[static_cast<std::size_t>(i - 1)].id, node.id, 0.0});
  }
  return NavGraph("desk", nodes, edges);
}

std::pair<bool, std::string> gradient_checks() {
  using graphloc::testing::check_gradients;
  using Tp = autodiff::Tape<double>;
  std::mt19937_64 rng(5);
  const std::vector<TokenId> dialog = {Vocabulary::kMsgStart, Vocabulary::kObserverTag, 12, 15, 11, 19,
                                       Vocabulary::kMsgStop};
  const std::vector<std::size_t> positions = {2, 4};
  double worst = 0.0;
  std::string worst_name;
  auto note = [&](const std::string& what, const graphloc::testing::GradCheckResult& r) {
    if (r.worst > worst || worst_name.empty()) {
      worst = r.worst;
      worst_name = what + "/" + r.worst_tensor;
    }
  };

  LedBert<double> led(desk_ledbert(), 3);
  const auto panos = desk_panos(2, 3, rng);
  note("localization", check_gradients(led.params(), [&](Tp& t) { return led.localization_loss(t, panos, dialog, 1); }));
  note("mlm", check_gradients(led.params(), [&](Tp& t) { return led.mlm_loss(t, &panos[0], dialog, positions); }));
  note("text_mlm", check_gradients(led.params(), [&](Tp& t) { return led.mlm_loss(t, nullptr, dialog, positions); }));
  note("alignment", check_gradients(led.params(), [&](Tp& t) { return led.alignment_loss(t, panos[1], dialog, false); }));

  const DialogTokens tokens{{10, 12, 15, 11, 19, 14}, {10, 12, 15}, {11, 19, 14}};
  const auto graph = desk_graph(4);
  const auto nodes = desk_panos(4, 3, rng);
  for (auto kind : {BaselineKind::late_fusion, BaselineKind::attention, BaselineKind::history_attention,
                    BaselineKind::gcn}) {
    BaselineModel<double> m(desk_baseline(kind), 9);
    const EnvironmentView<double> env{&graph, nodes};
    note(std::string(to_string(kind)),
         check_gradients(m.params(), [&](Tp& t) { return m.loss(t, env, tokens, 2); }));
  }
  return {worst < 1e-4, fmt("worst relative error %.3g at %s (limit 1e-4)", worst, worst_name.c_str())};
}

// ------------------------------------------------------------------ pipeline

struct Pipeline {
  fs::path work;
  int mlm_epochs = 2;
  int align_epochs = 15;
  std::unique_ptr<Dataset> data;
  std::vector<EvalReport> reports;
};

TrainConfig stage_config(const Pipeline& p, Stage stage, const std::string& out, std::uint64_t seed,
                         int epochs, const std::string& init = "") {
  TrainConfig c;
  c.stage = stage;
  c.data_dir = (p.work / "data").string();
  c.output_checkpoint = (p.work / out).string();
  c.init_checkpoint = init;
  c.epochs = epochs;
  c.seed = seed;
  return c;
}

std::string pretrain(const Pipeline& p, std::uint64_t seed) {
  const std::string tag = "seed" + std::to_string(seed);
  auto s1 = stage_config(p, Stage::s1_text_mlm, tag + "_s1.ckpt", seed, p.mlm_epochs);
  run_stage(s1, *p.data);
  auto s2 = stage_config(p, Stage::s2_align, tag + "_s2.ckpt", seed, p.align_epochs, s1.output_checkpoint);
  run_stage(s2, *p.data);
  auto s3 = stage_config(p, Stage::s3_align, tag + "_s3.ckpt", seed, p.align_epochs, s2.output_checkpoint);
  run_stage(s3, *p.data);
  return s3.output_checkpoint;
}

EvalReport evaluate_all(const Pipeline& p, const std::string& model, const std::string& name,
                        std::uint64_t seed = 0) {
  EvalReport r;
  r.method = name;
  const auto predict = make_predictor(model, *p.data, seed);
  for (Split s : {Split::val_seen, Split::val_unseen, Split::test}) {
    r.splits[s] = evaluate(predict, p.data->graphs, p.data->split(s), {0, 1, 2, 3, 5, 10});
  }
  return r;
}

// ------------------------------------------------------------------ criterion 4

template <typename Scalar>
std::vector<PanoTensor<double>> as_double(const std::vector<PanoTensor<Scalar>>& panos) {
  std::vector<PanoTensor<double>> out;
  for (const auto& p : panos) {
    PanoTensor<double> d;
    d.node_id = p.node_id;
    d.visual = p.visual.template cast<double>();
    d.spatial = p.spatial.template cast<double>();
    out.push_back(std::move(d));
  }
  return out;
}

std::pair<bool, std::string> probability_contracts(Pipeline& p, const std::string& trained) {
  const auto& data = *p.data;
  const auto ckpt = load_checkpoint(trained);
  LedBert<float> net(ckpt.meta.config.get<LedBertConfig>(), ckpt.params);
  const int dv = data.config.feature_dim;
  const int vocab = static_cast<int>(data.vocab.size());
  std::vector<BaselineModel<double>> baselines;
  for (auto kind : {BaselineKind::late_fusion, BaselineKind::attention, BaselineKind::history_attention,
                    BaselineKind::gcn}) {
    auto c = desk_baseline(kind, dv, vocab);
    c.hidden = 16;
    c.embed_dim = 16;
    c.max_text_length = 160;
    baselines.emplace_back(c, 41);
  }

  std::mt19937_64 rng(8);
  double worst_sum = 0.0;
  int permutation_failures = 0;
  int checked = 0;
  for (Split s : {Split::val_seen, Split::val_unseen}) {
    const auto eps = data.split(s);
    for (std::size_t e = 0; e < eps.size(); e += 10) {
      const auto& ep = eps[e];
      auto panos = data.panos.at(ep.environment_id);
      const auto ids = dialog_ids(ep.dialog, data.vocab, 160);
      const auto scores = net.score_environment(panos, ids);
      worst_sum = std::max(worst_sum, std::abs(static_cast<double>(scores.probabilities.template cast<double>().sum()) - 1.0));
      const auto before = net.predict(panos, ids);

      const auto dpanos = as_double(panos);
      const auto tokens = dialog_tokens(ep.dialog, data.vocab, 160);
      const auto& graph = data.graphs.at(ep.environment_id);
      std::vector<std::string> baseline_before;
      for (auto& m : baselines) {
        const EnvironmentView<double> view{&graph, dpanos};
        worst_sum = std::max(worst_sum, std::abs(m.probabilities(view, tokens).sum() - 1.0));
        baseline_before.push_back(m.predict(view, tokens));
      }

      std::shuffle(panos.begin(), panos.end(), rng);
      if (net.predict(panos, ids) != before) ++permutation_failures;
      auto shuffled = as_double(panos);
      for (std::size_t b = 0; b < baselines.size(); ++b) {
        const EnvironmentView<double> view{&graph, shuffled};
        if (baselines[b].predict(view, tokens) != baseline_before[b]) ++permutation_failures;
      }
      ++checked;
    }
  }
  int monotone_failures = 0;
  for (const auto& r : p.reports) {
    try {
      r.validate();
    } catch (const ValidationError&) {
      ++monotone_failures;
    }
  }
  return {worst_sum <= 1e-6 && permutation_failures == 0 && monotone_failures == 0 && checked > 0,
          fmt("%d environments x 5 predictors, max |sum-1| = %.2g, permutation changes %d, "
              "non-monotone reports %d of %zu",
              checked, worst_sum, permutation_failures, monotone_failures, p.reports.size())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work = (fs::temp_directory_path() / "graphloc_acceptance").string();
  Pipeline p;
  int finetune_epochs = 15;
  int comparison_epochs = 3;
  app.add_option("--work-dir", work, "Scratch directory")->capture_default_str();
  app.add_option("--finetune-epochs", finetune_epochs, "Stage-4 epochs for learnability")->capture_default_str();
  app.add_option("--mlm-epochs", p.mlm_epochs, "Stage-1 epochs")->capture_default_str();
  app.add_option("--align-epochs", p.align_epochs, "Stage-2 and stage-3 epochs")->capture_default_str();
  app.add_option("--comparison-epochs", comparison_epochs, "Stage-4 epochs per arm of the pretraining comparison")
      ->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  record(1, geodesic_oracle, 10.0);
  record(2, spatial_encoding, 5.0);
  record(3, gradient_checks, 120.0);

  p.work = work;
  fs::remove_all(p.work);
  fs::create_directories(p.work);
  DatasetConfig dc;  // 12-node environments, 2000 train, 200 per held-out split
  generate_dataset(dc, p.work / "data");
  p.data = std::make_unique<Dataset>(load_dataset(p.work / "data"));

  // Learnability runs first so criterion 4 can inspect the trained model and reports.
  std::string trained;
  Outcome five;
  {
    const auto start = Clock::now();
    std::string detail;
    bool ok = false;
    try {
      const auto init = pretrain(p, 0);
      auto s4 = stage_config(p, Stage::s4_finetune, "seed0_s4.ckpt", 0, finetune_epochs, init);
      run_stage(s4, *p.data);
      trained = s4.output_checkpoint;
      const auto led = evaluate_all(p, trained, "LED-Bert");
      const auto rnd = evaluate_all(p, "random", "Random", 0);
      p.reports.push_back(led);
      p.reports.push_back(rnd);
      p.reports.push_back(evaluate_all(p, "center", "Center"));
      const auto& ls = led.splits.at(Split::val_seen);
      const auto& rs = rnd.splits.at(Split::val_seen);
      const double chance = 1.0 / 12.0;
      const double sigma = std::sqrt(chance * (1 - chance) / static_cast<double>(rs.count));
      const bool led_ok = ls.acc(0) >= 0.90;
      const bool rnd_ok = std::abs(rs.acc(0) - chance) <= 4 * sigma;
      const bool ratio_ok = ls.acc(0) >= 5 * rs.acc(0);
      ok = led_ok && rnd_ok && ratio_ok;
      detail = fmt("held-out val_seen Acc@0m: LED-Bert %.3f (need >= 0.90), random %.3f "
                   "(need |x - %.3f| <= %.3f), ratio %.1fx (need >= 5)",
                   ls.acc(0), rs.acc(0), chance, 4 * sigma, rs.acc(0) > 0 ? ls.acc(0) / rs.acc(0) : INFINITY);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    five = {5, ok, detail, std::chrono::duration<double>(Clock::now() - start).count()};
    if (five.seconds > 1800) {
      five.pass = false;
      five.detail += "; runtime over 30 min";
    }
  }

  record(4, [&] { return trained.empty() ? std::pair{false, std::string("no trained model")}
                                          : probability_contracts(p, trained); },
         0);
  std::printf("criterion 5: %s (%.1f s) %s\n", five.pass ? "PASS" : "FAIL", five.seconds, five.detail.c_str());
  std::fflush(stdout);
  outcomes.push_back(five);

  record(6, [&]() -> std::pair<bool, std::string> {
    double pre = 0.0;
    double scratch = 0.0;
    std::string per_seed;
    for (std::uint64_t seed : {1, 2, 3}) {
      const auto init = pretrain(p, seed);
      auto a = stage_config(p, Stage::s4_finetune, fmt("seed%d_pre_s4.ckpt", static_cast<int>(seed)), seed,
                            comparison_epochs, init);
      auto b = stage_config(p, Stage::s4_finetune, fmt("seed%d_scratch_s4.ckpt", static_cast<int>(seed)), seed,
                            comparison_epochs);
      const auto ra = run_stage(a, *p.data);
      const auto rb = run_stage(b, *p.data);
      if (ra.losses.size() != rb.losses.size()) return {false, "step budgets differ"};
      const auto ea = evaluate_all(p, a.output_checkpoint, "pretrained");
      const auto eb = evaluate_all(p, b.output_checkpoint, "scratch");
      p.reports.push_back(ea);
      p.reports.push_back(eb);
      const double xa = ea.splits.at(Split::val_unseen).acc(0);
      const double xb = eb.splits.at(Split::val_unseen).acc(0);
      pre += xa / 3;
      scratch += xb / 3;
      per_seed += fmt(" [seed %d: %.3f vs %.3f, %zu steps]", static_cast<int>(seed), xa, xb, ra.losses.size());
    }
    return {pre >= scratch, fmt("val_unseen Acc@0m pretrained %.3f vs scratch %.3f;", pre, scratch) + per_seed};
  }, 0);

  record(7, [&]() -> std::pair<bool, std::string> {
    DatasetConfig small;
    small.seed = 5;
    small.train_episodes = 100;
    generate_dataset(small, p.work / "det_a");
    generate_dataset(small, p.work / "det_b");
    int differences = 0;
    for (const char* f : {"dataset.json", "vocab.json", "episodes.jsonl", "captions.jsonl", "instructions.jsonl"}) {
      if (slurp(p.work / "det_a" / f) != slurp(p.work / "det_b" / f)) ++differences;
    }
    for (const auto& entry : fs::directory_iterator(p.work / "det_a" / "features")) {
      if (slurp(entry.path()) != slurp(p.work / "det_b" / "features" / entry.path().filename())) ++differences;
    }
    std::string reports[2];
    for (int run = 0; run < 2; ++run) {
      auto c = stage_config(p, Stage::s4_finetune, fmt("det_%d.ckpt", run), 17, 1,
                            (p.work / "seed0_s3.ckpt").string());
      c.max_steps = 40;
      run_stage(c, *p.data);
      reports[run] = render_report({evaluate_all(p, c.output_checkpoint, "det")}, ReportFormat::markdown) +
                     render_report({evaluate_all(p, "random", "Random", 3)}, ReportFormat::csv);
    }
    if (slurp(p.work / "det_0.ckpt") != slurp(p.work / "det_1.ckpt")) ++differences;
    if (slurp(p.work / "det_0.ckpt.loss.csv") != slurp(p.work / "det_1.ckpt.loss.csv")) ++differences;
    if (reports[0] != reports[1]) ++differences;
    return {differences == 0, fmt("dataset files, checkpoints, loss logs and reports: %d differences", differences)};
  }, 0);

  record(8, [&]() -> std::pair<bool, std::string> {
    EvalReport led{"LED-Bert", {}};
    led.splits[Split::val_seen] = {200, 0.456, 0.1234, {{0.0, 0.905}, {5.0, 0.98}}};
    led.splits[Split::val_unseen] = {200, 2.5, 0.3, {{0.0, 0.61}, {5.0, 0.9}}};
    led.splits[Split::test] = {200, 3.14159, 0.271828, {{0.0, 0.5}, {5.0, 0.875}}};
    EvalReport rnd{"Random", {}};
    rnd.splits[Split::val_seen] = {200, 7.777, 0.5, {{0.0, 0.085}, {5.0, 0.4}}};
    const auto text = render_report({led, rnd}, ReportFormat::markdown);
    const auto golden = slurp(fs::path(GRAPHLOC_GOLDEN_DIR) / "report.md");
    return {text == golden, fmt("%zu bytes rendered, %zu bytes golden", text.size(), golden.size())};
  }, 0);

  std::sort(outcomes.begin(), outcomes.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::printf("\nsummary\n");
  int failed = 0;
  for (const auto& o : outcomes) {
    std::printf("criterion %d: %s\n", o.id, o.pass ? "PASS" : "FAIL");
    failed += o.pass ? 0 : 1;
  }
  std::printf("\n%s\n", render_report(p.reports, ReportFormat::markdown).c_str());
  return failed == 0 ? 0 : 1;
}
