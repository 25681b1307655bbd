#include "graphloc/harness.hpp"

#include "graphloc/error.hpp"
#include "graphloc/synthworld.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>

namespace graphloc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string format(const char* fmt, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

// ---------------------------------------------------------------- data

void DatasetConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("dataset config: " + m); };
  if (node_count < 1) fail("node_count must be >= 1");
  if (feature_dim < 1) fail("feature_dim must be >= 1");
  if (regions_per_node < 1) fail("regions_per_node must be >= 1");
  if (noise_sigma < 0) fail("noise_sigma must be >= 0");
  if (seen_environments < 1) fail("need at least one seen environment");
  if (unseen_environments < 0 || test_environments < 0 || pretrain_environments < 0) {
    fail("environment counts must be >= 0");
  }
  if (train_episodes < 0 || val_seen_episodes < 0 || val_unseen_episodes < 0 || test_episodes < 0) {
    fail("episode counts must be >= 0");
  }
  if (val_unseen_episodes > 0 && unseen_environments == 0) fail("val_unseen needs unseen environments");
  if (test_episodes > 0 && test_environments == 0) fail("test needs test environments");
  if (captions_per_node < 0 || instructions_per_node < 0) fail("per-node counts must be >= 0");
}

void to_json(json& j, const DatasetConfig& c) {
  j = {{"seed", c.seed},
       {"node_count", c.node_count},
       {"feature_dim", c.feature_dim},
       {"regions_per_node", c.regions_per_node},
       {"noise_sigma", c.noise_sigma},
       {"seen_environments", c.seen_environments},
       {"unseen_environments", c.unseen_environments},
       {"test_environments", c.test_environments},
       {"pretrain_environments", c.pretrain_environments},
       {"train_episodes", c.train_episodes},
       {"val_seen_episodes", c.val_seen_episodes},
       {"val_unseen_episodes", c.val_unseen_episodes},
       {"test_episodes", c.test_episodes},
       {"captions_per_node", c.captions_per_node},
       {"instructions_per_node", c.instructions_per_node}};
}

void from_json(const json& j, DatasetConfig& c) {
  const DatasetConfig d;
#define GRAPHLOC_FIELD(name) c.name = j.value(#name, d.name)
  GRAPHLOC_FIELD(seed);
  GRAPHLOC_FIELD(node_count);
  GRAPHLOC_FIELD(feature_dim);
  GRAPHLOC_FIELD(regions_per_node);
  GRAPHLOC_FIELD(noise_sigma);
  GRAPHLOC_FIELD(seen_environments);
  GRAPHLOC_FIELD(unseen_environments);
  GRAPHLOC_FIELD(test_environments);
  GRAPHLOC_FIELD(pretrain_environments);
  GRAPHLOC_FIELD(train_episodes);
  GRAPHLOC_FIELD(val_seen_episodes);
  GRAPHLOC_FIELD(val_unseen_episodes);
  GRAPHLOC_FIELD(test_episodes);
  GRAPHLOC_FIELD(captions_per_node);
  GRAPHLOC_FIELD(instructions_per_node);
#undef GRAPHLOC_FIELD
  for (const auto& [key, value] : j.items()) {
    if (!json(d).contains(key)) throw ValidationError("dataset config: unknown field '" + key + "'");
  }
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  return splitmix(base ^ splitmix(fnv1a(tag)));
}

std::string content_hash(std::string_view bytes) { return format("%016" PRIx64, fnv1a(bytes)); }

std::string file_hash(const fs::path& path) { return content_hash(read_file(path)); }

void generate_dataset(const DatasetConfig& config, const fs::path& out_dir) {
  config.validate();
  fs::create_directories(out_dir / "graphs");
  fs::create_directories(out_dir / "features");

  std::map<std::string, std::vector<SynthEnvironment>> groups;
  json env_ids = json::object();
  const std::pair<const char*, int> plan[] = {{"seen", config.seen_environments},
                                              {"unseen", config.unseen_environments},
                                              {"test", config.test_environments},
                                              {"pre", config.pretrain_environments}};
  for (const auto& [group, count] : plan) {
    env_ids[group] = json::array();
    for (int i = 0; i < count; ++i) {
      WorldSpec spec;
      spec.environment_id = format("%s_%02d", group, i);
      spec.node_count = config.node_count;
      spec.feature_dim = config.feature_dim;
      spec.regions_per_node = config.regions_per_node;
      spec.noise_sigma = config.noise_sigma;
      spec.seed = derive_seed(config.seed, "env/" + spec.environment_id);
      spec.codebook_seed = derive_seed(config.seed, "codebook");
      auto env = generate_environment(spec);
      save_graph(env.graph, out_dir / "graphs" / (spec.environment_id + ".json"));
      save_feature_store(env.observations, out_dir / "features" / (spec.environment_id + ".bin"));
      env_ids[group].push_back(spec.environment_id);
      groups[group].push_back(std::move(env));
    }
  }

  std::vector<Episode> episodes;
  auto draw = [&](const std::string& group, int count, Split split, const char* prefix) {
    std::mt19937_64 rng(derive_seed(config.seed, std::string("episodes/") + prefix));
    const auto& envs = groups[group];
    for (int i = 0; i < count; ++i) {
      const auto& env = envs[static_cast<std::size_t>(i) % envs.size()];
      episodes.push_back(generate_episode(env, rng, format("%s-%05d", prefix, i), split));
    }
  };
  draw("seen", config.train_episodes, Split::train, "train");
  draw("seen", config.val_seen_episodes, Split::val_seen, "val_seen");
  draw("unseen", config.val_unseen_episodes, Split::val_unseen, "val_unseen");
  draw("test", config.test_episodes, Split::test, "test");

  // Alignment corpora never touch held-out environments.
  std::vector<Episode> captions;
  std::vector<Episode> instructions;
  std::mt19937_64 rng(derive_seed(config.seed, "alignment"));
  for (const char* group : {"seen", "pre"}) {
    for (const auto& env : groups[group]) {
      for (std::size_t n = 0; n < env.graph.size(); ++n) {
        const auto& node = env.graph.nodes()[n].id;
        const auto& eid = env.graph.environment_id();
        for (int c = 0; c < config.captions_per_node; ++c) {
          captions.push_back({format("cap-%s-%s-%d", eid.c_str(), node.c_str(), c), eid,
                              generate_caption(env, n, rng), node, Split::train});
        }
        for (int c = 0; c < config.instructions_per_node; ++c) {
          instructions.push_back({format("ins-%s-%s-%d", eid.c_str(), node.c_str(), c), eid,
                                  generate_instruction(env, n, rng), node, Split::train});
        }
      }
    }
  }

  std::vector<Episode> everything = episodes;
  everything.insert(everything.end(), captions.begin(), captions.end());
  everything.insert(everything.end(), instructions.begin(), instructions.end());
  save_vocab(build_vocab(everything, 1), out_dir / "vocab.json");
  save_corpus(episodes, out_dir / "episodes.jsonl");
  save_corpus(captions, out_dir / "captions.jsonl");
  save_corpus(instructions, out_dir / "instructions.jsonl");
  write_file(out_dir / "dataset.json",
             json{{"config", config}, {"environments", env_ids}}.dump(2) + "\n");
}

std::vector<Episode> Dataset::split(Split s) const {
  std::vector<Episode> out;
  std::copy_if(episodes.begin(), episodes.end(), std::back_inserter(out),
               [s](const Episode& e) { return e.split == s; });
  return out;
}

std::size_t Dataset::target_index(const Episode& ep) const {
  auto it = panos.find(ep.environment_id);
  if (it == panos.end()) {
    throw DataError("episode " + ep.episode_id + ": unknown environment '" + ep.environment_id + "'");
  }
  const auto& nodes = it->second;
  auto pos = std::lower_bound(nodes.begin(), nodes.end(), ep.target_node,
                              [](const PanoTensor<float>& p, const std::string& id) {
                                return p.node_id < id;
                              });
  if (pos == nodes.end() || pos->node_id != ep.target_node) {
    throw DataError("episode " + ep.episode_id + ": target '" + ep.target_node +
                    "' is not a node of " + ep.environment_id);
  }
  return static_cast<std::size_t>(pos - nodes.begin());
}

Dataset load_dataset(const fs::path& dir) {
  Dataset d;
  d.root = dir;
  json meta;
  try {
    meta = json::parse(read_file(dir / "dataset.json"));
  } catch (const json::exception& e) {
    throw DataError((dir / "dataset.json").string() + ": " + e.what());
  }
  d.config = meta.at("config").get<DatasetConfig>();
  d.vocab = load_vocab(dir / "vocab.json");
  for (const auto& [group, ids] : meta.at("environments").items()) {
    for (const auto& id : ids) {
      const auto env = id.get<std::string>();
      auto graph = load_graph(dir / "graphs" / (env + ".json"));
      auto store = load_feature_store(dir / "features" / (env + ".bin"));
      if (store.size() != graph.size()) {
        throw DataError(env + ": feature store covers " + std::to_string(store.size()) +
                        " nodes, graph has " + std::to_string(graph.size()));
      }
      for (const auto& node : graph.nodes()) {
        if (!store.count(node.id)) throw DataError(env + ": no features for node '" + node.id + "'");
      }
      d.panos.emplace(env, to_tensors<float>(store));
      d.graphs.emplace(env, std::move(graph));
    }
  }
  d.episodes = load_corpus(dir / "episodes.jsonl");
  d.captions = load_corpus(dir / "captions.jsonl");
  d.instructions = load_corpus(dir / "instructions.jsonl");
  return d;
}

std::vector<TokenId> dialog_ids(const Dialog& dialog, const Vocabulary& vocab,
                                std::size_t max_length) {
  return truncate_history(flatten_dialog(dialog, vocab), max_length);
}

// ---------------------------------------------------------------- training config

std::string stage_tag(Stage stage, BaselineKind kind) {
  switch (stage) {
    case Stage::s1_text_mlm: return "s1";
    case Stage::s2_align: return "s2";
    case Stage::s3_align: return "s3";
    case Stage::s4_finetune: return "s4";
    case Stage::baseline: return "baseline:" + std::string(to_string(kind));
  }
  return "s4";
}

void parse_stage_tag(std::string_view tag, Stage& stage, BaselineKind& kind) {
  if (tag == "s1") {
    stage = Stage::s1_text_mlm;
  } else if (tag == "s2") {
    stage = Stage::s2_align;
  } else if (tag == "s3") {
    stage = Stage::s3_align;
  } else if (tag == "s4") {
    stage = Stage::s4_finetune;
  } else if (tag.starts_with("baseline:")) {
    stage = Stage::baseline;
    kind = parse_baseline_kind(tag.substr(9));
  } else {
    throw ValidationError("unknown stage '" + std::string(tag) +
                          "' (expected s1, s2, s3, s4 or baseline:<name>)");
  }
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("train config: " + m); };
  if (data_dir.empty()) fail("data_dir is required");
  if (output_checkpoint.empty()) fail("output_checkpoint is required");
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (max_steps < 0) fail("max_steps must be >= 0");
  if (negative_samples < 0) fail("negative_samples must be >= 0");
  if (optimizer.learning_rate <= 0) fail("optimizer.learning_rate must be positive");
  if (optimizer.momentum < 0 || optimizer.momentum >= 1) fail("optimizer.momentum must be in [0,1)");
}

json to_json(const TrainConfig& c) {
  json model = c.model;
  json baseline = c.baseline;
  return {{"stage", stage_tag(c.stage, c.baseline_kind)},
          {"data_dir", c.data_dir},
          {"init_checkpoint", c.init_checkpoint},
          {"output_checkpoint", c.output_checkpoint},
          {"log_path", c.log_path},
          {"optimizer", c.optimizer},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"max_steps", c.max_steps},
          {"seed", c.seed},
          {"negative_samples", c.negative_samples},
          {"model", model},
          {"baseline", baseline}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  const json known = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ValidationError("train config: unknown field '" + key + "'");
  }
  try {
    parse_stage_tag(j.value("stage", std::string("s4")), c.stage, c.baseline_kind);
    c.data_dir = j.value("data_dir", c.data_dir);
    c.init_checkpoint = j.value("init_checkpoint", c.init_checkpoint);
    c.output_checkpoint = j.value("output_checkpoint", c.output_checkpoint);
    c.log_path = j.value("log_path", c.log_path);
    if (j.contains("optimizer")) c.optimizer = j["optimizer"].get<OptimizerConfig>();
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.seed = j.value("seed", c.seed);
    c.negative_samples = j.value("negative_samples", c.negative_samples);
    if (j.contains("model")) {
      json m = known["model"];
      m.merge_patch(j["model"]);
      c.model = m.get<LedBertConfig>();
    }
    if (j.contains("baseline")) {
      json b = known["baseline"];
      b.merge_patch(j["baseline"]);
      c.baseline = b.get<BaselineConfig>();
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  c.baseline.kind = c.baseline_kind;
  c.validate();
  return c;
}

void apply_override(json& j, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ValidationError("override '" + std::string(assignment) + "' is not key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty()) throw ValidationError("override key '" + key + "' has an empty component");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

// ---------------------------------------------------------------- training

namespace {

using Tape = autodiff::Tape<float>;
using FVar = autodiff::Var<float>;

/// Mini-batch loop shared by every stage. `loss_of` builds the loss of one
/// example on a fresh tape; gradients accumulate in example order.
std::vector<double> train_loop(autodiff::ParameterSet<float>& params, std::size_t examples,
                               const TrainConfig& cfg, std::mt19937_64& rng,
                               const std::function<FVar(Tape&, std::size_t)>& loss_of) {
  if (examples == 0) throw DataError("stage " + stage_tag(cfg.stage, cfg.baseline_kind) +
                                     ": no training examples in " + cfg.data_dir);
  SgdMomentum<float> opt(cfg.optimizer);
  std::vector<std::size_t> order(examples);
  std::vector<double> losses;
  params.zero_grad();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < examples; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(examples, start + static_cast<std::size_t>(cfg.batch_size));
      double total = 0.0;
      for (std::size_t i = start; i < stop; ++i) {
        Tape t;
        FVar loss = loss_of(t, order[i]);
        total += loss.scalar();
        t.backward(loss);
      }
      const auto batch = static_cast<int>(stop - start);
      opt.step(params, batch);
      losses.push_back(total / batch);
      if (!std::isfinite(losses.back())) {
        throw DataError("training diverged at step " + std::to_string(losses.size()));
      }
      if (cfg.max_steps > 0 && static_cast<long>(losses.size()) >= cfg.max_steps) return losses;
    }
  }
  return losses;
}

std::size_t other_node(std::size_t target, std::size_t n, std::mt19937_64& rng) {
  auto pick = std::uniform_int_distribution<std::size_t>(0, n - 2)(rng);
  return pick >= target ? pick + 1 : pick;
}

std::vector<fs::path> dataset_inputs(const Dataset& data) {
  std::vector<fs::path> in = {data.root / "dataset.json", data.root / "vocab.json",
                              data.root / "episodes.jsonl", data.root / "captions.jsonl",
                              data.root / "instructions.jsonl"};
  for (const auto& [env, g] : data.graphs) {
    in.push_back(data.root / "graphs" / (env + ".json"));
    in.push_back(data.root / "features" / (env + ".bin"));
  }
  return in;
}

void check_init_kind(const Checkpoint& ckpt, const std::string& kind, const std::string& path) {
  if (ckpt.meta.model_kind != kind) {
    throw ValidationError("checkpoint " + path + " holds a " + ckpt.meta.model_kind +
                          " model, this stage trains " + kind);
  }
}

}  // namespace

StageResult run_stage(const TrainConfig& config, const Dataset& data) {
  config.validate();
  const std::string tag = stage_tag(config.stage, config.baseline_kind);
  std::mt19937_64 rng(derive_seed(config.seed, "train/" + tag));
  const auto init_seed = derive_seed(config.seed, "init/" + tag);
  const auto vocab_size = static_cast<int>(data.vocab.size());
  const int feature_dim = data.config.feature_dim;

  std::optional<Checkpoint> init;
  if (!config.init_checkpoint.empty()) init = load_checkpoint(config.init_checkpoint);

  CheckpointMeta meta;
  meta.stage = tag;
  meta.seed = config.seed;
  std::vector<double> losses;
  autodiff::ParameterSet<float> trained;

  if (config.stage == Stage::baseline) {
    BaselineConfig bc = config.baseline;
    bc.kind = config.baseline_kind;
    if (bc.vocab_size == 0) bc.vocab_size = vocab_size;
    if (bc.feature_dim == 0) bc.feature_dim = feature_dim;
    BaselineModel<float> model(bc, init_seed);
    meta.model_kind = tag;
    meta.config = bc;
    if (init) {
      check_init_kind(*init, tag, config.init_checkpoint);
      transfer_parameters(model.params(), init->params, true);
    }
    const auto train = data.split(Split::train);
    std::vector<DialogTokens> tokens;
    std::vector<std::size_t> targets;
    for (const auto& ep : train) {
      tokens.push_back(dialog_tokens(ep.dialog, data.vocab, bc.max_text_length));
      targets.push_back(data.target_index(ep));
    }
    losses = train_loop(model.params(), train.size(), config, rng, [&](Tape& t, std::size_t i) {
      const auto& env = train[i].environment_id;
      EnvironmentView<float> view{&data.graphs.at(env), data.panos.at(env)};
      return model.loss(t, view, tokens[i], targets[i]);
    });
    trained = std::move(model.params());
  } else {
    LedBertConfig mc = config.model;
    if (mc.vocab_size == 0) mc.vocab_size = vocab_size;
    if (mc.feature_dim == 0) mc.feature_dim = feature_dim;
    LedBert<float> model(mc, init_seed);
    meta.model_kind = "ledbert";
    meta.config = mc;
    if (init) {
      check_init_kind(*init, "ledbert", config.init_checkpoint);
      transfer_parameters(model.params(), init->params, true);
    }
    const auto max_len = static_cast<std::size_t>(mc.max_text_length);

    const std::vector<Episode>* corpus = nullptr;
    std::vector<Episode> train;
    switch (config.stage) {
      case Stage::s1_text_mlm:
      case Stage::s4_finetune:
        train = data.split(Split::train);
        corpus = &train;
        break;
      case Stage::s2_align: corpus = &data.captions; break;
      case Stage::s3_align: corpus = &data.instructions; break;
      case Stage::baseline: break;
    }
    std::vector<std::vector<TokenId>> ids;
    std::vector<std::size_t> targets;
    for (const auto& ep : *corpus) {
      ids.push_back(dialog_ids(ep.dialog, data.vocab, max_len));
      targets.push_back(data.target_index(ep));
    }

    std::function<FVar(Tape&, std::size_t)> loss_of;
    if (config.stage == Stage::s1_text_mlm) {
      loss_of = [&](Tape& t, std::size_t i) { return model.mlm_loss(t, nullptr, ids[i], rng); };
    } else if (config.stage == Stage::s4_finetune) {
      loss_of = [&](Tape& t, std::size_t i) {
        const auto& panos = data.panos.at((*corpus)[i].environment_id);
        const std::size_t n = panos.size();
        std::vector<std::size_t> candidates;
        if (config.negative_samples > 0 && static_cast<std::size_t>(config.negative_samples) < n - 1) {
          std::vector<std::size_t> others;
          for (std::size_t j = 0; j < n; ++j) {
            if (j != targets[i]) others.push_back(j);
          }
          std::shuffle(others.begin(), others.end(), rng);
          candidates.assign(others.begin(), others.begin() + config.negative_samples);
          candidates.push_back(targets[i]);
          std::sort(candidates.begin(), candidates.end());
        }
        return model.localization_loss(t, panos, ids[i], targets[i], candidates);
      };
    } else {
      // MLM with the node in view plus alignment on the matched pair and on
      // the text against another node of the same environment.
      loss_of = [&](Tape& t, std::size_t i) {
        const auto& panos = data.panos.at((*corpus)[i].environment_id);
        const auto& pano = panos[targets[i]];
        std::vector<FVar> terms = {model.mlm_loss(t, &pano, ids[i], rng),
                                   model.alignment_loss(t, pano, ids[i], true)};
        if (panos.size() > 1) {
          const auto& other = panos[other_node(targets[i], panos.size(), rng)];
          terms.push_back(model.alignment_loss(t, other, ids[i], false));
        }
        return autodiff::add_n(terms);
      };
    }
    losses = train_loop(model.params(), corpus->size(), config, rng, loss_of);
    trained = std::move(model.params());
  }

  StageResult result;
  result.checkpoint = config.output_checkpoint;
  result.log = config.log_path.empty() ? fs::path(config.output_checkpoint + ".loss.csv")
                                       : fs::path(config.log_path);
  result.losses = losses;
  save_checkpoint(result.checkpoint, meta, trained);
  std::string log = "step,loss\n";
  for (std::size_t s = 0; s < losses.size(); ++s) log += format("%zu,%.9g\n", s + 1, losses[s]);
  write_file(result.log, log);

  auto inputs = dataset_inputs(data);
  if (init) inputs.emplace_back(config.init_checkpoint);
  write_manifest(result.checkpoint.string() + ".manifest.json", "train", to_json(config), config.seed,
                 inputs, {result.checkpoint, result.log});
  return result;
}

// ---------------------------------------------------------------- evaluation

double SplitMetrics::acc(double k) const {
  auto it = accuracy.find(k);
  if (it == accuracy.end()) throw ValidationError(format("no accuracy recorded at %g m", k));
  return it->second;
}

void EvalReport::validate() const {
  for (const auto& [split, m] : splits) {
    double previous = 0.0;
    for (const auto& [k, a] : m.accuracy) {
      if (!(a >= 0.0 && a <= 1.0)) {
        throw ValidationError(method + "/" + std::string(to_string(split)) +
                              format(": Acc@%gm = %g outside [0,1]", k, a));
      }
      if (a < previous) {
        throw ValidationError(method + "/" + std::string(to_string(split)) +
                              format(": Acc@%gm decreases with k", k));
      }
      previous = a;
    }
  }
}

json to_json(const EvalReport& r) {
  json splits = json::object();
  for (const auto& [split, m] : r.splits) {
    json acc = json::array();
    for (const auto& [k, a] : m.accuracy) acc.push_back({k, a});
    splits[std::string(to_string(split))] = {
        {"count", m.count}, {"le_mean", m.le_mean}, {"le_stderr", m.le_stderr}, {"accuracy", acc}};
  }
  return {{"method", r.method}, {"splits", splits}};
}

EvalReport eval_report_from_json(const json& j) {
  EvalReport r;
  try {
    r.method = j.at("method").get<std::string>();
    for (const auto& [name, s] : j.at("splits").items()) {
      SplitMetrics m;
      m.count = s.at("count").get<std::size_t>();
      m.le_mean = s.at("le_mean").get<double>();
      m.le_stderr = s.at("le_stderr").get<double>();
      for (const auto& pair : s.at("accuracy")) m.accuracy[pair.at(0)] = pair.at(1).get<double>();
      r.splits[parse_split(name)] = std::move(m);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("bad evaluation report: ") + e.what());
  }
  r.validate();
  return r;
}

SplitMetrics evaluate(const Predictor& predict, const std::map<std::string, NavGraph>& graphs,
                      const std::vector<Episode>& episodes, const std::vector<double>& ks) {
  std::string missing;
  for (const auto& ep : episodes) {
    if (!graphs.count(ep.environment_id)) missing += " " + ep.episode_id;
  }
  if (!missing.empty()) throw DataError("environment missing for episodes:" + missing);

  std::vector<double> errors;
  std::size_t exact = 0;
  errors.reserve(episodes.size());
  for (const auto& ep : episodes) {
    const auto& graph = graphs.at(ep.environment_id);
    const std::string guess = predict(ep);
    errors.push_back(geodesic_distance(graph, guess, ep.target_node));
    if (guess == ep.target_node) ++exact;
  }

  SplitMetrics m;
  m.count = episodes.size();
  // Summing sorted values keeps the aggregates independent of episode order.
  std::sort(errors.begin(), errors.end());
  for (double k : ks) {
    if (k < 0) throw ValidationError("accuracy threshold must be >= 0");
    const auto within = k == 0.0 ? exact
                                 : static_cast<std::size_t>(
                                       std::upper_bound(errors.begin(), errors.end(), k) -
                                       errors.begin());
    m.accuracy[k] = m.count ? static_cast<double>(within) / static_cast<double>(m.count) : 0.0;
  }
  if (m.count == 0) return m;
  const double n = static_cast<double>(m.count);
  m.le_mean = std::accumulate(errors.begin(), errors.end(), 0.0) / n;
  if (m.count > 1) {
    std::vector<double> sq;
    sq.reserve(errors.size());
    for (double e : errors) sq.push_back((e - m.le_mean) * (e - m.le_mean));
    std::sort(sq.begin(), sq.end());
    m.le_stderr = std::sqrt(std::accumulate(sq.begin(), sq.end(), 0.0) / (n - 1.0)) / std::sqrt(n);
  }
  return m;
}

std::string method_name(const std::string& model) {
  if (model == "random") return "Random";
  if (model == "center") return "Center";
  const auto ckpt = load_checkpoint(model);
  const auto& kind = ckpt.meta.model_kind;
  if (kind == "ledbert") return "LED-Bert";
  if (kind == "baseline:late_fusion") return "Late Fusion";
  if (kind == "baseline:attention") return "Attention";
  if (kind == "baseline:history_attention") return "Attention over History";
  if (kind == "baseline:gcn") return "GCN";
  return kind;
}

namespace {

template <typename Model>
std::shared_ptr<Model> restore(const Checkpoint& ckpt) {
  using Config = std::remove_cvref_t<decltype(std::declval<Model>().config())>;
  Config config;
  try {
    config = ckpt.meta.config.get<Config>();
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint config: ") + e.what());
  }
  return std::make_shared<Model>(config, ckpt.params);
}

}  // namespace

Predictor make_predictor(const std::string& model, const Dataset& data, std::uint64_t seed) {
  if (model == "random") {
    return [&data, seed](const Episode& ep) {
      std::mt19937_64 rng(derive_seed(seed, "random/" + ep.episode_id));
      return random_baseline(data.graphs.at(ep.environment_id), rng);
    };
  }
  if (model == "center") {
    return [&data](const Episode& ep) { return center_baseline(data.graphs.at(ep.environment_id)); };
  }
  const auto ckpt = load_checkpoint(model);
  if (ckpt.meta.model_kind == "ledbert") {
    auto net = restore<LedBert<float>>(ckpt);
    return [&data, net](const Episode& ep) {
      const auto ids =
          dialog_ids(ep.dialog, data.vocab, static_cast<std::size_t>(net->config().max_text_length));
      return net->predict(data.panos.at(ep.environment_id), ids);
    };
  }
  auto net = restore<BaselineModel<float>>(ckpt);
  return [&data, net](const Episode& ep) {
    const auto tokens = dialog_tokens(ep.dialog, data.vocab,
                                      static_cast<std::size_t>(net->config().max_text_length));
    EnvironmentView<float> view{&data.graphs.at(ep.environment_id),
                                data.panos.at(ep.environment_id)};
    return net->predict(view, tokens);
  };
}

std::vector<std::pair<std::string, double>> node_probabilities(const Checkpoint& ckpt,
                                                               const Dataset& data,
                                                               const Episode& ep) {
  const auto& panos = data.panos.at(ep.environment_id);
  std::vector<std::pair<std::string, double>> out;
  if (ckpt.meta.model_kind == "ledbert") {
    auto net = restore<LedBert<float>>(ckpt);
    const auto scores = net->score_environment(
        panos, dialog_ids(ep.dialog, data.vocab,
                          static_cast<std::size_t>(net->config().max_text_length)));
    for (std::size_t i = 0; i < scores.node_ids.size(); ++i) {
      out.emplace_back(scores.node_ids[i], scores.probabilities(static_cast<Eigen::Index>(i)));
    }
    return out;
  }
  auto net = restore<BaselineModel<float>>(ckpt);
  EnvironmentView<float> view{&data.graphs.at(ep.environment_id), panos};
  const auto p = net->probabilities(
      view, dialog_tokens(ep.dialog, data.vocab,
                          static_cast<std::size_t>(net->config().max_text_length)));
  for (std::size_t i = 0; i < panos.size(); ++i) {
    out.emplace_back(panos[i].node_id, p(static_cast<Eigen::Index>(i)));
  }
  return out;
}

// ---------------------------------------------------------------- reporting

ReportFormat parse_report_format(std::string_view s) {
  if (s == "markdown") return ReportFormat::markdown;
  if (s == "csv") return ReportFormat::csv;
  throw ValidationError("unknown report format '" + std::string(s) + "'");
}

namespace {

constexpr Split kReportSplits[] = {Split::val_seen, Split::val_unseen, Split::test};

std::string split_label(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val_seen: return "val-seen";
    case Split::val_unseen: return "val-unseen";
    case Split::test: return "test";
  }
  return "";
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> csv_split_line(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  if (quoted) throw DataError("unterminated quote in csv line");
  return fields;
}

constexpr const char* kCsvHeader = "method,split,count,le_mean,le_stderr,acc_0m_pct,acc_5m_pct";

}  // namespace

std::string render_report(const std::vector<EvalReport>& rows, ReportFormat format_kind) {
  for (const auto& r : rows) r.validate();
  std::string out;
  if (format_kind == ReportFormat::markdown) {
    out = "| Method |";
    std::string rule = "|---|";
    for (Split s : kReportSplits) {
      const auto l = split_label(s);
      out += " " + l + " LE↓ | " + l + " Acc@0m↑ | " + l + " Acc@5m↑ |";
      rule += "---:|---:|---:|";
    }
    out += "\n" + rule + "\n";
    for (const auto& r : rows) {
      out += "| " + r.method + " |";
      for (Split s : kReportSplits) {
        auto it = r.splits.find(s);
        if (it == r.splits.end()) {
          out += " - | - | - |";
          continue;
        }
        const auto& m = it->second;
        out += format(" %.2f ± %.2f | %.2f | %.2f |", m.le_mean, m.le_stderr, 100.0 * m.acc(0.0),
                      100.0 * m.acc(5.0));
      }
      out += "\n";
    }
    return out;
  }
  out = std::string(kCsvHeader) + "\n";
  for (const auto& r : rows) {
    for (Split s : kReportSplits) {
      auto it = r.splits.find(s);
      if (it == r.splits.end()) continue;
      const auto& m = it->second;
      out += csv_field(r.method) + "," + std::string(to_string(s)) +
             format(",%zu,%.2f,%.2f,%.2f,%.2f\n", m.count, m.le_mean, m.le_stderr,
                    100.0 * m.acc(0.0), 100.0 * m.acc(5.0));
    }
  }
  return out;
}

std::vector<EvalReport> parse_report_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw DataError("report csv: bad header");
  std::vector<EvalReport> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = csv_split_line(line);
    if (f.size() != 7) throw DataError(format("report csv line %zu: expected 7 fields", line_no));
    if (rows.empty() || rows.back().method != f[0]) rows.push_back({f[0], {}});
    SplitMetrics m;
    try {
      m.count = std::stoull(f[2]);
      m.le_mean = std::stod(f[3]);
      m.le_stderr = std::stod(f[4]);
      m.accuracy[0.0] = std::stod(f[5]) / 100.0;
      m.accuracy[5.0] = std::stod(f[6]) / 100.0;
    } catch (const std::exception&) {
      throw DataError(format("report csv line %zu: bad number", line_no));
    }
    rows.back().splits[parse_split(f[1])] = std::move(m);
  }
  return rows;
}

// ---------------------------------------------------------------- manifest

void write_manifest(const fs::path& path, const std::string& command, const json& config,
                    std::uint64_t seed, const std::vector<fs::path>& inputs,
                    const std::vector<fs::path>& outputs) {
  auto hashes = [](const std::vector<fs::path>& files) {
    json h = json::object();
    for (const auto& f : files) h[f.generic_string()] = file_hash(f);
    return h;
  };
  const json manifest = {{"command", command},
                         {"config", config},
                         {"config_hash", content_hash(config.dump())},
                         {"seed", seed},
                         {"inputs", hashes(inputs)},
                         {"outputs", hashes(outputs)}};
  write_file(path, manifest.dump(2) + "\n");
}

}  // namespace graphloc
