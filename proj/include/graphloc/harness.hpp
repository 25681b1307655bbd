#pragma once

// Experiment pipeline: data generation through to report tables.

#include "graphloc/baselines.hpp"
#include "graphloc/checkpoint.hpp"
#include "graphloc/episodes.hpp"
#include "graphloc/features.hpp"
#include "graphloc/ledbert.hpp"
#include "graphloc/navgraph.hpp"
#include "graphloc/optim.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace graphloc {

// ---------------------------------------------------------------- data

struct DatasetConfig {
  std::uint64_t seed = 0;
  int node_count = 12;
  int feature_dim = 64;
  int regions_per_node = 36;
  double noise_sigma = 0.05;
  int seen_environments = 10;     // train + val_seen
  int unseen_environments = 5;    // val_unseen
  int test_environments = 5;      // test
  int pretrain_environments = 5;  // captions and instructions only
  int train_episodes = 2000;
  int val_seen_episodes = 200;
  int val_unseen_episodes = 200;
  int test_episodes = 200;
  int captions_per_node = 4;
  int instructions_per_node = 4;

  void validate() const;
  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

void to_json(nlohmann::json& j, const DatasetConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);

/// Deterministic 64-bit seed for a named sub-stream of `base`.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);

/// 64-bit FNV-1a of a byte string / file, as 16 hex digits.
std::string content_hash(std::string_view bytes);
std::string file_hash(const std::filesystem::path& path);

/// Writes graphs/<env>.json, features/<env>.bin, episodes.jsonl,
/// captions.jsonl, instructions.jsonl, vocab.json and dataset.json.
void generate_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);

struct Dataset {
  std::filesystem::path root;
  DatasetConfig config;
  Vocabulary vocab;
  std::map<std::string, NavGraph> graphs;
  std::map<std::string, std::vector<PanoTensor<float>>> panos;  // sorted by node id
  std::vector<Episode> episodes;
  std::vector<Episode> captions;
  std::vector<Episode> instructions;

  std::vector<Episode> split(Split s) const;
  /// Throws DataError naming the episode when its environment or node is unknown.
  std::size_t target_index(const Episode& ep) const;
};

Dataset load_dataset(const std::filesystem::path& dir);

/// Dialog tokens as LED-Bert and the baselines read them, truncated to the
/// most recent `max_length`.
std::vector<TokenId> dialog_ids(const Dialog& dialog, const Vocabulary& vocab,
                                std::size_t max_length);

// ---------------------------------------------------------------- training

enum class Stage { s1_text_mlm, s2_align, s3_align, s4_finetune, baseline };

struct TrainConfig {
  Stage stage = Stage::s4_finetune;
  BaselineKind baseline_kind = BaselineKind::late_fusion;
  std::string data_dir = "data";
  std::string init_checkpoint;  // empty: fresh initialisation
  std::string output_checkpoint = "model.ckpt";
  std::string log_path;  // empty: <output_checkpoint>.loss.csv
  OptimizerConfig optimizer;
  int epochs = 1;
  int batch_size = 8;
  long max_steps = 0;  // 0: no limit
  std::uint64_t seed = 0;
  /// Stage 4: 0 scores every node, otherwise the target plus this many
  /// sampled distractors.
  int negative_samples = 0;
  // vocab_size and feature_dim of 0 are filled from the data.
  LedBertConfig model = [] {
    LedBertConfig c;
    c.feature_dim = 0;
    return c;
  }();
  BaselineConfig baseline = [] {
    BaselineConfig c;
    c.feature_dim = 0;
    return c;
  }();

  void validate() const;
};

/// "s1".."s4" or "baseline:<name>".
std::string stage_tag(Stage stage, BaselineKind kind);
void parse_stage_tag(std::string_view tag, Stage& stage, BaselineKind& kind);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Applies "a.b.c=value" to a JSON object. The value is parsed as JSON when
/// possible and taken as a string otherwise.
void apply_override(nlohmann::json& j, std::string_view assignment);

struct StageResult {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::vector<double> losses;  // one per optimizer step
};

/// Trains one stage and writes the checkpoint, the loss log and a manifest
/// (<checkpoint>.manifest.json).
StageResult run_stage(const TrainConfig& config, const Dataset& data);

// ---------------------------------------------------------------- evaluation

using Predictor = std::function<std::string(const Episode&)>;

struct SplitMetrics {
  std::size_t count = 0;
  double le_mean = 0.0;
  double le_stderr = 0.0;
  std::map<double, double> accuracy;  // k meters -> fraction

  double acc(double k) const;
};

struct EvalReport {
  std::string method;
  std::map<Split, SplitMetrics> splits;

  /// Throws ValidationError unless accuracies lie in [0,1] and never drop as k grows.
  void validate() const;
};

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

/// Localization error statistics of `predict` on `episodes`. Aggregates do
/// not depend on episode order.
SplitMetrics evaluate(const Predictor& predict, const std::map<std::string, NavGraph>& graphs,
                      const std::vector<Episode>& episodes,
                      const std::vector<double>& ks = {0.0, 5.0});

/// Predictor for a checkpoint, or for "random" / "center".
Predictor make_predictor(const std::string& model, const Dataset& data, std::uint64_t seed = 0);
/// Human-readable method name for a checkpoint path or "random" / "center".
std::string method_name(const std::string& model);

/// Node probabilities (lexicographic node order) for one episode.
std::vector<std::pair<std::string, double>> node_probabilities(const Checkpoint& ckpt,
                                                               const Dataset& data,
                                                               const Episode& ep);

enum class ReportFormat { markdown, csv };
ReportFormat parse_report_format(std::string_view s);

std::string render_report(const std::vector<EvalReport>& rows, ReportFormat format);
/// Inverse of the csv rendering.
std::vector<EvalReport> parse_report_csv(std::string_view text);

// ---------------------------------------------------------------- manifest

/// Writes a JSON manifest recording the run's config and seed alongside
/// content hashes of its inputs and outputs.
void write_manifest(const std::filesystem::path& path, const std::string& command,
                    const nlohmann::json& config, std::uint64_t seed,
                    const std::vector<std::filesystem::path>& inputs,
                    const std::vector<std::filesystem::path>& outputs);

}  // namespace graphloc
