// graphloc command-line entry point.

#include "graphloc/error.hpp"
#include "graphloc/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace graphloc;

namespace {

json read_config(const std::string& path, const std::vector<std::string>& overrides) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read config " + path);
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ValidationError(path + ": " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(j, o);
  if (const char* seed = std::getenv("GRAPHLOC_SEED"); seed && *seed) {
    try {
      std::size_t used = 0;
      j["seed"] = std::stoull(seed, &used);
      if (used != std::string_view(seed).size()) throw std::invalid_argument(seed);
    } catch (const std::logic_error&) {
      throw ValidationError(std::string("GRAPHLOC_SEED is not an unsigned integer: ") + seed);
    }
  }
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

std::vector<Split> parse_splits(const std::string& s) {
  if (s == "all") return {Split::val_seen, Split::val_unseen, Split::test};
  return {parse_split(s)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dialog-based localization on navigation graphs"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;

  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  std::string gen_out = "data";
  gen->add_option("--out", gen_out, "Output directory")->capture_default_str();
  gen->add_option("--config", config_path, "Dataset config (JSON)");
  gen->add_option("--set", overrides, "Override a config field, key=value");

  auto* train = app.add_subcommand("train", "Run one training stage");
  std::string stage;
  std::string train_data;
  std::string init;
  std::string train_out;
  train->add_option("--stage", stage, "s1, s2, s3, s4 or baseline:<name>");
  train->add_option("--config", config_path, "Training config (JSON)");
  train->add_option("--set", overrides, "Override a config field, key=value");
  train->add_option("--data", train_data, "Dataset directory");
  train->add_option("--init", init, "Checkpoint to start from");
  train->add_option("--out", train_out, "Checkpoint to write");

  auto* eval = app.add_subcommand("evaluate", "Evaluate a model on a split");
  std::string model;
  std::string split = "all";
  std::string eval_data = "data";
  std::string eval_out;
  std::string method;
  std::uint64_t eval_seed = 0;
  eval->add_option("--model", model, "Checkpoint path, 'random' or 'center'")->required();
  eval->add_option("--split", split, "val_seen, val_unseen, test or all")->capture_default_str();
  eval->add_option("--data", eval_data, "Dataset directory")->capture_default_str();
  eval->add_option("--out", eval_out, "Write the report JSON here instead of stdout");
  eval->add_option("--name", method, "Method name in reports");
  eval->add_option("--seed", eval_seed, "Seed of the random baseline");

  auto* pred = app.add_subcommand("predict", "Predict the location for one episode");
  std::string episode_id;
  std::string pred_model;
  std::string pred_data = "data";
  pred->add_option("--episode", episode_id, "Episode id")->required();
  pred->add_option("--model", pred_model, "Checkpoint path")->required();
  pred->add_option("--data", pred_data, "Dataset directory")->capture_default_str();

  auto* report = app.add_subcommand("report", "Render evaluation reports as a table");
  std::string report_format = "markdown";
  std::vector<std::string> report_inputs;
  std::string report_out;
  report->add_option("--format", report_format, "markdown or csv")->capture_default_str();
  report->add_option("--input", report_inputs, "Report JSON files from evaluate")->required();
  report->add_option("--out", report_out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      const json j = read_config(config_path, overrides);
      DatasetConfig cfg;
      try {
        cfg = j.get<DatasetConfig>();
      } catch (const json::exception& e) {
        throw ValidationError(std::string("dataset config: ") + e.what());
      }
      generate_dataset(cfg, gen_out);
      write_manifest(fs::path(gen_out) / "manifest.json", "generate", cfg, cfg.seed, {},
                     {fs::path(gen_out) / "dataset.json", fs::path(gen_out) / "vocab.json",
                      fs::path(gen_out) / "episodes.jsonl", fs::path(gen_out) / "captions.jsonl",
                      fs::path(gen_out) / "instructions.jsonl"});
      std::cout << "wrote dataset to " << gen_out << "\n";
    } else if (*train) {
      json j = read_config(config_path, overrides);
      if (!stage.empty()) j["stage"] = stage;
      if (!train_data.empty()) j["data_dir"] = train_data;
      if (!init.empty()) j["init_checkpoint"] = init;
      if (!train_out.empty()) j["output_checkpoint"] = train_out;
      const auto cfg = train_config_from_json(j);
      const auto data = load_dataset(cfg.data_dir);
      const auto result = run_stage(cfg, data);
      std::cout << "stage " << stage_tag(cfg.stage, cfg.baseline_kind) << ": "
                << result.losses.size() << " steps, final loss "
                << (result.losses.empty() ? 0.0 : result.losses.back()) << "\n"
                << "checkpoint " << result.checkpoint.string() << "\n";
    } else if (*eval) {
      const auto data = load_dataset(eval_data);
      const auto predict = make_predictor(model, data, eval_seed);
      EvalReport r;
      r.method = method.empty() ? method_name(model) : method;
      for (Split s : parse_splits(split)) r.splits[s] = evaluate(predict, data.graphs, data.split(s));
      const std::string text = to_json(r).dump(2) + "\n";
      write_text(eval_out, text);
      if (!eval_out.empty() && eval_out != "-") {
        std::vector<fs::path> inputs = {fs::path(eval_data) / "dataset.json",
                                        fs::path(eval_data) / "episodes.jsonl"};
        if (model != "random" && model != "center") inputs.emplace_back(model);
        write_manifest(eval_out + ".manifest.json", "evaluate",
                       {{"model", model}, {"split", split}, {"seed", eval_seed}}, eval_seed, inputs,
                       {eval_out});
      }
    } else if (*pred) {
      const auto data = load_dataset(pred_data);
      const Episode* ep = nullptr;
      for (const auto& e : data.episodes) {
        if (e.episode_id == episode_id) ep = &e;
      }
      if (!ep) throw DataError("no episode '" + episode_id + "' in " + pred_data);
      const auto ckpt = load_checkpoint(pred_model);
      const auto probs = node_probabilities(ckpt, data, *ep);
      const std::string guess = make_predictor(pred_model, data)(*ep);
      json p = json::object();
      for (const auto& [id, prob] : probs) p[id] = prob;
      const json out = {
          {"episode_id", ep->episode_id},
          {"environment_id", ep->environment_id},
          {"predicted", guess},
          {"target", ep->target_node},
          {"localization_error",
           geodesic_distance(data.graphs.at(ep->environment_id), guess, ep->target_node)},
          {"probabilities", p}};
      std::cout << out.dump(2) << "\n";
    } else if (*report) {
      std::vector<EvalReport> rows;
      for (const auto& path : report_inputs) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot read " + path);
        json j;
        try {
          j = json::parse(in);
        } catch (const json::exception& e) {
          throw DataError(path + ": " + e.what());
        }
        rows.push_back(eval_report_from_json(j));
      }
      write_text(report_out, render_report(rows, parse_report_format(report_format)));
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
