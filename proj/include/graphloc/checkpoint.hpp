#pragma once

// Checkpoint container shared by LED-Bert and the baselines: one line of JSON
// (format tag, model kind, stage, seed, config, tensor manifest) followed by
// the tensors as little-endian float32 in manifest order.

#include "graphloc/autodiff.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace graphloc {

struct CheckpointMeta {
  std::string model_kind;  // "ledbert" or "baseline:<name>"
  std::string stage;
  std::uint64_t seed = 0;
  nlohmann::json config;
};

struct Checkpoint {
  CheckpointMeta meta;
  autodiff::ParameterSet<float> params;
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointMeta& meta,
                     const autodiff::ParameterSet<float>& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies every tensor of `source` whose name also exists in `target`.
/// Throws ValidationError listing each tensor whose shape differs, and each
/// tensor of `target` absent from `source` when `require_all` is set.
void transfer_parameters(autodiff::ParameterSet<float>& target,
                         const autodiff::ParameterSet<float>& source, bool require_all);

}  // namespace graphloc
