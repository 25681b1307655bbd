#include "graphloc/checkpoint.hpp"

#include "graphloc/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace graphloc {

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

namespace {
constexpr const char* kFormat = "graphloc-checkpoint-1";
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointMeta& meta,
                     const autodiff::ParameterSet<float>& params) {
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& p : params) {
    tensors.push_back({{"name", p.name},
                       {"shape", {p.value.rows(), p.value.cols()}},
                       {"offset", offset}});
    offset += static_cast<std::size_t>(p.value.size()) * sizeof(float);
  }
  const nlohmann::json header = {{"format", kFormat},       {"model_kind", meta.model_kind},
                                 {"stage", meta.stage},     {"seed", meta.seed},
                                 {"config", meta.config},   {"tensors", tensors},
                                 {"payload_bytes", offset}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << header.dump() << '\n';
  for (const auto& p : params) {
    // Row-major storage matches the manifest's row/column order.
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(float)));
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string line;
  std::getline(in, line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad checkpoint header: " + e.what());
  }
  if (header.value("format", "") != kFormat) {
    throw DataError(path.string() + ": not a graphloc checkpoint");
  }
  const std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (payload.size() != header.at("payload_bytes").get<std::size_t>()) {
    throw DataError(path.string() + ": payload is " + std::to_string(payload.size()) +
                    " bytes, header says " + header.at("payload_bytes").dump());
  }

  Checkpoint ckpt;
  ckpt.meta.model_kind = header.at("model_kind").get<std::string>();
  ckpt.meta.stage = header.at("stage").get<std::string>();
  ckpt.meta.seed = header.at("seed").get<std::uint64_t>();
  ckpt.meta.config = header.at("config");
  for (const auto& t : header.at("tensors")) {
    const auto rows = t.at("shape").at(0).get<Eigen::Index>();
    const auto cols = t.at("shape").at(1).get<Eigen::Index>();
    const auto offset = t.at("offset").get<std::size_t>();
    const auto bytes = static_cast<std::size_t>(rows * cols) * sizeof(float);
    if (rows < 0 || cols < 0 || offset + bytes > payload.size()) {
      throw DataError(path.string() + ": tensor " + t.at("name").get<std::string>() +
                      " lies outside the payload");
    }
    autodiff::Matrix<float> value(rows, cols);
    std::memcpy(value.data(), payload.data() + offset, bytes);
    ckpt.params.add(t.at("name").get<std::string>(), std::move(value));
  }
  return ckpt;
}

void transfer_parameters(autodiff::ParameterSet<float>& target,
                         const autodiff::ParameterSet<float>& source, bool require_all) {
  std::string problems;
  for (const auto& p : target) {
    if (!source.contains(p.name)) {
      if (require_all) problems += "\n  " + p.name + ": missing from checkpoint";
      continue;
    }
    const auto& s = source[p.name].value;
    if (s.rows() != p.value.rows() || s.cols() != p.value.cols()) {
      problems += "\n  " + p.name + ": checkpoint has " + std::to_string(s.rows()) + "x" +
                  std::to_string(s.cols()) + ", model expects " + std::to_string(p.value.rows()) +
                  "x" + std::to_string(p.value.cols());
    }
  }
  if (!problems.empty()) throw ValidationError("checkpoint does not fit the model:" + problems);
  for (auto& p : target) {
    if (source.contains(p.name)) p.value = source[p.name].value;
  }
}

}  // namespace graphloc
