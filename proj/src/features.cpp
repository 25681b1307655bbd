#include "graphloc/features.hpp"

#include "graphloc/error.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>

namespace graphloc {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "feature stores are written with the host byte order");

SpatialCode encode_region_spatial(const RegionBox& box) {
  SpatialCode s;
  s << std::cos(box.tl_heading), std::sin(box.tl_heading), std::cos(box.tl_elevation),
      std::sin(box.tl_elevation), std::cos(box.br_heading), std::sin(box.br_heading),
      std::cos(box.br_elevation), std::sin(box.br_elevation), box.area,
      std::cos(box.center_elevation), std::sin(box.center_elevation);
  return s;
}

void validate_box(const RegionBox& box) {
  constexpr double half_pi = std::numbers::pi / 2.0;
  if (!(box.area >= 0.0 && box.area <= 1.0)) throw ValidationError("region area outside [0,1]");
  for (double e : {box.tl_elevation, box.br_elevation, box.center_elevation}) {
    if (!(std::abs(e) <= half_pi)) throw ValidationError("region elevation outside [-pi/2, pi/2]");
  }
  if (!std::isfinite(box.tl_heading) || !std::isfinite(box.br_heading)) {
    throw ValidationError("non-finite region heading");
  }
}

std::vector<RegionBox> panorama_grid(int k) {
  if (k < 1) throw ValidationError("panorama grid needs k >= 1");
  const int bands = k % 3 == 0 ? 3 : 1;
  const int columns = k / bands;
  const double dh = 2.0 * std::numbers::pi / columns;
  const double de = std::numbers::pi / bands;
  std::vector<RegionBox> boxes;
  boxes.reserve(static_cast<std::size_t>(k));
  for (int b = 0; b < bands; ++b) {
    const double top = std::numbers::pi / 2.0 - b * de;
    const double bottom = top - de;
    for (int c = 0; c < columns; ++c) {
      RegionBox box;
      box.tl_heading = c * dh;
      box.br_heading = (c + 1) * dh;
      box.tl_elevation = top;
      box.br_elevation = bottom;
      box.area = 1.0 / k;
      box.center_elevation = 0.5 * (top + bottom);
      boxes.push_back(box);
    }
  }
  return boxes;
}

Eigen::MatrixXf visual_matrix(const PanoObservation& pano) {
  if (pano.regions.empty()) return {};
  const auto dim = pano.regions.front().visual.size();
  Eigen::MatrixXf m(static_cast<Eigen::Index>(pano.regions.size()), dim);
  for (std::size_t r = 0; r < pano.regions.size(); ++r) {
    m.row(static_cast<Eigen::Index>(r)) = pano.regions[r].visual.transpose();
  }
  return m;
}

Eigen::MatrixXd spatial_matrix(const PanoObservation& pano) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(pano.regions.size()), kSpatialDim);
  for (std::size_t r = 0; r < pano.regions.size(); ++r) {
    m.row(static_cast<Eigen::Index>(r)) = encode_region_spatial(pano.regions[r].box).transpose();
  }
  return m;
}

FeatureStore load_feature_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature store " + path.string());
  std::string header_line;
  if (!std::getline(in, header_line)) throw DataError("feature store " + path.string() + " is empty");

  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::exception& e) {
    throw ValidationError("malformed feature store header in " + path.string() + ": " + e.what());
  }

  FeatureStore store;
  try {
    const auto dim = header.at("d_v").get<long>();
    const auto k = header.at("k").get<long>();
    const auto ids = header.at("nodes").get<std::vector<std::string>>();
    const auto& boxes = header.at("boxes");
    if (dim < 1 || k < 1) throw ValidationError("feature store with non-positive d_v or k");
    const auto expected_boxes = static_cast<std::size_t>(k) * ids.size();
    if (boxes.size() != expected_boxes) {
      throw DataError("feature store " + path.string() + ": header lists " +
                      std::to_string(boxes.size()) + " boxes, expected " +
                      std::to_string(expected_boxes));
    }

    const auto payload_start = in.tellg();
    in.seekg(0, std::ios::end);
    const auto payload_bytes = static_cast<std::uintmax_t>(in.tellg() - payload_start);
    const std::uintmax_t expected_bytes =
        static_cast<std::uintmax_t>(ids.size()) * static_cast<std::uintmax_t>(k) *
        static_cast<std::uintmax_t>(dim) * sizeof(float);
    if (payload_bytes != expected_bytes) {
      throw DataError("feature store " + path.string() + ": payload has " +
                      std::to_string(payload_bytes) + " bytes, header implies " +
                      std::to_string(expected_bytes));
    }
    in.seekg(payload_start);

    std::size_t box_index = 0;
    for (const auto& id : ids) {
      PanoObservation pano;
      pano.node_id = id;
      pano.regions.resize(static_cast<std::size_t>(k));
      for (auto& region : pano.regions) {
        const auto& jb = boxes[box_index++];
        if (jb.size() != 6) throw ValidationError("region boxes must have 6 fields");
        region.box = {jb[0].get<double>(), jb[1].get<double>(), jb[2].get<double>(),
                      jb[3].get<double>(), jb[4].get<double>(), jb[5].get<double>()};
        region.visual.resize(dim);
        in.read(reinterpret_cast<char*>(region.visual.data()),
                static_cast<std::streamsize>(dim * sizeof(float)));
      }
      if (!store.emplace(id, std::move(pano)).second) {
        throw ValidationError("duplicate node '" + id + "' in feature store");
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError("malformed feature store header in " + path.string() + ": " + e.what());
  }
  return store;
}

void save_feature_store(const FeatureStore& store, const std::filesystem::path& path) {
  long dim = 0;
  long k = 0;
  if (!store.empty()) {
    const auto& first = store.begin()->second;
    k = static_cast<long>(first.regions.size());
    dim = k > 0 ? static_cast<long>(first.regions.front().visual.size()) : 0;
  }
  json ids = json::array();
  json boxes = json::array();
  for (const auto& [id, pano] : store) {
    if (static_cast<long>(pano.regions.size()) != k) {
      throw ValidationError("node '" + id + "' has a different region count");
    }
    ids.push_back(id);
    for (const auto& r : pano.regions) {
      if (r.visual.size() != dim) throw ValidationError("node '" + id + "' has a mismatched feature dim");
      const auto& b = r.box;
      boxes.push_back({b.tl_heading, b.tl_elevation, b.br_heading, b.br_elevation, b.area,
                       b.center_elevation});
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write feature store " + path.string());
  out << json{{"d_v", dim}, {"k", k}, {"nodes", std::move(ids)}, {"boxes", std::move(boxes)}}.dump()
      << '\n';
  for (const auto& [id, pano] : store) {
    for (const auto& r : pano.regions) {
      out.write(reinterpret_cast<const char*>(r.visual.data()),
                static_cast<std::streamsize>(dim * sizeof(float)));
    }
  }
}

}  // namespace graphloc
