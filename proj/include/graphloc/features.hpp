#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace graphloc {

/// Angular extent of one panorama region. Corner x-coordinates are headings
/// and y-coordinates elevations; `area` is the fraction of the equirectangular
/// panorama the region covers.
struct RegionBox {
  double tl_heading = 0.0;
  double tl_elevation = 0.0;
  double br_heading = 0.0;
  double br_elevation = 0.0;
  double area = 0.0;
  double center_elevation = 0.0;

  friend bool operator==(const RegionBox&, const RegionBox&) = default;
};

struct RegionFeature {
  Eigen::VectorXf visual;
  RegionBox box;
};

struct PanoObservation {
  std::string node_id;
  std::vector<RegionFeature> regions;
};

using FeatureStore = std::map<std::string, PanoObservation>;

inline constexpr int kSpatialDim = 11;
using SpatialCode = Eigen::Matrix<double, kSpatialDim, 1>;

/// [cos,sin] of tl heading, tl elevation, br heading, br elevation, then area,
/// then [cos,sin] of the center elevation.
SpatialCode encode_region_spatial(const RegionBox& box);

/// Throws ValidationError for an area outside [0,1] or elevations beyond +-pi/2.
void validate_box(const RegionBox& box);

/// Tiles the full panorama into `k` equal regions: 3 elevation bands when k is
/// divisible by 3 (12 x 3 for k = 36), otherwise a single band of k headings.
std::vector<RegionBox> panorama_grid(int k);

/// Stacked visual vectors (k x feature_dim) and spatial codes (k x 11).
Eigen::MatrixXf visual_matrix(const PanoObservation& pano);
Eigen::MatrixXd spatial_matrix(const PanoObservation& pano);

/// One-line JSON header followed by a little-endian float32 payload of shape
/// nodes x k x d_v in header node order.
FeatureStore load_feature_store(const std::filesystem::path& path);
void save_feature_store(const FeatureStore& store, const std::filesystem::path& path);

}  // namespace graphloc
