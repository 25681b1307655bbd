#include "graphloc/error.hpp"
#include "graphloc/features.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

using namespace graphloc;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

RegionBox random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> heading(-10.0, 10.0);
  std::uniform_real_distribution<double> elev(-std::numbers::pi / 2, std::numbers::pi / 2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  return {heading(rng), elev(rng), heading(rng), elev(rng), unit(rng), elev(rng)};
}

FeatureStore random_store(std::mt19937_64& rng, int nodes, int k, int dim) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  const auto grid = panorama_grid(k);
  FeatureStore store;
  for (int i = 0; i < nodes; ++i) {
    PanoObservation p;
    p.node_id = "node" + std::to_string(i);
    for (int r = 0; r < k; ++r) {
      Eigen::VectorXf v(dim);
      for (int c = 0; c < dim; ++c) v(c) = n(rng);
      p.regions.push_back({v, grid[static_cast<std::size_t>(r)]});
    }
    store.emplace(p.node_id, std::move(p));
  }
  return store;
}

void expect_bit_identical(const FeatureStore& a, const FeatureStore& b) {
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [id, pano] : a) {
    const auto& other = b.at(id);
    ASSERT_EQ(pano.regions.size(), other.regions.size());
    for (std::size_t r = 0; r < pano.regions.size(); ++r) {
      EXPECT_EQ(pano.regions[r].box, other.regions[r].box);
      const auto& x = pano.regions[r].visual;
      const auto& y = other.regions[r].visual;
      ASSERT_EQ(x.size(), y.size());
      EXPECT_EQ(std::memcmp(x.data(), y.data(), sizeof(float) * static_cast<std::size_t>(x.size())), 0);
    }
  }
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("graphloc_test_" + name);
}

}  // namespace

TEST(Spatial, ZeroAnglesFullArea) {
  const auto s = encode_region_spatial({0, 0, 0, 0, 1, 0});
  SpatialCode expected;
  expected << 1, 0, 1, 0, 1, 0, 1, 0, 1, 1, 0;
  EXPECT_EQ(s, expected);
}

TEST(Spatial, HeadingPeriodic) {
  const auto a = encode_region_spatial({0, 0.2, 0.5, -0.1, 0.3, 0.05});
  const auto b = encode_region_spatial({kTwoPi, 0.2, 0.5 + kTwoPi, -0.1, 0.3, 0.05});
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Spatial, RandomBoxProperties) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 10000; ++i) {
    const auto box = random_box(rng);
    const auto s = encode_region_spatial(box);
    ASSERT_EQ(s.size(), 11);
    for (int pair : {0, 2, 4, 6, 9}) {
      EXPECT_NEAR(std::hypot(s(pair), s(pair + 1)), 1.0, 1e-12);
    }
    EXPECT_GE(s(8), 0.0);
    EXPECT_LE(s(8), 1.0);
    EXPECT_LE(s.cwiseAbs().maxCoeff(), 1.0);
    RegionBox shifted = box;
    shifted.tl_heading += kTwoPi;
    shifted.br_heading -= kTwoPi;
    EXPECT_LT((encode_region_spatial(shifted) - s).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Spatial, InvalidBoxes) {
  EXPECT_THROW(validate_box({0, 0, 0, 0, 1.5, 0}), ValidationError);
  EXPECT_THROW(validate_box({0, 2.0, 0, 0, 0.5, 0}), ValidationError);
  EXPECT_NO_THROW(validate_box({0, 0.1, 1, -0.1, 0.5, 0}));
}

TEST(Grid, CoversPanorama) {
  for (int k : {1, 5, 12, 36}) {
    const auto grid = panorama_grid(k);
    ASSERT_EQ(grid.size(), static_cast<std::size_t>(k));
    double area = 0.0;
    for (const auto& b : grid) {
      EXPECT_NO_THROW(validate_box(b));
      area += b.area;
    }
    EXPECT_NEAR(area, 1.0, 1e-12);
  }
}

TEST(Grid, MatricesHaveExpectedShapes) {
  std::mt19937_64 rng(4);
  const auto store = random_store(rng, 1, 36, 8);
  const auto& pano = store.begin()->second;
  EXPECT_EQ(visual_matrix(pano).rows(), 36);
  EXPECT_EQ(visual_matrix(pano).cols(), 8);
  EXPECT_EQ(spatial_matrix(pano).cols(), kSpatialDim);
}

TEST(FeatureStore, RoundTripBitExact) {
  std::mt19937_64 rng(6);
  const auto store = random_store(rng, 3, 4, 5);
  const auto path = temp_file("features.bin");
  save_feature_store(store, path);
  expect_bit_identical(store, load_feature_store(path));
}

TEST(FeatureStore, TruncatedPayload) {
  std::mt19937_64 rng(8);
  const auto path = temp_file("features_truncated.bin");
  save_feature_store(random_store(rng, 2, 3, 4), path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  EXPECT_THROW(load_feature_store(path), DataError);
}

TEST(FeatureStore, LargestEnvironment) {
  std::mt19937_64 rng(10);
  const auto store = random_store(rng, 345, 36, 16);
  const auto path = temp_file("features_large.bin");
  save_feature_store(store, path);
  const auto loaded = load_feature_store(path);
  EXPECT_EQ(loaded.size(), 345u);
  expect_bit_identical(store, loaded);
}
