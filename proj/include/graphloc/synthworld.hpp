#pragma once

// Synthetic environments with a planted dialog <-> node alignment. Every node
// gets a room type and a few coloured objects in fixed panorama regions; its
// region vectors are codebook vectors for those attributes plus Gaussian
// noise. Dialogs come from a small template grammar that can be parsed back,
// so every episode can be checked against the node it was written for.

#include "graphloc/episodes.hpp"
#include "graphloc/features.hpp"
#include "graphloc/navgraph.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace graphloc {

struct WorldSpec {
  std::string environment_id = "env";
  int node_count = 12;
  std::vector<std::string> room_types = {"kitchen", "bedroom", "bathroom", "office",
                                         "hallway", "lounge",  "garage",   "laundry",
                                         "closet",  "dining"};
  std::vector<std::string> objects = {"chair", "table",  "couch", "lamp", "bed",  "sink",
                                      "door",  "shelf",  "plant", "rug",  "mirror", "desk"};
  std::vector<std::string> colors = {"red",   "blue",  "green", "yellow", "white",
                                     "black", "gray",  "brown", "orange", "purple"};
  int regions_per_node = 36;
  int feature_dim = 2048;
  double noise_sigma = 0.05;
  int objects_min = 2;
  int objects_max = 4;
  int grid_columns = 6;
  int grid_rows = 6;
  double grid_spacing = 3.0;  // meters
  double jitter = 0.4;        // meters
  double link_radius = 4.5;   // meters
  std::uint64_t seed = 0;
  /// Shared by every environment of a dataset so attribute vectors mean the
  /// same thing in seen and unseen environments.
  std::uint64_t codebook_seed = 0x5eedc0deULL;

  void validate() const;
};

/// One feature vector per attribute value (one row each).
struct Codebook {
  Eigen::MatrixXf rooms;
  Eigen::MatrixXf objects;
  Eigen::MatrixXf colors;
};

/// Rows are scaled to norm sqrt(feature_dim). Throws ValidationError when the
/// pairwise cosine bound (< 0.2) cannot be met.
Codebook make_codebook(const WorldSpec& spec);

struct RegionAttributes {
  int object = -1;  // -1: background only
  int color = -1;
};

struct NodeAttributes {
  int room = 0;
  std::vector<RegionAttributes> regions;  // one per panorama region
};

struct SynthEnvironment {
  WorldSpec spec;
  NavGraph graph;
  std::vector<NodeAttributes> attributes;  // parallel to graph.nodes()
  FeatureStore observations;
  Codebook codebook;
};

SynthEnvironment generate_environment(const WorldSpec& spec);

/// Attribute claims a dialog makes about the observer's node.
struct Claims {
  std::optional<int> room;
  std::vector<std::pair<int, int>> objects;  // (object, color)
  std::vector<int> neighbor_rooms;
};

/// Node indices whose attributes satisfy every claim.
std::vector<std::size_t> matching_nodes(const SynthEnvironment& env, const Claims& claims);

/// Templated 2-4 message dialog about a uniformly drawn target node; the
/// mentioned attributes always single out the target.
Episode generate_episode(const SynthEnvironment& env, std::mt19937_64& rng,
                         std::string episode_id = "ep", Split split = Split::train);

/// Parses the claims back out of a generated dialog. Throws ValidationError
/// when a sentence is not produced by the template grammar.
Claims parse_claims(const SynthEnvironment& env, const Dialog& dialog);

/// The unique node matching the dialog, or nullopt when zero or several match.
std::optional<std::string> oracle_locate(const SynthEnvironment& env, const Episode& episode);

/// Single-message caption of one node, for alignment pretraining.
Dialog generate_caption(const SynthEnvironment& env, std::size_t node, std::mt19937_64& rng);

/// Single-message navigation instruction ending at one node, for alignment
/// pretraining.
Dialog generate_instruction(const SynthEnvironment& env, std::size_t node, std::mt19937_64& rng);

}  // namespace graphloc
