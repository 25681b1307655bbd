#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace graphloc {

struct Pose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double heading = 0.0;    // [0, 2pi)
  double elevation = 0.0;  // [-pi/2, pi/2]
};

struct NavNode {
  std::string id;
  Pose pose;
  int floor_index = 0;
};

struct NavEdge {
  std::string a;
  std::string b;
  double length = 0.0;
};

/// Undirected navigation graph. Nodes are kept sorted by id, so node indices
/// follow lexicographic id order everywhere in the library.
class NavGraph {
 public:
  NavGraph() = default;

  /// Validates and builds a graph. Edge lengths are recomputed from the
  /// endpoint positions; a supplied non-zero length must agree to 1e-6
  /// relative.
  NavGraph(std::string environment_id, std::vector<NavNode> nodes,
           std::vector<NavEdge> edges);

  const std::string& environment_id() const { return environment_id_; }
  const std::vector<NavNode>& nodes() const { return nodes_; }
  const std::vector<NavEdge>& edges() const { return edges_; }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

  bool contains(std::string_view id) const;
  /// Index into nodes(); throws DataError naming the id when absent.
  std::size_t index_of(std::string_view id) const;
  const NavNode& node(std::string_view id) const { return nodes_[index_of(id)]; }

  /// (neighbor index, edge length) per node.
  const std::vector<std::vector<std::pair<std::size_t, double>>>& adjacency() const {
    return adjacency_;
  }

  bool is_connected() const;

  friend bool operator==(const NavGraph& lhs, const NavGraph& rhs);

 private:
  std::string environment_id_;
  std::vector<NavNode> nodes_;
  std::vector<NavEdge> edges_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::vector<std::vector<std::pair<std::size_t, double>>> adjacency_;
};

inline constexpr double kUnreachable = std::numeric_limits<double>::infinity();

/// Shortest-path length along edges (Dijkstra). +inf when disconnected.
double geodesic_distance(const NavGraph& graph, std::string_view a, std::string_view b);

/// Single-source Dijkstra over node indices.
std::vector<double> geodesic_distances_from(const NavGraph& graph, std::size_t source);

/// All-pairs table built from repeated Dijkstra; row/col order = nodes().
Eigen::MatrixXd geodesic_distance_matrix(const NavGraph& graph);

/// Closest node by Euclidean distance; ties go to the smallest id.
std::string snap_to_node(const NavGraph& graph, const Eigen::Vector3d& point);

/// Node closest to the mean node position.
std::string centroid_node(const NavGraph& graph);

NavGraph load_graph(const std::filesystem::path& path);
void save_graph(const NavGraph& graph, const std::filesystem::path& path);

}  // namespace graphloc
