#include "graphloc/navgraph.hpp"

#include "graphloc/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <queue>
#include <set>

namespace graphloc {

using nlohmann::json;

namespace {

void check_pose(const NavNode& node) {
  const Pose& p = node.pose;
  if (!p.position.allFinite()) {
    throw ValidationError("node '" + node.id + "': non-finite position");
  }
  if (!(p.heading >= 0.0 && p.heading < 2.0 * std::numbers::pi)) {
    throw ValidationError("node '" + node.id + "': heading outside [0, 2pi)");
  }
  if (!(std::abs(p.elevation) <= std::numbers::pi / 2.0)) {
    throw ValidationError("node '" + node.id + "': elevation outside [-pi/2, pi/2]");
  }
  if (node.floor_index < 0) {
    throw ValidationError("node '" + node.id + "': negative floor index");
  }
}

}  // namespace

NavGraph::NavGraph(std::string environment_id, std::vector<NavNode> nodes,
                   std::vector<NavEdge> edges)
    : environment_id_(std::move(environment_id)), nodes_(std::move(nodes)) {
  if (nodes_.empty()) throw ValidationError("graph '" + environment_id_ + "' has no nodes");
  std::sort(nodes_.begin(), nodes_.end(),
            [](const NavNode& x, const NavNode& y) { return x.id < y.id; });
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].id.empty()) throw ValidationError("node with empty id");
    check_pose(nodes_[i]);
    if (!index_.emplace(nodes_[i].id, i).second) {
      throw ValidationError("duplicate node id '" + nodes_[i].id + "'");
    }
  }

  adjacency_.assign(nodes_.size(), {});
  std::set<std::pair<std::string, std::string>> seen;
  edges_.reserve(edges.size());
  for (NavEdge e : edges) {
    if (e.a == e.b) throw ValidationError("self-loop at '" + e.a + "'");
    for (const std::string* end : {&e.a, &e.b}) {
      if (!contains(*end)) {
        throw ValidationError("dangling endpoint '" + *end + "' in edge " + e.a + "-" + e.b);
      }
    }
    if (e.b < e.a) std::swap(e.a, e.b);
    if (!seen.emplace(e.a, e.b).second) {
      throw ValidationError("duplicate edge " + e.a + "-" + e.b);
    }
    const std::size_t ia = index_of(e.a);
    const std::size_t ib = index_of(e.b);
    const double euclid = (nodes_[ia].pose.position - nodes_[ib].pose.position).norm();
    if (!(euclid > 0.0)) {
      throw ValidationError("edge " + e.a + "-" + e.b + " joins coincident nodes");
    }
    if (e.length != 0.0 && std::abs(e.length - euclid) > 1e-6 * euclid) {
      throw ValidationError("edge " + e.a + "-" + e.b + ": length " + std::to_string(e.length) +
                            " inconsistent with endpoint positions (" +
                            std::to_string(euclid) + ")");
    }
    e.length = euclid;
    adjacency_[ia].emplace_back(ib, euclid);
    adjacency_[ib].emplace_back(ia, euclid);
    edges_.push_back(std::move(e));
  }
  std::sort(edges_.begin(), edges_.end(), [](const NavEdge& x, const NavEdge& y) {
    return std::tie(x.a, x.b) < std::tie(y.a, y.b);
  });
}

bool NavGraph::contains(std::string_view id) const { return index_.find(id) != index_.end(); }

std::size_t NavGraph::index_of(std::string_view id) const {
  auto it = index_.find(id);
  if (it == index_.end()) {
    throw DataError("unknown node id '" + std::string(id) + "' in graph '" + environment_id_ +
                    "'");
  }
  return it->second;
}

bool NavGraph::is_connected() const {
  if (nodes_.empty()) return true;
  const auto dist = geodesic_distances_from(*this, 0);
  return std::all_of(dist.begin(), dist.end(), [](double d) { return std::isfinite(d); });
}

bool operator==(const NavGraph& lhs, const NavGraph& rhs) {
  if (lhs.environment_id_ != rhs.environment_id_ || lhs.nodes_.size() != rhs.nodes_.size() ||
      lhs.edges_.size() != rhs.edges_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < lhs.nodes_.size(); ++i) {
    const NavNode& x = lhs.nodes_[i];
    const NavNode& y = rhs.nodes_[i];
    if (x.id != y.id || x.floor_index != y.floor_index || x.pose.position != y.pose.position ||
        x.pose.heading != y.pose.heading || x.pose.elevation != y.pose.elevation) {
      return false;
    }
  }
  for (std::size_t i = 0; i < lhs.edges_.size(); ++i) {
    const NavEdge& x = lhs.edges_[i];
    const NavEdge& y = rhs.edges_[i];
    if (x.a != y.a || x.b != y.b || x.length != y.length) return false;
  }
  return true;
}

std::vector<double> geodesic_distances_from(const NavGraph& graph, std::size_t source) {
  std::vector<double> dist(graph.size(), kUnreachable);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> frontier;
  dist[source] = 0.0;
  frontier.emplace(0.0, source);
  const auto& adj = graph.adjacency();
  while (!frontier.empty()) {
    auto [d, u] = frontier.top();
    frontier.pop();
    if (d > dist[u]) continue;
    for (auto [v, w] : adj[u]) {
      if (d + w < dist[v]) {
        dist[v] = d + w;
        frontier.emplace(dist[v], v);
      }
    }
  }
  return dist;
}

double geodesic_distance(const NavGraph& graph, std::string_view a, std::string_view b) {
  const std::size_t ia = graph.index_of(a);
  const std::size_t ib = graph.index_of(b);
  if (ia == ib) return 0.0;
  return geodesic_distances_from(graph, ia)[ib];
}

Eigen::MatrixXd geodesic_distance_matrix(const NavGraph& graph) {
  const auto n = static_cast<Eigen::Index>(graph.size());
  Eigen::MatrixXd table(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = geodesic_distances_from(graph, static_cast<std::size_t>(i));
    table.row(i) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), n);
  }
  return table;
}

std::string snap_to_node(const NavGraph& graph, const Eigen::Vector3d& point) {
  if (graph.empty()) throw ValidationError("snap_to_node on an empty graph");
  // nodes() is id-sorted, so strict '<' keeps the smallest id on ties.
  std::size_t best = 0;
  double best_dist = (graph.nodes()[0].pose.position - point).squaredNorm();
  for (std::size_t i = 1; i < graph.size(); ++i) {
    const double d = (graph.nodes()[i].pose.position - point).squaredNorm();
    if (d < best_dist) {
      best_dist = d;
      best = i;
    }
  }
  return graph.nodes()[best].id;
}

std::string centroid_node(const NavGraph& graph) {
  if (graph.empty()) throw ValidationError("centroid_node on an empty graph");
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& n : graph.nodes()) mean += n.pose.position;
  mean /= static_cast<double>(graph.size());
  return snap_to_node(graph, mean);
}

NavGraph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open graph file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("malformed graph file " + path.string() + ": " + e.what());
  }
  try {
    std::vector<NavNode> nodes;
    for (const auto& jn : doc.at("nodes")) {
      NavNode n;
      n.id = jn.at("id").get<std::string>();
      const auto& p = jn.at("position");
      if (p.size() != 3) throw ValidationError("node '" + n.id + "': position must have 3 components");
      n.pose.position = {p[0].get<double>(), p[1].get<double>(), p[2].get<double>()};
      n.pose.heading = jn.at("heading").get<double>();
      n.pose.elevation = jn.at("elevation").get<double>();
      n.floor_index = jn.at("floor").get<int>();
      nodes.push_back(std::move(n));
    }
    std::vector<NavEdge> edges;
    for (const auto& je : doc.at("edges")) {
      if (je.size() != 2 && je.size() != 3) {
        throw ValidationError("edge entries must be [id, id] or [id, id, length]");
      }
      NavEdge e{je[0].get<std::string>(), je[1].get<std::string>(), 0.0};
      if (je.size() == 3) {
        e.length = je[2].get<double>();
        if (!(e.length > 0.0)) throw ValidationError("edge " + e.a + "-" + e.b + ": non-positive length");
      }
      edges.push_back(std::move(e));
    }
    return NavGraph(doc.at("environment_id").get<std::string>(), std::move(nodes),
                    std::move(edges));
  } catch (const json::exception& e) {
    throw ValidationError("malformed graph file " + path.string() + ": " + e.what());
  }
}

void save_graph(const NavGraph& graph, const std::filesystem::path& path) {
  json doc;
  doc["environment_id"] = graph.environment_id();
  json nodes = json::array();
  for (const auto& n : graph.nodes()) {
    const auto& p = n.pose.position;
    nodes.push_back({{"id", n.id},
                     {"position", {p.x(), p.y(), p.z()}},
                     {"heading", n.pose.heading},
                     {"elevation", n.pose.elevation},
                     {"floor", n.floor_index}});
  }
  doc["nodes"] = std::move(nodes);
  json edges = json::array();
  for (const auto& e : graph.edges()) edges.push_back({e.a, e.b});
  doc["edges"] = std::move(edges);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write graph file " + path.string());
  out << doc.dump(1) << '\n';
}

}  // namespace graphloc
