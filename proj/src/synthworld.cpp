#include "graphloc/synthworld.hpp"

#include "graphloc/error.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

namespace graphloc {

void WorldSpec::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("WorldSpec: " + msg); };
  if (node_count < 2) fail("node_count must be >= 2");
  if (regions_per_node < 1) fail("regions_per_node must be >= 1");
  if (feature_dim < 8) fail("feature_dim must be >= 8");
  if (room_types.empty() || objects.empty() || colors.empty()) fail("empty attribute list");
  if (objects_min < 1 || objects_max < objects_min) fail("bad objects_min/objects_max");
  if (objects_max > regions_per_node) fail("objects_max exceeds regions_per_node");
  if (objects_max > static_cast<int>(objects.size())) fail("objects_max exceeds object count");
  if (noise_sigma < 0.0) fail("negative noise_sigma");
  if (grid_columns < 1 || grid_rows < 1 || !(grid_spacing > 0.0)) fail("bad grid");
  if (node_count > grid_columns * grid_rows) {
    fail("node_count " + std::to_string(node_count) + " exceeds grid capacity " +
         std::to_string(grid_columns * grid_rows));
  }
  if (!(jitter >= 0.0 && jitter < grid_spacing / 2.0)) fail("jitter must be in [0, spacing/2)");
}

// ------------------------------------------------------------------ codebook

Codebook make_codebook(const WorldSpec& spec) {
  const auto n_rooms = static_cast<Eigen::Index>(spec.room_types.size());
  const auto n_objects = static_cast<Eigen::Index>(spec.objects.size());
  const auto n_colors = static_cast<Eigen::Index>(spec.colors.size());
  const Eigen::Index total = n_rooms + n_objects + n_colors;
  const Eigen::Index dim = spec.feature_dim;

  std::mt19937_64 rng(spec.codebook_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = normal(rng);
    return m;
  };

  Eigen::MatrixXd rows(total, dim);
  if (total <= dim) {
    // Orthonormal rows: every pairwise cosine is zero.
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(dim, total));
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, total);
    rows = q.transpose();
  } else {
    for (Eigen::Index i = 0; i < total; ++i) {
      bool placed = false;
      for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        Eigen::RowVectorXd v = gaussian(1, dim);
        v.normalize();
        placed = true;
        for (Eigen::Index j = 0; j < i && placed; ++j) placed = std::abs(rows.row(j).dot(v)) < 0.2;
        if (placed) rows.row(i) = v;
      }
      if (!placed) {
        throw ValidationError("cannot place " + std::to_string(total) +
                              " attribute vectors with pairwise cosine < 0.2 in " +
                              std::to_string(dim) + " dimensions");
      }
    }
  }
  for (Eigen::Index i = 0; i < total; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      if (std::abs(rows.row(i).dot(rows.row(j))) >= 0.2) {
        throw ValidationError("codebook violates the pairwise cosine bound");
      }
    }
  }
  rows *= std::sqrt(static_cast<double>(dim));
  const Eigen::MatrixXf f = rows.cast<float>();
  return {f.topRows(n_rooms), f.middleRows(n_rooms, n_objects), f.bottomRows(n_colors)};
}

// --------------------------------------------------------------- environment

namespace {

using Signature = std::pair<int, std::set<std::pair<int, int>>>;

Signature signature_of(const NodeAttributes& a) {
  Signature s{a.room, {}};
  for (const auto& r : a.regions) {
    if (r.object >= 0) s.second.emplace(r.object, r.color);
  }
  return s;
}

NodeAttributes draw_attributes(const WorldSpec& spec, std::mt19937_64& rng) {
  NodeAttributes a;
  a.room = std::uniform_int_distribution<int>(0, static_cast<int>(spec.room_types.size()) - 1)(rng);
  a.regions.assign(static_cast<std::size_t>(spec.regions_per_node), {});
  const int count = std::uniform_int_distribution<int>(spec.objects_min, spec.objects_max)(rng);

  std::vector<int> slots(static_cast<std::size_t>(spec.regions_per_node));
  for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = static_cast<int>(i);
  std::vector<int> objects(spec.objects.size());
  for (std::size_t i = 0; i < objects.size(); ++i) objects[i] = static_cast<int>(i);
  std::shuffle(slots.begin(), slots.end(), rng);
  std::shuffle(objects.begin(), objects.end(), rng);
  std::uniform_int_distribution<int> color(0, static_cast<int>(spec.colors.size()) - 1);
  for (int i = 0; i < count; ++i) {
    auto& region = a.regions[static_cast<std::size_t>(slots[static_cast<std::size_t>(i)])];
    region.object = objects[static_cast<std::size_t>(i)];
    region.color = color(rng);
  }
  return a;
}

std::string node_id(int index, int count) {
  const auto width = std::to_string(count - 1).size();
  std::string digits = std::to_string(index);
  return "n" + std::string(width - digits.size(), '0') + digits;
}

}  // namespace

SynthEnvironment generate_environment(const WorldSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  SynthEnvironment env;
  env.spec = spec;
  env.codebook = make_codebook(spec);

  // Node placement: distinct grid cells with jitter.
  std::vector<int> cells(static_cast<std::size_t>(spec.grid_columns * spec.grid_rows));
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
  std::shuffle(cells.begin(), cells.end(), rng);
  std::uniform_real_distribution<double> jitter(-spec.jitter, spec.jitter);
  std::uniform_real_distribution<double> heading(0.0, 2.0 * std::numbers::pi);
  std::vector<NavNode> nodes;
  for (int i = 0; i < spec.node_count; ++i) {
    const int cell = cells[static_cast<std::size_t>(i)];
    NavNode n;
    n.id = node_id(i, spec.node_count);
    n.pose.position = {(cell % spec.grid_columns) * spec.grid_spacing + jitter(rng),
                       (cell / spec.grid_columns) * spec.grid_spacing + jitter(rng), 0.0};
    n.pose.heading = heading(rng);
    nodes.push_back(std::move(n));
  }

  // Random geometric graph, then bridge components with their shortest link.
  const auto n = nodes.size();
  std::vector<NavEdge> edges;
  std::vector<std::size_t> component(n);
  for (std::size_t i = 0; i < n; ++i) component[i] = i;
  auto root = [&](std::size_t i) {
    while (component[i] != i) i = component[i] = component[component[i]];
    return i;
  };
  auto dist = [&](std::size_t i, std::size_t j) {
    return (nodes[i].pose.position - nodes[j].pose.position).norm();
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (dist(i, j) <= spec.link_radius) {
        edges.push_back({nodes[i].id, nodes[j].id, 0.0});
        component[root(i)] = root(j);
      }
    }
  }
  for (;;) {
    double best = kUnreachable;
    std::pair<std::size_t, std::size_t> link{0, 0};
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (root(i) != root(j) && dist(i, j) < best) {
          best = dist(i, j);
          link = {i, j};
        }
      }
    }
    if (best == kUnreachable) break;
    edges.push_back({nodes[link.first].id, nodes[link.second].id, 0.0});
    component[root(link.first)] = root(link.second);
  }
  env.graph = NavGraph(spec.environment_id, nodes, edges);

  // Attributes such that no node's description is implied by another's:
  // same room and nested object sets would make the smaller node unlocatable.
  std::vector<Signature> used;
  auto collides = [&](const Signature& s) {
    return std::any_of(used.begin(), used.end(), [&](const Signature& u) {
      return u.first == s.first &&
             (std::includes(u.second.begin(), u.second.end(), s.second.begin(), s.second.end()) ||
              std::includes(s.second.begin(), s.second.end(), u.second.begin(), u.second.end()));
    });
  };
  for (int i = 0; i < spec.node_count; ++i) {
    NodeAttributes a = draw_attributes(spec, rng);
    int attempts = 0;
    while (collides(signature_of(a))) {
      if (++attempts > 1000) throw ValidationError("cannot draw distinct node attributes");
      a = draw_attributes(spec, rng);
    }
    used.push_back(signature_of(a));
    env.attributes.push_back(std::move(a));
  }

  // Region observations: codebook vectors plus noise.
  const auto boxes = panorama_grid(spec.regions_per_node);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  for (std::size_t i = 0; i < n; ++i) {
    PanoObservation pano;
    pano.node_id = env.graph.nodes()[i].id;
    const auto& attrs = env.attributes[i];
    for (std::size_t r = 0; r < boxes.size(); ++r) {
      Eigen::VectorXf v = env.codebook.rooms.row(attrs.room).transpose();
      const auto& region = attrs.regions[r];
      if (region.object >= 0) {
        v += env.codebook.objects.row(region.object).transpose();
        v += env.codebook.colors.row(region.color).transpose();
      }
      for (Eigen::Index c = 0; c < v.size(); ++c) v(c) += static_cast<float>(noise(rng));
      pano.regions.push_back({std::move(v), boxes[r]});
    }
    env.observations.emplace(pano.node_id, std::move(pano));
  }
  return env;
}

// -------------------------------------------------------------------- claims

std::vector<std::size_t> matching_nodes(const SynthEnvironment& env, const Claims& claims) {
  std::vector<std::size_t> out;
  const auto& adj = env.graph.adjacency();
  for (std::size_t i = 0; i < env.attributes.size(); ++i) {
    const auto& a = env.attributes[i];
    if (claims.room && *claims.room != a.room) continue;
    bool ok = std::all_of(claims.objects.begin(), claims.objects.end(), [&](auto oc) {
      return std::any_of(a.regions.begin(), a.regions.end(), [&](const RegionAttributes& r) {
        return r.object == oc.first && r.color == oc.second;
      });
    });
    ok = ok && std::all_of(claims.neighbor_rooms.begin(), claims.neighbor_rooms.end(), [&](int room) {
      return std::any_of(adj[i].begin(), adj[i].end(),
                         [&](auto nb) { return env.attributes[nb.first].room == room; });
    });
    if (ok) out.push_back(i);
  }
  return out;
}

// ------------------------------------------------------------------ grammar

namespace {

std::vector<std::pair<int, int>> object_pairs(const NodeAttributes& a) {
  std::vector<std::pair<int, int>> pairs;
  for (const auto& r : a.regions) {
    if (r.object >= 0) pairs.emplace_back(r.object, r.color);
  }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

template <typename T>
const T& pick(const std::vector<T>& items, std::mt19937_64& rng) {
  return items[std::uniform_int_distribution<std::size_t>(0, items.size() - 1)(rng)];
}

class Phrases {
 public:
  explicit Phrases(const WorldSpec& spec) : spec_(spec) {}

  std::string room(int r) const { return spec_.room_types[static_cast<std::size_t>(r)]; }
  std::string thing(std::pair<int, int> oc) const {
    return spec_.colors[static_cast<std::size_t>(oc.second)] + " " +
           spec_.objects[static_cast<std::size_t>(oc.first)];
  }
  std::string list(const std::vector<std::pair<int, int>>& items) const {
    std::string s;
    for (std::size_t i = 0; i < items.size(); ++i) {
      s += (i == 0 ? "a " : " and a ") + thing(items[i]);
    }
    return s;
  }

 private:
  const WorldSpec& spec_;
};

}  // namespace

Episode generate_episode(const SynthEnvironment& env, std::mt19937_64& rng,
                         std::string episode_id, Split split) {
  const auto n = env.attributes.size();
  const auto& adj = env.graph.adjacency();
  const Phrases say(env.spec);

  for (int attempt = 0; attempt < 100; ++attempt) {
    const std::size_t target = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    const auto& attrs = env.attributes[target];
    auto pairs = object_pairs(attrs);
    std::shuffle(pairs.begin(), pairs.end(), rng);

    // Visual claims alone single out the target; the neighbor claim is extra.
    Claims claims;
    claims.room = attrs.room;
    std::size_t used = 0;
    while (used < pairs.size()) {
      claims.objects.assign(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(++used));
      if (matching_nodes(env, claims).size() == 1) break;
    }
    if (matching_nodes(env, claims) != std::vector<std::size_t>{target}) continue;
    std::optional<int> neighbor_room;
    if (!adj[target].empty()) neighbor_room = env.attributes[pick(adj[target], rng).first].room;

    const std::vector<std::pair<int, int>> first(pairs.begin(), pairs.begin() + 1);
    const std::vector<std::pair<int, int>> rest(pairs.begin() + 1,
                                                pairs.begin() + static_cast<std::ptrdiff_t>(used));
    const std::string opening = "I'm in a " + say.room(attrs.room) + " with " + say.list(first) + ".";
    const std::string neighbor =
        neighbor_room ? "There is a " + say.room(*neighbor_room) + " next to me." : "";
    const std::string also = rest.empty() ? "" : "I also see " + say.list(rest) + ".";
    auto join = [](std::string a, const std::string& b) {
      if (a.empty()) return b;
      return b.empty() ? a : a + " " + b;
    };

    Dialog d;
    const int turns = std::uniform_int_distribution<int>(2, 4)(rng);
    if (turns == 2) {
      d.messages.push_back({Speaker::locator, pick(std::vector<std::string>{"Where are you?",
                                                                             "Describe your location."},
                                                   rng)});
      d.messages.push_back(
          {Speaker::observer,
           join("I'm in a " + say.room(attrs.room) + " with " +
                    say.list(std::vector<std::pair<int, int>>(
                        pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(used))) +
                    ".",
                neighbor)});
    } else if (turns == 3) {
      d.messages.push_back({Speaker::observer, opening});
      d.messages.push_back({Speaker::locator, "What else do you see?"});
      std::string reply = join(also, neighbor);
      if (reply.empty()) reply = "I'm in a " + say.room(attrs.room) + ".";
      d.messages.push_back({Speaker::observer, reply});
    } else {
      d.messages.push_back({Speaker::observer, opening});
      if (neighbor_room) {
        d.messages.push_back(
            {Speaker::locator, "Is there a " + say.room(*neighbor_room) + " next to you?"});
        d.messages.push_back(
            {Speaker::observer,
             join("Yes, there is a " + say.room(*neighbor_room) + " next to me.", also)});
      } else {
        d.messages.push_back({Speaker::locator, "What else do you see?"});
        d.messages.push_back(
            {Speaker::observer, also.empty() ? "I'm in a " + say.room(attrs.room) + "." : also});
      }
      d.messages.push_back({Speaker::locator, "Okay, I think I know where you are."});
    }

    Episode ep{std::move(episode_id), env.graph.environment_id(), std::move(d),
               env.graph.nodes()[target].id, split};
    if (oracle_locate(env, ep) != ep.target_node) {
      throw ValidationError("generated episode is ambiguous under its own grammar");
    }
    return ep;
  }
  throw ValidationError("could not generate an unambiguous episode in environment '" +
                        env.graph.environment_id() + "'");
}

namespace {

struct Lexicon {
  std::map<std::string, int> rooms, objects, colors;

  explicit Lexicon(const WorldSpec& spec) {
    for (std::size_t i = 0; i < spec.room_types.size(); ++i) rooms[spec.room_types[i]] = static_cast<int>(i);
    for (std::size_t i = 0; i < spec.objects.size(); ++i) objects[spec.objects[i]] = static_cast<int>(i);
    for (std::size_t i = 0; i < spec.colors.size(); ++i) colors[spec.colors[i]] = static_cast<int>(i);
  }
};

using Tokens = std::vector<std::string>;

// Matches `pattern` at the start of `s` (from `pos`); slot words ROOM, COLOR
// and OBJECT capture indices into `slots`.
bool match(const Tokens& s, std::size_t& pos, const Tokens& pattern, const Lexicon& lex,
           std::vector<int>& slots) {
  std::size_t p = pos;
  std::vector<int> captured;
  for (const auto& want : pattern) {
    if (p >= s.size()) return false;
    const auto& got = s[p++];
    const std::map<std::string, int>* table = want == "ROOM"     ? &lex.rooms
                                              : want == "COLOR"  ? &lex.colors
                                              : want == "OBJECT" ? &lex.objects
                                                                 : nullptr;
    if (table) {
      auto it = table->find(got);
      if (it == table->end()) return false;
      captured.push_back(it->second);
    } else if (got != want) {
      return false;
    }
  }
  pos = p;
  slots.insert(slots.end(), captured.begin(), captured.end());
  return true;
}

bool match_whole(const Tokens& s, const Tokens& pattern, const Lexicon& lex, std::vector<int>& slots) {
  std::size_t pos = 0;
  std::vector<int> tmp;
  if (!match(s, pos, pattern, lex, tmp) || pos != s.size()) return false;
  slots = tmp;
  return true;
}

// pattern followed by "a COLOR OBJECT (and a COLOR OBJECT)*".
bool match_list(const Tokens& s, const Tokens& prefix, const Lexicon& lex, std::vector<int>& slots) {
  std::size_t pos = 0;
  std::vector<int> tmp;
  if (!match(s, pos, prefix, lex, tmp) || !match(s, pos, {"a", "COLOR", "OBJECT"}, lex, tmp)) {
    return false;
  }
  while (pos < s.size()) {
    if (!match(s, pos, {"and", "a", "COLOR", "OBJECT"}, lex, tmp)) return false;
  }
  slots = tmp;
  return true;
}

void add_objects(Claims& c, const std::vector<int>& slots, std::size_t from) {
  for (std::size_t i = from; i + 1 < slots.size(); i += 2) c.objects.emplace_back(slots[i + 1], slots[i]);
}

}  // namespace

Claims parse_claims(const SynthEnvironment& env, const Dialog& dialog) {
  const Lexicon lex(env.spec);
  Claims claims;
  for (const auto& m : dialog.messages) {
    std::vector<Tokens> sentences(1);
    for (auto& tok : tokenize(m.text)) {
      if (tok == "." || tok == "?") {
        sentences.emplace_back();
      } else {
        sentences.back().push_back(std::move(tok));
      }
    }
    for (const auto& s : sentences) {
      if (s.empty()) continue;
      std::vector<int> slots;
      bool ok = false;
      if (m.speaker == Speaker::observer) {
        if (match_whole(s, {"i", "'", "m", "in", "a", "ROOM"}, lex, slots)) {
          ok = true;
          claims.room = slots[0];
        } else if (match_list(s, {"i", "'", "m", "in", "a", "ROOM", "with"}, lex, slots)) {
          ok = true;
          claims.room = slots[0];
          add_objects(claims, slots, 1);
        } else if (match_list(s, {"i", "see"}, lex, slots) ||
                   match_list(s, {"i", "also", "see"}, lex, slots)) {
          ok = true;
          add_objects(claims, slots, 0);
        } else if (match_whole(s, {"there", "is", "a", "ROOM", "next", "to", "me"}, lex, slots) ||
                   match_whole(s, {"yes", ",", "there", "is", "a", "ROOM", "next", "to", "me"}, lex,
                               slots)) {
          ok = true;
          claims.neighbor_rooms.push_back(slots[0]);
        }
      } else {
        ok = match_whole(s, {"where", "are", "you"}, lex, slots) ||
             match_whole(s, {"describe", "your", "location"}, lex, slots) ||
             match_whole(s, {"what", "else", "do", "you", "see"}, lex, slots) ||
             match_whole(s, {"is", "there", "a", "ROOM", "next", "to", "you"}, lex, slots) ||
             match_whole(s, {"okay", ",", "i", "think", "i", "know", "where", "you", "are"}, lex,
                         slots);
      }
      if (!ok) {
        std::ostringstream msg;
        msg << "sentence not produced by the dialog grammar:";
        for (const auto& t : s) msg << ' ' << t;
        throw ValidationError(msg.str());
      }
    }
  }
  return claims;
}

std::optional<std::string> oracle_locate(const SynthEnvironment& env, const Episode& episode) {
  const auto matches = matching_nodes(env, parse_claims(env, episode.dialog));
  if (matches.size() != 1) return std::nullopt;
  return env.graph.nodes()[matches.front()].id;
}

Dialog generate_caption(const SynthEnvironment& env, std::size_t node, std::mt19937_64& rng) {
  const Phrases say(env.spec);
  const auto& attrs = env.attributes.at(node);
  auto pairs = object_pairs(attrs);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  return {{{Speaker::observer,
            "This is a " + say.room(attrs.room) + " with " + say.list(pairs) + "."}}};
}

Dialog generate_instruction(const SynthEnvironment& env, std::size_t node, std::mt19937_64& rng) {
  const Phrases say(env.spec);
  const auto& attrs = env.attributes.at(node);
  const auto pairs = object_pairs(attrs);
  return {{{Speaker::locator, "Walk into the " + say.room(attrs.room) + " and stop next to the " +
                                  say.thing(pick(pairs, rng)) + "."}}};
}

}  // namespace graphloc
