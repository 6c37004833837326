#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "dentoforge/errors.hpp"
#include "dentoforge/fdi.hpp"

namespace dentoforge::jawgraph {

inline constexpr int kFeatureDim = 16;

// Pose/extent vector of one tooth: center position, box extents
// (height/width/length), and the rotation angles of the dental and buccal
// sides. Lengths in mm, angles in radians, both angles in (-pi, pi].
struct ToothLayout {
  double x = 0, y = 0, z = 0;
  double h = 0, w = 0, l = 0;
  double k = 0, r = 0;

  bool operator==(const ToothLayout&) const = default;
};

struct ToothNode {
  int tooth_id = 0;  // FDI code
  std::optional<ToothLayout> layout;
  std::vector<double> features = std::vector<double>(kFeatureDim, 0.0);
  bool missing = false;
};

enum class Relation { Neighbor, Symmetry, Arch };

inline const char* relation_name(Relation r) {
  switch (r) {
    case Relation::Neighbor: return "Neighbor";
    case Relation::Symmetry: return "Symmetry";
    case Relation::Arch: return "Arch";
  }
  return "?";
}

inline Relation relation_from_name(const std::string& s) {
  if (s == "Neighbor") return Relation::Neighbor;
  if (s == "Symmetry") return Relation::Symmetry;
  if (s == "Arch") return Relation::Arch;
  throw ValidationError("unknown edge relation '" + s + "'");
}

struct JawEdge {
  int src = 0;
  int dst = 0;
  Relation relation = Relation::Neighbor;

  bool operator==(const JawEdge&) const = default;
};

struct JawGraph {
  JawSide jaw_side = JawSide::Upper;
  std::vector<ToothNode> nodes;
  std::vector<JawEdge> edges;

  const ToothNode* find(int tooth_id) const {
    for (const auto& n : nodes)
      if (n.tooth_id == tooth_id) return &n;
    return nullptr;
  }
};

// Node indices sorted along the dental arch (upper: 17,16,...,11,21,...,27
// for a 14-tooth jaw). Throws on a code that is not a valid FDI code for
// the jaw side.
inline std::vector<int> arch_order(const JawGraph& g) {
  std::vector<int> idx(g.nodes.size());
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    fdi::require_valid(g.nodes[i].tooth_id, g.jaw_side);
    idx[i] = static_cast<int>(i);
  }
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    const int ra = fdi::arch_rank(g.nodes[a].tooth_id, g.jaw_side);
    const int rb = fdi::arch_rank(g.nodes[b].tooth_id, g.jaw_side);
    return ra != rb ? ra < rb : a < b;
  });
  return idx;
}

// Relation edges over a validated node list:
//  - Neighbor between arch-adjacent teeth,
//  - Symmetry between contralateral FDI pairs present in the record,
//  - Arch from every tooth to the two most-central present teeth.
// Undirected relations are stored once, src before dst in arch order.
inline std::vector<JawEdge> build_edges(const std::vector<ToothNode>& nodes,
                                        JawSide side) {
  JawGraph tmp;
  tmp.jaw_side = side;
  tmp.nodes = nodes;
  const std::vector<int> order = arch_order(tmp);

  std::vector<int> rank_of(nodes.size());
  for (size_t i = 0; i < nodes.size(); ++i)
    rank_of[i] = fdi::arch_rank(nodes[i].tooth_id, side);

  auto canonical = [&](int a, int b) {
    return rank_of[a] < rank_of[b] ? std::pair<int, int>{a, b}
                                   : std::pair<int, int>{b, a};
  };

  std::vector<JawEdge> edges;
  std::set<std::tuple<int, int, int>> seen;
  auto push = [&](int a, int b, Relation rel) {
    if (a == b) return;
    auto [s, d] = canonical(a, b);
    auto key = std::make_tuple(s, d, static_cast<int>(rel));
    if (seen.insert(key).second) edges.push_back({s, d, rel});
  };

  for (size_t i = 0; i + 1 < order.size(); ++i)
    push(order[i], order[i + 1], Relation::Neighbor);

  std::map<int, int> by_code;
  for (int i : order) by_code[nodes[i].tooth_id] = i;
  for (int i : order) {
    const int partner = fdi::mirror(nodes[i].tooth_id);
    auto it = by_code.find(partner);
    if (it != by_code.end()) push(i, it->second, Relation::Symmetry);
  }

  // Two most-central teeth: smallest position digit, one per quadrant when
  // possible (11/21 or 31/41 on a full jaw).
  std::vector<int> central(order);
  std::sort(central.begin(), central.end(), [&](int a, int b) {
    const int pa = fdi::position(nodes[a].tooth_id);
    const int pb = fdi::position(nodes[b].tooth_id);
    return pa != pb ? pa < pb : rank_of[a] < rank_of[b];
  });
  const size_t n_central = std::min<size_t>(2, central.size());
  for (size_t c = 0; c < n_central; ++c)
    for (int i : order) push(i, central[c], Relation::Arch);

  std::sort(edges.begin(), edges.end(), [&](const JawEdge& a, const JawEdge& b) {
    const auto ka = std::make_tuple(static_cast<int>(a.relation),
                                    rank_of[a.src], rank_of[a.dst]);
    const auto kb = std::make_tuple(static_cast<int>(b.relation),
                                    rank_of[b.src], rank_of[b.dst]);
    return ka < kb;
  });
  return edges;
}

// All invariant violations, not just the first. Empty result means ok.
// A node with missing=true and a defined layout is legal: it marks a tooth
// whose layout was restored after ingest.
inline std::vector<std::string> validate(const JawGraph& g) {
  std::vector<std::string> out;
  constexpr double pi = std::numbers::pi;

  std::set<int> ids;
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    const ToothNode& n = g.nodes[i];
    if (!fdi::is_valid(n.tooth_id) || !fdi::belongs_to(n.tooth_id, g.jaw_side))
      out.push_back("invalid FDI code " + std::to_string(n.tooth_id));
    if (!ids.insert(n.tooth_id).second)
      out.push_back("duplicate tooth_id " + std::to_string(n.tooth_id));
    if (n.features.size() != kFeatureDim)
      out.push_back("node " + std::to_string(n.tooth_id) + ": feature vector has " +
                    std::to_string(n.features.size()) + " entries, expected " +
                    std::to_string(kFeatureDim));
    if (!n.missing && !n.layout)
      out.push_back("node " + std::to_string(n.tooth_id) +
                    ": not missing but layout undefined");
    if (n.layout) {
      const ToothLayout& L = *n.layout;
      const double vals[] = {L.x, L.y, L.z, L.h, L.w, L.l, L.k, L.r};
      for (double v : vals)
        if (!std::isfinite(v)) {
          out.push_back("node " + std::to_string(n.tooth_id) +
                        ": non-finite layout value");
          break;
        }
      if (!(L.h > 0) || !(L.w > 0) || !(L.l > 0))
        out.push_back("node " + std::to_string(n.tooth_id) +
                      ": non-positive extent");
      if (!(L.k > -pi && L.k <= pi) || !(L.r > -pi && L.r <= pi))
        out.push_back("node " + std::to_string(n.tooth_id) +
                      ": angle outside (-pi, pi]");
    }
  }

  std::set<std::tuple<int, int, int>> edge_keys;
  const int n = static_cast<int>(g.nodes.size());
  for (const JawEdge& e : g.edges) {
    if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n) {
      out.push_back("edge endpoint out of range");
      continue;
    }
    if (e.src == e.dst)
      out.push_back("self-edge on node " + std::to_string(g.nodes[e.src].tooth_id));
    const auto key = std::make_tuple(std::min(e.src, e.dst),
                                     std::max(e.src, e.dst),
                                     static_cast<int>(e.relation));
    if (!edge_keys.insert(key).second)
      out.push_back("duplicate edge " + std::to_string(g.nodes[e.src].tooth_id) +
                    "-" + std::to_string(g.nodes[e.dst].tooth_id) + " " +
                    relation_name(e.relation));
  }
  return out;
}

inline nlohmann::json layout_to_json(const ToothLayout& L) {
  return nlohmann::json{{"x", L.x}, {"y", L.y}, {"z", L.z}, {"h", L.h},
                        {"w", L.w}, {"l", L.l}, {"k", L.k}, {"r", L.r}};
}

inline std::string serialize(const JawGraph& g) {
  const auto violations = validate(g);
  if (!violations.empty())
    throw ValidationError("cannot serialize invalid graph: " + violations.front());

  nlohmann::json j;
  j["jaw_side"] = g.jaw_side == JawSide::Upper ? "upper" : "lower";
  j["nodes"] = nlohmann::json::array();
  for (const ToothNode& n : g.nodes) {
    nlohmann::json jn;
    jn["tooth_id"] = n.tooth_id;
    jn["layout"] = n.layout ? layout_to_json(*n.layout) : nlohmann::json();
    jn["features"] = n.features;
    jn["missing"] = n.missing;
    j["nodes"].push_back(std::move(jn));
  }
  j["edges"] = nlohmann::json::array();
  for (const JawEdge& e : g.edges) {
    j["edges"].push_back({{"src", e.src},
                          {"dst", e.dst},
                          {"relation", relation_name(e.relation)}});
  }
  return j.dump(2);
}

inline JawGraph deserialize(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("jaw graph parse error: ") + e.what());
  }

  auto require = [&](const nlohmann::json& obj, const char* key,
                     const std::string& where) -> const nlohmann::json& {
    if (!obj.contains(key))
      throw ValidationError("jaw graph schema error: missing \"" +
                            std::string(key) + "\" in " + where);
    return obj.at(key);
  };

  JawGraph g;
  const std::string side = require(j, "jaw_side", "top level").get<std::string>();
  if (side == "upper") g.jaw_side = JawSide::Upper;
  else if (side == "lower") g.jaw_side = JawSide::Lower;
  else throw ValidationError("jaw graph schema error: jaw_side must be \"upper\" or \"lower\"");

  const auto& jnodes = require(j, "nodes", "top level");
  if (!jnodes.is_array())
    throw ValidationError("jaw graph schema error: \"nodes\" must be an array");
  int node_no = 0;
  for (const auto& jn : jnodes) {
    const std::string where = "nodes[" + std::to_string(node_no++) + "]";
    ToothNode n;
    n.tooth_id = require(jn, "tooth_id", where).get<int>();
    const auto& jl = require(jn, "layout", where);
    if (jl.is_null()) {
      n.layout.reset();
    } else {
      ToothLayout L;
      L.x = require(jl, "x", where).get<double>();
      L.y = require(jl, "y", where).get<double>();
      L.z = require(jl, "z", where).get<double>();
      L.h = require(jl, "h", where).get<double>();
      L.w = require(jl, "w", where).get<double>();
      L.l = require(jl, "l", where).get<double>();
      L.k = require(jl, "k", where).get<double>();
      L.r = require(jl, "r", where).get<double>();
      n.layout = L;
    }
    n.features = require(jn, "features", where).get<std::vector<double>>();
    n.missing = require(jn, "missing", where).get<bool>();
    // Schema rule: an absent layout always marks the node missing.
    if (!n.layout) n.missing = true;
    g.nodes.push_back(std::move(n));
  }

  const auto& jedges = require(j, "edges", "top level");
  if (!jedges.is_array())
    throw ValidationError("jaw graph schema error: \"edges\" must be an array");
  int edge_no = 0;
  for (const auto& je : jedges) {
    const std::string where = "edges[" + std::to_string(edge_no++) + "]";
    JawEdge e;
    e.src = require(je, "src", where).get<int>();
    e.dst = require(je, "dst", where).get<int>();
    e.relation = relation_from_name(require(je, "relation", where).get<std::string>());
    g.edges.push_back(e);
  }
  return g;
}

inline bool graphs_equal(const JawGraph& a, const JawGraph& b) {
  if (a.jaw_side != b.jaw_side || a.nodes.size() != b.nodes.size() ||
      a.edges.size() != b.edges.size())
    return false;
  for (size_t i = 0; i < a.nodes.size(); ++i) {
    const ToothNode& x = a.nodes[i];
    const ToothNode& y = b.nodes[i];
    if (x.tooth_id != y.tooth_id || x.missing != y.missing ||
        x.layout.has_value() != y.layout.has_value() || x.features != y.features)
      return false;
    if (x.layout && !(*x.layout == *y.layout)) return false;
  }
  for (size_t i = 0; i < a.edges.size(); ++i)
    if (!(a.edges[i] == b.edges[i])) return false;
  return true;
}

}  // namespace dentoforge::jawgraph
