#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "defuse/error.hpp"
#include "defuse/io.hpp"

namespace defuse {

using Node = int;
using NodeSet = std::vector<Node>;  // always sorted ascending
using Edge = std::pair<Node, Node>;  // (k, j) means k -> j

inline std::vector<std::string> default_names(int p) {
  std::vector<std::string> names;
  names.reserve(p);
  for (int j = 0; j < p; ++j) names.push_back("Y" + std::to_string(j + 1));
  return names;
}

/// Immutable directed acyclic graph over nodes 0..p-1. Acyclicity is checked
/// by every factory; there is no way to build a Dag holding a cycle.
class Dag {
 public:
  Dag() = default;

  int p() const { return p_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t edge_count() const { return edges_.size(); }

  /// U[k][j] = 1 iff k is a parent of j.
  bool has_edge(Node k, Node j) const { return adj_[static_cast<std::size_t>(k) * p_ + j] != 0; }

  const NodeSet& parents(Node j) const { return parents_.at(j); }
  const NodeSet& children(Node k) const { return children_.at(k); }

  std::vector<std::vector<int>> adjacency() const {
    std::vector<std::vector<int>> u(p_, std::vector<int>(p_, 0));
    for (auto [k, j] : edges_) u[k][j] = 1;
    return u;
  }

  Dag with_names(std::vector<std::string> names) const {
    if (static_cast<int>(names.size()) != p_) {
      throw Error(ErrorCode::SizeMismatch, "expected " + std::to_string(p_) + " names");
    }
    Dag out = *this;
    out.names_ = std::move(names);
    return out;
  }

  friend bool operator==(const Dag& a, const Dag& b) { return a.p_ == b.p_ && a.edges_ == b.edges_; }

  static Dag from_edges(int p, std::vector<Edge> edges, std::vector<std::string> names = {});

 private:
  int p_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::uint8_t> adj_;
  std::vector<NodeSet> parents_;
  std::vector<NodeSet> children_;
  std::vector<std::string> names_;

  friend Dag validate_acyclic(const std::vector<std::vector<int>>& adjacency, std::vector<std::string> names);
};

namespace detail {

/// Returns one directed cycle (as a node list) or an empty vector. Nodes are
/// visited in ascending order so the reported cycle is reproducible.
inline std::vector<Node> find_cycle(int p, const std::vector<NodeSet>& children) {
  std::vector<int> state(p, 0);  // 0 unseen, 1 on stack, 2 done
  std::vector<Node> parent(p, -1);
  for (Node root = 0; root < p; ++root) {
    if (state[root] != 0) continue;
    std::vector<std::pair<Node, std::size_t>> stack{{root, 0}};
    state[root] = 1;
    while (!stack.empty()) {
      auto& [v, idx] = stack.back();
      if (idx < children[v].size()) {
        Node w = children[v][idx++];
        if (state[w] == 1) {
          std::vector<Node> cycle{w};
          for (Node u = v; u != w; u = parent[u]) cycle.push_back(u);
          std::reverse(cycle.begin() + 1, cycle.end());
          return cycle;
        }
        if (state[w] == 0) {
          state[w] = 1;
          parent[w] = v;
          stack.emplace_back(w, 0);
        }
      } else {
        state[v] = 2;
        stack.pop_back();
      }
    }
  }
  return {};
}

}  // namespace detail

/// Builds a Dag from a square 0/1 matrix with U[k][j] = 1 meaning k -> j.
inline Dag validate_acyclic(const std::vector<std::vector<int>>& adjacency,
                            std::vector<std::string> names = {}) {
  const int p = static_cast<int>(adjacency.size());
  for (const auto& row : adjacency) {
    if (static_cast<int>(row.size()) != p) {
      throw Error(ErrorCode::NonSquareInput, "adjacency has " + std::to_string(p) + " rows but a row of length " +
                                                 std::to_string(row.size()));
    }
  }
  if (names.empty()) names = default_names(p);
  if (static_cast<int>(names.size()) != p) throw Error(ErrorCode::SizeMismatch, "name count differs from p");

  Dag g;
  g.p_ = p;
  g.names_ = std::move(names);
  g.adj_.assign(static_cast<std::size_t>(p) * p, 0);
  g.parents_.assign(p, {});
  g.children_.assign(p, {});
  for (Node k = 0; k < p; ++k) {
    for (Node j = 0; j < p; ++j) {
      const int v = adjacency[k][j];
      if (v != 0 && v != 1) throw Error(ErrorCode::ParseError, "adjacency entries must be 0 or 1");
      if (v == 1) {
        g.adj_[static_cast<std::size_t>(k) * p + j] = 1;
        g.edges_.emplace_back(k, j);
        g.parents_[j].push_back(k);
        g.children_[k].push_back(j);
      }
    }
  }
  auto cycle = detail::find_cycle(p, g.children_);
  if (!cycle.empty()) {
    std::string msg = "cycle ";
    for (Node v : cycle) msg += g.names_[v] + " -> ";
    msg += g.names_[cycle.front()];
    throw Error(ErrorCode::CycleDetected, msg);
  }
  return g;
}

inline Dag Dag::from_edges(int p, std::vector<Edge> edges, std::vector<std::string> names) {
  if (p < 0) throw Error(ErrorCode::InvalidSize, "negative node count");
  std::vector<std::vector<int>> u(p, std::vector<int>(p, 0));
  for (auto [k, j] : edges) {
    if (k < 0 || k >= p || j < 0 || j >= p) {
      throw Error(ErrorCode::NodeOutOfRange, "edge (" + std::to_string(k) + ", " + std::to_string(j) + ")");
    }
    u[k][j] = 1;
  }
  return validate_acyclic(u, std::move(names));
}

struct DepthProfile {
  std::vector<int> depths;
  int d_max = 0;
  /// layers[d] = V(d) = { j : depth_j < d } for d = 0..d_max+1.
  std::vector<NodeSet> layers;

  const NodeSet& layer(int d) const { return layers.at(d); }
};

/// Longest root-to-node path lengths via Kahn peeling.
inline DepthProfile topological_depths(const Dag& dag) {
  const int p = dag.p();
  DepthProfile out;
  out.depths.assign(p, 0);
  std::vector<int> indeg(p);
  std::vector<Node> queue;
  for (Node j = 0; j < p; ++j) {
    indeg[j] = static_cast<int>(dag.parents(j).size());
    if (indeg[j] == 0) queue.push_back(j);
  }
  for (std::size_t head = 0; head < queue.size(); ++head) {
    Node k = queue[head];
    for (Node j : dag.children(k)) {
      out.depths[j] = std::max(out.depths[j], out.depths[k] + 1);
      if (--indeg[j] == 0) queue.push_back(j);
    }
  }
  out.d_max = p == 0 ? 0 : *std::max_element(out.depths.begin(), out.depths.end());
  out.layers.resize(out.d_max + 2);
  for (int d = 0; d <= out.d_max + 1; ++d) {
    for (Node j = 0; j < p; ++j) {
      if (out.depths[j] < d) out.layers[d].push_back(j);
    }
  }
  return out;
}

inline NodeSet ancestor_closure(const Dag& dag, Node j) {
  if (j < 0 || j >= dag.p()) throw Error(ErrorCode::NodeOutOfRange, "node " + std::to_string(j));
  std::vector<char> seen(dag.p(), 0);
  std::vector<Node> stack(dag.parents(j).begin(), dag.parents(j).end());
  while (!stack.empty()) {
    Node v = stack.back();
    stack.pop_back();
    if (seen[v]) continue;
    seen[v] = 1;
    for (Node u : dag.parents(v)) stack.push_back(u);
  }
  NodeSet out;
  for (Node v = 0; v < dag.p(); ++v) {
    if (seen[v]) out.push_back(v);
  }
  return out;
}

// ---- interchange formats -------------------------------------------------
// JSON edge lists are 1-based node indices, matching column positions in the
// data files; names carry the column labels.

inline nlohmann::json dag_to_json(const Dag& dag) {
  nlohmann::json edges = nlohmann::json::array();
  for (auto [k, j] : dag.edges()) edges.push_back({k + 1, j + 1});
  return {{"p", dag.p()}, {"edges", edges}, {"names", dag.names()}};
}

inline Dag dag_from_json(const nlohmann::json& j) {
  try {
    const int p = j.at("p").get<int>();
    std::vector<Edge> edges;
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2) throw Error(ErrorCode::ParseError, "edge must be a pair");
      edges.emplace_back(e[0].get<int>() - 1, e[1].get<int>() - 1);
    }
    std::vector<std::string> names;
    if (j.contains("names")) names = j.at("names").get<std::vector<std::string>>();
    return Dag::from_edges(p, std::move(edges), std::move(names));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("graph json: ") + e.what());
  }
}

inline Dag read_dag_json(const std::string& path) {
  const auto text = io::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
  return dag_from_json(j);
}

inline std::string dag_to_dot(const Dag& dag, const std::string& graph_name = "G") {
  std::string out = "digraph " + graph_name + " {\n";
  for (auto [k, j] : dag.edges()) {
    out += "  \"" + dag.names()[k] + "\" -> \"" + dag.names()[j] + "\";\n";
  }
  out += "}\n";
  return out;
}

/// Adjacency CSV: header row of names, then p rows of 0/1 entries.
inline Dag dag_from_adjacency_csv(const std::string& text) {
  auto rows = io::lines(text);
  while (!rows.empty() && io::trim(rows.back()).empty()) rows.pop_back();
  if (rows.empty()) throw Error(ErrorCode::ParseError, "adjacency csv is empty");
  auto names = io::split_csv_line(rows[0]);
  const int p = static_cast<int>(names.size());
  if (static_cast<int>(rows.size()) - 1 != p) {
    throw Error(ErrorCode::NonSquareInput, "adjacency csv has " + std::to_string(rows.size() - 1) + " rows for " +
                                               std::to_string(p) + " columns");
  }
  std::vector<std::vector<int>> u(p);
  for (int r = 0; r < p; ++r) {
    auto fields = io::split_csv_line(rows[r + 1]);
    if (static_cast<int>(fields.size()) != p) {
      throw Error(ErrorCode::NonSquareInput, "line " + std::to_string(r + 2) + " has " +
                                                 std::to_string(fields.size()) + " fields");
    }
    for (const auto& f : fields) {
      double v = io::parse_double(f, "line " + std::to_string(r + 2));
      u[r].push_back(static_cast<int>(v));
      if (v != 0.0 && v != 1.0) throw Error(ErrorCode::ParseError, "line " + std::to_string(r + 2) + ": not 0/1");
    }
  }
  return validate_acyclic(u, names);
}

inline std::string dag_to_adjacency_csv(const Dag& dag) {
  std::string out;
  for (int j = 0; j < dag.p(); ++j) out += (j ? "," : "") + dag.names()[j];
  out += "\n";
  for (int k = 0; k < dag.p(); ++k) {
    for (int j = 0; j < dag.p(); ++j) out += std::string(j ? "," : "") + (dag.has_edge(k, j) ? "1" : "0");
    out += "\n";
  }
  return out;
}

}  // namespace defuse
