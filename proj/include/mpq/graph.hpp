#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "mpq/error.hpp"

namespace mpq {

// ----- vertex kinds -----

struct LinearKind {
  int64_t in_features = 0;   // C
  int64_t out_features = 0;  // K
  bool has_bias = false;
};

struct BgemmKind {
  int64_t dim = 0;  // C, shared width of both activation operands
};

struct OpaqueKind {
  std::string tag;  // norms, activations, elementwise ops; never quantized
};

using VertexKind = std::variant<LinearKind, BgemmKind, OpaqueKind>;

inline bool is_quantizable(const VertexKind& k) {
  return !std::holds_alternative<OpaqueKind>(k);
}

struct Vertex {
  int id = -1;
  std::string name;
  VertexKind kind;
};

struct GraphSpec {
  std::vector<Vertex> vertices;
  std::vector<std::pair<int, int>> edges;
};

// ----- validated computation DAG -----

// Single-sink DAG over layer vertices. Successor lists are kept in ascending
// id order (deterministic partition walks); predecessor lists keep edge-list
// order, which defines operand order for multi-input vertices.
class CompGraph {
 public:
  static CompGraph build(const GraphSpec& spec);

  const std::vector<Vertex>& vertices() const { return vertices_; }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }

  bool has_vertex(int id) const { return index_.count(id) != 0; }

  const Vertex& vertex(int id) const {
    auto it = index_.find(id);
    if (it == index_.end()) fail(Errc::InvalidVertex, "no vertex with id " + std::to_string(id));
    return vertices_[it->second];
  }

  const std::vector<int>& successors(int id) const { return succ_.at(id); }
  const std::vector<int>& predecessors(int id) const { return pred_.at(id); }

  // in-degree-0 vertices, ascending id; these are the virtual start's successors
  const std::vector<int>& sources() const { return sources_; }
  int sink() const { return sink_; }

  const std::vector<int>& topo_order() const { return topo_; }

  std::vector<int> quantizable_ids() const {
    std::vector<int> out;
    for (const auto& v : vertices_)
      if (is_quantizable(v.kind)) out.push_back(v.id);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  std::vector<Vertex> vertices_;  // sorted by id
  std::vector<std::pair<int, int>> edges_;
  std::map<int, size_t> index_;
  std::map<int, std::vector<int>> succ_;
  std::map<int, std::vector<int>> pred_;
  std::vector<int> sources_;
  std::vector<int> topo_;
  int sink_ = -1;
};

inline CompGraph CompGraph::build(const GraphSpec& spec) {
  if (spec.vertices.empty()) fail(Errc::EmptyGraph, "graph has no vertices");

  CompGraph g;
  g.vertices_ = spec.vertices;
  std::sort(g.vertices_.begin(), g.vertices_.end(),
            [](const Vertex& a, const Vertex& b) { return a.id < b.id; });

  for (size_t i = 0; i < g.vertices_.size(); ++i) {
    const Vertex& v = g.vertices_[i];
    if (v.id < 0) fail(Errc::InvalidVertex, "negative vertex id");
    if (g.index_.count(v.id)) fail(Errc::InvalidVertex, "duplicate vertex id " + std::to_string(v.id));
    if (const auto* lin = std::get_if<LinearKind>(&v.kind)) {
      if (lin->in_features < 1 || lin->out_features < 1)
        fail(Errc::InvalidVertex, "linear dims must be >= 1 (vertex " + std::to_string(v.id) + ")");
    } else if (const auto* bg = std::get_if<BgemmKind>(&v.kind)) {
      if (bg->dim < 1) fail(Errc::InvalidVertex, "bgemm dim must be >= 1 (vertex " + std::to_string(v.id) + ")");
    }
    g.index_[v.id] = i;
    g.succ_[v.id] = {};
    g.pred_[v.id] = {};
  }

  std::set<std::pair<int, int>> seen;
  for (auto [s, d] : spec.edges) {
    if (!g.index_.count(s) || !g.index_.count(d))
      fail(Errc::DanglingEdge, "edge (" + std::to_string(s) + "," + std::to_string(d) +
                                   ") references a missing vertex");
    if (s == d) fail(Errc::CycleDetected, "self-loop at vertex " + std::to_string(s));
    if (!seen.insert({s, d}).second)
      fail(Errc::DuplicateEdge, "duplicate edge (" + std::to_string(s) + "," + std::to_string(d) + ")");
    g.edges_.push_back({s, d});
    g.succ_[s].push_back(d);
    g.pred_[d].push_back(s);
  }
  for (auto& [id, lst] : g.succ_) std::sort(lst.begin(), lst.end());

  // Kahn with a min-id frontier: deterministic topological order + cycle check.
  std::map<int, int> indeg;
  for (const auto& v : g.vertices_) indeg[v.id] = static_cast<int>(g.pred_[v.id].size());
  std::set<int> ready;
  for (auto& [id, d] : indeg)
    if (d == 0) ready.insert(id);
  g.sources_.assign(ready.begin(), ready.end());

  while (!ready.empty()) {
    int u = *ready.begin();
    ready.erase(ready.begin());
    g.topo_.push_back(u);
    for (int w : g.succ_[u])
      if (--indeg[w] == 0) ready.insert(w);
  }
  if (g.topo_.size() != g.vertices_.size()) fail(Errc::CycleDetected, "graph contains a cycle");

  for (const auto& v : g.vertices_) {
    if (g.succ_[v.id].empty()) {
      if (g.sink_ != -1)
        fail(Errc::MultipleSinks, "vertices " + std::to_string(g.sink_) + " and " +
                                      std::to_string(v.id) + " both have out-degree 0");
      g.sink_ = v.id;
    }
  }
  // unreachable: an acyclic nonempty graph has at least one out-degree-0 vertex
  if (g.sink_ == -1) fail(Errc::CycleDetected, "no sink vertex");
  return g;
}

inline CompGraph build_graph(const GraphSpec& spec) { return CompGraph::build(spec); }

// ----- longest paths from the virtual start -----

// Edge count of the longest path from the virtual start vertex (which precedes
// all in-degree-0 vertices). Computed by DP over a topological order; sources
// get length 1.
using PathLenMap = std::map<int, int>;

inline PathLenMap longest_path_lengths(const CompGraph& g) {
  PathLenMap len;
  for (int u : g.topo_order()) {
    int best = 1;
    for (int p : g.predecessors(u)) best = std::max(best, len.at(p) + 1);
    len[u] = best;
  }
  return len;
}

// ----- partition into sequential groups -----

struct Group {
  int index = 0;
  std::vector<int> layers;  // quantizable vertex ids, execution order
};

struct Region {
  std::vector<int> members;  // all vertices absorbed before opaque removal
  std::vector<int> removed;  // opaque ids dropped from this region
  int group_index = -1;      // -1 when the region had no quantizable layer
};

struct PartitionResult {
  std::vector<Group> groups;
  std::vector<Region> regions;
};

// Splits the DAG into single-entry/single-exit regions executed strictly in
// sequence. Walk from the virtual start: the active frontier absorbs every
// vertex whose longest-path length has been reached, expanding through its
// successors, until exactly one vertex remains; that convergence vertex closes
// the region. Opaque vertices are then dropped; regions left empty are skipped.
//
// Frontier passes iterate a sorted snapshot and coalesce duplicate pushes, so
// the output is deterministic. A region can never straddle the sink: the sink
// has the strictly largest path length, so the frontier always collapses onto
// it last.
inline PartitionResult partition_sequential(const CompGraph& g, int max_group_size = 12) {
  const PathLenMap len = longest_path_lengths(g);
  int max_len = 0;
  for (const auto& [id, l] : len) max_len = std::max(max_len, l);

  PartitionResult out;
  std::set<int> absorbed;  // guards against re-pushing vertices already in a region

  // virtual start: path_len 0, successors = sources
  int cursor = -1;
  bool at_start = true;

  while (at_start || cursor != g.sink()) {
    std::vector<int> region;
    int cur_len = at_start ? 1 : len.at(cursor) + 1;
    std::set<int> frontier;
    if (at_start) {
      frontier.insert(g.sources().begin(), g.sources().end());
      at_start = false;
    } else {
      for (int s : g.successors(cursor))
        if (!absorbed.count(s)) frontier.insert(s);
    }

    while (frontier.size() > 1) {
      bool progressed = false;
      const std::vector<int> pass(frontier.begin(), frontier.end());
      for (int v : pass) {
        if (len.at(v) > cur_len) continue;
        frontier.erase(v);
        absorbed.insert(v);
        region.push_back(v);
        progressed = true;
        for (int s : g.successors(v))
          if (!absorbed.count(s)) frontier.insert(s);
      }
      if (!progressed && cur_len > max_len)
        fail(Errc::NonConvergingFrontier,
             "frontier of size " + std::to_string(frontier.size()) + " never converges");
      ++cur_len;
    }
    if (frontier.empty())
      fail(Errc::NonConvergingFrontier, "frontier emptied before reaching the sink");

    cursor = *frontier.begin();
    absorbed.insert(cursor);
    region.push_back(cursor);

    // execution order within the region: path length breaks all edge ties
    std::sort(region.begin(), region.end(), [&](int a, int b) {
      return std::pair(len.at(a), a) < std::pair(len.at(b), b);
    });

    Region rec;
    rec.members = region;
    for (int v : region) {
      if (is_quantizable(g.vertex(v).kind))
        continue;
      rec.removed.push_back(v);
    }
    std::vector<int> layers;
    for (int v : region)
      if (is_quantizable(g.vertex(v).kind)) layers.push_back(v);

    if (!layers.empty()) {
      if (static_cast<int>(layers.size()) > max_group_size)
        fail(Errc::GroupTooLarge,
             "group of " + std::to_string(layers.size()) + " layers exceeds the cap of " +
                 std::to_string(max_group_size) +
                 "; mark layers non-quantizable or merge formats");
      Group grp;
      grp.index = static_cast<int>(out.groups.size());
      grp.layers = std::move(layers);
      rec.group_index = grp.index;
      out.groups.push_back(std::move(grp));
    }
    out.regions.push_back(std::move(rec));
  }
  return out;
}

// ----- per-group configuration encoding -----

// Config index p enumerates per-layer format choices base F: digit l of p is
// the format of the l-th layer in the group's ordered layer list. This
// encoding is the interop contract for timing tables.
inline uint64_t group_config_count(size_t group_size, int format_count) {
  if (format_count < 2) fail(Errc::InvalidFormat, "need at least 2 formats");
  uint64_t n = 1;
  for (size_t i = 0; i < group_size; ++i) {
    if (n > (1ULL << 62) / static_cast<uint64_t>(format_count))
      fail(Errc::TooLarge, "F^L overflows the config index space");
    n *= static_cast<uint64_t>(format_count);
  }
  return n;
}

inline int config_format(const Group& group, uint64_t p, size_t l, int format_count) {
  const uint64_t total = group_config_count(group.layers.size(), format_count);
  if (p >= total) fail(Errc::IndexOutOfRange, "config index " + std::to_string(p));
  if (l >= group.layers.size()) fail(Errc::IndexOutOfRange, "layer position " + std::to_string(l));
  uint64_t q = p;
  for (size_t i = 0; i < l; ++i) q /= static_cast<uint64_t>(format_count);
  return static_cast<int>(q % static_cast<uint64_t>(format_count));
}

// ----- dot emission -----

inline std::string to_dot(const CompGraph& g) {
  std::ostringstream os;
  os << "digraph model {\n  rankdir=TB;\n";
  for (const auto& v : g.vertices()) {
    const char* shape = "box";
    if (std::holds_alternative<BgemmKind>(v.kind)) shape = "diamond";
    if (std::holds_alternative<OpaqueKind>(v.kind)) shape = "ellipse";
    os << "  n" << v.id << " [label=\"" << v.name << "\", shape=" << shape << "];\n";
  }
  for (auto [s, d] : g.edges()) os << "  n" << s << " -> n" << d << ";\n";
  os << "}\n";
  return os.str();
}

}  // namespace mpq
