#pragma once

#include <array>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

namespace subnav {

struct Position {
  double x = 0, y = 0, z = 0;
};

struct Viewpoint {
  std::string id;
  Position position;
  std::string label;  // optional semantic tag; seeds synthetic features
};

// Heading measured from +y clockwise (towards +x); elevation from the
// horizontal plane.
struct DirectionFeature {
  double sin_heading = 0, cos_heading = 1, sin_elevation = 0, cos_elevation = 1;
  std::array<double, 4> values() const { return {sin_heading, cos_heading, sin_elevation, cos_elevation}; }
};

DirectionFeature direction_features(const Position& from, const Position& to);
double euclidean(const Position& a, const Position& b);

// Geodesic distance; nullopt means the target is unreachable.
using Geodesic = std::optional<double>;

class EnvGraph {
 public:
  struct Edge {
    int to;
    double weight;
  };

  EnvGraph() = default;
  EnvGraph(std::string scan, std::vector<Viewpoint> nodes, const std::vector<std::pair<std::string, std::string>>& edges);

  const std::string& scan() const { return scan_; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Viewpoint>& nodes() const { return nodes_; }
  const Viewpoint& node(int index) const { return nodes_.at(index); }
  const Viewpoint& node(const std::string& id) const { return nodes_[index_of(id)]; }
  const std::vector<Edge>& neighbors(int index) const { return adjacency_.at(index); }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }

  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  // Throws GraphError naming the id when unknown.
  int index_of(const std::string& id) const;
  bool adjacent(int a, int b) const;

  Geodesic shortest_dist(int a, int b) const;
  Geodesic shortest_dist(const std::string& a, const std::string& b) const;
  // Viewpoint indices of a minimal path, inclusive of both endpoints; empty if unreachable.
  std::vector<int> shortest_path(int a, int b) const;

  double path_length(const std::vector<std::string>& path) const;
  double path_length(const std::vector<int>& path) const;

  nlohmann::json to_json() const;

 private:
  void compute_all_pairs();

  std::string scan_;
  std::vector<Viewpoint> nodes_;
  std::unordered_map<std::string, int> index_;
  std::vector<std::vector<Edge>> adjacency_;
  std::vector<std::pair<int, int>> edges_;
  std::vector<double> dist_;  // row-major n*n, +inf when unreachable
  std::vector<int> pred_;     // predecessor of column node on a shortest path from row node
};

// Canonical form: {"scan", "nodes": [{"id","x","y","z"[,"label"]}], "edges": [[a,b]]}.
EnvGraph graph_from_json(const nlohmann::json& doc);
EnvGraph load_graph(const std::string& path);

// Matterport-style connectivity list (image_id, 4x4 pose, included,
// unobstructed flags). Position is the pose translation column; an edge is
// added when both endpoints are included and either marks the other unobstructed.
EnvGraph graph_from_connectivity(const std::string& scan, const nlohmann::json& doc);

// Loads every graph referenced by `scans` from a directory holding either
// "<scan>.json" (canonical) or "<scan>_connectivity.json" files.
class GraphStore {
 public:
  explicit GraphStore(std::string dir = {}) : dir_(std::move(dir)) {}
  void add(EnvGraph graph);
  // Loads on first use; not safe to call concurrently.
  const EnvGraph& get(const std::string& scan);
  // Read-only lookup of an already-loaded graph.
  const EnvGraph& at(const std::string& scan) const;
  bool has(const std::string& scan) const { return graphs_.count(scan) != 0; }
  const std::unordered_map<std::string, EnvGraph>& all() const { return graphs_; }

 private:
  std::string dir_;
  std::unordered_map<std::string, EnvGraph> graphs_;
};

}  // namespace subnav
