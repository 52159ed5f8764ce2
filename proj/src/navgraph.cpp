#include "subnav/navgraph.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <queue>
#include <set>

#include "subnav/error.hpp"

namespace subnav {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool finite(const Position& p) { return std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.z); }

}  // namespace

double euclidean(const Position& a, const Position& b) {
  return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) + (a.z - b.z) * (a.z - b.z));
}

DirectionFeature direction_features(const Position& from, const Position& to) {
  const double dx = to.x - from.x, dy = to.y - from.y, dz = to.z - from.z;
  const double horizontal = std::hypot(dx, dy);
  if (horizontal == 0.0 && dz == 0.0) throw GraphError("direction_features: zero displacement");
  const double heading = std::atan2(dx, dy);
  const double elevation = std::atan2(dz, horizontal);
  return {std::sin(heading), std::cos(heading), std::sin(elevation), std::cos(elevation)};
}

EnvGraph::EnvGraph(std::string scan, std::vector<Viewpoint> nodes,
                   const std::vector<std::pair<std::string, std::string>>& edges)
    : scan_(std::move(scan)), nodes_(std::move(nodes)) {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& vp = nodes_[i];
    if (!finite(vp.position)) throw GraphError("viewpoint '" + vp.id + "' has a non-finite coordinate");
    if (!index_.emplace(vp.id, static_cast<int>(i)).second) {
      throw GraphError("duplicate viewpoint id '" + vp.id + "'");
    }
  }
  adjacency_.resize(nodes_.size());
  std::set<std::pair<int, int>> seen;
  for (const auto& [a, b] : edges) {
    auto ia = index_.find(a);
    if (ia == index_.end()) throw GraphError("edge references unknown viewpoint '" + a + "'");
    auto ib = index_.find(b);
    if (ib == index_.end()) throw GraphError("edge references unknown viewpoint '" + b + "'");
    int u = ia->second, v = ib->second;
    if (u == v) throw GraphError("self-loop at viewpoint '" + a + "'");
    if (!seen.insert({std::min(u, v), std::max(u, v)}).second) continue;
    const double w = euclidean(nodes_[u].position, nodes_[v].position);
    if (!(w > 0)) throw GraphError("edge '" + a + "'-'" + b + "' has zero length");
    adjacency_[u].push_back({v, w});
    adjacency_[v].push_back({u, w});
    edges_.emplace_back(std::min(u, v), std::max(u, v));
  }
  for (auto& adj : adjacency_) {
    std::sort(adj.begin(), adj.end(), [](const Edge& l, const Edge& r) { return l.to < r.to; });
  }
  compute_all_pairs();
}

void EnvGraph::compute_all_pairs() {
  const std::size_t n = nodes_.size();
  dist_.assign(n * n, kInf);
  pred_.assign(n * n, -1);
  using Item = std::pair<double, int>;
  for (std::size_t src = 0; src < n; ++src) {
    double* dist = &dist_[src * n];
    int* pred = &pred_[src * n];
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    dist[src] = 0.0;
    queue.push({0.0, static_cast<int>(src)});
    while (!queue.empty()) {
      auto [d, u] = queue.top();
      queue.pop();
      if (d > dist[u]) continue;
      for (const auto& e : adjacency_[u]) {
        const double nd = d + e.weight;
        if (nd < dist[e.to]) {
          dist[e.to] = nd;
          pred[e.to] = u;
          queue.push({nd, e.to});
        }
      }
    }
  }
  // Both directions sum the same edges in different orders; keep the matrix exactly symmetric.
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const double d = std::min(dist_[a * n + b], dist_[b * n + a]);
      dist_[a * n + b] = dist_[b * n + a] = d;
    }
  }
}

int EnvGraph::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw GraphError("unknown viewpoint '" + id + "' in scan '" + scan_ + "'");
  return it->second;
}

bool EnvGraph::adjacent(int a, int b) const {
  const auto& adj = adjacency_.at(a);
  return std::binary_search(adj.begin(), adj.end(), Edge{b, 0.0},
                            [](const Edge& l, const Edge& r) { return l.to < r.to; });
}

Geodesic EnvGraph::shortest_dist(int a, int b) const {
  const double d = dist_.at(static_cast<std::size_t>(a) * nodes_.size() + b);
  if (std::isinf(d)) return std::nullopt;
  return d;
}

Geodesic EnvGraph::shortest_dist(const std::string& a, const std::string& b) const {
  return shortest_dist(index_of(a), index_of(b));
}

std::vector<int> EnvGraph::shortest_path(int a, int b) const {
  const std::size_t n = nodes_.size();
  if (std::isinf(dist_.at(a * n + b))) return {};
  std::vector<int> path{b};
  while (path.back() != a) path.push_back(pred_[a * n + path.back()]);
  std::reverse(path.begin(), path.end());
  return path;
}

double EnvGraph::path_length(const std::vector<int>& path) const {
  double total = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) {
    const int u = path[i - 1], v = path[i];
    if (!adjacent(u, v)) {
      throw GraphError("viewpoints '" + nodes_[u].id + "' and '" + nodes_[v].id + "' are not adjacent");
    }
    total += euclidean(nodes_[u].position, nodes_[v].position);
  }
  return total;
}

double EnvGraph::path_length(const std::vector<std::string>& path) const {
  std::vector<int> ids;
  ids.reserve(path.size());
  for (const auto& id : path) ids.push_back(index_of(id));
  return path_length(ids);
}

nlohmann::json EnvGraph::to_json() const {
  nlohmann::json doc;
  doc["scan"] = scan_;
  auto& nodes = doc["nodes"] = nlohmann::json::array();
  for (const auto& vp : nodes_) {
    nlohmann::json n = {{"id", vp.id}, {"x", vp.position.x}, {"y", vp.position.y}, {"z", vp.position.z}};
    if (!vp.label.empty()) n["label"] = vp.label;
    nodes.push_back(std::move(n));
  }
  auto& edges = doc["edges"] = nlohmann::json::array();
  for (const auto& [u, v] : edges_) edges.push_back({nodes_[u].id, nodes_[v].id});
  return doc;
}

EnvGraph graph_from_json(const nlohmann::json& doc) {
  try {
    std::vector<Viewpoint> nodes;
    for (const auto& n : doc.at("nodes")) {
      Viewpoint vp;
      vp.id = n.at("id").get<std::string>();
      // Non-finite coordinates arrive as null in JSON.
      for (auto [key, slot] : {std::pair{"x", &vp.position.x}, {"y", &vp.position.y}, {"z", &vp.position.z}}) {
        const auto& v = n.at(key);
        if (!v.is_number()) throw GraphError("viewpoint '" + vp.id + "' has a non-finite coordinate");
        *slot = v.get<double>();
      }
      if (n.contains("label")) vp.label = n["label"].get<std::string>();
      nodes.push_back(std::move(vp));
    }
    std::vector<std::pair<std::string, std::string>> edges;
    for (const auto& e : doc.at("edges")) edges.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::string>());
    return EnvGraph(doc.value("scan", std::string{}), std::move(nodes), edges);
  } catch (const nlohmann::json::exception& e) {
    throw GraphError(std::string("malformed graph document: ") + e.what());
  }
}

EnvGraph load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw GraphError("cannot open graph file " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw GraphError(path + ": " + e.what());
  }
  return graph_from_json(doc);
}

EnvGraph graph_from_connectivity(const std::string& scan, const nlohmann::json& doc) {
  std::vector<Viewpoint> nodes;
  std::vector<std::pair<std::string, std::string>> edges;
  try {
    for (const auto& item : doc) {
      if (!item.value("included", true)) continue;
      const auto& pose = item.at("pose");
      nodes.push_back({item.at("image_id").get<std::string>(),
                       {pose.at(3).get<double>(), pose.at(7).get<double>(), pose.at(11).get<double>()},
                       {}});
    }
    for (std::size_t i = 0; i < doc.size(); ++i) {
      const auto& item = doc[i];
      if (!item.value("included", true)) continue;
      const auto& flags = item.at("unobstructed");
      for (std::size_t j = i + 1; j < doc.size() && j < flags.size(); ++j) {
        if (flags[j].get<bool>() && doc[j].value("included", true)) {
          edges.emplace_back(item.at("image_id").get<std::string>(), doc[j].at("image_id").get<std::string>());
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw GraphError("malformed connectivity document for scan '" + scan + "': " + e.what());
  }
  return EnvGraph(scan, std::move(nodes), edges);
}

void GraphStore::add(EnvGraph graph) {
  std::string scan = graph.scan();
  graphs_.insert_or_assign(std::move(scan), std::move(graph));
}

const EnvGraph& GraphStore::at(const std::string& scan) const {
  auto it = graphs_.find(scan);
  if (it == graphs_.end()) throw GraphError("graph for scan '" + scan + "' not loaded");
  return it->second;
}

const EnvGraph& GraphStore::get(const std::string& scan) {
  if (auto it = graphs_.find(scan); it != graphs_.end()) return it->second;
  if (dir_.empty()) throw GraphError("no graph for scan '" + scan + "' and no graph directory given");
  namespace fs = std::filesystem;
  const fs::path canonical = fs::path(dir_) / (scan + ".json");
  const fs::path connectivity = fs::path(dir_) / (scan + "_connectivity.json");
  if (fs::exists(canonical)) {
    graphs_.insert_or_assign(scan, load_graph(canonical.string()));
  } else if (fs::exists(connectivity)) {
    std::ifstream in(connectivity);
    nlohmann::json doc;
    in >> doc;
    graphs_.insert_or_assign(scan, graph_from_connectivity(scan, doc));
  } else {
    throw GraphError("no graph file for scan '" + scan + "' under " + dir_);
  }
  return graphs_.at(scan);
}

}  // namespace subnav
