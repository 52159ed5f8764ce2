#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "subnav/dataset.hpp"
#include "subnav/navgraph.hpp"

namespace testing_support {

inline std::string data_path(const std::string& name) { return std::string(SUBNAV_DATA_DIR) + "/" + name; }

struct NodeSpec {
  std::string id;
  double x, y, z;
};

inline subnav::EnvGraph make_graph(const std::vector<NodeSpec>& nodes,
                                   const std::vector<std::pair<std::string, std::string>>& edges,
                                   const std::string& scan = "s") {
  std::vector<subnav::Viewpoint> vps;
  for (const auto& n : nodes) vps.push_back({n.id, {n.x, n.y, n.z}, ""});
  return subnav::EnvGraph(scan, vps, edges);
}

// A(0,0,0)-B(1,0,0)-C(2,0,0)
inline subnav::EnvGraph line3() {
  return make_graph({{"A", 0, 0, 0}, {"B", 1, 0, 0}, {"C", 2, 0, 0}}, {{"A", "B"}, {"B", "C"}});
}

// Random graph on n nodes in a 10 m box with edge probability p; may be disconnected.
inline subnav::EnvGraph random_graph(std::mt19937_64& rng, int n, double p, bool connect = false) {
  std::uniform_real_distribution<double> pos(0.0, 10.0), coin(0.0, 1.0);
  std::vector<NodeSpec> nodes;
  for (int i = 0; i < n; ++i) nodes.push_back({"v" + std::to_string(i), pos(rng), pos(rng), pos(rng) * 0.1});
  std::vector<std::pair<std::string, std::string>> edges;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if ((connect && j == i + 1) || coin(rng) < p) edges.push_back({nodes[i].id, nodes[j].id});
    }
  }
  return make_graph(nodes, edges, "rand");
}

// Exhaustive simple-path search; +inf when unreachable.
inline double brute_shortest(const subnav::EnvGraph& g, int a, int b) {
  double best = std::numeric_limits<double>::infinity();
  std::vector<char> seen(g.size(), 0);
  std::function<void(int, double)> walk = [&](int u, double len) {
    if (u == b) {
      best = std::min(best, len);
      return;
    }
    seen[u] = 1;
    for (const auto& e : g.neighbors(u)) {
      if (!seen[e.to]) walk(e.to, len + e.weight);
    }
    seen[u] = 0;
  };
  walk(a, 0.0);
  return best;
}

// Minimum over every monotone alignment path, enumerated explicitly.
inline double brute_dtw(const subnav::EnvGraph& g, const std::vector<int>& t, const std::vector<int>& r) {
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, std::size_t, double)> go = [&](std::size_t i, std::size_t j, double acc) {
    const double c = acc + g.shortest_dist(t[i], r[j]).value_or(std::numeric_limits<double>::infinity());
    if (i + 1 == t.size() && j + 1 == r.size()) {
      best = std::min(best, c);
      return;
    }
    if (i + 1 < t.size()) go(i + 1, j, c);
    if (j + 1 < r.size()) go(i, j + 1, c);
    if (i + 1 < t.size() && j + 1 < r.size()) go(i + 1, j + 1, c);
  };
  go(0, 0, 0.0);
  return best;
}

inline std::vector<std::string> ids(const subnav::EnvGraph& g, const std::vector<int>& path) {
  std::vector<std::string> out;
  for (int i : path) out.push_back(g.node(i).id);
  return out;
}

// Random walk of `len` viewpoints (or fewer when stuck on an isolated node).
inline std::vector<int> random_walk(const subnav::EnvGraph& g, std::mt19937_64& rng, int start, int len) {
  std::vector<int> path{start};
  while (static_cast<int>(path.size()) < len) {
    const auto& nb = g.neighbors(path.back());
    if (nb.empty()) break;
    path.push_back(nb[std::uniform_int_distribution<std::size_t>(0, nb.size() - 1)(rng)].to);
  }
  return path;
}

inline subnav::Episode make_episode(const std::vector<std::string>& path, const std::vector<std::pair<int, int>>& spans,
                                    const std::vector<std::vector<std::string>>& words, const std::string& scan = "s",
                                    const std::string& id = "ep") {
  subnav::Episode ep;
  ep.path_id = id;
  ep.scan = scan;
  ep.path = path;
  for (std::size_t i = 0; i < words.size(); ++i) {
    subnav::SubInstruction s;
    s.id = static_cast<int>(i) + 1;
    s.words = words[i];
    ep.sub_instructions.push_back(s);
    if (!ep.instruction.empty()) ep.instruction += ' ';
    for (std::size_t w = 0; w < words[i].size(); ++w) ep.instruction += (w ? " " : "") + words[i][w];
  }
  for (const auto& [a, b] : spans) ep.sub_paths.push_back({a, b});
  return ep;
}

}  // namespace testing_support
