#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "subnav/error.hpp"
#include "subnav/navgraph.hpp"
#include "support.hpp"

using namespace subnav;
using testing_support::make_graph;

namespace {

EnvGraph triangle() {
  return make_graph({{"A", 0, 0, 0}, {"B", 4, 0, 0}, {"C", 0, 3, 0}}, {{"A", "B"}, {"B", "C"}, {"A", "C"}});
}

double weight(const EnvGraph& g, const std::string& a, const std::string& b) {
  for (const auto& e : g.neighbors(g.index_of(a))) {
    if (e.to == g.index_of(b)) return e.weight;
  }
  return -1;
}

}  // namespace

TEST(LoadGraph, TwoNodes) {
  const auto g = graph_from_json(nlohmann::json::parse(
      R"({"scan":"s","nodes":[{"id":"A","x":0,"y":0,"z":0},{"id":"B","x":3,"y":0,"z":0}],"edges":[["A","B"]]})"));
  ASSERT_EQ(g.edges().size(), 1u);
  EXPECT_DOUBLE_EQ(weight(g, "A", "B"), 3.0);
  EXPECT_DOUBLE_EQ(weight(g, "B", "A"), 3.0);
}

TEST(LoadGraph, DanglingEdgeNamesId) {
  try {
    graph_from_json(nlohmann::json::parse(R"({"nodes":[{"id":"A","x":0,"y":0,"z":0}],"edges":[["A","Z"]]})"));
    FAIL();
  } catch (const GraphError& e) {
    EXPECT_NE(std::string(e.what()).find("'Z'"), std::string::npos);
  }
}

TEST(LoadGraph, TriangleWeights) {
  const auto g = triangle();
  EXPECT_DOUBLE_EQ(weight(g, "A", "B"), 4.0);
  EXPECT_DOUBLE_EQ(weight(g, "A", "C"), 3.0);
  EXPECT_DOUBLE_EQ(weight(g, "B", "C"), 5.0);
}

TEST(LoadGraph, DuplicateAndNonFinite) {
  EXPECT_THROW(make_graph({{"A", 0, 0, 0}, {"A", 1, 0, 0}}, {}), GraphError);
  EXPECT_THROW(make_graph({{"A", 0, NAN, 0}}, {}), GraphError);
  EXPECT_THROW(graph_from_json(nlohmann::json::parse(R"({"nodes":[{"id":"A","x":null,"y":0,"z":0}],"edges":[]})")),
               GraphError);
  EXPECT_THROW(make_graph({{"A", 0, 0, 0}}, {{"A", "A"}}), GraphError);
}

TEST(LoadGraph, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "subnav_graph_test";
  std::filesystem::create_directories(dir);
  const auto g = triangle();
  {
    std::ofstream out(dir / "s.json");
    out << g.to_json().dump();
  }
  GraphStore store(dir.string());
  const auto& loaded = store.get("s");
  EXPECT_EQ(loaded.to_json(), g.to_json());
  EXPECT_TRUE(store.has("s"));
  EXPECT_THROW(store.get("missing"), GraphError);
  std::filesystem::remove_all(dir);
}

TEST(LoadGraph, ConnectivityAdapter) {
  auto pose = [](double x, double y, double z) {
    return nlohmann::json::array({1, 0, 0, x, 0, 1, 0, y, 0, 0, 1, z, 0, 0, 0, 1});
  };
  nlohmann::json doc = nlohmann::json::array();
  doc.push_back({{"image_id", "a"}, {"pose", pose(0, 0, 0)}, {"included", true}, {"unobstructed", {false, true, true}}});
  doc.push_back({{"image_id", "b"}, {"pose", pose(3, 4, 0)}, {"included", true}, {"unobstructed", {true, false, false}}});
  doc.push_back({{"image_id", "c"}, {"pose", pose(9, 9, 0)}, {"included", false}, {"unobstructed", {true, false, false}}});
  const auto g = graph_from_connectivity("scan", doc);
  EXPECT_EQ(g.size(), 2u);
  ASSERT_EQ(g.edges().size(), 1u);
  EXPECT_DOUBLE_EQ(weight(g, "a", "b"), 5.0);
}

TEST(ShortestDist, Basics) {
  const auto t = triangle();
  EXPECT_DOUBLE_EQ(*t.shortest_dist("A", "B"), 4.0);
  EXPECT_DOUBLE_EQ(*t.shortest_dist("A", "A"), 0.0);
  const auto line = make_graph({{"A", 0, 0, 0}, {"B", 1, 0, 0}, {"C", 1, 1, 0}}, {{"A", "B"}, {"B", "C"}});
  EXPECT_DOUBLE_EQ(*line.shortest_dist("A", "C"), 2.0);
  EXPECT_THROW(t.shortest_dist("A", "Q"), GraphError);
}

TEST(ShortestDist, Unreachable) {
  const auto g = make_graph({{"A", 0, 0, 0}, {"B", 1, 0, 0}, {"C", 5, 0, 0}}, {{"A", "B"}});
  EXPECT_FALSE(g.shortest_dist("A", "C").has_value());
  EXPECT_TRUE(g.shortest_path(0, 2).empty());
}

TEST(ShortestDist, MatchesPathEnumeration) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 60; ++trial) {
    const auto g = testing_support::random_graph(rng, 8, 0.35);
    for (int a = 0; a < 8; ++a) {
      for (int b = 0; b < 8; ++b) {
        const double oracle = testing_support::brute_shortest(g, a, b);
        const auto d = g.shortest_dist(a, b);
        if (std::isinf(oracle)) {
          EXPECT_FALSE(d.has_value());
        } else {
          ASSERT_TRUE(d.has_value());
          EXPECT_NEAR(*d, oracle, 1e-9);
          const auto path = g.shortest_path(a, b);
          ASSERT_FALSE(path.empty());
          EXPECT_EQ(path.front(), a);
          EXPECT_EQ(path.back(), b);
          EXPECT_NEAR(g.path_length(path), oracle, 1e-9);
        }
      }
    }
  }
}

TEST(ShortestDist, MetricProperties) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const auto g = testing_support::random_graph(rng, 12, 0.3, true);
    for (int a = 0; a < 12; ++a) {
      for (int b = 0; b < 12; ++b) {
        EXPECT_EQ(*g.shortest_dist(a, b), *g.shortest_dist(b, a));
        for (int c = 0; c < 12; ++c) {
          EXPECT_LE(*g.shortest_dist(a, c), *g.shortest_dist(a, b) + *g.shortest_dist(b, c) + 1e-12);
        }
      }
      const auto walk = testing_support::random_walk(g, rng, a, 7);
      EXPECT_GE(g.path_length(walk) + 1e-12, *g.shortest_dist(walk.front(), walk.back()));
    }
  }
}

TEST(PathLength, Examples) {
  const auto two = make_graph({{"A", 0, 0, 0}, {"B", 3, 0, 0}}, {{"A", "B"}});
  EXPECT_DOUBLE_EQ(two.path_length(std::vector<std::string>{"A"}), 0.0);
  EXPECT_DOUBLE_EQ(two.path_length(std::vector<std::string>{"A", "B", "A"}), 6.0);
  EXPECT_DOUBLE_EQ(triangle().path_length(std::vector<std::string>{"A", "B", "C"}), 9.0);
}

TEST(PathLength, NonAdjacentNamesPair) {
  const auto g = make_graph({{"A", 0, 0, 0}, {"B", 1, 0, 0}, {"C", 2, 0, 0}}, {{"A", "B"}, {"B", "C"}});
  try {
    g.path_length(std::vector<std::string>{"A", "C"});
    FAIL();
  } catch (const GraphError& e) {
    EXPECT_NE(std::string(e.what()).find("'A' and 'C'"), std::string::npos);
  }
}

TEST(Direction, Examples) {
  const auto ahead = direction_features({0, 0, 0}, {0, 1, 0});
  EXPECT_NEAR(ahead.sin_heading, 0, 1e-15);
  EXPECT_NEAR(ahead.cos_heading, 1, 1e-15);
  EXPECT_NEAR(ahead.sin_elevation, 0, 1e-15);
  EXPECT_NEAR(ahead.cos_elevation, 1, 1e-15);
  const auto right = direction_features({0, 0, 0}, {1, 0, 0});
  EXPECT_NEAR(right.sin_heading, 1, 1e-15);
  EXPECT_NEAR(right.cos_heading, 0, 1e-15);
  const auto up = direction_features({0, 0, 0}, {0, 1, 1});
  EXPECT_NEAR(up.sin_heading, 0, 1e-15);
  EXPECT_NEAR(up.cos_heading, 1, 1e-15);
  EXPECT_NEAR(up.sin_elevation, std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(up.cos_elevation, std::sqrt(0.5), 1e-15);
  EXPECT_THROW(direction_features({1, 2, 3}, {1, 2, 3}), GraphError);
}

TEST(Direction, UnitCircle) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 3);
  for (int i = 0; i < 1000; ++i) {
    const Position a{n(rng), n(rng), n(rng)}, b{n(rng), n(rng), n(rng)};
    const auto d = direction_features(a, b);
    EXPECT_NEAR(d.sin_heading * d.sin_heading + d.cos_heading * d.cos_heading, 1, 1e-12);
    EXPECT_NEAR(d.sin_elevation * d.sin_elevation + d.cos_elevation * d.cos_elevation, 1, 1e-12);
  }
}

TEST(Direction, StraightDown) {
  const auto d = direction_features({0, 0, 1}, {0, 0, 0});
  EXPECT_NEAR(d.sin_elevation, -1, 1e-15);
  EXPECT_NEAR(d.sin_heading * d.sin_heading + d.cos_heading * d.cos_heading, 1, 1e-12);
}
