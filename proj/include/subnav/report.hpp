#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "subnav/dataset.hpp"
#include "subnav/metrics.hpp"
#include "subnav/navgraph.hpp"

namespace subnav {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::string& path);

// Provenance record written next to every CLI output.
struct RunManifest {
  std::string subcommand;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, std::string> input_digests;  // path -> sha256
  std::uint64_t seed = 0;
  std::string version;

  void add_input(const std::string& path);
  nlohmann::json to_json() const;
  void write(const std::string& path) const;
};

// Top-down SVG of the graph with the ground-truth path, the agent trajectory,
// sub-path boundaries and shift markers. Layout follows node coordinates.
std::string plot_trajectory(const EnvGraph& graph, const Episode& episode, const std::vector<std::string>& trajectory,
                            const std::vector<ShiftEvent>& shift_events);

}  // namespace subnav
