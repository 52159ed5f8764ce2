#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "subnav/chunker.hpp"
#include "subnav/navgraph.hpp"

namespace subnav {

// Radius within which the agent counts as having reached a sub-path end.
inline constexpr double kShiftRadius = 0.5;
// Maximum gap between two paths joined into one long episode.
inline constexpr double kJoinRadius = 3.0;

struct SubPath {
  int start = 0;  // inclusive, 0-based into Episode::path
  int end = 0;    // inclusive
  int viewpoints() const { return end - start + 1; }
  bool operator==(const SubPath&) const = default;
};

struct Episode {
  std::string path_id;
  std::string scan;
  double heading = 0.0;
  std::vector<std::string> path;
  std::string instruction;
  std::vector<SubInstruction> sub_instructions;
  std::vector<SubPath> sub_paths;  // empty for unaligned (plain R2R) data

  bool aligned() const { return !sub_paths.empty(); }
  const std::string& goal() const { return path.back(); }
};

// Every broken alignment rule, in a stable order. Empty means valid.
std::vector<std::string> episode_violations(const Episode& episode, bool require_alignment = true);
// Viewpoints unknown to the graph or consecutive pairs that are not adjacent.
std::vector<std::string> episode_graph_violations(const Episode& episode, const EnvGraph& graph);
// Throws ValidationError("<path_id>: <rule>; ...") when violations exist.
void validate_episode(const Episode& episode, bool require_alignment = true);

// Field names of the released fine-grained annotation files. Chunk views in
// that release are 1-based.
struct FineGrainedFields {
  std::string path_id = "path_id";
  std::string scan = "scan";
  std::string heading = "heading";
  std::string path = "path";
  std::string instructions = "instructions";
  std::string chunks = "new_instructions";
  std::string chunk_views = "chunk_view";
  bool one_based = true;
};

enum class EpisodeFormat { Auto, Canonical, FineGrained, R2R };

struct LoadOptions {
  EpisodeFormat format = EpisodeFormat::Auto;
  FineGrainedFields fields;
  bool validate = true;
};

nlohmann::json episode_to_json(const Episode& episode);
Episode episode_from_json(const nlohmann::json& record);
nlohmann::json episodes_to_json(const std::vector<Episode>& episodes);

std::vector<Episode> episodes_from_json(const nlohmann::json& doc, const LoadOptions& options = {});
std::vector<Episode> load_episodes(const std::string& path, const LoadOptions& options = {});
void save_episodes(const std::string& path, const std::vector<Episode>& episodes);

// Parses a Python list literal of strings / nested lists ("[['a', \"b's\"]]").
nlohmann::json parse_python_list(const std::string& literal);

// 1 when the agent is within kShiftRadius (geodesic) of the end viewpoint of
// sub-path `sub_idx`, else 0.
int gt_shift_signal(const EnvGraph& graph, const Episode& episode, const std::string& agent_vp, int sub_idx);
int gt_shift_signal(const EnvGraph& graph, const Episode& episode, int agent_vp, int sub_idx);

// Folds single-viewpoint sub-paths into the next sub-instruction (the
// previous one when last) until none remain.
Episode normalize_for_training(const Episode& episode, std::vector<std::string>* warnings = nullptr);

// Joins two episodes of the same scan whose paths are within kJoinRadius;
// connector viewpoints belong to the second episode's first sub-path.
Episode concat_to_r4r(const Episode& first, const Episode& second, const EnvGraph& graph);

struct CorpusStats {
  long episodes = 0;
  long sub_instructions = 0;
  long words = 0;
  long sub_paths = 0;
  long viewpoints = 0;
  double mean_subinstr_per_instr = 0;
  double mean_words_per_subinstr = 0;
  double mean_viewpoints_per_subinstr = 0;
  int min_subinstr = 0, max_subinstr = 0;
  int min_words = 0, max_words = 0;
  int min_viewpoints = 0, max_viewpoints = 0;
  std::map<int, long> subinstr_histogram;    // sub-instructions per instruction
  std::map<int, long> viewpoint_histogram;   // viewpoints per sub-instruction

  bool operator==(const CorpusStats&) const = default;
  nlohmann::json to_json() const;
};

// OpenMP reduction over episodes.
CorpusStats corpus_stats(const std::vector<Episode>& episodes);
// Single-threaded reference used by the tests and the benchmark.
CorpusStats corpus_stats_serial(const std::vector<Episode>& episodes);

}  // namespace subnav
