#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "subnav/dataset.hpp"
#include "subnav/navgraph.hpp"

namespace subnav {

inline constexpr double kSuccessRadius = 3.0;

struct EvalResult {
  std::string path_id;
  double pl = 0;      // meters travelled
  double ne = 0;      // geodesic distance from final viewpoint to goal (inf if unreachable)
  bool oracle_success = false;
  bool success = false;
  double spl = 0;
  double dtw = 0;
  double ndtw = 0;
};

// Minimal cumulative geodesic cost over monotone alignments in which every
// element of both sequences is matched. Infinite when some pair is unreachable.
double dtw(const EnvGraph& graph, const std::vector<int>& trajectory, const std::vector<int>& reference);
double dtw(const EnvGraph& graph, const std::vector<std::string>& trajectory, const std::vector<std::string>& reference);
// exp(-dtw / (|reference| * threshold))
double ndtw(const EnvGraph& graph, const std::vector<int>& trajectory, const std::vector<int>& reference,
            double threshold = kSuccessRadius);
double ndtw(const EnvGraph& graph, const std::vector<std::string>& trajectory, const std::vector<std::string>& reference,
            double threshold = kSuccessRadius);

EvalResult evaluate_episode(const EnvGraph& graph, const std::vector<std::string>& trajectory, const Episode& reference,
                            double threshold = kSuccessRadius);

struct ShiftEvent {
  int step = 0;
  int predicted = 0;
  int ground_truth = 0;
  int sub_idx = -1;     // active sub-instruction when the decision was taken
  double p_shift = -1;  // shift probability, negative when not recorded
};

struct TrajectoryRecord {
  std::string path_id;
  std::vector<std::string> trajectory;
  std::vector<ShiftEvent> shifts;
};

nlohmann::json trajectory_to_json(const TrajectoryRecord& record);
TrajectoryRecord trajectory_from_json(const nlohmann::json& j);
std::vector<TrajectoryRecord> load_trajectories(const std::string& path);
void save_trajectories(const std::string& path, const std::vector<TrajectoryRecord>& records);

struct ShiftConfusion {
  long tp = 0, tn = 0, fp = 0, fn = 0;

  void add(int predicted, int ground_truth);
  long total() const { return tp + tn + fp + fn; }
  ShiftConfusion& operator+=(const ShiftConfusion& o);
  bool operator==(const ShiftConfusion&) const = default;
};

// A rate whose denominator is zero is nullopt ("undefined"), never 0 or NaN.
struct ConfusionRates {
  std::optional<double> accuracy, precision, recall, f1;
};

ConfusionRates confusion_stats(const ShiftConfusion& c);
ShiftConfusion confusion_from(const std::vector<TrajectoryRecord>& records);

struct AggregateMetrics {
  long episodes = 0;
  double pl = 0, ne = 0, osr = 0, sr = 0, spl = 0, ndtw = 0;
  nlohmann::json to_json() const;
};

// Per-episode mean; each field of AggregateMetrics averages the per-episode value.
AggregateMetrics aggregate(const std::vector<EvalResult>& results);

// Evaluates trajectories[i] against episodes[i]. Graphs must already be loaded in `graphs`.
std::vector<EvalResult> evaluate_all(const GraphStore& graphs, const std::vector<Episode>& episodes,
                                     const std::vector<std::vector<std::string>>& trajectories,
                                     double threshold = kSuccessRadius);
std::vector<EvalResult> evaluate_all_serial(const GraphStore& graphs, const std::vector<Episode>& episodes,
                                            const std::vector<std::vector<std::string>>& trajectories,
                                            double threshold = kSuccessRadius);

}  // namespace subnav
