#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "subnav/dataset.hpp"
#include "subnav/metrics.hpp"
#include "subnav/navgraph.hpp"
#include "subnav/neural.hpp"

namespace subnav {

// Synthetic per-viewpoint appearance plus the 4-d direction feature of the move.
// Appearance is seeded from the viewpoint label (or scan/id when unlabeled), so
// viewpoints that share a label look alike up to per-node noise.
class FeatureBank {
 public:
  explicit FeatureBank(int appearance_dim = 16, double node_noise = 0.1);

  int appearance_dim() const { return appearance_dim_; }
  int feature_dim() const { return appearance_dim_ + 4; }
  Vec appearance(const EnvGraph& graph, int node) const;
  Vec view(const EnvGraph& graph, int from, int to) const;

 private:
  int appearance_dim_;
  double node_noise_;
};

std::uint64_t stable_hash(std::string_view text, std::uint64_t seed = 0);

enum class ActionForcing { Teacher, Student };
enum class ShiftForcing { Teacher, Predicted };
enum class Termination { Stop, MaxSteps };

struct RolloutConfig {
  ActionForcing action_forcing = ActionForcing::Student;
  ShiftForcing shift_forcing = ShiftForcing::Predicted;
  double shift_threshold = 0.5;  // shift when p_s > threshold
  int max_steps = 20;
  bool sample_actions = false;   // student mode: draw from p_t instead of argmax
  std::uint64_t seed = 0;

  void validate() const;
};

struct ActionRecord {
  int option = -1;          // index into the step's options; the last option is STOP
  std::string viewpoint;    // destination, or the current viewpoint for STOP
  bool stop = false;
  double probability = 0;   // p_t of the chosen option
  int target = -1;          // ground-truth option
};

struct RolloutResult {
  std::string path_id;
  std::vector<std::string> trajectory;
  std::vector<ActionRecord> actions;
  std::vector<ShiftEvent> shift_events;
  Termination terminated_by = Termination::MaxSteps;
  int final_sub_idx = 0;  // active sub-instruction after the last step
  JointLossResult loss;  // filled when a tape is supplied

  TrajectoryRecord record() const { return {path_id, trajectory, shift_events}; }
};

// Everything a rollout needs besides the episode.
struct AgentContext {
  const ModelParams& params;
  const Vocab& vocab;
  const FeatureBank& features;
};

// Word ids of the concatenated sub-instructions and each chunk's [begin, end).
std::pair<std::vector<int>, std::vector<std::pair<int, int>>> encode_episode(const Episode& episode,
                                                                             const Vocab& vocab);

// Ground-truth option at `node`: the next path viewpoint while on the path,
// otherwise the neighbor closest to the goal; STOP at the path end / goal.
int ground_truth_option(const EnvGraph& graph, const Episode& episode, int node, std::optional<int> path_cursor);

// Runs one episode. With `tape` the forward pass is recorded for backpropagation.
RolloutResult rollout(const Episode& episode, const EnvGraph& graph, const AgentContext& agent,
                      const RolloutConfig& config, EpisodeTape* tape = nullptr);

// ---- toy worlds ------------------------------------------------------------------

struct ToyWorld {
  EnvGraph graph;
  std::vector<Episode> episodes;
};

// Connected random geometric graph in a 10 m box with labelled viewpoints, and
// shortest-path episodes of 3-6 viewpoints with templated, aligned sub-instructions.
ToyWorld generate_toy_world(std::uint64_t seed, int n_nodes, int n_episodes);

Vocab build_vocab(const std::vector<Episode>& episodes);

// ---- training ------------------------------------------------------------------------

struct TrainConfig {
  int epochs = 200;
  double lr = 0.05;
  int batch_size = 8;
  double clip_norm = 5.0;
  double holdout_fraction = 0.2;
  double shift_threshold = 0.5;
  int max_steps = 12;
  bool parallel = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0;
  double heldout_f1 = 0;  // 0 when undefined
};

struct TrainResult {
  std::vector<EpochStats> curve;
  ModelParams params;
  ShiftConfusion heldout;       // final-epoch held-out confusion
  double majority_f1 = 0;       // always-predict-majority baseline on the same steps
  std::vector<std::string> train_ids, heldout_ids;
};

// Summed gradients of a batch (episode order merge) and the summed loss.
struct BatchGradient {
  ModelParams grads;
  double loss = 0;
  std::vector<double> losses;          // per episode, batch order
  std::vector<std::string> nonfinite;  // episodes whose loss was not finite
};

using EpisodeRef = std::pair<const Episode*, const EnvGraph*>;

BatchGradient batch_gradients(const std::vector<EpisodeRef>& batch, const AgentContext& agent,
                              const RolloutConfig& config, const std::vector<std::uint64_t>& seeds);
BatchGradient batch_gradients_serial(const std::vector<EpisodeRef>& batch, const AgentContext& agent,
                                     const RolloutConfig& config, const std::vector<std::uint64_t>& seeds);

// Argmax actions with predicted shifts over `episodes`; returns the shift confusion.
ShiftConfusion evaluate_shifts(const std::vector<EpisodeRef>& episodes, const AgentContext& agent,
                               double threshold, int max_steps);

double majority_baseline_f1(const ShiftConfusion& c);

// Student-sampled actions and teacher shifts; SGD with global-norm clipping.
TrainResult train_toy(const std::vector<EpisodeRef>& episodes, const ModelParams& init, const Vocab& vocab,
                      const FeatureBank& features, const TrainConfig& config);

nlohmann::json train_result_to_json(const TrainResult& result);

}  // namespace subnav
