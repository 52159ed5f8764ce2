#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "subnav/tensor.hpp"

namespace subnav {

inline constexpr double kProbFloor = 1e-12;

struct ModelConfig {
  int vocab_size = 64;
  int embed_dim = 16;
  int hidden_dim = 16;
  int feature_dim = 20;      // synthetic appearance (16) + direction (4)
  int mlp_dim = 16;          // output of the shared feature projection g(.)
  int shift_state_dim = 16;  // output of W_c0
  int remaining_dim = 8;     // output of W_c3
  int remaining_capacity = 8;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

// All learned weights. Gradients use the same layout.
struct ModelParams {
  ModelConfig config;
  Tensor embedding;       // [vocab, embed]
  Tensor enc_w, enc_b;    // instruction encoder LSTM, gates i,f,g,o: [4H, embed+H], [4H]
  Tensor pol_w, pol_b;    // policy LSTM: [4H, 2F+H], [4H]
  Tensor text_w;          // W_u [H, H]
  Tensor vis_w;           // W_v [G, H]
  Tensor mlp_w, mlp_b;    // g(v) = tanh(mlp_w v + mlp_b): [G, F], [G]
  Tensor act_w;           // W_a [G, 2H]
  Tensor stop_feature;    // [F]
  Tensor c0_w, c0_b;      // [C0, H]
  Tensor c1_w, c1_b;      // [H, C0+F+H]
  Tensor c2_w, c2_b;      // [1, C3+H]
  Tensor c3_w, c3_b;      // [C3, E]

  static ModelParams zeros(const ModelConfig& config);
  // Embedding N(0, 1); LSTM weights U(+-1/sqrt(H)); other matrices U(+-1/sqrt(fan_in)).
  // LSTM forget-gate bias 1, other biases 0.
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  std::vector<std::pair<std::string_view, Tensor*>> named();
  std::vector<std::pair<std::string_view, const Tensor*>> named() const;

  ModelParams zeros_like() const { return zeros(config); }
  ModelParams& operator+=(const ModelParams& other);
  void scale(double factor);
  double squared_norm() const;
  bool all_finite() const;
  bool operator==(const ModelParams&) const = default;

  nlohmann::json to_json() const;
  static ModelParams from_json(const nlohmann::json& j);
};

// Lowercased word vocabulary; id 0 is UNK.
class Vocab {
 public:
  static constexpr int kUnk = 0;
  Vocab();
  explicit Vocab(const std::vector<std::string>& words);
  int add(const std::string& word);
  int id(const std::string& word) const;
  std::vector<int> encode(const std::vector<std::string>& words) const;
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

struct AgentState {
  Vec h;  // hidden state
  Vec m;  // memory cell
};

struct AttentionResult {
  Vec weights;
  Vec attended;
};

// ---- forward-only operations ------------------------------------------------

std::vector<Vec> encode_instruction(std::span<const int> words, const ModelParams& params);
// Soft attention restricted to the states of the current sub-instruction.
AttentionResult text_attend(const Vec& h_prev, std::span<const Vec> sub_instruction_states, const ModelParams& params);
Vec project_feature(const Vec& feature, const ModelParams& params);  // g(.)
AttentionResult visual_attend(const Vec& h_prev, std::span<const Vec> views, const ModelParams& params);
// LSTM([v_hat; a_prev], (text, m_prev)). The attended text enters as the incoming hidden state.
AgentState policy_step(const Vec& v_hat, const Vec& a_prev, const Vec& attended_text, const Vec& m_prev,
                       const ModelParams& params);
// Softmax over (W_a [h; text])^T g(view_i); the caller includes the STOP view.
Vec action_probabilities(const Vec& h, const Vec& attended_text, std::span<const Vec> views,
                         const ModelParams& params);

struct ShiftOutput {
  double probability = 0.5;
  Vec gated_state;  // h^c
  bool clamped = false;
};
ShiftOutput shift_probability(const AgentState& state, const Vec& selected_view, const Vec& attended_text,
                              int remaining, const ModelParams& params);

// ---- loss -------------------------------------------------------------------

struct JointLossResult {
  double loss = 0;
  double action_term = 0;
  double shift_term = 0;
  std::vector<int> shift_samples;      // steps contributing to the shift term
  std::vector<Vec> d_action_probs;     // dL/dp per step
  Vec d_shift_probs;                   // dL/dp_s per step
  bool shift_class_missing = false;    // no negatives: all positives used; no positives: term is 0
};

// Balanced draw: min(#pos, #neg) indices from each class, sorted ascending.
std::vector<int> balanced_shift_sample(std::span<const int> shift_targets, std::uint64_t seed);
// Steps entering the shift term: the balanced draw, or every positive when no negative exists.
// Targets < 0 are ignored.
std::vector<int> shift_loss_steps(std::span<const int> shift_targets, std::uint64_t seed, bool& class_missing);

// Action cross-entropy over every step with a target (>= 0) plus binary
// cross-entropy over the balanced shift sample. Probabilities are floored at kProbFloor.
JointLossResult joint_loss(std::span<const Vec> action_probs, std::span<const int> action_targets,
                           std::span<const double> shift_probs, std::span<const int> shift_targets,
                           std::uint64_t balance_seed);

// ---- recorded forward pass with reverse accumulation --------------------------

namespace detail {
struct LstmCache {
  Vec input, c_prev, i, f, g, o, tanh_c;
};
struct AttentionCache {
  Vec h_prev, query, weights;
};
struct ShiftCache {
  Vec h, m, a0, cat1, gate, tanh_m, e, cat2;
  double probability = 0.5;
};
}  // namespace detail

class EpisodeTape {
 public:
  explicit EpisodeTape(const ModelParams& params);

  void encode(std::span<const int> words);
  const std::vector<Vec>& encoded() const { return encoded_; }

  // Attends words [begin, end) of the encoded instruction and the given
  // navigable views (STOP is appended as the last option), advances the
  // policy state and returns the action distribution.
  const Vec& step(int begin, int end, std::vector<Vec> views);
  // Shift probability for the chosen option of the latest step; `chosen`
  // becomes the previous action of the next step.
  double shift(int chosen, int remaining);
  void set_targets(int action_target, int shift_target);

  std::size_t steps() const { return steps_.size(); }
  int stop_index() const;
  const AgentState& state() const { return state_; }
  const Vec& action_probs(std::size_t t) const;
  double shift_prob(std::size_t t) const;
  const Vec& text_weights(std::size_t t) const;
  int clamped_remaining() const { return clamped_remaining_; }

  JointLossResult loss(std::uint64_t balance_seed) const;
  // Joint loss over the recorded steps; accumulates parameter gradients into `grads`.
  JointLossResult backward(std::uint64_t balance_seed, ModelParams& grads) const;

 private:
  using LstmCache = detail::LstmCache;
  using AttentionCache = detail::AttentionCache;
  using ShiftCache = detail::ShiftCache;
  struct Step {
    int begin = 0, end = 0;
    AttentionCache text;
    Vec attended_text;
    std::vector<Vec> views;  // STOP last
    std::vector<Vec> keys;   // g(view)
    AttentionCache visual;
    Vec v_hat, a_prev;
    bool a_prev_is_stop = false;
    LstmCache policy;
    Vec h, m;
    Vec joint, action_query, probs;
    bool has_shift = false;
    int chosen = -1;
    ShiftCache shift;
    int action_target = -1;
    int shift_target = -1;
  };

  const ModelParams& params_;
  std::vector<int> words_;
  std::vector<Vec> encoded_;
  std::vector<LstmCache> encoder_;
  std::vector<Step> steps_;
  AgentState state_;
  Vec prev_action_;
  bool prev_action_is_stop_ = false;
  int clamped_remaining_ = 0;
};

// ---- gradient verification ----------------------------------------------------

struct GradCheckStep {
  std::vector<Vec> views;  // navigable views; STOP is implicit
  int sub_idx = 0;
  int action_target = 0;   // also the executed action
  int shift_target = 0;
};

struct GradCheckBundle {
  std::vector<int> words;
  std::vector<std::pair<int, int>> sub_spans;  // [begin, end) into words
  std::vector<GradCheckStep> steps;
  std::uint64_t balance_seed = 0;
};

// Replays the bundle with teacher-forced actions; fills `grads` when non-null.
double bundle_loss(const ModelParams& params, const GradCheckBundle& bundle, ModelParams* grads = nullptr);

struct GradCheckReport {
  std::vector<std::pair<std::string, double>> max_relative_error;  // per parameter group
  double worst = 0;
};

// Same loss as bundle_loss, evaluated forward-only in extended precision.
double reference_loss(const ModelParams& params, const GradCheckBundle& bundle);

// Central differences against the analytic gradient; relative error
// |a - n| / max(|a|, |n|, 1e-8). With `extended_reference` the perturbed losses are
// evaluated in long double, which keeps entries with |grad| < 1e-6 above the fp64
// rounding floor of the difference quotient.
GradCheckReport grad_check(const ModelParams& params, const GradCheckBundle& bundle, double eps = 1e-5,
                           bool extended_reference = true);

// Random episode: `steps` moves over `sub_instructions` chunks, 2-3 views per step.
GradCheckBundle make_gradcheck_bundle(const ModelConfig& config, std::uint64_t seed, int steps = 3,
                                      int sub_instructions = 2);

// Checkpoint container: {"format": "subnav-checkpoint", "version": 1, "config", "vocab", "arrays"}.
void save_checkpoint(const std::string& path, const ModelParams& params, const Vocab& vocab,
                     const nlohmann::json& extra = nlohmann::json::object());
std::pair<ModelParams, Vocab> load_checkpoint(const std::string& path);

}  // namespace subnav
