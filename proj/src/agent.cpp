#include "subnav/agent.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>

#include "subnav/error.hpp"

namespace subnav {

namespace {

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

const std::vector<std::string> kLandmarks = {"kitchen", "sofa",   "table", "stairs", "door",   "window",
                                             "lamp",    "bed",    "sink",  "plant",  "mirror", "rug",
                                             "shelf",   "fridge", "desk",  "piano"};

}  // namespace

std::uint64_t stable_hash(std::string_view text, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ULL ^ (seed * 0x9e3779b97f4a7c15ULL);
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

FeatureBank::FeatureBank(int appearance_dim, double node_noise)
    : appearance_dim_(appearance_dim), node_noise_(node_noise) {
  if (appearance_dim < 1) throw ValidationError("feature bank: appearance dimension must be positive");
  if (!(node_noise >= 0.0)) throw ValidationError("feature bank: noise must be non-negative");
}

Vec FeatureBank::appearance(const EnvGraph& graph, int node) const {
  const Viewpoint& vp = graph.node(node);
  const std::string unique = graph.scan() + "/" + vp.id;
  std::mt19937_64 base(stable_hash(vp.label.empty() ? unique : vp.label));
  std::mt19937_64 own(stable_hash(unique, 1));
  std::normal_distribution<double> unit(0.0, 1.0);
  Vec out(sz(appearance_dim_));
  for (auto& v : out) v = unit(base);
  for (auto& v : out) v += node_noise_ * unit(own);
  return out;
}

Vec FeatureBank::view(const EnvGraph& graph, int from, int to) const {
  Vec out = appearance(graph, to);
  const auto dir = direction_features(graph.node(from).position, graph.node(to).position).values();
  out.insert(out.end(), dir.begin(), dir.end());
  return out;
}

void RolloutConfig::validate() const {
  if (!(shift_threshold > 0.0 && shift_threshold < 1.0)) {
    throw ValidationError("rollout: shift threshold must lie in (0, 1)");
  }
  if (max_steps < 1) throw ValidationError("rollout: max_steps must be at least 1");
}

std::pair<std::vector<int>, std::vector<std::pair<int, int>>> encode_episode(const Episode& episode,
                                                                             const Vocab& vocab) {
  std::vector<int> ids;
  std::vector<std::pair<int, int>> spans;
  for (const auto& sub : episode.sub_instructions) {
    if (sub.words.empty()) throw ValidationError(episode.path_id + ": empty sub-instruction");
    const int begin = static_cast<int>(ids.size());
    const auto enc = vocab.encode(sub.words);
    ids.insert(ids.end(), enc.begin(), enc.end());
    spans.emplace_back(begin, static_cast<int>(ids.size()));
  }
  return {std::move(ids), std::move(spans)};
}

int ground_truth_option(const EnvGraph& graph, const Episode& episode, int node, std::optional<int> path_cursor) {
  const auto& nbrs = graph.neighbors(node);
  const int stop = static_cast<int>(nbrs.size());
  if (path_cursor) {
    const int k = *path_cursor;
    if (k + 1 >= static_cast<int>(episode.path.size())) return stop;
    const int next = graph.index_of(episode.path[sz(k + 1)]);
    for (std::size_t i = 0; i < nbrs.size(); ++i) {
      if (nbrs[i].to == next) return static_cast<int>(i);
    }
    throw GraphError(episode.path_id + ": ground-truth viewpoint " + episode.path[sz(k + 1)] +
                     " is not adjacent to " + graph.node(node).id);
  }
  const int goal = graph.index_of(episode.goal());
  if (node == goal) return stop;
  int best = stop;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < nbrs.size(); ++i) {
    const auto d = graph.shortest_dist(nbrs[i].to, goal);
    if (d && *d < best_d) {
      best_d = *d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

RolloutResult rollout(const Episode& episode, const EnvGraph& graph, const AgentContext& agent,
                      const RolloutConfig& config, EpisodeTape* tape) {
  config.validate();
  if (!episode.aligned()) throw ValidationError(episode.path_id + ": rollout needs aligned sub-paths");
  if (auto v = episode_violations(episode); !v.empty()) throw ValidationError(episode.path_id + ": " + v.front());
  if (auto v = episode_graph_violations(episode, graph); !v.empty()) {
    throw ValidationError(episode.path_id + ": " + v.front());
  }
  if (agent.features.feature_dim() != agent.params.config.feature_dim) {
    throw ValidationError("rollout: feature bank and model disagree on the feature dimension");
  }

  EpisodeTape local(agent.params);
  EpisodeTape& t = tape ? *tape : local;
  const auto [ids, spans] = encode_episode(episode, agent.vocab);
  t.encode(ids);

  const int L = static_cast<int>(spans.size());
  std::mt19937_64 rng(config.seed);
  RolloutResult r;
  r.path_id = episode.path_id;
  int node = graph.index_of(episode.path.front());
  r.trajectory.push_back(graph.node(node).id);
  int sub_idx = 0;
  int cursor = 0;
  bool on_path = true;

  for (int step = 0; step < config.max_steps; ++step) {
    const auto& nbrs = graph.neighbors(node);
    std::vector<Vec> views;
    views.reserve(nbrs.size());
    for (const auto& e : nbrs) views.push_back(agent.features.view(graph, node, e.to));
    const int stop = static_cast<int>(nbrs.size());
    const Vec probs = t.step(spans[sz(sub_idx)].first, spans[sz(sub_idx)].second, std::move(views));

    const int target = ground_truth_option(graph, episode, node, on_path ? std::optional<int>(cursor) : std::nullopt);
    int chosen = target;
    if (config.action_forcing == ActionForcing::Student) {
      if (config.sample_actions) {
        std::discrete_distribution<int> pick(probs.begin(), probs.end());
        chosen = pick(rng);
      } else {
        chosen = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
      }
    }
    const bool is_stop = chosen == stop;
    const int next = is_stop ? node : nbrs[sz(chosen)].to;

    const int gt_shift = gt_shift_signal(graph, episode, next, sub_idx);
    const double p_s = t.shift(chosen, L - 1 - sub_idx);
    t.set_targets(target, gt_shift);
    const int predicted = p_s > config.shift_threshold ? 1 : 0;
    r.shift_events.push_back({step, predicted, gt_shift, sub_idx, p_s});
    r.actions.push_back({chosen, graph.node(next).id, is_stop, probs[sz(chosen)], target});

    const int signal = config.shift_forcing == ShiftForcing::Teacher ? gt_shift : predicted;
    if (signal == 1 && sub_idx < L - 1) ++sub_idx;

    if (is_stop) {
      r.terminated_by = Termination::Stop;
      break;
    }
    if (on_path && cursor + 1 < static_cast<int>(episode.path.size()) &&
        graph.index_of(episode.path[sz(cursor + 1)]) == next) {
      ++cursor;
    } else {
      on_path = graph.index_of(episode.path[sz(cursor)]) == next;
    }
    node = next;
    r.trajectory.push_back(graph.node(node).id);
  }
  r.final_sub_idx = sub_idx;
  if (tape) r.loss = tape->loss(config.seed);
  return r;
}

// ---- toy worlds ------------------------------------------------------------------

ToyWorld generate_toy_world(std::uint64_t seed, int n_nodes, int n_episodes) {
  if (n_nodes < 4) throw ValidationError("toy world: need at least 4 nodes");
  if (n_episodes < 0) throw ValidationError("toy world: negative episode count");
  constexpr int kMaxAttempts = 200;
  constexpr double kBox = 10.0;
  constexpr double kRadius = 4.0;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coord(0.0, kBox);
  const std::string scan = "toy" + std::to_string(seed);

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<std::string> labels;
    for (int i = 0; i < n_nodes; ++i) {
      const auto& base = kLandmarks[sz(i) % kLandmarks.size()];
      labels.push_back(i < static_cast<int>(kLandmarks.size()) ? base
                                                               : base + std::to_string(i / kLandmarks.size()));
    }
    std::shuffle(labels.begin(), labels.end(), rng);
    std::vector<Viewpoint> nodes;
    for (int i = 0; i < n_nodes; ++i) {
      const double x = coord(rng), y = coord(rng);
      nodes.push_back({"v" + std::to_string(i), {x, y, 0.0}, labels[sz(i)]});
    }
    std::vector<std::pair<std::string, std::string>> edges;
    for (int a = 0; a < n_nodes; ++a) {
      for (int b = a + 1; b < n_nodes; ++b) {
        const double d = euclidean(nodes[sz(a)].position, nodes[sz(b)].position);
        if (d <= kRadius && d > 0.0) edges.emplace_back(nodes[sz(a)].id, nodes[sz(b)].id);
      }
    }
    EnvGraph graph(scan, nodes, edges);
    bool connected = true;
    for (int i = 1; i < n_nodes && connected; ++i) connected = graph.shortest_dist(0, i).has_value();
    if (!connected) continue;

    std::vector<std::vector<int>> candidates;
    for (int a = 0; a < n_nodes; ++a) {
      for (int b = 0; b < n_nodes; ++b) {
        if (a == b) continue;
        auto p = graph.shortest_path(a, b);
        if (p.size() >= 3 && p.size() <= 6) candidates.push_back(std::move(p));
      }
    }
    if (candidates.empty()) continue;

    ToyWorld world{std::move(graph), {}};
    const EnvGraph& g = world.graph;
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    std::uniform_int_distribution<int> span_edges(1, 2);
    for (int e = 0; e < n_episodes; ++e) {
      const auto& p = candidates[pick(rng)];
      Episode ep;
      ep.path_id = scan + "_" + std::to_string(e);
      ep.scan = scan;
      for (int v : p) ep.path.push_back(g.node(v).id);
      const auto first = direction_features(g.node(p[0]).position, g.node(p[1]).position);
      ep.heading = std::atan2(first.sin_heading, first.cos_heading);

      const int last = static_cast<int>(p.size()) - 1;
      int start = 0;
      while (start < last) {
        const int end = std::min(last, start + span_edges(rng));
        ep.sub_paths.push_back({start, end});
        start = end;
      }
      for (std::size_t k = 0; k < ep.sub_paths.size(); ++k) {
        const auto [s, t] = ep.sub_paths[k];
        SubInstruction sub;
        sub.id = static_cast<int>(k) + 1;
        if (s > 0) {
          const auto& a = g.node(p[sz(s - 1)]).position;
          const auto& b = g.node(p[sz(s)]).position;
          const auto& c = g.node(p[sz(s + 1)]).position;
          const double ux = b.x - a.x, uy = b.y - a.y, vx = c.x - b.x, vy = c.y - b.y;
          const double turn = std::atan2(ux * vy - uy * vx, ux * vx + uy * vy);
          if (std::abs(turn) > 0.5) sub.words = {"turn", turn > 0 ? "left" : "right", "and"};
        }
        const std::string& label = g.node(p[sz(t)]).label;
        if (k + 1 == ep.sub_paths.size()) {
          sub.words.insert(sub.words.end(), {"stop", "at", "the", label});
        } else {
          sub.words.insert(sub.words.end(), {"go", "to", "the", label});
        }
        ep.sub_instructions.push_back(std::move(sub));
      }
      for (const auto& sub : ep.sub_instructions) {
        if (!ep.instruction.empty()) ep.instruction += ' ';
        ep.instruction += sub.text();
      }
      validate_episode(ep);
      world.episodes.push_back(std::move(ep));
    }
    return world;
  }
  throw GraphError("toy world: no connected graph after " + std::to_string(kMaxAttempts) + " attempts");
}

Vocab build_vocab(const std::vector<Episode>& episodes) {
  std::vector<std::string> words;
  for (const auto& ep : episodes) {
    for (const auto& sub : ep.sub_instructions) {
      for (const auto& w : sub.words) words.push_back(to_lower(w));
    }
  }
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  Vocab v;
  for (const auto& w : words) v.add(w);
  return v;
}

// ---- training ------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("train: epochs must be at least 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("train: learning rate must be non-negative");
  if (batch_size < 1) throw ValidationError("train: batch size must be at least 1");
  if (!(clip_norm > 0.0)) throw ValidationError("train: clip norm must be positive");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw ValidationError("train: held-out fraction must lie in [0, 1)");
  }
}

namespace {

struct EpisodeGradient {
  ModelParams grads;
  double loss = 0;
};

EpisodeGradient episode_gradient(const EpisodeRef& ref, const AgentContext& agent, RolloutConfig config,
                                 std::uint64_t seed) {
  config.seed = seed;
  EpisodeGradient out{agent.params.zeros_like(), 0.0};
  EpisodeTape tape(agent.params);
  rollout(*ref.first, *ref.second, agent, config, &tape);
  out.loss = tape.backward(seed, out.grads).loss;
  return out;
}

BatchGradient merge(std::vector<EpisodeGradient>& parts, const std::vector<EpisodeRef>& batch,
                    const ModelParams& like) {
  BatchGradient b{like.zeros_like(), 0.0, {}, {}};
  for (std::size_t i = 0; i < parts.size(); ++i) {
    b.losses.push_back(parts[i].loss);
    if (!std::isfinite(parts[i].loss) || !parts[i].grads.all_finite()) {
      b.nonfinite.push_back(batch[i].first->path_id);
      continue;
    }
    b.grads += parts[i].grads;
    b.loss += parts[i].loss;
  }
  return b;
}

}  // namespace

BatchGradient batch_gradients(const std::vector<EpisodeRef>& batch, const AgentContext& agent,
                              const RolloutConfig& config, const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() != batch.size()) throw ValidationError("batch_gradients: one seed per episode required");
  std::vector<EpisodeGradient> parts(batch.size());
  std::vector<std::exception_ptr> errors(batch.size());
  const long n = static_cast<long>(batch.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      parts[k] = episode_gradient(batch[k], agent, config, seeds[k]);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return merge(parts, batch, agent.params);
}

BatchGradient batch_gradients_serial(const std::vector<EpisodeRef>& batch, const AgentContext& agent,
                                     const RolloutConfig& config, const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() != batch.size()) throw ValidationError("batch_gradients: one seed per episode required");
  std::vector<EpisodeGradient> parts;
  for (std::size_t i = 0; i < batch.size(); ++i) parts.push_back(episode_gradient(batch[i], agent, config, seeds[i]));
  return merge(parts, batch, agent.params);
}

ShiftConfusion evaluate_shifts(const std::vector<EpisodeRef>& episodes, const AgentContext& agent, double threshold,
                               int max_steps) {
  RolloutConfig config;
  config.action_forcing = ActionForcing::Student;
  config.shift_forcing = ShiftForcing::Predicted;
  config.shift_threshold = threshold;
  config.max_steps = max_steps;
  std::vector<ShiftConfusion> parts(episodes.size());
  std::vector<std::exception_ptr> errors(episodes.size());
  const long n = static_cast<long>(episodes.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      const auto r = rollout(*episodes[k].first, *episodes[k].second, agent, config);
      for (const auto& ev : r.shift_events) parts[k].add(ev.predicted, ev.ground_truth);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  ShiftConfusion total;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (errors[k]) std::rethrow_exception(errors[k]);
    total += parts[k];
  }
  return total;
}

double majority_baseline_f1(const ShiftConfusion& c) {
  const double pos = static_cast<double>(c.tp + c.fn);
  const double neg = static_cast<double>(c.tn + c.fp);
  if (pos == 0.0 || pos < neg) return 0.0;
  return 2.0 * pos / (2.0 * pos + neg);
}

TrainResult train_toy(const std::vector<EpisodeRef>& episodes, const ModelParams& init, const Vocab& vocab,
                      const FeatureBank& features, const TrainConfig& config) {
  config.validate();
  if (episodes.empty()) throw ValidationError("train: no episodes");
  std::mt19937_64 rng(config.seed);

  std::vector<std::size_t> order(episodes.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_hold = static_cast<std::size_t>(std::lround(config.holdout_fraction * static_cast<double>(order.size())));
  if (config.holdout_fraction > 0.0 && n_hold == 0 && order.size() > 1) n_hold = 1;
  n_hold = std::min(n_hold, order.size() - 1);

  TrainResult result{{}, init, {}, 0.0, {}, {}};
  std::vector<EpisodeRef> heldout, train;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& ref = episodes[order[i]];
    (i < n_hold ? heldout : train).push_back(ref);
    (i < n_hold ? result.heldout_ids : result.train_ids).push_back(ref.first->path_id);
  }
  std::vector<std::uint64_t> episode_seeds(train.size());
  for (auto& s : episode_seeds) s = rng();

  RolloutConfig rc;
  rc.action_forcing = ActionForcing::Student;
  rc.sample_actions = true;
  rc.shift_forcing = ShiftForcing::Teacher;
  rc.shift_threshold = config.shift_threshold;
  rc.max_steps = config.max_steps;

  ModelParams& params = result.params;
  std::vector<std::size_t> perm(train.size());
  std::iota(perm.begin(), perm.end(), 0);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> losses(train.size(), 0.0);
    for (std::size_t at = 0; at < perm.size(); at += sz(config.batch_size)) {
      const std::size_t stop = std::min(perm.size(), at + sz(config.batch_size));
      std::vector<EpisodeRef> batch;
      std::vector<std::uint64_t> seeds;
      for (std::size_t k = at; k < stop; ++k) {
        batch.push_back(train[perm[k]]);
        seeds.push_back(episode_seeds[perm[k]]);
      }
      const AgentContext agent{params, vocab, features};
      BatchGradient bg = config.parallel ? batch_gradients(batch, agent, rc, seeds)
                                         : batch_gradients_serial(batch, agent, rc, seeds);
      if (!bg.nonfinite.empty()) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + " on episode " +
                           bg.nonfinite.front());
      }
      for (std::size_t k = at; k < stop; ++k) losses[perm[k]] = bg.losses[k - at];
      bg.grads.scale(1.0 / static_cast<double>(batch.size()));
      const double norm = std::sqrt(bg.grads.squared_norm());
      if (!std::isfinite(norm)) {
        throw NumericError("train: non-finite gradient norm at epoch " + std::to_string(epoch));
      }
      if (norm > config.clip_norm) bg.grads.scale(config.clip_norm / norm);
      bg.grads.scale(-config.lr);
      params += bg.grads;
    }
    double total = 0.0;
    for (double l : losses) total += l;
    const AgentContext agent{params, vocab, features};
    const auto confusion = heldout.empty() ? ShiftConfusion{}
                                           : evaluate_shifts(heldout, agent, config.shift_threshold, config.max_steps);
    const auto rates = confusion_stats(confusion);
    result.curve.push_back({epoch, total / static_cast<double>(train.size()), rates.f1.value_or(0.0)});
    result.heldout = confusion;
  }
  result.majority_f1 = majority_baseline_f1(result.heldout);
  return result;
}

nlohmann::json train_result_to_json(const TrainResult& result) {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& e : result.curve) {
    curve.push_back({{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"heldout_f1", e.heldout_f1}});
  }
  const auto& c = result.heldout;
  return {{"curve", curve},
          {"heldout_confusion", {{"tp", c.tp}, {"tn", c.tn}, {"fp", c.fp}, {"fn", c.fn}}},
          {"majority_f1", result.majority_f1},
          {"train_ids", result.train_ids},
          {"heldout_ids", result.heldout_ids}};
}

}  // namespace subnav
