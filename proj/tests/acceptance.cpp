// One PASS/FAIL/SKIP line per acceptance criterion. Exit status 1 when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "subnav/agent.hpp"
#include "subnav/analysis.hpp"
#include "subnav/chunker.hpp"
#include "subnav/conllu.hpp"
#include "subnav/dataset.hpp"
#include "subnav/metrics.hpp"
#include "subnav/neural.hpp"
#include "support.hpp"

using namespace subnav;

namespace {

constexpr double kRateTol = 1e-3;
constexpr double kDtwTol = 1e-9;
constexpr double kGradTol = 1e-4;
constexpr double kGradEps = 1e-5;
constexpr double kLossRatio = 0.5;
constexpr double kSubinstrMean = 3.6, kSubinstrTol = 0.1;
constexpr double kWordsMean = 7.2, kWordsTol = 0.3;
constexpr double kViewpointsMean = 2.4, kViewpointsTol = 0.1;

enum class Status { Pass, Fail, Skip };

struct Outcome {
  Status status = Status::Fail;
  std::string detail;
};

int failures = 0;

void report(int id, const char* name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {Status::Fail, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (o.status != Status::Skip && secs > budget_s) {
    o.status = Status::Fail;
    o.detail += " (over the " + std::to_string(budget_s) + " s budget)";
  }
  const char* tag = o.status == Status::Pass ? "PASS" : o.status == Status::Skip ? "SKIP" : "FAIL";
  if (o.status == Status::Fail) ++failures;
  std::printf("[%s] %d %-22s %7.2fs  %s\n", tag, id, name, secs, o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Outcome published_rates() {
  struct Row {
    ShiftConfusion c;
    double acc, prec, rec, f1;
  };
  const Row rows[] = {{{608, 36344, 1602, 4796}, 0.852, 0.275, 0.113, 0.160},
                      {{963, 9966, 452, 4878}, 0.672, 0.681, 0.165, 0.265},
                      {{1130, 10619, 363, 4686}, 0.699, 0.757, 0.194, 0.309},
                      {{1256, 8086, 303, 4765}, 0.648, 0.806, 0.209, 0.331}};
  double worst = 0;
  for (const auto& r : rows) {
    const auto s = confusion_stats(r.c);
    if (!s.accuracy || !s.precision || !s.recall || !s.f1) return {Status::Fail, "undefined rate"};
    for (auto [got, want] : {std::pair{*s.accuracy, r.acc}, {*s.precision, r.prec}, {*s.recall, r.rec}, {*s.f1, r.f1}}) {
      worst = std::max(worst, std::abs(got - want));
    }
  }
  return {worst <= kRateTol ? Status::Pass : Status::Fail, fmt("4 rows, max |diff| %.2e", worst)};
}

Outcome chunker_golden() {
  std::ifstream in(testing_support::data_path("glass_door.conllu"));
  std::stringstream text;
  text << in.rdbuf();
  const auto parsed = parse_conllu_document(text.str()).at(0);
  const auto config = ChunkingConfig::from_lexicon_file(testing_support::data_path("lexicon.txt"));
  const std::vector<std::string> want{"enter through the glass door", "go up the wooden plank stairs on the right",
                                      "enter the doorway next to the bear head", "and wait there"};
  std::vector<std::string> got;
  for (const auto& s : chunk_instruction(parsed, config)) got.push_back(s.text(true));
  if (got == want) return {Status::Pass, "4 sub-instructions, word-for-word"};
  std::string d = "got:";
  for (const auto& g : got) d += " [" + g + "]";
  return {Status::Fail, d};
}

std::vector<std::string> split_paths(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream ss(list);
  for (std::string p; std::getline(ss, p, ':');) {
    if (!p.empty()) out.push_back(p);
  }
  return out;
}

Outcome fgr2r_stats() {
  const char* env = std::getenv("SUBNAV_FGR2R");
  if (!env || !*env) return {Status::Skip, "SUBNAV_FGR2R unset (colon-separated FGR2R train/val json files)"};
  std::vector<Episode> all;
  LoadOptions opts;
  opts.format = EpisodeFormat::FineGrained;
  for (const auto& p : split_paths(env)) {
    auto eps = load_episodes(p, opts);
    all.insert(all.end(), eps.begin(), eps.end());
  }
  const auto s = corpus_stats(all);
  const bool ok = std::abs(s.mean_subinstr_per_instr - kSubinstrMean) <= kSubinstrTol &&
                  std::abs(s.mean_words_per_subinstr - kWordsMean) <= kWordsTol &&
                  std::abs(s.mean_viewpoints_per_subinstr - kViewpointsMean) <= kViewpointsTol &&
                  s.min_viewpoints == 1 && s.max_viewpoints == 7;
  return {ok ? Status::Pass : Status::Fail,
          fmt("%.0f episodes: %.2f sub/instr, %.2f words/sub, %.2f vps/sub", static_cast<double>(s.episodes),
              s.mean_subinstr_per_instr, s.mean_words_per_subinstr, s.mean_viewpoints_per_subinstr) +
              " span [" + std::to_string(s.min_viewpoints) + ", " + std::to_string(s.max_viewpoints) + "]"};
}

Outcome metric_properties() {
  std::mt19937_64 rng(2024);
  int bad = 0;
  double worst_dtw = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = std::uniform_int_distribution<int>(2, 9)(rng);
    const auto g = testing_support::random_graph(rng, n, 0.4, true);
    std::uniform_int_distribution<int> node(0, n - 1), len(1, 6);
    const auto ref = testing_support::random_walk(g, rng, node(rng), len(rng));
    const int start = std::bernoulli_distribution(0.7)(rng) ? ref.front() : node(rng);
    const auto traj = testing_support::random_walk(g, rng, start, len(rng));
    const auto ref_ids = testing_support::ids(g, ref), traj_ids = testing_support::ids(g, traj);
    const auto ep = testing_support::make_episode(ref_ids, {{0, static_cast<int>(ref.size()) - 1}}, {{"go"}}, g.scan());
    const auto r = evaluate_episode(g, traj_ids, ep);
    const double self = ndtw(g, traj_ids, traj_ids);
    worst_dtw = std::max(worst_dtw, std::abs(dtw(g, traj, ref) - testing_support::brute_dtw(g, traj, ref)));
    if (self != 1.0 || r.ndtw < 0.0 || r.ndtw > 1.0 || r.spl > (r.success ? 1.0 : 0.0) ||
        (r.success && !r.oracle_success)) {
      ++bad;
    }
  }
  const bool ok = bad == 0 && worst_dtw <= kDtwTol;
  return {ok ? Status::Pass : Status::Fail,
          fmt("1000 cases, %.0f property violations, max |dtw - oracle| %.1e", bad, worst_dtw)};
}

Outcome gradient_check() {
  ModelConfig c;
  c.hidden_dim = 8;
  const auto params = ModelParams::init(c, 0);
  const auto bundle = make_gradcheck_bundle(c, 0, 3, 2);
  const auto rep = grad_check(params, bundle, kGradEps);
  std::string worst_group;
  for (const auto& [name, err] : rep.max_relative_error) {
    if (err == rep.worst) worst_group = name;
  }
  const auto plain = grad_check(params, bundle, kGradEps, false);
  return {rep.worst < kGradTol ? Status::Pass : Status::Fail,
          fmt("%.0f groups, worst %.2e", static_cast<double>(rep.max_relative_error.size()), rep.worst) + " (" +
              worst_group + "); fp64 difference quotient alone: " + fmt("%.2e", plain.worst)};
}

struct ToySet {
  std::vector<ToyWorld> worlds;
  std::vector<Episode> all;
  std::vector<EpisodeRef> refs;
};

ToySet toy_set(std::uint64_t seed, int worlds, int nodes, int episodes) {
  ToySet s;
  std::mt19937_64 rng(seed);
  for (int w = 0; w < worlds; ++w) {
    s.worlds.push_back(generate_toy_world(rng(), nodes, episodes / worlds + (w < episodes % worlds ? 1 : 0)));
  }
  for (const auto& w : s.worlds) {
    for (const auto& e : w.episodes) {
      s.refs.emplace_back(&e, &w.graph);
      s.all.push_back(e);
    }
  }
  return s;
}

Outcome toy_learnability() {
  const auto set = toy_set(0, 5, 10, 40);
  const Vocab vocab = build_vocab(set.all);
  const FeatureBank features;
  ModelConfig mc;
  mc.vocab_size = static_cast<int>(vocab.size());
  mc.feature_dim = features.feature_dim();
  TrainConfig tc;
  tc.epochs = 200;
  tc.parallel = false;
  const auto r = train_toy(set.refs, ModelParams::init(mc, 0), vocab, features, tc);
  const double first = r.curve.front().mean_loss, last = r.curve.back().mean_loss;
  const double f1 = r.curve.back().heldout_f1;
  const bool ok = last <= kLossRatio * first && f1 > r.majority_f1;
  return {ok ? Status::Pass : Status::Fail,
          fmt("loss %.3f -> %.3f (ratio %.3f); held-out shift F1 %.3f", first, last, last / first, f1) +
              fmt(" vs majority %.3f", r.majority_f1)};
}

Outcome shifting_semantics() {
  long rollouts = 0, replays = 0, exact = 0, bad_delta = 0;
  auto check_deltas = [&](const RolloutResult& r) {
    ++rollouts;
    int prev = 0;
    for (const auto& e : r.shift_events) {
      if (e.sub_idx != prev && e.sub_idx != prev + 1) ++bad_delta;
      prev = e.sub_idx;
    }
    if (r.final_sub_idx != prev && r.final_sub_idx != prev + 1) ++bad_delta;
  };
  const FeatureBank features;
  auto run_set = [&](const std::vector<EpisodeRef>& refs, const Vocab& vocab) {
    ModelConfig mc;
    mc.vocab_size = static_cast<int>(vocab.size());
    mc.hidden_dim = 8;
    mc.feature_dim = features.feature_dim();
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto params = ModelParams::init(mc, seed);
      const AgentContext agent{params, vocab, features};
      RolloutConfig teacher;
      teacher.action_forcing = ActionForcing::Teacher;
      teacher.shift_forcing = ShiftForcing::Teacher;
      RolloutConfig student;
      student.sample_actions = true;
      student.shift_threshold = 0.3;
      student.seed = seed;
      for (const auto& [ep, graph] : refs) {
        const auto t = rollout(*ep, *graph, agent, teacher);
        check_deltas(t);
        ++replays;
        if (ndtw(*graph, t.trajectory, ep->path) == 1.0) ++exact;
        check_deltas(rollout(*ep, *graph, agent, student));
      }
    }
  };
  const auto set = toy_set(7, 10, 12, 200);
  run_set(set.refs, build_vocab(set.all));

  std::string fgr2r = "FGR2R not checked";
  const char* data = std::getenv("SUBNAV_FGR2R");
  const char* graphs = std::getenv("SUBNAV_GRAPH_DIR");
  if (data && *data && graphs && *graphs) {
    GraphStore store(graphs);
    std::vector<Episode> valid;
    LoadOptions opts;
    opts.format = EpisodeFormat::FineGrained;
    for (const auto& p : split_paths(data)) {
      for (auto& ep : load_episodes(p, opts)) {
        auto norm = normalize_for_training(ep);
        if (!episode_violations(norm).empty()) continue;
        if (!episode_graph_violations(norm, store.get(norm.scan)).empty()) continue;
        valid.push_back(std::move(norm));
      }
    }
    std::vector<EpisodeRef> refs;
    for (const auto& e : valid) refs.emplace_back(&e, &store.get(e.scan));
    const long before = replays;
    run_set(refs, build_vocab(valid));
    fgr2r = std::to_string(replays - before) + " FGR2R replays included";
  }
  const bool ok = bad_delta == 0 && exact == replays;
  return {ok ? Status::Pass : Status::Fail,
          std::to_string(rollouts) + " rollouts, " + std::to_string(bad_delta) + " bad deltas, " +
              std::to_string(exact) + "/" + std::to_string(replays) + " teacher replays at ndtw 1; " + fgr2r};
}

// Recomputes every cluster-pair linkage from the raw matrix before each merge.
std::vector<std::vector<int>> brute_agglomerate(const SimilarityMatrix& m, int k) {
  std::vector<std::vector<int>> clusters;
  for (std::size_t i = 0; i < m.n; ++i) clusters.push_back({static_cast<int>(i)});
  while (static_cast<int>(clusters.size()) > k) {
    std::size_t ba = 0, bb = 1;
    double best = 2.0;
    for (std::size_t a = 0; a < clusters.size(); ++a) {
      for (std::size_t b = a + 1; b < clusters.size(); ++b) {
        double link = 0;
        for (int x : clusters[a]) {
          for (int y : clusters[b]) link = std::max(link, 1.0 - m(static_cast<std::size_t>(x), static_cast<std::size_t>(y)));
        }
        if (link < best) {
          best = link;
          ba = a;
          bb = b;
        }
      }
    }
    clusters[ba].insert(clusters[ba].end(), clusters[bb].begin(), clusters[bb].end());
    std::sort(clusters[ba].begin(), clusters[ba].end());
    clusters.erase(clusters.begin() + static_cast<long>(bb));
  }
  std::sort(clusters.begin(), clusters.end());
  return clusters;
}

double best_partition_cost(const SimilarityMatrix& m, int k) {
  std::vector<int> assign(m.n, 0);
  double best = 2.0;
  std::function<void(std::size_t, int)> rec = [&](std::size_t i, int used) {
    if (i == m.n) {
      if (used != k) return;
      std::vector<std::vector<int>> blocks(static_cast<std::size_t>(k));
      for (std::size_t j = 0; j < m.n; ++j) blocks[static_cast<std::size_t>(assign[j])].push_back(static_cast<int>(j));
      best = std::min(best, complete_linkage_cost(m, blocks));
      return;
    }
    for (int c = 0; c <= std::min(used, k - 1); ++c) {
      assign[i] = c;
      rec(i + 1, std::max(used, c + 1));
    }
  };
  rec(0, 0);
  return best;
}

Outcome clustering_oracle() {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int matched = 0, optimal = 0, total = 0;
  bool ranked = true;
  for (int k : {2, 3}) {
    for (int trial = 0; trial < 50; ++trial, ++total) {
      SimilarityMatrix m;
      m.n = 6;
      m.values.assign(36, 1.0);
      std::vector<SubInstructionResult> results;
      for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t j = i + 1; j < 6; ++j) m.values[i * 6 + j] = m.values[j * 6 + i] = u(rng);
        m.labels.push_back("e#" + std::to_string(i));
        results.push_back({m.labels.back(), {"w"}, 5.0 * u(rng), u(rng), 2});
      }
      const auto c = complete_linkage_cluster(m, k);
      if (c.members == brute_agglomerate(m, k)) ++matched;
      if (complete_linkage_cost(m, c.members) <= best_partition_cost(m, k)) ++optimal;
      const auto summary = cluster_summary(c, m, results);
      for (std::size_t i = 1; i < summary.size(); ++i) {
        if (summary[i].mean_distance < summary[i - 1].mean_distance) ranked = false;
      }
    }
  }
  const bool ok = matched == total && ranked;
  return {ok ? Status::Pass : Status::Fail,
          std::to_string(matched) + "/" + std::to_string(total) +
              " match exhaustive agglomeration; ranking ascending: " + (ranked ? "yes" : "no") + "; " +
              std::to_string(optimal) + "/" + std::to_string(total) + " also reach the minimum-diameter partition"};
}

Outcome shift_rule() {
  std::string detail;
  bool ok = true;
  for (auto [d, want] : {std::pair{0.0, 1}, {0.5, 1}, {0.5 + 1e-9, 0}}) {
    const auto g = d == 0.0 ? testing_support::make_graph({{"s", -1, 0, 0}, {"e", 0, 0, 0}}, {{"s", "e"}})
                            : testing_support::make_graph({{"s", -1, 0, 0}, {"e", 0, 0, 0}, {"x", d, 0, 0}},
                                                          {{"s", "e"}, {"e", "x"}});
    const auto ep = testing_support::make_episode({"s", "e"}, {{0, 1}}, {{"go"}});
    const int got = gt_shift_signal(g, ep, d == 0.0 ? "e" : "x", 0);
    ok = ok && got == want;
    detail += fmt("d=%.10g -> %.0f  ", d, got);
  }
  return {ok ? Status::Pass : Status::Fail, detail};
}

}  // namespace

int main() {
  report(1, "published-shift-rates", 1, published_rates);
  report(2, "chunker-golden", 1, chunker_golden);
  report(3, "fgr2r-statistics", 30, fgr2r_stats);
  report(4, "metric-properties", 60, metric_properties);
  report(5, "gradient-verification", 30, gradient_check);
  report(6, "toy-learnability", 600, toy_learnability);
  report(7, "shifting-semantics", 600, shifting_semantics);
  report(8, "clustering-oracle", 30, clustering_oracle);
  report(9, "shift-signal-rule", 1, shift_rule);
  return failures == 0 ? 0 : 1;
}
