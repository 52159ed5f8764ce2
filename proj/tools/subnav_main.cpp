#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "subnav/agent.hpp"
#include "subnav/analysis.hpp"
#include "subnav/chunker.hpp"
#include "subnav/conllu.hpp"
#include "subnav/dataset.hpp"
#include "subnav/error.hpp"
#include "subnav/metrics.hpp"
#include "subnav/navgraph.hpp"
#include "subnav/neural.hpp"
#include "subnav/report.hpp"

#ifndef SUBNAV_VERSION
#define SUBNAV_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace subnav;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitUsage = 2;

// Raised for inconsistent flag combinations detected after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 0;
  std::string graph_dir;
  std::string out;
  std::string format = "tsv";
  std::string manifest;
  bool quiet = false;
};

std::string num(double v, int digits = 4) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

nlohmann::json json_num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json json_rate(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::string rate(const std::optional<double>& v) { return v ? num(*v, 3) : "undefined"; }

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

EpisodeFormat parse_format(const std::string& s) {
  if (s == "canonical") return EpisodeFormat::Canonical;
  if (s == "fine-grained") return EpisodeFormat::FineGrained;
  if (s == "r2r") return EpisodeFormat::R2R;
  return EpisodeFormat::Auto;
}

class Context {
 public:
  Context(Globals& g, std::string subcommand) : g_(g) {
    manifest_.subcommand = std::move(subcommand);
    manifest_.version = SUBNAV_VERSION;
  }

  const Globals& globals() const { return g_; }
  bool structured() const { return g_.format == "structured"; }

  void input(const std::string& path) {
    if (!fs::exists(path)) throw ValidationError("no such file: " + path);
    manifest_.add_input(path);
  }

  void log(const std::string& msg) const {
    if (!g_.quiet) std::cerr << msg << '\n';
  }

  // Primary text output: --out when given, stdout otherwise.
  void emit(const std::string& text) {
    if (g_.out.empty()) {
      std::cout << text;
      return;
    }
    std::ofstream out(g_.out);
    if (!out) throw Error("cannot write " + g_.out);
    out << text;
  }

  const std::string& require_out(const char* what) const {
    if (g_.out.empty()) throw UsageError(std::string("--out is required: ") + what);
    return g_.out;
  }

  GraphStore graphs() const {
    if (g_.graph_dir.empty()) throw UsageError("--graph-dir is required for this subcommand");
    return GraphStore(g_.graph_dir);
  }

  void finish(const CLI::App& app, const std::string& manifest_default = {}) {
    for (const CLI::App* a : {&app, app.get_parent()}) {
      if (!a) continue;
      for (const CLI::Option* opt : a->get_options()) {
        const std::string name = opt->get_name(false, true);
        if (name.empty() || name.find("help") != std::string::npos) continue;
        auto results = opt->results();
        std::string value;
        if (!results.empty()) {
          for (const auto& r : results) value += (value.empty() ? "" : ",") + r;
        } else {
          value = opt->get_default_str();
        }
        manifest_.config[name] = value;
      }
    }
    manifest_.seed = g_.seed;
    std::string path = g_.manifest;
    if (path.empty() && !manifest_default.empty()) path = manifest_default;
    if (path.empty() && !g_.out.empty()) path = g_.out + ".manifest.json";
    if (!path.empty()) manifest_.write(path);
  }

 private:
  Globals& g_;
  RunManifest manifest_;
};

std::string tsv(const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "\t" : "") + row[i];
    out += '\n';
  }
  return out;
}

std::vector<Episode> load_checked(Context& ctx, const std::string& path, const std::string& format,
                                  bool validate = true) {
  ctx.input(path);
  LoadOptions opts;
  opts.format = parse_format(format);
  opts.validate = validate;
  return load_episodes(path, opts);
}

const Episode& find_episode(const std::vector<Episode>& episodes, const std::string& id) {
  for (const auto& e : episodes) {
    if (e.path_id == id) return e;
  }
  throw ValidationError("no episode with path_id " + id);
}

// ---- subcommands ------------------------------------------------------------------

int cmd_chunk(Context& ctx, const std::string& conllu, const std::string& lexicon, int min_words) {
  ctx.input(conllu);
  ChunkingConfig cfg = ChunkingConfig::defaults();
  if (!lexicon.empty()) {
    ctx.input(lexicon);
    cfg = ChunkingConfig::from_lexicon_file(lexicon, min_words);
  } else {
    cfg.min_chunk_words = min_words;
  }
  cfg.validate();
  const auto docs = parse_conllu_document(read_file(conllu));
  std::vector<std::vector<std::string>> rows{{"text_id", "index", "sub_instruction"}};
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& parsed : docs) {
    for (const auto& w : parsed.warnings) ctx.log(parsed.id + ": " + w);
    const auto subs = chunk_instruction(parsed, cfg);
    nlohmann::json texts = nlohmann::json::array();
    for (const auto& s : subs) {
      rows.push_back({parsed.id, std::to_string(s.id), s.text(true)});
      texts.push_back(s.text(true));
    }
    doc.push_back({{"id", parsed.id}, {"sub_instructions", texts}});
  }
  ctx.emit(ctx.structured() ? doc.dump(2) + "\n" : tsv(rows));
  return kExitOk;
}

int cmd_validate(Context& ctx, const std::string& episodes_path, const std::string& format) {
  const auto episodes = load_checked(ctx, episodes_path, format, false);
  const bool need_alignment = parse_format(format) != EpisodeFormat::R2R;
  std::optional<GraphStore> graphs;
  if (!ctx.globals().graph_dir.empty()) graphs.emplace(ctx.globals().graph_dir);
  std::vector<std::vector<std::string>> rows{{"path_id", "violation"}};
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& ep : episodes) {
    auto problems = episode_violations(ep, need_alignment && (ep.aligned() || format != "auto"));
    if (graphs) {
      const auto more = episode_graph_violations(ep, graphs->get(ep.scan));
      problems.insert(problems.end(), more.begin(), more.end());
    }
    for (const auto& p : problems) {
      rows.push_back({ep.path_id, p});
      doc.push_back({{"path_id", ep.path_id}, {"violation", p}});
    }
  }
  ctx.emit(ctx.structured() ? doc.dump(2) + "\n" : tsv(rows));
  ctx.log(std::to_string(episodes.size()) + " episodes, " + std::to_string(rows.size() - 1) + " violations");
  return rows.size() > 1 ? kExitInvalid : kExitOk;
}

int cmd_stats(Context& ctx, const std::vector<std::string>& files, const std::string& format) {
  std::vector<Episode> all;
  for (const auto& f : files) {
    auto eps = load_checked(ctx, f, format);
    all.insert(all.end(), eps.begin(), eps.end());
  }
  const CorpusStats s = corpus_stats(all);
  if (ctx.structured()) {
    ctx.emit(s.to_json().dump(2) + "\n");
    return kExitOk;
  }
  std::vector<std::vector<std::string>> rows{
      {"statistic", "value"},
      {"episodes", std::to_string(s.episodes)},
      {"sub_instructions", std::to_string(s.sub_instructions)},
      {"words", std::to_string(s.words)},
      {"mean_subinstr_per_instr", num(s.mean_subinstr_per_instr, 3)},
      {"mean_words_per_subinstr", num(s.mean_words_per_subinstr, 3)},
      {"mean_viewpoints_per_subinstr", num(s.mean_viewpoints_per_subinstr, 3)},
      {"min_subinstr", std::to_string(s.min_subinstr)},
      {"max_subinstr", std::to_string(s.max_subinstr)},
      {"min_words", std::to_string(s.min_words)},
      {"max_words", std::to_string(s.max_words)},
      {"min_viewpoints", std::to_string(s.min_viewpoints)},
      {"max_viewpoints", std::to_string(s.max_viewpoints)}};
  for (const auto& [k, c] : s.viewpoint_histogram) rows.push_back({"viewpoints=" + std::to_string(k), std::to_string(c)});
  ctx.emit(tsv(rows));
  return kExitOk;
}

int cmd_eval(Context& ctx, const std::string& episodes_path, const std::string& traj_path, double threshold) {
  auto episodes = load_checked(ctx, episodes_path, "auto");
  ctx.input(traj_path);
  const auto records = load_trajectories(traj_path);
  GraphStore graphs = ctx.graphs();
  std::vector<Episode> matched;
  std::vector<std::vector<std::string>> trajectories;
  for (const auto& r : records) {
    const Episode& ep = find_episode(episodes, r.path_id);
    graphs.get(ep.scan);
    matched.push_back(ep);
    trajectories.push_back(r.trajectory);
  }
  const auto results = evaluate_all(graphs, matched, trajectories, threshold);
  const auto agg = aggregate(results);
  if (ctx.structured()) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& e : results) {
      per.push_back({{"path_id", e.path_id}, {"pl", e.pl}, {"ne", json_num(e.ne)}, {"oracle_success", e.oracle_success},
                     {"success", e.success}, {"spl", e.spl}, {"dtw", json_num(e.dtw)}, {"ndtw", e.ndtw}});
    }
    ctx.emit(nlohmann::json{{"episodes", per}, {"aggregate", agg.to_json()}}.dump(2) + "\n");
    return kExitOk;
  }
  std::vector<std::vector<std::string>> rows{{"path_id", "pl", "ne", "osr", "sr", "spl", "dtw", "ndtw"}};
  for (const auto& e : results) {
    rows.push_back({e.path_id, num(e.pl), num(e.ne), e.oracle_success ? "1" : "0", e.success ? "1" : "0", num(e.spl),
                    num(e.dtw), num(e.ndtw)});
  }
  rows.push_back({"ALL", num(agg.pl), num(agg.ne), num(agg.osr), num(agg.sr), num(agg.spl), "-", num(agg.ndtw)});
  ctx.emit(tsv(rows));
  return kExitOk;
}

int cmd_shift_report(Context& ctx, const std::string& traj_path) {
  ctx.input(traj_path);
  const auto c = confusion_from(load_trajectories(traj_path));
  const auto r = confusion_stats(c);
  if (ctx.structured()) {
    ctx.emit(nlohmann::json{{"tp", c.tp}, {"tn", c.tn}, {"fp", c.fp}, {"fn", c.fn},
                            {"accuracy", json_rate(r.accuracy)}, {"precision", json_rate(r.precision)},
                            {"recall", json_rate(r.recall)}, {"f1", json_rate(r.f1)}}
                 .dump(2) +
             "\n");
    return kExitOk;
  }
  ctx.emit(tsv({{"tp", "tn", "fp", "fn", "accuracy", "precision", "recall", "f1"},
                {std::to_string(c.tp), std::to_string(c.tn), std::to_string(c.fp), std::to_string(c.fn),
                 rate(r.accuracy), rate(r.precision), rate(r.recall), rate(r.f1)}}));
  return kExitOk;
}

int cmd_cluster(Context& ctx, const std::string& results_path, int k) {
  ctx.input(results_path);
  const auto results = sub_results_from_json(nlohmann::json::parse(read_file(results_path)));
  std::vector<std::vector<std::string>> words;
  std::vector<std::string> labels;
  for (const auto& r : results) {
    words.push_back(r.words);
    labels.push_back(r.key);
  }
  const auto matrix = similarity_matrix(words, labels);
  const int n = static_cast<int>(results.size());
  if (k > n && n > 0) {
    ctx.log("warning: k = " + std::to_string(k) + " exceeds " + std::to_string(n) + " sub-instructions; using k = " +
            std::to_string(n));
    k = n;
  }
  const auto assignment = complete_linkage_cluster(matrix, k);
  const auto summary = cluster_summary(assignment, matrix, results);
  if (ctx.structured()) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& s : summary) {
      doc.push_back({{"rank", s.rank}, {"mean_distance", json_num(s.mean_distance)}, {"mean_ndtw", s.mean_ndtw},
                     {"frequency", s.frequency}, {"mean_viewpoints", s.mean_viewpoints},
                     {"representative", s.representative_text}});
    }
    ctx.emit(doc.dump(2) + "\n");
    return kExitOk;
  }
  std::vector<std::vector<std::string>> rows{{"rank", "d", "ndtw", "f", "s", "sub_instruction"}};
  for (const auto& s : summary) {
    rows.push_back({std::to_string(s.rank), num(s.mean_distance, 2), num(s.mean_ndtw, 3), std::to_string(s.frequency),
                    num(s.mean_viewpoints, 2), s.representative_text});
  }
  ctx.emit(tsv(rows));
  return kExitOk;
}

struct RolloutFlags {
  std::string checkpoint, episodes, mode = "student", shift = "predicted", sub_results, segmentation = "predicted";
  double threshold = 0.5;
  int max_steps = 20;
};

int cmd_rollout(Context& ctx, const RolloutFlags& f) {
  const std::string& out = ctx.require_out("trajectory file");
  ctx.input(f.checkpoint);
  const auto [params, vocab] = load_checkpoint(f.checkpoint);
  const auto episodes = load_checked(ctx, f.episodes, "auto");
  GraphStore graphs = ctx.graphs();
  const FeatureBank features(params.config.feature_dim - 4);
  RolloutConfig rc;
  rc.action_forcing = f.mode == "teacher" ? ActionForcing::Teacher : ActionForcing::Student;
  rc.shift_forcing = f.shift == "teacher" ? ShiftForcing::Teacher : ShiftForcing::Predicted;
  rc.shift_threshold = f.threshold;
  rc.max_steps = f.max_steps;
  rc.seed = ctx.globals().seed;
  const AgentContext agent{params, vocab, features};

  std::vector<TrajectoryRecord> records;
  std::vector<SubInstructionResult> subs;
  ShiftConfusion confusion;
  for (const auto& ep : episodes) {
    const EnvGraph& g = graphs.get(ep.scan);
    if (static_cast<int>(ep.sub_instructions.size()) > params.config.remaining_capacity) {
      ctx.log("warning: " + ep.path_id + " has " + std::to_string(ep.sub_instructions.size()) +
              " sub-instructions; remaining counts above " + std::to_string(params.config.remaining_capacity - 1) +
              " are clamped");
    }
    const auto r = rollout(ep, g, agent, rc);
    for (const auto& ev : r.shift_events) confusion.add(ev.predicted, ev.ground_truth);
    records.push_back(r.record());
    if (!f.sub_results.empty()) {
      const auto mode = f.segmentation == "ground-truth" ? Segmentation::GroundTruth : Segmentation::Predicted;
      const auto part = sub_instruction_results(g, ep, records.back(), mode);
      subs.insert(subs.end(), part.begin(), part.end());
    }
  }
  save_trajectories(out, records);
  if (!f.sub_results.empty()) {
    std::ofstream s(f.sub_results);
    if (!s) throw Error("cannot write " + f.sub_results);
    s << sub_results_to_json(subs).dump(2) << '\n';
  }
  const auto rates = confusion_stats(confusion);
  ctx.log(std::to_string(records.size()) + " rollouts, shift f1 " + rate(rates.f1));
  return kExitOk;
}

std::vector<ToyWorld> make_worlds(std::uint64_t seed, int worlds, int nodes, int episodes) {
  if (worlds < 1) throw ValidationError("--worlds must be at least 1");
  std::mt19937_64 rng(seed);
  std::vector<ToyWorld> out;
  for (int w = 0; w < worlds; ++w) {
    const int n = episodes / worlds + (w < episodes % worlds ? 1 : 0);
    out.push_back(generate_toy_world(rng(), nodes, n));
  }
  return out;
}

void save_worlds(const std::vector<ToyWorld>& worlds, const std::string& dir) {
  fs::create_directories(dir);
  std::vector<Episode> all;
  for (const auto& w : worlds) {
    std::ofstream g(fs::path(dir) / (w.graph.scan() + ".json"));
    if (!g) throw Error("cannot write graph into " + dir);
    g << w.graph.to_json().dump(2) << '\n';
    all.insert(all.end(), w.episodes.begin(), w.episodes.end());
  }
  save_episodes((fs::path(dir) / "episodes.json").string(), all);
}

struct TrainFlags {
  int epochs = 200, batch = 8, worlds = 5, nodes = 10, episodes = 40, hidden = 16;
  double lr = 0.05;
  std::string world_dir;
  bool serial = false;
};

int cmd_train_toy(Context& ctx, const TrainFlags& f) {
  const std::string& out = ctx.require_out("checkpoint path");
  const std::uint64_t seed = ctx.globals().seed;
  const auto worlds = make_worlds(seed, f.worlds, f.nodes, f.episodes);
  if (!f.world_dir.empty()) save_worlds(worlds, f.world_dir);
  std::vector<Episode> all;
  std::vector<EpisodeRef> refs;
  for (const auto& w : worlds) {
    for (const auto& e : w.episodes) {
      refs.push_back({&e, &w.graph});
      all.push_back(e);
    }
  }
  const Vocab vocab = build_vocab(all);
  const FeatureBank features;
  ModelConfig mc;
  mc.vocab_size = static_cast<int>(vocab.size());
  mc.hidden_dim = f.hidden;
  mc.feature_dim = features.feature_dim();
  TrainConfig tc;
  tc.epochs = f.epochs;
  tc.lr = f.lr;
  tc.batch_size = f.batch;
  tc.parallel = !f.serial;
  tc.seed = seed;
  const auto result = train_toy(refs, ModelParams::init(mc, seed), vocab, features, tc);
  save_checkpoint(out, result.params, vocab, train_result_to_json(result));

  const auto& curve = result.curve;
  if (ctx.structured()) {
    std::cout << train_result_to_json(result).dump(2) << '\n';
  } else {
    std::vector<std::vector<std::string>> rows{{"epoch", "mean_loss", "heldout_f1"}};
    for (const auto& e : curve) rows.push_back({std::to_string(e.epoch), num(e.mean_loss), num(e.heldout_f1, 3)});
    if (!ctx.globals().quiet) std::cout << tsv(rows);
  }
  ctx.log("loss " + num(curve.front().mean_loss) + " -> " + num(curve.back().mean_loss) + ", held-out shift f1 " +
          num(curve.back().heldout_f1, 3) + " (majority baseline " + num(result.majority_f1, 3) + ")");
  return kExitOk;
}

struct GradFlags {
  int hidden = 8, steps = 3, subs = 2;
  double eps = 1e-5, tolerance = 1e-4;
  bool fp64_reference = false;
};

int cmd_gradcheck(Context& ctx, const GradFlags& f) {
  ModelConfig mc;
  mc.hidden_dim = f.hidden;
  const std::uint64_t seed = ctx.globals().seed;
  const auto params = ModelParams::init(mc, seed);
  const auto bundle = make_gradcheck_bundle(mc, seed, f.steps, f.subs);
  const auto report = grad_check(params, bundle, f.eps, !f.fp64_reference);
  bool ok = true;
  std::vector<std::vector<std::string>> rows{{"group", "max_rel_error", "status"}};
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& [name, err] : report.max_relative_error) {
    const bool pass = err < f.tolerance;
    ok = ok && pass;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", err);
    rows.push_back({name, buf, pass ? "ok" : "FAIL"});
    doc[name] = err;
  }
  ctx.emit(ctx.structured() ? nlohmann::json{{"groups", doc}, {"worst", report.worst}, {"pass", ok}}.dump(2) + "\n"
                            : tsv(rows));
  return ok ? kExitOk : kExitInvalid;
}

int cmd_gen_toy(Context& ctx, int worlds, int nodes, int episodes) {
  const std::string& dir = ctx.require_out("output directory");
  const auto w = make_worlds(ctx.globals().seed, worlds, nodes, episodes);
  save_worlds(w, dir);
  ctx.log("wrote " + std::to_string(w.size()) + " worlds to " + dir);
  return kExitOk;
}

int cmd_plot(Context& ctx, const std::string& episodes_path, const std::string& traj_path, const std::string& path_id) {
  const std::string& out = ctx.require_out("SVG path");
  const auto episodes = load_checked(ctx, episodes_path, "auto");
  std::optional<TrajectoryRecord> record;
  if (!traj_path.empty()) {
    ctx.input(traj_path);
    for (auto& r : load_trajectories(traj_path)) {
      if (path_id.empty() || r.path_id == path_id) {
        record = std::move(r);
        break;
      }
    }
    if (!record) throw ValidationError("no trajectory for " + (path_id.empty() ? std::string("any episode") : path_id));
  }
  const std::string id = record ? record->path_id : (path_id.empty() ? episodes.at(0).path_id : path_id);
  const Episode& ep = find_episode(episodes, id);
  GraphStore graphs = ctx.graphs();
  const TrajectoryRecord r = record ? *record : TrajectoryRecord{ep.path_id, ep.path, {}};
  std::ofstream s(out);
  if (!s) throw Error("cannot write " + out);
  s << plot_trajectory(graphs.get(ep.scan), ep, r.trajectory, r.shifts);
  return kExitOk;
}

int cmd_r4r(Context& ctx, const std::string& episodes_path, int max_pairs) {
  const std::string& out = ctx.require_out("episode file");
  const auto episodes = load_checked(ctx, episodes_path, "auto");
  GraphStore graphs = ctx.graphs();
  std::vector<Episode> joined;
  for (std::size_t a = 0; a < episodes.size(); ++a) {
    for (std::size_t b = 0; b < episodes.size(); ++b) {
      if (a == b || episodes[a].scan != episodes[b].scan) continue;
      if (max_pairs > 0 && static_cast<int>(joined.size()) >= max_pairs) break;
      const EnvGraph& g = graphs.get(episodes[a].scan);
      const auto d = g.shortest_dist(episodes[a].goal(), episodes[b].path.front());
      if (!d || *d > kJoinRadius) continue;
      joined.push_back(concat_to_r4r(episodes[a], episodes[b], g));
    }
  }
  save_episodes(out, joined);
  ctx.log(std::to_string(joined.size()) + " concatenated episodes");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sub-instruction navigation toolkit: chunking, evaluation, agent rollouts and analysis"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random draw")->capture_default_str();
  app.add_option("--graph-dir", g.graph_dir, "Directory of <scan>.json or <scan>_connectivity.json graphs");
  app.add_option("--out", g.out, "Output file or directory");
  app.add_option("--format", g.format, "Report format")
      ->check(CLI::IsMember({"tsv", "structured"}))
      ->capture_default_str();
  app.add_option("--manifest", g.manifest, "Run manifest path (default: <out>.manifest.json)");
  app.add_flag("--quiet", g.quiet, "Suppress progress messages");

  std::function<int()> action;
  const CLI::App* chosen = nullptr;
  std::string manifest_default;
  auto bind = [&](CLI::App* sub, std::function<int(Context&)> fn) {
    sub->callback([&, sub, fn] {
      chosen = sub;
      action = [&, sub, fn] {
        Context ctx(g, sub->get_name());
        const int code = fn(ctx);
        ctx.finish(*sub, manifest_default);
        return code;
      };
    });
  };

  std::string conllu, lexicon;
  int min_words = 3;
  auto* chunk = app.add_subcommand("chunk", "Split CoNLL-U parsed instructions into sub-instructions");
  chunk->add_option("--conllu", conllu, "CoNLL-U file; '# text_id = ' starts a new instruction")->required();
  chunk->add_option("--lexicon", lexicon, "Lexicon file with 'action:' and 'connective:' lines");
  chunk->add_option("--min-words", min_words, "Shortest sub-instruction kept on its own")->capture_default_str();
  bind(chunk, [&](Context& c) { return cmd_chunk(c, conllu, lexicon, min_words); });

  std::string episodes, input_format = "auto";
  auto* validate = app.add_subcommand("validate", "Check episode invariants (and graph consistency with --graph-dir)");
  validate->add_option("--episodes", episodes)->required();
  validate->add_option("--input-format", input_format)
      ->check(CLI::IsMember({"auto", "canonical", "fine-grained", "r2r"}))
      ->capture_default_str();
  bind(validate, [&](Context& c) { return cmd_validate(c, episodes, input_format); });

  std::vector<std::string> episode_files;
  auto* stats = app.add_subcommand("stats", "Corpus statistics over one or more episode files");
  stats->add_option("--episodes", episode_files)->required();
  stats->add_option("--input-format", input_format)
      ->check(CLI::IsMember({"auto", "canonical", "fine-grained", "r2r"}))
      ->capture_default_str();
  bind(stats, [&](Context& c) { return cmd_stats(c, episode_files, input_format); });

  std::string trajectories;
  double threshold = kSuccessRadius;
  auto* eval = app.add_subcommand("eval", "Navigation metrics of trajectories against episodes");
  eval->add_option("--episodes", episodes)->required();
  eval->add_option("--trajectories", trajectories)->required();
  eval->add_option("--threshold", threshold, "Success radius in meters")->capture_default_str();
  bind(eval, [&](Context& c) { return cmd_eval(c, episodes, trajectories, threshold); });

  auto* shift_report = app.add_subcommand("shift-report", "Shift confusion counts and rates");
  shift_report->add_option("--trajectories", trajectories)->required();
  bind(shift_report, [&](Context& c) { return cmd_shift_report(c, trajectories); });

  std::string results;
  int k = 100;
  auto* cluster = app.add_subcommand("cluster", "Cluster sub-instructions and rank clusters by shift distance");
  cluster->add_option("--results", results, "Per-sub-instruction results from 'rollout --sub-results'")->required();
  cluster->add_option("-k", k, "Number of clusters")->capture_default_str();
  bind(cluster, [&](Context& c) { return cmd_cluster(c, results, k); });

  RolloutFlags rf;
  auto* roll = app.add_subcommand("rollout", "Run a checkpoint on episodes and write trajectories");
  roll->add_option("--checkpoint", rf.checkpoint)->required();
  roll->add_option("--episodes", rf.episodes)->required();
  roll->add_option("--mode", rf.mode)->check(CLI::IsMember({"teacher", "student"}))->capture_default_str();
  roll->add_option("--shift", rf.shift)->check(CLI::IsMember({"teacher", "predicted"}))->capture_default_str();
  roll->add_option("--threshold", rf.threshold, "Shift when p_s exceeds this")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  roll->add_option("--max-steps", rf.max_steps)->check(CLI::PositiveNumber)->capture_default_str();
  roll->add_option("--sub-results", rf.sub_results, "Also write per-sub-instruction results for 'cluster'");
  roll->add_option("--segmentation", rf.segmentation, "Sub-trajectory cuts for per-sub-instruction nDTW")
      ->check(CLI::IsMember({"predicted", "ground-truth"}))
      ->capture_default_str();
  bind(roll, [&](Context& c) { return cmd_rollout(c, rf); });

  TrainFlags tf;
  auto* train = app.add_subcommand("train-toy", "Train on synthetic worlds and write a checkpoint");
  train->add_option("--epochs", tf.epochs)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--lr", tf.lr)->check(CLI::NonNegativeNumber)->capture_default_str();
  train->add_option("--batch", tf.batch)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--worlds", tf.worlds)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--nodes", tf.nodes)->capture_default_str();
  train->add_option("--episodes", tf.episodes)->capture_default_str();
  train->add_option("--hidden", tf.hidden)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--world-dir", tf.world_dir, "Also write the generated worlds here");
  train->add_flag("--serial", tf.serial, "Compute batch gradients without threads");
  bind(train, [&](Context& c) { return cmd_train_toy(c, tf); });

  GradFlags gf;
  auto* grad = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  grad->add_option("--hidden", gf.hidden)->check(CLI::PositiveNumber)->capture_default_str();
  grad->add_option("--steps", gf.steps)->check(CLI::PositiveNumber)->capture_default_str();
  grad->add_option("--subs", gf.subs)->check(CLI::PositiveNumber)->capture_default_str();
  grad->add_option("--eps", gf.eps)->capture_default_str();
  grad->add_option("--tolerance", gf.tolerance)->capture_default_str();
  grad->add_flag("--fp64-reference", gf.fp64_reference, "Evaluate perturbed losses in double instead of long double");
  bind(grad, [&](Context& c) { return cmd_gradcheck(c, gf); });

  int gen_worlds = 1, gen_nodes = 10, gen_episodes = 40;
  auto* gen = app.add_subcommand("gen-toy", "Write synthetic worlds (graphs + episodes.json) into --out");
  gen->add_option("--worlds", gen_worlds)->check(CLI::PositiveNumber)->capture_default_str();
  gen->add_option("--nodes", gen_nodes)->capture_default_str();
  gen->add_option("--episodes", gen_episodes)->capture_default_str();
  bind(gen, [&](Context& c) {
    manifest_default = g.out.empty() ? "" : (fs::path(g.out) / "manifest.json").string();
    return cmd_gen_toy(c, gen_worlds, gen_nodes, gen_episodes);
  });

  std::string path_id;
  auto* plot = app.add_subcommand("plot", "Top-down SVG of an episode and trajectory");
  plot->add_option("--episodes", episodes)->required();
  plot->add_option("--trajectories", trajectories, "Trajectory file; without it the ground truth is drawn");
  plot->add_option("--path-id", path_id);
  bind(plot, [&](Context& c) { return cmd_plot(c, episodes, trajectories, path_id); });

  int max_pairs = 0;
  auto* r4r = app.add_subcommand("r4r-concat", "Join episodes whose goal lies within 3 m of another's start");
  r4r->add_option("--episodes", episodes)->required();
  r4r->add_option("--max-pairs", max_pairs, "Stop after this many joins (0: all)")->capture_default_str();
  bind(r4r, [&](Context& c) { return cmd_r4r(c, episodes, max_pairs); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e, std::cerr, std::cerr);
    return kExitUsage;
  }

  try {
    return action();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n' << (chosen ? chosen->help() : app.help());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  }
}
