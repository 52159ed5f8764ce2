#include "subnav/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include <omp.h>

#include "subnav/error.hpp"

namespace subnav {

namespace {

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

void renumber(std::vector<SubInstruction>& subs) {
  for (std::size_t i = 0; i < subs.size(); ++i) subs[i].id = static_cast<int>(i) + 1;
}

void append(SubInstruction& into, const SubInstruction& from) {
  into.words.insert(into.words.end(), from.words.begin(), from.words.end());
  into.tokens.insert(into.tokens.end(), from.tokens.begin(), from.tokens.end());
}

void prepend(SubInstruction& into, const SubInstruction& from) {
  into.words.insert(into.words.begin(), from.words.begin(), from.words.end());
  into.tokens.insert(into.tokens.begin(), from.tokens.begin(), from.tokens.end());
}

EpisodeFormat detect_format(const nlohmann::json& record, const FineGrainedFields& fields) {
  if (record.contains("sub_instructions")) return EpisodeFormat::Canonical;
  if (record.contains(fields.chunks) || record.contains(fields.chunk_views)) return EpisodeFormat::FineGrained;
  if (record.contains(fields.instructions)) return EpisodeFormat::R2R;
  throw ValidationError("unrecognized episode record (no sub_instructions, chunk or instructions field)");
}

std::string record_id(const nlohmann::json& record, const std::string& key) {
  const auto& v = record.at(key);
  return v.is_string() ? v.get<std::string>() : v.dump();
}

std::vector<Episode> from_fine_grained(const nlohmann::json& record, const FineGrainedFields& f) {
  const std::string base_id = record_id(record, f.path_id);
  const auto& instructions = record.at(f.instructions);
  nlohmann::json chunks = record.at(f.chunks);
  if (chunks.is_string()) chunks = parse_python_list(chunks.get<std::string>());
  nlohmann::json views = record.at(f.chunk_views);
  if (views.is_string()) views = nlohmann::json::parse(views.get<std::string>());
  if (chunks.size() != instructions.size() || views.size() != instructions.size()) {
    throw ValidationError(base_id + ": instruction/chunk/view counts differ");
  }
  std::vector<Episode> out;
  for (std::size_t k = 0; k < instructions.size(); ++k) {
    Episode ep;
    ep.path_id = base_id + "_" + std::to_string(k);
    ep.scan = record.at(f.scan).get<std::string>();
    ep.heading = record.value(f.heading, 0.0);
    ep.path = record.at(f.path).get<std::vector<std::string>>();
    ep.instruction = instructions[k].get<std::string>();
    for (const auto& chunk : chunks[k]) {
      SubInstruction sub;
      sub.words = chunk.get<std::vector<std::string>>();
      ep.sub_instructions.push_back(std::move(sub));
    }
    renumber(ep.sub_instructions);
    const int shift = f.one_based ? 1 : 0;
    for (const auto& pair : views[k]) {
      ep.sub_paths.push_back({pair.at(0).get<int>() - shift, pair.at(1).get<int>() - shift});
    }
    out.push_back(std::move(ep));
  }
  return out;
}

std::vector<Episode> from_r2r(const nlohmann::json& record, const FineGrainedFields& f) {
  std::vector<Episode> out;
  const std::string base_id = record_id(record, f.path_id);
  const auto& instructions = record.at(f.instructions);
  for (std::size_t k = 0; k < instructions.size(); ++k) {
    Episode ep;
    ep.path_id = base_id + "_" + std::to_string(k);
    ep.scan = record.at(f.scan).get<std::string>();
    ep.heading = record.value(f.heading, 0.0);
    ep.path = record.at(f.path).get<std::vector<std::string>>();
    ep.instruction = instructions[k].get<std::string>();
    out.push_back(std::move(ep));
  }
  return out;
}

void accumulate(CorpusStats& s, const Episode& ep) {
  const int n_sub = static_cast<int>(ep.sub_instructions.size());
  if (s.episodes == 0 || n_sub < s.min_subinstr) s.min_subinstr = n_sub;
  if (s.episodes == 0 || n_sub > s.max_subinstr) s.max_subinstr = n_sub;
  ++s.episodes;
  ++s.subinstr_histogram[n_sub];
  for (const auto& sub : ep.sub_instructions) {
    const int w = static_cast<int>(sub.words.size());
    if (s.sub_instructions == 0) s.min_words = s.max_words = w;
    s.min_words = std::min(s.min_words, w);
    s.max_words = std::max(s.max_words, w);
    s.words += w;
    ++s.sub_instructions;
  }
  for (const auto& sp : ep.sub_paths) {
    const int v = sp.viewpoints();
    if (s.sub_paths == 0) s.min_viewpoints = s.max_viewpoints = v;
    s.min_viewpoints = std::min(s.min_viewpoints, v);
    s.max_viewpoints = std::max(s.max_viewpoints, v);
    ++s.sub_paths;
    s.viewpoints += v;
    ++s.viewpoint_histogram[v];
  }
}

void merge(CorpusStats& into, const CorpusStats& from) {
  if (from.episodes == 0) return;
  if (into.episodes == 0) {
    into = from;
    return;
  }
  into.min_subinstr = std::min(into.min_subinstr, from.min_subinstr);
  into.max_subinstr = std::max(into.max_subinstr, from.max_subinstr);
  if (from.sub_instructions > 0) {
    into.min_words = into.sub_instructions > 0 ? std::min(into.min_words, from.min_words) : from.min_words;
    into.max_words = into.sub_instructions > 0 ? std::max(into.max_words, from.max_words) : from.max_words;
  }
  if (from.sub_paths > 0) {
    into.min_viewpoints = into.sub_paths > 0 ? std::min(into.min_viewpoints, from.min_viewpoints) : from.min_viewpoints;
    into.max_viewpoints = into.sub_paths > 0 ? std::max(into.max_viewpoints, from.max_viewpoints) : from.max_viewpoints;
  }
  into.episodes += from.episodes;
  into.sub_instructions += from.sub_instructions;
  into.words += from.words;
  into.sub_paths += from.sub_paths;
  into.viewpoints += from.viewpoints;
  for (auto [k, v] : from.subinstr_histogram) into.subinstr_histogram[k] += v;
  for (auto [k, v] : from.viewpoint_histogram) into.viewpoint_histogram[k] += v;
}

void finalize(CorpusStats& s) {
  if (s.episodes == 0) throw ValidationError("corpus_stats: no episodes");
  s.mean_subinstr_per_instr = static_cast<double>(s.sub_instructions) / static_cast<double>(s.episodes);
  s.mean_words_per_subinstr =
      s.sub_instructions ? static_cast<double>(s.words) / static_cast<double>(s.sub_instructions) : 0.0;
  s.mean_viewpoints_per_subinstr =
      s.sub_paths ? static_cast<double>(s.viewpoints) / static_cast<double>(s.sub_paths) : 0.0;
}

}  // namespace

std::vector<std::string> episode_violations(const Episode& ep, bool require_alignment) {
  std::vector<std::string> v;
  const int n = static_cast<int>(ep.path.size());
  if (n == 0) v.push_back("empty path");
  if (!require_alignment && !ep.aligned()) return v;
  if (ep.sub_instructions.empty()) v.push_back("no sub-instructions");
  if (ep.sub_paths.size() != ep.sub_instructions.size()) {
    v.push_back("sub-instruction/sub-path count mismatch (" + std::to_string(ep.sub_instructions.size()) + " vs " +
                std::to_string(ep.sub_paths.size()) + ")");
  }
  for (std::size_t i = 0; i < ep.sub_instructions.size(); ++i) {
    if (ep.sub_instructions[i].words.empty()) v.push_back("sub-instruction " + std::to_string(i) + " is empty");
  }
  for (std::size_t i = 0; i < ep.sub_paths.size(); ++i) {
    const auto& sp = ep.sub_paths[i];
    if (sp.start < 0 || sp.end >= n) v.push_back("sub-path " + std::to_string(i) + " out of range");
    if (sp.start > sp.end) v.push_back("sub-path " + std::to_string(i) + " starts after it ends");
    if (i > 0 && sp.start != ep.sub_paths[i - 1].end) {
      v.push_back("boundary mismatch at sub-path " + std::to_string(i));
    }
  }
  if (!ep.sub_paths.empty()) {
    if (ep.sub_paths.front().start != 0) v.push_back("first sub-path does not start at 0");
    if (ep.sub_paths.back().end != n - 1) v.push_back("path not covered");
  }
  return v;
}

std::vector<std::string> episode_graph_violations(const Episode& ep, const EnvGraph& graph) {
  std::vector<std::string> v;
  for (const auto& id : ep.path) {
    if (!graph.contains(id)) v.push_back("viewpoint '" + id + "' not in scan '" + ep.scan + "'");
  }
  if (!v.empty()) return v;
  for (std::size_t i = 1; i < ep.path.size(); ++i) {
    if (!graph.adjacent(graph.index_of(ep.path[i - 1]), graph.index_of(ep.path[i]))) {
      v.push_back("path step " + std::to_string(i) + " ('" + ep.path[i - 1] + "' -> '" + ep.path[i] +
                  "') is not an edge");
    }
  }
  return v;
}

void validate_episode(const Episode& episode, bool require_alignment) {
  const auto v = episode_violations(episode, require_alignment);
  if (v.empty()) return;
  std::string msg = episode.path_id + ": ";
  for (std::size_t i = 0; i < v.size(); ++i) msg += (i ? "; " : "") + v[i];
  throw ValidationError(msg);
}

nlohmann::json episode_to_json(const Episode& ep) {
  nlohmann::json subs = nlohmann::json::array();
  for (const auto& s : ep.sub_instructions) subs.push_back(s.words);
  nlohmann::json paths = nlohmann::json::array();
  for (const auto& sp : ep.sub_paths) paths.push_back({sp.start, sp.end});
  return {{"path_id", ep.path_id}, {"scan", ep.scan},       {"heading", ep.heading},
          {"path", ep.path},       {"instruction", ep.instruction}, {"sub_instructions", subs},
          {"sub_paths", paths}};
}

Episode episode_from_json(const nlohmann::json& r) {
  Episode ep;
  try {
    ep.path_id = record_id(r, "path_id");
    ep.scan = r.at("scan").get<std::string>();
    ep.heading = r.value("heading", 0.0);
    ep.path = r.at("path").get<std::vector<std::string>>();
    ep.instruction = r.value("instruction", std::string{});
    for (const auto& words : r.at("sub_instructions")) {
      SubInstruction sub;
      sub.words = words.is_string() ? split_words(words.get<std::string>()) : words.get<std::vector<std::string>>();
      ep.sub_instructions.push_back(std::move(sub));
    }
    renumber(ep.sub_instructions);
    if (r.contains("sub_paths")) {
      for (const auto& pair : r["sub_paths"]) ep.sub_paths.push_back({pair.at(0).get<int>(), pair.at(1).get<int>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed episode record: " + std::string(e.what()));
  }
  return ep;
}

nlohmann::json episodes_to_json(const std::vector<Episode>& episodes) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& ep : episodes) out.push_back(episode_to_json(ep));
  return out;
}

std::vector<Episode> episodes_from_json(const nlohmann::json& doc, const LoadOptions& options) {
  if (!doc.is_array()) throw ValidationError("episode file must hold a list of records");
  std::vector<Episode> out;
  std::vector<std::string> problems;
  for (const auto& record : doc) {
    auto format = options.format == EpisodeFormat::Auto ? detect_format(record, options.fields) : options.format;
    std::vector<Episode> eps;
    try {
      switch (format) {
        case EpisodeFormat::Canonical: eps.push_back(episode_from_json(record)); break;
        case EpisodeFormat::FineGrained: eps = from_fine_grained(record, options.fields); break;
        case EpisodeFormat::R2R: eps = from_r2r(record, options.fields); break;
        case EpisodeFormat::Auto: break;
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("malformed episode record: " + std::string(e.what()));
    }
    for (auto& ep : eps) {
      if (options.validate) {
        for (const auto& v : episode_violations(ep, format != EpisodeFormat::R2R)) {
          problems.push_back(ep.path_id + ": " + v);
        }
      }
      out.push_back(std::move(ep));
    }
  }
  if (!problems.empty()) {
    std::string msg;
    for (const auto& p : problems) msg += (msg.empty() ? "" : "\n") + p;
    throw ValidationError(msg);
  }
  return out;
}

std::vector<Episode> load_episodes(const std::string& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open episode file " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return episodes_from_json(doc, options);
}

void save_episodes(const std::string& path, const std::vector<Episode>& episodes) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << episodes_to_json(episodes).dump(1) << '\n';
}

nlohmann::json parse_python_list(const std::string& s) {
  std::size_t i = 0;
  auto skip_ws = [&] {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\n' || s[i] == '\t' || s[i] == '\r')) ++i;
  };
  auto fail = [&](const std::string& what) -> nlohmann::json {
    throw ValidationError("python list literal at offset " + std::to_string(i) + ": " + what);
  };
  std::function<nlohmann::json()> value = [&]() -> nlohmann::json {
    skip_ws();
    if (i >= s.size()) return fail("unexpected end");
    if (s[i] == '[') {
      ++i;
      nlohmann::json arr = nlohmann::json::array();
      skip_ws();
      if (i < s.size() && s[i] == ']') {
        ++i;
        return arr;
      }
      while (true) {
        arr.push_back(value());
        skip_ws();
        if (i < s.size() && s[i] == ',') {
          ++i;
          skip_ws();
          if (i < s.size() && s[i] == ']') {
            ++i;
            return arr;
          }
          continue;
        }
        if (i < s.size() && s[i] == ']') {
          ++i;
          return arr;
        }
        return fail("expected ',' or ']'");
      }
    }
    if (s[i] == '\'' || s[i] == '"') {
      const char quote = s[i++];
      std::string out;
      while (i < s.size() && s[i] != quote) {
        if (s[i] == '\\' && i + 1 < s.size()) ++i;
        out += s[i++];
      }
      if (i >= s.size()) return fail("unterminated string");
      ++i;
      return out;
    }
    return fail(std::string("unexpected character '") + s[i] + "'");
  };
  auto result = value();
  skip_ws();
  if (i != s.size()) fail("trailing characters");
  return result;
}

int gt_shift_signal(const EnvGraph& graph, const Episode& episode, int agent_vp, int sub_idx) {
  if (sub_idx < 0 || sub_idx >= static_cast<int>(episode.sub_paths.size())) {
    throw ValidationError(episode.path_id + ": sub-instruction index " + std::to_string(sub_idx) + " out of range");
  }
  const int end = graph.index_of(episode.path.at(episode.sub_paths[sub_idx].end));
  const auto d = graph.shortest_dist(agent_vp, end);
  return d && *d <= kShiftRadius ? 1 : 0;
}

int gt_shift_signal(const EnvGraph& graph, const Episode& episode, const std::string& agent_vp, int sub_idx) {
  return gt_shift_signal(graph, episode, graph.index_of(agent_vp), sub_idx);
}

Episode normalize_for_training(const Episode& episode, std::vector<std::string>* warnings) {
  Episode ep = episode;
  while (true) {
    auto it = std::find_if(ep.sub_paths.begin(), ep.sub_paths.end(), [](const SubPath& sp) { return sp.start == sp.end; });
    if (it == ep.sub_paths.end()) break;
    if (ep.sub_paths.size() == 1) {
      if (warnings) warnings->push_back(ep.path_id + ": single sub-instruction spans one viewpoint; left unchanged");
      break;
    }
    const auto i = static_cast<std::size_t>(it - ep.sub_paths.begin());
    if (i + 1 < ep.sub_paths.size()) {
      prepend(ep.sub_instructions[i + 1], ep.sub_instructions[i]);
      ep.sub_paths[i + 1].start = std::min(ep.sub_paths[i].start, ep.sub_paths[i + 1].start);
    } else {
      append(ep.sub_instructions[i - 1], ep.sub_instructions[i]);
      ep.sub_paths[i - 1].end = std::max(ep.sub_paths[i - 1].end, ep.sub_paths[i].end);
    }
    ep.sub_instructions.erase(ep.sub_instructions.begin() + static_cast<long>(i));
    ep.sub_paths.erase(ep.sub_paths.begin() + static_cast<long>(i));
  }
  renumber(ep.sub_instructions);
  return ep;
}

Episode concat_to_r4r(const Episode& first, const Episode& second, const EnvGraph& graph) {
  if (first.scan != second.scan) throw ValidationError("not concatenable: episodes are in different scans");
  validate_episode(first);
  validate_episode(second);
  const int from = graph.index_of(first.path.back());
  const int to = graph.index_of(second.path.front());
  const auto gap = graph.shortest_dist(from, to);
  if (!gap) throw ValidationError("not concatenable: '" + first.path.back() + "' cannot reach '" + second.path.front() + "'");
  if (*gap > kJoinRadius) {
    throw ValidationError("not concatenable: paths are " + std::to_string(*gap) + " m apart (limit 3 m)");
  }

  Episode out;
  out.path_id = first.path_id + "__" + second.path_id;
  out.scan = first.scan;
  out.heading = first.heading;
  out.instruction = first.instruction + " " + second.instruction;
  out.path = first.path;
  const auto connector = graph.shortest_path(from, to);
  for (std::size_t i = 1; i + 1 < connector.size(); ++i) out.path.push_back(graph.node(connector[i]).id);
  const int join = static_cast<int>(first.path.size()) - 1;  // index of first's final viewpoint
  int offset = static_cast<int>(out.path.size());            // index of second's start viewpoint
  if (from == to) {
    offset = join;
    out.path.insert(out.path.end(), second.path.begin() + 1, second.path.end());
  } else {
    out.path.insert(out.path.end(), second.path.begin(), second.path.end());
  }

  out.sub_instructions = first.sub_instructions;
  out.sub_instructions.insert(out.sub_instructions.end(), second.sub_instructions.begin(), second.sub_instructions.end());
  renumber(out.sub_instructions);
  out.sub_paths = first.sub_paths;
  for (std::size_t i = 0; i < second.sub_paths.size(); ++i) {
    SubPath sp{second.sub_paths[i].start + offset, second.sub_paths[i].end + offset};
    if (i == 0) sp.start = join;  // absorbs the connector
    out.sub_paths.push_back(sp);
  }
  validate_episode(out);
  return out;
}

nlohmann::json CorpusStats::to_json() const {
  auto hist = [](const std::map<int, long>& h) {
    nlohmann::json j = nlohmann::json::object();
    for (auto [k, v] : h) j[std::to_string(k)] = v;
    return j;
  };
  return {{"episodes", episodes},
          {"sub_instructions", sub_instructions},
          {"mean_subinstr_per_instr", mean_subinstr_per_instr},
          {"mean_words_per_subinstr", mean_words_per_subinstr},
          {"mean_viewpoints_per_subinstr", mean_viewpoints_per_subinstr},
          {"min_subinstr", min_subinstr},
          {"max_subinstr", max_subinstr},
          {"min_words", min_words},
          {"max_words", max_words},
          {"min_viewpoints", min_viewpoints},
          {"max_viewpoints", max_viewpoints},
          {"subinstr_histogram", hist(subinstr_histogram)},
          {"viewpoint_histogram", hist(viewpoint_histogram)}};
}

CorpusStats corpus_stats_serial(const std::vector<Episode>& episodes) {
  CorpusStats s;
  for (const auto& ep : episodes) accumulate(s, ep);
  finalize(s);
  return s;
}

CorpusStats corpus_stats(const std::vector<Episode>& episodes) {
  const int threads = omp_get_max_threads();
  std::vector<CorpusStats> partial(static_cast<std::size_t>(threads));
  const long n = static_cast<long>(episodes.size());
#pragma omp parallel for schedule(static) num_threads(threads)
  for (long i = 0; i < n; ++i) accumulate(partial[static_cast<std::size_t>(omp_get_thread_num())], episodes[i]);
  CorpusStats s;
  for (const auto& p : partial) merge(s, p);
  finalize(s);
  return s;
}

}  // namespace subnav
