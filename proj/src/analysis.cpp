#include "subnav/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <unordered_map>

#include "subnav/error.hpp"

namespace subnav {

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, int> ngram_counts(const std::vector<std::string>& words, std::size_t n) {
  std::map<Ngram, int> out;
  for (std::size_t i = 0; i + n <= words.size(); ++i) ++out[Ngram(words.begin() + static_cast<long>(i),
                                                                 words.begin() + static_cast<long>(i + n))];
  return out;
}

std::vector<std::string> joined(const std::vector<SubInstruction>& subs) {
  std::vector<std::string> out;
  for (const auto& s : subs) {
    if (!out.empty()) out.emplace_back("|");
    for (const auto& w : s.words) out.push_back(to_lower(w));
  }
  return out;
}

SimilarityMatrix empty_matrix(const std::vector<std::vector<std::string>>& items, std::vector<std::string> labels) {
  if (items.size() < 2) throw ValidationError("similarity matrix needs at least two items");
  if (labels.empty()) {
    for (std::size_t i = 0; i < items.size(); ++i) labels.push_back(std::to_string(i));
  }
  if (labels.size() != items.size()) throw ValidationError("similarity matrix: one label per item required");
  SimilarityMatrix m;
  m.n = items.size();
  m.values.assign(m.n * m.n, 0.0);
  m.labels = std::move(labels);
  for (std::size_t i = 0; i < m.n; ++i) m.values[i * m.n + i] = 1.0;
  return m;
}

void fill_row(SimilarityMatrix& m, const std::vector<std::vector<std::string>>& items, std::size_t i) {
  for (std::size_t j = i + 1; j < m.n; ++j) {
    const double s = 0.5 * (smoothed_bleu4(items[i], items[j]) + smoothed_bleu4(items[j], items[i]));
    m.values[i * m.n + j] = s;
    m.values[j * m.n + i] = s;
  }
}

}  // namespace

double smoothed_bleu4(const std::vector<std::string>& candidate, const std::vector<std::string>& reference) {
  if (candidate.empty() || reference.empty()) throw ValidationError("smoothed_bleu4: empty word list");
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto cand = ngram_counts(candidate, n);
    const auto ref = ngram_counts(reference, n);
    long matches = 0, total = 0;
    for (const auto& [gram, count] : cand) {
      total += count;
      auto it = ref.find(gram);
      if (it != ref.end()) matches += std::min(count, it->second);
    }
    double p;
    if (matches > 0) {
      p = static_cast<double>(matches) / static_cast<double>(total);
    } else if (n == 1) {
      return 0.0;
    } else {
      p = 1.0 / static_cast<double>(total + 1);
    }
    log_sum += std::log(p);
  }
  const double ratio = static_cast<double>(reference.size()) / static_cast<double>(candidate.size());
  const double bp = std::min(1.0, std::exp(1.0 - ratio));
  return bp * std::exp(log_sum / 4.0);
}

double segmentation_bleu(const std::vector<std::vector<SubInstruction>>& generated,
                         const std::vector<std::vector<SubInstruction>>& reference) {
  if (generated.size() != reference.size() || generated.empty()) {
    throw ValidationError("segmentation_bleu: need equally many, non-zero instructions");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < generated.size(); ++i) sum += smoothed_bleu4(joined(generated[i]), joined(reference[i]));
  return sum / static_cast<double>(generated.size());
}

SimilarityMatrix similarity_matrix(const std::vector<std::vector<std::string>>& items,
                                   std::vector<std::string> labels) {
  SimilarityMatrix m = empty_matrix(items, std::move(labels));
  const long n = static_cast<long>(m.n);
#pragma omp parallel for schedule(dynamic, 4)
  for (long i = 0; i < n; ++i) fill_row(m, items, static_cast<std::size_t>(i));
  return m;
}

SimilarityMatrix similarity_matrix_serial(const std::vector<std::vector<std::string>>& items,
                                          std::vector<std::string> labels) {
  SimilarityMatrix m = empty_matrix(items, std::move(labels));
  for (std::size_t i = 0; i < m.n; ++i) fill_row(m, items, i);
  return m;
}

ClusterAssignment complete_linkage_cluster(const SimilarityMatrix& matrix, int k) {
  const std::size_t n = matrix.n;
  if (k < 1 || static_cast<std::size_t>(k) > n) {
    throw ValidationError("complete_linkage_cluster: k must lie in [1, " + std::to_string(n) + "]");
  }
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> d(n * n);
  for (std::size_t i = 0; i < n * n; ++i) d[i] = 1.0 - matrix.values[i];
  std::vector<bool> active(n, true);
  std::vector<std::vector<int>> members(n);
  for (std::size_t i = 0; i < n; ++i) members[i] = {static_cast<int>(i)};

  // nearest[i]: best partner j > i among active slots, ties to the smaller j.
  std::vector<std::size_t> nearest(n, n);
  auto refresh = [&](std::size_t i) {
    nearest[i] = n;
    double best = kInf;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (active[j] && (nearest[i] == n || d[i * n + j] < best)) {
        best = d[i * n + j];
        nearest[i] = j;
      }
    }
  };
  for (std::size_t i = 0; i < n; ++i) refresh(i);

  ClusterAssignment out;
  for (std::size_t clusters = n; clusters > static_cast<std::size_t>(k); --clusters) {
    std::size_t a = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i] || nearest[i] == n) continue;
      if (a == n || d[i * n + nearest[i]] < d[a * n + nearest[a]]) a = i;
    }
    const std::size_t b = nearest[a];
    out.merge_heights.push_back(d[a * n + b]);
    active[b] = false;
    members[a].insert(members[a].end(), members[b].begin(), members[b].end());
    std::sort(members[a].begin(), members[a].end());
    members[b].clear();
    for (std::size_t m = 0; m < n; ++m) {
      if (!active[m] || m == a) continue;
      const double v = std::max(d[a * n + m], d[b * n + m]);
      d[a * n + m] = v;
      d[m * n + a] = v;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (active[i] && (i == a || nearest[i] == a || nearest[i] == b)) refresh(i);
    }
  }

  out.label.assign(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (!active[i]) continue;
    const int id = static_cast<int>(out.members.size());
    for (int m : members[i]) out.label[static_cast<std::size_t>(m)] = id;
    out.members.push_back(members[i]);
  }
  return out;
}

double complete_linkage_cost(const SimilarityMatrix& matrix, const std::vector<std::vector<int>>& clusters) {
  double worst = 0.0;
  for (const auto& c : clusters) {
    for (std::size_t x = 0; x < c.size(); ++x) {
      for (std::size_t y = x + 1; y < c.size(); ++y) {
        worst = std::max(worst, 1.0 - matrix(static_cast<std::size_t>(c[x]), static_cast<std::size_t>(c[y])));
      }
    }
  }
  return worst;
}

std::vector<SubInstructionResult> sub_instruction_results(const EnvGraph& graph, const Episode& episode,
                                                          const TrajectoryRecord& record, Segmentation mode) {
  if (!episode.aligned()) throw ValidationError(episode.path_id + ": sub-instruction results need sub-paths");
  if (record.trajectory.empty()) throw ValidationError(episode.path_id + ": empty trajectory");
  const int L = static_cast<int>(episode.sub_instructions.size());
  const int last = static_cast<int>(record.trajectory.size()) - 1;

  auto boundaries = [&](bool predicted) {
    std::vector<int> at(static_cast<std::size_t>(L), last);
    int cur = 0;
    for (const auto& ev : record.shifts) {
      const int signal = predicted ? ev.predicted : ev.ground_truth;
      if (signal == 1 && cur < L - 1) at[static_cast<std::size_t>(cur++)] = std::min(ev.step + 1, last);
    }
    return at;
  };
  const auto shift_at = boundaries(true);
  const auto cut_at = mode == Segmentation::Predicted ? shift_at : boundaries(false);

  std::vector<SubInstructionResult> out;
  int from = 0;
  for (int k = 0; k < L; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    const SubPath& sp = episode.sub_paths[uk];
    SubInstructionResult r;
    r.key = episode.path_id + "#" + std::to_string(k);
    for (const auto& w : episode.sub_instructions[uk].words) r.words.push_back(to_lower(w));
    r.viewpoints = sp.viewpoints();
    const auto d = graph.shortest_dist(episode.path[static_cast<std::size_t>(sp.end)],
                                       record.trajectory[static_cast<std::size_t>(shift_at[uk])]);
    r.end_distance = d ? *d : std::numeric_limits<double>::infinity();

    const int to = std::max(from, cut_at[uk]);
    const std::vector<std::string> slice(record.trajectory.begin() + from, record.trajectory.begin() + to + 1);
    const std::vector<std::string> ref(episode.path.begin() + sp.start, episode.path.begin() + sp.end + 1);
    r.ndtw = ndtw(graph, slice, ref);
    from = to;
    out.push_back(std::move(r));
  }
  return out;
}

nlohmann::json sub_results_to_json(const std::vector<SubInstructionResult>& results) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : results) {
    nlohmann::json j = {{"key", r.key}, {"words", r.words}, {"ndtw", r.ndtw}, {"viewpoints", r.viewpoints}};
    if (std::isfinite(r.end_distance)) j["end_distance"] = r.end_distance;
    else j["end_distance"] = nullptr;
    out.push_back(std::move(j));
  }
  return out;
}

std::vector<SubInstructionResult> sub_results_from_json(const nlohmann::json& doc) {
  std::vector<SubInstructionResult> out;
  try {
    for (const auto& j : doc) {
      SubInstructionResult r;
      r.key = j.at("key").get<std::string>();
      r.words = j.at("words").get<std::vector<std::string>>();
      r.end_distance = j.at("end_distance").is_null() ? std::numeric_limits<double>::infinity()
                                                      : j.at("end_distance").get<double>();
      r.ndtw = j.at("ndtw").get<double>();
      r.viewpoints = j.at("viewpoints").get<int>();
      out.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("sub-instruction results: ") + e.what());
  }
  return out;
}

std::vector<ClusterSummary> cluster_summary(const ClusterAssignment& assignment, const SimilarityMatrix& matrix,
                                            const std::vector<SubInstructionResult>& results) {
  std::unordered_map<std::string, const SubInstructionResult*> by_key;
  for (const auto& r : results) by_key.emplace(r.key, &r);

  std::vector<ClusterSummary> out;
  for (std::size_t c = 0; c < assignment.members.size(); ++c) {
    const auto& mem = assignment.members[c];
    ClusterSummary s;
    s.cluster = static_cast<int>(c);
    s.frequency = static_cast<int>(mem.size());
    double best_sim = -1.0;
    for (int m : mem) {
      const auto um = static_cast<std::size_t>(m);
      auto it = by_key.find(matrix.labels.at(um));
      if (it == by_key.end()) throw ValidationError("no result record for sub-instruction " + matrix.labels[um]);
      const auto& r = *it->second;
      s.mean_distance += r.end_distance;
      s.mean_ndtw += r.ndtw;
      s.mean_viewpoints += r.viewpoints;
      double sim = 0.0;
      for (int o : mem) {
        if (o != m) sim += matrix(um, static_cast<std::size_t>(o));
      }
      if (mem.size() > 1) sim /= static_cast<double>(mem.size() - 1);
      if (sim > best_sim) {
        best_sim = sim;
        s.representative = m;
        s.representative_text.clear();
        for (const auto& w : r.words) s.representative_text += (s.representative_text.empty() ? "" : " ") + w;
      }
    }
    const double f = static_cast<double>(mem.size());
    s.mean_distance /= f;
    s.mean_ndtw /= f;
    s.mean_viewpoints /= f;
    out.push_back(std::move(s));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const ClusterSummary& a, const ClusterSummary& b) { return a.mean_distance < b.mean_distance; });
  for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = static_cast<int>(i) + 1;
  return out;
}

}  // namespace subnav
