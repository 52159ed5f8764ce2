#include "subnav/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "subnav/error.hpp"

namespace subnav {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<int> to_indices(const EnvGraph& graph, const std::vector<std::string>& ids) {
  std::vector<int> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(graph.index_of(id));
  return out;
}

double geodesic_or_inf(const EnvGraph& graph, int a, int b) { return graph.shortest_dist(a, b).value_or(kInf); }

}  // namespace

double dtw(const EnvGraph& graph, const std::vector<int>& t, const std::vector<int>& r) {
  if (t.empty() || r.empty()) throw ValidationError("dtw: empty sequence");
  const std::size_t n = t.size(), m = r.size();
  // cost[i][j]: best alignment of t[0..i) with r[0..j)
  std::vector<double> prev(m + 1, kInf), cur(m + 1, kInf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = kInf;
    for (std::size_t j = 1; j <= m; ++j) {
      const double best = std::min({prev[j - 1], prev[j], cur[j - 1]});
      cur[j] = geodesic_or_inf(graph, t[i - 1], r[j - 1]) + best;
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double dtw(const EnvGraph& graph, const std::vector<std::string>& t, const std::vector<std::string>& r) {
  return dtw(graph, to_indices(graph, t), to_indices(graph, r));
}

double ndtw(const EnvGraph& graph, const std::vector<int>& t, const std::vector<int>& r, double threshold) {
  return std::exp(-dtw(graph, t, r) / (static_cast<double>(r.size()) * threshold));
}

double ndtw(const EnvGraph& graph, const std::vector<std::string>& t, const std::vector<std::string>& r,
            double threshold) {
  return ndtw(graph, to_indices(graph, t), to_indices(graph, r), threshold);
}

EvalResult evaluate_episode(const EnvGraph& graph, const std::vector<std::string>& trajectory, const Episode& reference,
                            double threshold) {
  if (trajectory.empty()) throw ValidationError(reference.path_id + ": empty trajectory");
  if (reference.path.empty()) throw ValidationError(reference.path_id + ": empty reference path");
  const auto traj = to_indices(graph, trajectory);
  const auto ref = to_indices(graph, reference.path);
  const int goal = ref.back();

  EvalResult r;
  r.path_id = reference.path_id;
  r.pl = graph.path_length(traj);
  r.ne = geodesic_or_inf(graph, traj.back(), goal);
  r.success = r.ne <= threshold;
  double closest = kInf;
  for (int vp : traj) closest = std::min(closest, geodesic_or_inf(graph, vp, goal));
  r.oracle_success = closest <= threshold;
  const double shortest = geodesic_or_inf(graph, ref.front(), goal);
  if (r.success) {
    const double denom = std::max(shortest, r.pl);
    r.spl = denom > 0 ? shortest / denom : 1.0;
  }
  r.dtw = dtw(graph, traj, ref);
  r.ndtw = std::exp(-r.dtw / (static_cast<double>(ref.size()) * threshold));
  return r;
}

nlohmann::json trajectory_to_json(const TrajectoryRecord& rec) {
  nlohmann::json shifts = nlohmann::json::array();
  for (const auto& e : rec.shifts) {
    nlohmann::json j = {{"step", e.step}, {"predicted", e.predicted}, {"ground_truth", e.ground_truth}};
    if (e.sub_idx >= 0) j["sub_idx"] = e.sub_idx;
    if (e.p_shift >= 0) j["p_shift"] = e.p_shift;
    shifts.push_back(std::move(j));
  }
  return {{"path_id", rec.path_id}, {"trajectory", rec.trajectory}, {"shifts", shifts}};
}

TrajectoryRecord trajectory_from_json(const nlohmann::json& j) {
  TrajectoryRecord rec;
  try {
    rec.path_id = j.at("path_id").is_string() ? j.at("path_id").get<std::string>() : j.at("path_id").dump();
    rec.trajectory = j.at("trajectory").get<std::vector<std::string>>();
    if (j.contains("shifts")) {
      for (const auto& s : j["shifts"]) {
        ShiftEvent e;
        e.step = s.at("step").get<int>();
        e.predicted = s.at("predicted").get<int>();
        e.ground_truth = s.at("ground_truth").get<int>();
        e.sub_idx = s.value("sub_idx", -1);
        e.p_shift = s.value("p_shift", -1.0);
        rec.shifts.push_back(e);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed trajectory record: " + std::string(e.what()));
  }
  return rec;
}

std::vector<TrajectoryRecord> load_trajectories(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trajectory file " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  std::vector<TrajectoryRecord> out;
  for (const auto& j : doc) out.push_back(trajectory_from_json(j));
  return out;
}

void save_trajectories(const std::string& path, const std::vector<TrajectoryRecord>& records) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& r : records) doc.push_back(trajectory_to_json(r));
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << doc.dump(1) << '\n';
}

void ShiftConfusion::add(int predicted, int ground_truth) {
  if (predicted && ground_truth) ++tp;
  else if (!predicted && !ground_truth) ++tn;
  else if (predicted) ++fp;
  else ++fn;
}

ShiftConfusion& ShiftConfusion::operator+=(const ShiftConfusion& o) {
  tp += o.tp;
  tn += o.tn;
  fp += o.fp;
  fn += o.fn;
  return *this;
}

ConfusionRates confusion_stats(const ShiftConfusion& c) {
  ConfusionRates r;
  if (c.total() > 0) r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  if (c.tp + c.fp > 0) r.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) r.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (r.precision && r.recall && *r.precision + *r.recall > 0) {
    r.f1 = 2.0 * *r.precision * *r.recall / (*r.precision + *r.recall);
  }
  return r;
}

ShiftConfusion confusion_from(const std::vector<TrajectoryRecord>& records) {
  ShiftConfusion c;
  for (const auto& rec : records) {
    for (const auto& e : rec.shifts) c.add(e.predicted, e.ground_truth);
  }
  return c;
}

nlohmann::json AggregateMetrics::to_json() const {
  return {{"episodes", episodes}, {"pl", pl}, {"ne", ne}, {"osr", osr}, {"sr", sr}, {"spl", spl}, {"ndtw", ndtw}};
}

AggregateMetrics aggregate(const std::vector<EvalResult>& results) {
  AggregateMetrics a;
  a.episodes = static_cast<long>(results.size());
  if (results.empty()) return a;
  for (const auto& r : results) {
    a.pl += r.pl;
    a.ne += r.ne;
    a.osr += r.oracle_success ? 1.0 : 0.0;
    a.sr += r.success ? 1.0 : 0.0;
    a.spl += r.spl;
    a.ndtw += r.ndtw;
  }
  const double n = static_cast<double>(results.size());
  a.pl /= n;
  a.ne /= n;
  a.osr /= n;
  a.sr /= n;
  a.spl /= n;
  a.ndtw /= n;
  return a;
}

std::vector<EvalResult> evaluate_all_serial(const GraphStore& graphs, const std::vector<Episode>& episodes,
                                            const std::vector<std::vector<std::string>>& trajectories,
                                            double threshold) {
  if (episodes.size() != trajectories.size()) throw ValidationError("evaluate_all: episode/trajectory count mismatch");
  std::vector<EvalResult> out;
  out.reserve(episodes.size());
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    out.push_back(evaluate_episode(graphs.at(episodes[i].scan), trajectories[i], episodes[i], threshold));
  }
  return out;
}

std::vector<EvalResult> evaluate_all(const GraphStore& graphs, const std::vector<Episode>& episodes,
                                     const std::vector<std::vector<std::string>>& trajectories, double threshold) {
  if (episodes.size() != trajectories.size()) throw ValidationError("evaluate_all: episode/trajectory count mismatch");
  std::vector<EvalResult> out(episodes.size());
  const long n = static_cast<long>(episodes.size());
  std::vector<std::string> errors(episodes.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (long i = 0; i < n; ++i) {
    try {
      out[i] = evaluate_episode(graphs.at(episodes[i].scan), trajectories[i], episodes[i], threshold);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  // Report the lowest failing index so the message does not depend on scheduling.
  for (const auto& e : errors) {
    if (!e.empty()) throw ValidationError(e);
  }
  return out;
}

}  // namespace subnav
