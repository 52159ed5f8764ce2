#include "subnav/report.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "subnav/error.hpp"

namespace subnav {

namespace {

std::string hex(const unsigned char* data, unsigned int n) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < n; ++i) {
    out += digits[data[i] >> 4];
    out += digits[data[i] & 0xf];
  }
  return out;
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &n, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: digest failed");
  }
  return hex(md, n);
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

void RunManifest::add_input(const std::string& path) { input_digests[path] = sha256_file(path); }

nlohmann::json RunManifest::to_json() const {
  return {{"subcommand", subcommand},
          {"config", config},
          {"inputs", input_digests},
          {"seed", seed},
          {"version", version}};
}

void RunManifest::write(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest " + path);
  out << to_json().dump(2) << '\n';
}

std::string plot_trajectory(const EnvGraph& graph, const Episode& episode, const std::vector<std::string>& trajectory,
                            const std::vector<ShiftEvent>& shift_events) {
  if (graph.size() == 0) throw GraphError("plot: empty graph");
  std::vector<int> gt, traj;
  for (const auto& id : episode.path) gt.push_back(graph.index_of(id));
  for (const auto& id : trajectory) traj.push_back(graph.index_of(id));

  double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
  for (const auto& n : graph.nodes()) {
    min_x = std::min(min_x, n.position.x);
    max_x = std::max(max_x, n.position.x);
    min_y = std::min(min_y, n.position.y);
    max_y = std::max(max_y, n.position.y);
  }
  constexpr double kWidth = 600.0, kMargin = 30.0;
  const double span = std::max({max_x - min_x, max_y - min_y, 1e-6});
  const double scale = (kWidth - 2 * kMargin) / span;
  const double height = (max_y - min_y) * scale + 2 * kMargin + 40.0;
  auto px = [&](int i) { return kMargin + (graph.node(i).position.x - min_x) * scale; };
  auto py = [&](int i) { return kMargin + (max_y - graph.node(i).position.y) * scale; };
  auto polyline = [&](const std::vector<int>& nodes) {
    std::string pts;
    for (int i : nodes) pts += (pts.empty() ? "" : " ") + fixed(px(i)) + "," + fixed(py(i));
    return pts;
  };

  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(kWidth) << "\" height=\"" << fixed(height)
    << "\" viewBox=\"0 0 " << fixed(kWidth) << ' ' << fixed(height) << "\">\n"
    << "<title>" << escape(episode.path_id) << "</title>\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<g id=\"edges\" stroke=\"#bbbbbb\" stroke-width=\"1\">\n";
  for (const auto& [a, b] : graph.edges()) {
    s << "<line x1=\"" << fixed(px(a)) << "\" y1=\"" << fixed(py(a)) << "\" x2=\"" << fixed(px(b)) << "\" y2=\""
      << fixed(py(b)) << "\"/>\n";
  }
  s << "</g>\n<g id=\"nodes\" fill=\"#666666\">\n";
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const int k = static_cast<int>(i);
    s << "<circle cx=\"" << fixed(px(k)) << "\" cy=\"" << fixed(py(k)) << "\" r=\"3\"><title>"
      << escape(graph.node(k).id) << "</title></circle>\n";
  }
  s << "</g>\n";
  s << "<polyline id=\"ground-truth\" points=\"" << polyline(gt)
    << "\" fill=\"none\" stroke=\"#2ca02c\" stroke-width=\"6\" stroke-opacity=\"0.5\"/>\n";
  s << "<polyline id=\"trajectory\" points=\"" << polyline(traj)
    << "\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" stroke-dasharray=\"6 3\"/>\n";
  s << "<g id=\"sub-path-ends\" fill=\"#ff7f0e\">\n";
  for (const auto& sp : episode.sub_paths) {
    const int v = gt.at(static_cast<std::size_t>(sp.end));
    s << "<rect x=\"" << fixed(px(v) - 5) << "\" y=\"" << fixed(py(v) - 5) << "\" width=\"10\" height=\"10\"/>\n";
  }
  s << "</g>\n<g id=\"shift-events\" fill=\"#d62728\">\n";
  if (!traj.empty()) {
    const int last = static_cast<int>(traj.size()) - 1;
    for (const auto& ev : shift_events) {
      if (ev.predicted != 1) continue;
      const int v = traj[static_cast<std::size_t>(std::clamp(ev.step + 1, 0, last))];
      s << "<circle cx=\"" << fixed(px(v)) << "\" cy=\"" << fixed(py(v)) << "\" r=\"7\" fill-opacity=\"0.6\"><title>shift at step "
        << ev.step << "</title></circle>\n";
    }
  }
  s << "</g>\n";
  s << "<text x=\"" << fixed(kMargin) << "\" y=\"" << fixed(height - 12) << "\" font-family=\"sans-serif\" font-size=\"12\">"
    << "green: ground truth, blue: agent, orange: sub-path ends, red: predicted shifts</text>\n</svg>\n";
  return s.str();
}

}  // namespace subnav
