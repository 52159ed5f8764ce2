#include "subnav/chunker.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "subnav/error.hpp"

namespace subnav {

namespace {

// Function words that never make a chunk more than a bare action phrase.
const std::set<std::string>& function_words() {
  static const std::set<std::string> words = {
      "a",    "an",   "the",     "to",   "of",   "in",    "on",   "at",   "into", "onto",
      "up",   "down", "through", "over", "from", "with",  "by",   "for",  "you",  "your",
      "it",   "its",  "this",    "that", "is",   "are",   "be",   "will", "out",  "toward",
      "towards"};
  return words;
}

bool contains_clause_head(const std::vector<std::string_view>& relations) {
  return std::any_of(relations.begin(), relations.end(),
                     [](std::string_view r) { return r == "root" || r == "parataxis"; });
}

std::vector<int> scan_boundaries(const ParsedInstruction& parsed) {
  const auto conj = find_conj_boundaries(parsed);
  std::size_t k = 0;
  std::vector<std::string_view> relations;  // l_eta of the chunk being accumulated
  std::vector<int> boundaries;
  for (const auto& flat : parsed.flat_tokens) {
    const auto rel = flat.token.relation();
    bool boundary = false;
    if (rel == "root" && contains_clause_head(relations)) {
      boundary = true;
    } else if (k < conj.size() && flat.global_head == conj[k]) {
      boundary = true;
      ++k;
    } else if (rel == "parataxis" && contains_clause_head(relations)) {
      boundary = true;
    }
    if (boundary) {
      boundaries.push_back(flat.global_index);
      relations.clear();
    }
    if (rel != "punct") relations.push_back(rel);
  }
  return boundaries;
}

std::vector<std::string> lowered(const std::vector<std::string>& words) {
  std::vector<std::string> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(to_lower(w));
  return out;
}

}  // namespace

std::string SubInstruction::text(bool lowercase) const {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += lowercase ? to_lower(w) : w;
  }
  return out;
}

ChunkingConfig ChunkingConfig::defaults() {
  ChunkingConfig c;
  c.action_lexicon = {"go",    "walk",  "turn",     "head",    "continue", "stop",    "wait",   "exit",
                      "enter", "move",  "proceed",  "veer",    "keep",     "take",    "make",   "left",
                      "right", "straight", "forward", "forwards", "ahead",  "around",  "back",   "slightly",
                      "sharp", "again"};
  c.connective_lexicon = {"then", "and", "next"};
  return c;
}

ChunkingConfig ChunkingConfig::from_lexicon_file(const std::string& path, int min_chunk_words) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open lexicon file " + path);
  ChunkingConfig c;
  c.min_chunk_words = min_chunk_words;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto colon = line.find(':');
    if (colon == std::string::npos) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw ParseError("expected '<kind>: words...'", line_no);
    }
    std::string kind = line.substr(0, colon);
    kind.erase(std::remove_if(kind.begin(), kind.end(), ::isspace), kind.end());
    std::istringstream words(line.substr(colon + 1));
    std::set<std::string>* target = nullptr;
    if (kind == "action") target = &c.action_lexicon;
    else if (kind == "connective") target = &c.connective_lexicon;
    else throw ParseError("unknown lexicon kind '" + kind + "'", line_no);
    for (std::string w; words >> w;) target->insert(to_lower(w));
  }
  c.validate();
  return c;
}

void ChunkingConfig::validate() const {
  if (min_chunk_words < 1) throw ValidationError("min_chunk_words must be >= 1");
  if (action_lexicon.empty()) throw ValidationError("action lexicon is empty");
  if (connective_lexicon.empty()) throw ValidationError("connective lexicon is empty");
}

const char* to_string(ChunkDisposition d) {
  switch (d) {
    case ChunkDisposition::Emit: return "Emit";
    case ChunkDisposition::MergeWithPrevious: return "MergeWithPrevious";
    case ChunkDisposition::MergeWithNext: return "MergeWithNext";
  }
  return "?";
}

std::vector<int> find_conj_boundaries(const ParsedInstruction& parsed) {
  std::vector<int> out;
  for (const auto& flat : parsed.flat_tokens) {
    if (flat.token.relation() != "conj" || flat.global_head == 0) continue;
    if (parsed.at(flat.global_head).token.relation() == "root") out.push_back(flat.global_index);
  }
  return out;
}

std::vector<int> find_chunk_boundaries(const ParsedInstruction& parsed) {
  return scan_boundaries(parsed);
}

bool is_bare_action_phrase(const std::vector<std::string>& lowered_words, const ChunkingConfig& config) {
  const auto& fw = function_words();
  return std::all_of(lowered_words.begin(), lowered_words.end(), [&](const std::string& w) {
    return config.action_lexicon.count(w) || config.connective_lexicon.count(w) || fw.count(w);
  });
}

ChunkDisposition check_chunk(const std::vector<std::string>& chunk, ChunkPosition position,
                             const ChunkingConfig& config) {
  if (chunk.empty()) throw Error("check_chunk: empty chunk");
  const auto words = lowered(chunk);
  const bool long_enough = static_cast<int>(words.size()) >= config.min_chunk_words;
  if (long_enough && !is_bare_action_phrase(words, config)) return ChunkDisposition::Emit;

  auto d = config.connective_lexicon.count(words.back()) ? ChunkDisposition::MergeWithNext
                                                          : ChunkDisposition::MergeWithPrevious;
  if (d == ChunkDisposition::MergeWithPrevious && position == ChunkPosition::First) {
    d = ChunkDisposition::MergeWithNext;
  } else if (d == ChunkDisposition::MergeWithNext && position == ChunkPosition::Last) {
    d = ChunkDisposition::MergeWithPrevious;
  }
  return d;
}

std::vector<SubInstruction> chunk_instruction(const ParsedInstruction& parsed, const ChunkingConfig& config) {
  config.validate();
  const auto boundaries = find_chunk_boundaries(parsed);

  // Raw segments between boundaries, punctuation dropped.
  std::vector<SubInstruction> segments(1);
  std::size_t next_boundary = 0;
  for (const auto& flat : parsed.flat_tokens) {
    if (next_boundary < boundaries.size() && flat.global_index == boundaries[next_boundary]) {
      ++next_boundary;
      if (!segments.back().words.empty()) segments.emplace_back();
    }
    if (flat.token.is_punct()) continue;
    segments.back().words.push_back(flat.token.form);
    segments.back().tokens.push_back(flat.global_index);
  }
  if (segments.back().words.empty()) segments.pop_back();
  if (segments.empty()) throw ValidationError("no chunkable content");

  std::vector<SubInstruction> out;
  SubInstruction pending;  // carried forward by MergeWithNext
  for (std::size_t i = 0; i < segments.size(); ++i) {
    SubInstruction chunk = std::move(pending);
    pending = {};
    chunk.words.insert(chunk.words.end(), segments[i].words.begin(), segments[i].words.end());
    chunk.tokens.insert(chunk.tokens.end(), segments[i].tokens.begin(), segments[i].tokens.end());

    const bool last = i + 1 == segments.size();
    if (last && out.empty()) {
      out.push_back(std::move(chunk));
      break;
    }
    const auto position = out.empty() ? ChunkPosition::First : (last ? ChunkPosition::Last : ChunkPosition::Middle);
    switch (check_chunk(chunk.words, position, config)) {
      case ChunkDisposition::Emit:
        out.push_back(std::move(chunk));
        break;
      case ChunkDisposition::MergeWithPrevious:
        out.back().words.insert(out.back().words.end(), chunk.words.begin(), chunk.words.end());
        out.back().tokens.insert(out.back().tokens.end(), chunk.tokens.begin(), chunk.tokens.end());
        break;
      case ChunkDisposition::MergeWithNext:
        pending = std::move(chunk);
        break;
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].id = static_cast<int>(i) + 1;
  return out;
}

}  // namespace subnav
