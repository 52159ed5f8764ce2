#include "subnav/conllu.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

#include "subnav/error.hpp"

namespace subnav {

namespace {

constexpr std::string_view kTextIdPrefix = "# text_id";

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

bool parse_int(std::string_view s, int& value) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Returns the id of a "# text_id = <id>" comment, or empty when the comment
// is of another kind.
std::string text_id_of(std::string_view comment) {
  if (comment.substr(0, kTextIdPrefix.size()) != kTextIdPrefix) return {};
  auto eq = comment.find('=');
  if (eq == std::string_view::npos) return {};
  return std::string(trim(comment.substr(eq + 1)));
}

struct LineReader {
  std::string_view text;
  std::size_t pos = 0;
  int number = 0;

  bool next(std::string_view& line) {
    if (pos >= text.size()) return false;
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    ++number;
    return true;
  }
};

Token parse_token_line(std::string_view line, int line_no, bool& skip) {
  auto cols = split_tabs(line);
  if (cols.size() != 10) {
    throw ParseError("expected 10 tab-separated columns, found " + std::to_string(cols.size()), line_no);
  }
  skip = false;
  if (cols[0].find_first_of("-.") != std::string_view::npos) {
    skip = true;  // multiword range or empty node
    return {};
  }
  Token tok;
  if (!parse_int(cols[0], tok.index) || tok.index < 1) {
    throw ParseError("non-integer ID '" + std::string(cols[0]) + "'", line_no);
  }
  if (!parse_int(cols[6], tok.head) || tok.head < 0) {
    throw ParseError("non-integer HEAD '" + std::string(cols[6]) + "'", line_no);
  }
  tok.form = std::string(cols[1]);
  tok.lower = to_lower(tok.form);
  tok.upos = std::string(cols[3]);
  tok.deprel = std::string(cols[7]);
  return tok;
}

// Parses lines [reader.pos, stop) into sentences. Stops at a text_id comment
// when `split_on_text_id` and at least one sentence has been read.
ParsedInstruction parse_block(LineReader& reader, bool split_on_text_id) {
  ParsedInstruction parsed;
  std::vector<Token> current;
  auto flush = [&] {
    if (!current.empty()) parsed.sentences.push_back(std::move(current));
    current.clear();
  };

  while (true) {
    std::size_t saved_pos = reader.pos;
    int saved_no = reader.number;
    std::string_view line;
    if (!reader.next(line)) break;
    if (trim(line).empty()) {
      flush();
      continue;
    }
    if (line.front() == '#') {
      auto id = text_id_of(line);
      if (!id.empty()) {
        if (split_on_text_id && (!parsed.sentences.empty() || !current.empty() || !parsed.id.empty())) {
          reader.pos = saved_pos;
          reader.number = saved_no;
          break;
        }
        parsed.id = id;
      }
      continue;
    }
    bool skip = false;
    Token tok = parse_token_line(line, reader.number, skip);
    if (skip) continue;
    if (tok.index != static_cast<int>(current.size()) + 1) {
      throw ParseError("token ID " + std::to_string(tok.index) + " out of sequence", reader.number);
    }
    current.push_back(std::move(tok));
  }
  flush();
  index_instruction(parsed);
  return parsed;
}

}  // namespace

std::string_view Token::relation() const {
  std::string_view rel = deprel;
  auto colon = rel.find(':');
  return colon == std::string_view::npos ? rel : rel.substr(0, colon);
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

void index_instruction(ParsedInstruction& parsed) {
  parsed.flat_tokens.clear();
  parsed.warnings.clear();
  int offset = 0;
  for (std::size_t s = 0; s < parsed.sentences.size(); ++s) {
    const auto& sentence = parsed.sentences[s];
    const int n = static_cast<int>(sentence.size());
    int roots = 0;
    for (const auto& tok : sentence) {
      if (tok.relation() == "root") ++roots;
      if (tok.head > n) {
        throw ValidationError("sentence " + std::to_string(s + 1) + ": token " + std::to_string(tok.index) +
                              " has head " + std::to_string(tok.head) + " beyond sentence length");
      }
      if (tok.head == tok.index) {
        throw ValidationError("sentence " + std::to_string(s + 1) + ": token " + std::to_string(tok.index) +
                              " is its own head");
      }
      if ((tok.head == 0) != (tok.relation() == "root")) {
        parsed.warnings.push_back("sentence " + std::to_string(s + 1) + ": token " + std::to_string(tok.index) +
                                  " ('" + tok.form + "') head=" + std::to_string(tok.head) +
                                  " disagrees with deprel " + tok.deprel);
      }
      FlatToken flat;
      flat.global_index = offset + tok.index;
      flat.sentence = static_cast<int>(s);
      flat.local_index = tok.index;
      flat.global_head = tok.head == 0 ? 0 : offset + tok.head;
      flat.token = tok;
      parsed.flat_tokens.push_back(std::move(flat));
    }
    if (roots != 1) {
      throw ValidationError("sentence " + std::to_string(s + 1) + " has " + std::to_string(roots) +
                            " root tokens (expected exactly 1)");
    }
    offset += n;
  }
}

ParsedInstruction parse_conllu(std::string_view text) {
  LineReader reader{text};
  return parse_block(reader, false);
}

std::vector<ParsedInstruction> parse_conllu_document(std::string_view text) {
  std::vector<ParsedInstruction> out;
  LineReader reader{text};
  while (reader.pos < text.size()) {
    auto parsed = parse_block(reader, true);
    if (parsed.sentences.empty()) {
      if (!parsed.id.empty()) throw ValidationError("instruction '" + parsed.id + "' has no tokens");
      continue;
    }
    out.push_back(std::move(parsed));
  }
  return out;
}

std::string to_conllu(const ParsedInstruction& parsed) {
  std::ostringstream os;
  if (!parsed.id.empty()) os << "# text_id = " << parsed.id << '\n';
  for (const auto& sentence : parsed.sentences) {
    for (const auto& t : sentence) {
      os << t.index << '\t' << t.form << "\t_\t" << (t.upos.empty() ? "_" : t.upos) << "\t_\t_\t" << t.head
         << '\t' << t.deprel << "\t_\t_\n";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace subnav
