#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace subnav {

struct Token {
  int index = 0;        // 1-based within its sentence
  std::string form;     // surface form, original casing
  std::string lower;    // lowercased copy of form
  std::string upos;
  int head = 0;         // sentence-local governor, 0 = root
  std::string deprel;

  // Universal part of the relation label ("conj:and" -> "conj").
  std::string_view relation() const;
  bool is_punct() const { return relation() == "punct"; }
};

struct FlatToken {
  int global_index = 0;   // 1-based across the whole instruction
  int sentence = 0;       // 0-based sentence id
  int local_index = 0;    // == token.index
  int global_head = 0;    // 0 = no governor
  Token token;
};

struct ParsedInstruction {
  std::string id;  // from "# text_id = ..." when present
  std::vector<std::vector<Token>> sentences;
  std::vector<FlatToken> flat_tokens;
  // Soft inconsistencies such as head == 0 on a non-root token.
  std::vector<std::string> warnings;

  const FlatToken& at(int global_index) const { return flat_tokens.at(global_index - 1); }
  std::size_t size() const { return flat_tokens.size(); }
};

// Parses one instruction. Comment lines (including text_id) are accepted and
// the last text_id seen becomes the instruction id.
ParsedInstruction parse_conllu(std::string_view text);

// Splits a multi-instruction file on "# text_id = <id>" comments. A file with
// no text_id comment yields a single instruction with an empty id.
std::vector<ParsedInstruction> parse_conllu_document(std::string_view text);

// Rebuilds flat_tokens and warnings from sentences. Throws ValidationError on
// structural problems (root count, out-of-range heads).
void index_instruction(ParsedInstruction& parsed);

// 10-column serialization; unknown columns are written as "_".
std::string to_conllu(const ParsedInstruction& parsed);

std::string to_lower(std::string_view s);

}  // namespace subnav
