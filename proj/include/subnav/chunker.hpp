#pragma once

#include <set>
#include <string>
#include <vector>

#include "subnav/conllu.hpp"

namespace subnav {

struct SubInstruction {
  int id = 1;                       // 1-based ordinal within the instruction
  std::vector<std::string> words;   // original casing
  std::vector<int> tokens;          // global token indices; empty for loaded data

  std::string text(bool lowercase = false) const;
};

struct ChunkingConfig {
  int min_chunk_words = 3;
  std::set<std::string> action_lexicon;
  std::set<std::string> connective_lexicon;

  // Navigation verbs plus the direction/manner words that make up bare
  // action phrases ("turn left", "go straight").
  static ChunkingConfig defaults();

  // Replaces the lexicons from a text file of "action: w1 w2 ..." and
  // "connective: w1 ..." lines. '#' starts a comment.
  static ChunkingConfig from_lexicon_file(const std::string& path, int min_chunk_words = 3);

  void validate() const;
};

enum class ChunkDisposition { Emit, MergeWithPrevious, MergeWithNext };
enum class ChunkPosition { First, Middle, Last };

const char* to_string(ChunkDisposition d);

// Global indices of `conj` tokens governed by a `root` token, ascending.
std::vector<int> find_conj_boundaries(const ParsedInstruction& parsed);

// Global indices of the tokens at which a new sub-instruction starts
// (conditions 1-3 of the chunking rule), in order. Independent of Check.
std::vector<int> find_chunk_boundaries(const ParsedInstruction& parsed);

// True when every word is an action/connective/function word.
bool is_bare_action_phrase(const std::vector<std::string>& lowered_words, const ChunkingConfig& config);

ChunkDisposition check_chunk(const std::vector<std::string>& chunk, ChunkPosition position,
                             const ChunkingConfig& config);

std::vector<SubInstruction> chunk_instruction(const ParsedInstruction& parsed, const ChunkingConfig& config);

}  // namespace subnav
