#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "subnav/chunker.hpp"
#include "subnav/dataset.hpp"
#include "subnav/metrics.hpp"
#include "subnav/navgraph.hpp"

namespace subnav {

// Geometric mean of clipped n-gram precisions (n = 1..4) times the brevity
// penalty min(1, exp(1 - |ref|/|cand|)). A zero match count for n >= 2 is
// smoothed to 1/(total + 1); a zero unigram precision gives 0.
double smoothed_bleu4(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);

// Mean smoothed BLEU-4 of generated against reference segmentations. Each
// instruction is scored as one token stream with "|" between sub-instructions,
// so boundary disagreements lower the score.
double segmentation_bleu(const std::vector<std::vector<SubInstruction>>& generated,
                         const std::vector<std::vector<SubInstruction>>& reference);

struct SimilarityMatrix {
  std::size_t n = 0;
  std::vector<double> values;  // row-major n*n
  std::vector<std::string> labels;

  double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
};

// Symmetrized pairwise smoothed BLEU-4; diagonal 1.
SimilarityMatrix similarity_matrix(const std::vector<std::vector<std::string>>& items,
                                   std::vector<std::string> labels = {});
SimilarityMatrix similarity_matrix_serial(const std::vector<std::vector<std::string>>& items,
                                          std::vector<std::string> labels = {});

struct ClusterAssignment {
  std::vector<int> label;                 // cluster of each item, 0..k-1 ordered by smallest member
  std::vector<std::vector<int>> members;  // ascending member indices per cluster
  std::vector<double> merge_heights;      // linkage value of every merge, in order
};

// Agglomerates on dissimilarity 1 - s, merging the pair with the smallest
// maximum pairwise dissimilarity until k clusters remain. Ties go to the pair
// with the lowest (first, second) cluster index, a cluster being indexed by its
// smallest member.
ClusterAssignment complete_linkage_cluster(const SimilarityMatrix& matrix, int k);

// Largest within-cluster dissimilarity of an assignment.
double complete_linkage_cost(const SimilarityMatrix& matrix, const std::vector<std::vector<int>>& clusters);

struct SubInstructionResult {
  std::string key;              // "<path_id>#<k>"
  std::vector<std::string> words;
  double end_distance = 0;      // geodesic: annotated end viewpoint to the shift viewpoint
  double ndtw = 0;              // sub-trajectory vs annotated sub-path
  int viewpoints = 0;           // annotated sub-path span
};

enum class Segmentation { Predicted, GroundTruth };

// Splits the agent trajectory at shift events. The shift viewpoint of chunk k is
// where the agent stood after the step whose predicted shift left k, or the
// final viewpoint when it never did. Sub-trajectories are cut at the events
// selected by `mode`.
std::vector<SubInstructionResult> sub_instruction_results(const EnvGraph& graph, const Episode& episode,
                                                          const TrajectoryRecord& record,
                                                          Segmentation mode = Segmentation::Predicted);

nlohmann::json sub_results_to_json(const std::vector<SubInstructionResult>& results);
std::vector<SubInstructionResult> sub_results_from_json(const nlohmann::json& doc);

struct ClusterSummary {
  int rank = 0;
  int cluster = 0;
  double mean_distance = 0;
  double mean_ndtw = 0;
  int frequency = 0;
  double mean_viewpoints = 0;
  int representative = 0;  // item index
  std::string representative_text;
};

// Per-cluster means ranked ascending by mean distance (ties by cluster index).
// results are matched to matrix items through SimilarityMatrix::labels.
std::vector<ClusterSummary> cluster_summary(const ClusterAssignment& assignment, const SimilarityMatrix& matrix,
                                            const std::vector<SubInstructionResult>& results);

}  // namespace subnav
