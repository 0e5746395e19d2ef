#pragma once

#include "timedist/core.hpp"

#include <Eigen/Core>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace timedist {

/// One grounding proposal from one source model.
struct CandidateSegment {
  std::string event_id;
  std::string model;
  TimeSegment segment;
  std::optional<double> score;
  std::optional<Eigen::VectorXd> visual_emb;
  std::optional<Eigen::VectorXd> text_emb;
  std::optional<TimeSegment> gt;  // present in calibration inputs
  bool chosen = false;
};

/// Segment-visual / query-text embedding pair to be scored.
struct EmbeddingPair {
  Eigen::VectorXd visual;
  Eigen::VectorXd text;
};

/// Cosine similarity of the L2-normalized vectors; zero-norm inputs are
/// rejected.
double cosine_score(const EmbeddingPair& pair);
double cosine_score(const Eigen::VectorXd& u, const Eigen::VectorXd& v);

/// Fills missing scores from the embedding pair when both are present;
/// candidates with neither a score nor embeddings are rejected.
void ensure_scores(std::vector<CandidateSegment>& candidates);

/// Per event, picks the candidate maximizing score + offset[model]. Ties
/// break by the priority list (earlier entry wins; models absent from the
/// list rank after it in lexicographic order), then by earlier start, then
/// earlier end. Winners are flagged `chosen`; the chosen candidates are also
/// returned in first-appearance event order.
std::vector<CandidateSegment> select_ensemble(std::vector<CandidateSegment>& candidates,
                                              const std::map<std::string, double>& offsets = {},
                                              const std::vector<std::string>& priority = {});

struct CalibrationBin {
  double center = 0.0;
  double mean_iou = 0.0;
  int count = 0;
};

/// Buckets scored candidates into `bins` equal-width score bins over the
/// observed score range and reports mean IoU against ground truth per
/// non-empty bin.
std::vector<CalibrationBin> calibration_curve(const std::vector<CandidateSegment>& candidates,
                                              int bins = 10);

/// Per-model least-squares fit of score against IoU; offsets are intercept
/// differences relative to the first model in priority order (lexicographic
/// by default). When every difference is within `tolerance` all offsets
/// collapse to zero. Models with fewer than `min_samples` scored candidates
/// are rejected.
std::map<std::string, double> estimate_offsets(const std::vector<CandidateSegment>& candidates,
                                               double tolerance = 0.02, int min_samples = 30,
                                               const std::vector<std::string>& priority = {});

/// Spearman rank correlation (average ranks on ties).
double spearman_correlation(const std::vector<double>& xs, const std::vector<double>& ys);

// Candidate JSONL: {"event_id": str, "model": str, "segment": [st,et],
// "visual_emb": [...]?, "text_emb": [...]?, "score": float?, "gt": [st,et]?};
// output mirrors input plus "chosen": true on winners.
std::string to_jsonl_line(const CandidateSegment& c);
CandidateSegment parse_candidate_line(const std::string& line);
void write_candidates(const std::string& path, const std::vector<CandidateSegment>& cs);
std::vector<CandidateSegment> read_candidates(const std::string& path);

}  // namespace timedist
