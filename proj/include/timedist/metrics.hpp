#pragma once

#include "timedist/core.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace timedist {

/// Top-1 moment-retrieval prediction for one sample.
struct MRPrediction {
  std::string id;
  TimeSegment segment;
  std::optional<double> confidence;
};

/// A set of scored segment proposals for one sample.
struct ScoredPredictions {
  std::string id;
  std::vector<TimeSegment> segments;
  std::vector<double> scores;  // aligned with segments
};

/// Ordered event list for dense captioning.
struct DVCPrediction {
  std::string id;
  std::vector<TimeSegment> segments;
};

struct GroundTruthSet {
  std::string id;
  std::vector<TimeSegment> segments;
};

/// Fraction of ground-truth samples whose top-1 prediction reaches IoU >=
/// threshold against any of the sample's segments. Missing predictions are
/// misses.
double recall_at_1(const std::vector<MRPrediction>& preds, const std::vector<GroundTruthSet>& gts,
                   double threshold);

/// Mean over samples of the top-1 IoU against the best-matching ground-truth
/// segment; missing predictions contribute 0.
double mean_iou(const std::vector<MRPrediction>& preds, const std::vector<GroundTruthSet>& gts);

/// Detection-style average precision per sample (101-point interpolated
/// precision/recall, greedy matching in score order against the highest-IoU
/// unmatched segment), averaged over samples. Samples with neither
/// predictions nor ground truth are skipped.
double map_at_iou(const std::vector<ScoredPredictions>& preds,
                  const std::vector<GroundTruthSet>& gts, double threshold);

struct F1Report {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int matches = 0;
  int predictions = 0;
  int ground_truths = 0;
};

/// One-to-one greedy matching by descending IoU within each sample; a pair
/// matches when IoU >= threshold. Precision/recall/F1 are micro-averaged over
/// the whole set. Ties break toward the lower ground-truth index, then the
/// lower prediction index.
F1Report dvc_temporal_f1(const std::vector<DVCPrediction>& preds,
                         const std::vector<GroundTruthSet>& gts, double threshold);

// JSONL IO. Predictions and ground truth share one line format:
// {"id": str, "segments": [[st,et],...], "scores": [...]?}
struct PredictionRecord {
  std::string id;
  std::vector<TimeSegment> segments;
  std::vector<double> scores;      // empty when absent
  std::string answer;              // optional rendered answer text
};

std::string to_jsonl_line(const PredictionRecord& rec);
PredictionRecord parse_prediction_line(const std::string& line);
void write_predictions(const std::string& path, const std::vector<PredictionRecord>& recs);
std::vector<PredictionRecord> read_predictions(const std::string& path);

/// Flat key -> value report emitted by the evaluation commands.
std::string report_to_json(const std::map<std::string, double>& report);

}  // namespace timedist
