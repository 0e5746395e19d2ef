#include "timedist/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace timedist {

using nlohmann::json;

namespace {

template <typename T>
std::unordered_map<std::string, const T*> index_by_id(const std::vector<T>& items) {
  std::unordered_map<std::string, const T*> map;
  for (const auto& item : items) {
    if (!map.emplace(item.id, &item).second)
      throw std::invalid_argument("duplicate sample id: " + item.id);
  }
  return map;
}

double best_iou(const TimeSegment& pred, const std::vector<TimeSegment>& gts) {
  double best = 0.0;
  for (const auto& g : gts) best = std::max(best, segment_iou(pred, g));
  return best;
}

}  // namespace

double recall_at_1(const std::vector<MRPrediction>& preds, const std::vector<GroundTruthSet>& gts,
                   double threshold) {
  if (threshold <= 0.0 || threshold >= 1.0)
    throw std::invalid_argument("recall_at_1: threshold must be in (0,1)");
  if (gts.empty()) throw std::invalid_argument("recall_at_1: no ground truth");
  const auto by_id = index_by_id(preds);
  int hits = 0;
  for (const auto& gt : gts) {
    const auto it = by_id.find(gt.id);
    if (it == by_id.end()) continue;  // missing prediction counts as a miss
    if (best_iou(it->second->segment, gt.segments) >= threshold) ++hits;
  }
  return static_cast<double>(hits) / gts.size();
}

double mean_iou(const std::vector<MRPrediction>& preds, const std::vector<GroundTruthSet>& gts) {
  if (gts.empty()) throw std::invalid_argument("mean_iou: no ground truth");
  const auto by_id = index_by_id(preds);
  double acc = 0.0;
  for (const auto& gt : gts) {
    const auto it = by_id.find(gt.id);
    if (it != by_id.end()) acc += best_iou(it->second->segment, gt.segments);
  }
  return acc / gts.size();
}

namespace {

// Average precision for one sample: predictions in descending score order,
// each greedily matched to the highest-IoU unmatched ground truth at or
// above the threshold; AP is 101-point interpolated area under PR.
double sample_ap(const ScoredPredictions& preds, const std::vector<TimeSegment>& gts,
                 double threshold) {
  const int np = static_cast<int>(preds.segments.size());
  const int ng = static_cast<int>(gts.size());
  if (ng == 0) return 0.0;
  if (np == 0) return 0.0;

  std::vector<int> order(np);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return preds.scores[a] > preds.scores[b]; });

  std::vector<bool> gt_used(ng, false);
  std::vector<bool> is_hit(np, false);
  for (int rank = 0; rank < np; ++rank) {
    const TimeSegment& p = preds.segments[order[rank]];
    int best_gt = -1;
    double best = -1.0;
    for (int g = 0; g < ng; ++g) {
      if (gt_used[g]) continue;
      const double iou = segment_iou(p, gts[g]);
      // ascending scan with a strict comparison keeps the lowest gt index on ties
      if (iou >= threshold && iou > best) {
        best = iou;
        best_gt = g;
      }
    }
    if (best_gt >= 0) {
      gt_used[best_gt] = true;
      is_hit[rank] = true;
    }
  }

  std::vector<double> precision(np), recall(np);
  int tp = 0;
  for (int i = 0; i < np; ++i) {
    if (is_hit[i]) ++tp;
    precision[i] = static_cast<double>(tp) / (i + 1);
    recall[i] = static_cast<double>(tp) / ng;
  }
  double ap = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    double best = 0.0;
    for (int i = 0; i < np; ++i)
      if (recall[i] >= r) best = std::max(best, precision[i]);
    ap += best;
  }
  return ap / 101.0;
}

}  // namespace

double map_at_iou(const std::vector<ScoredPredictions>& preds,
                  const std::vector<GroundTruthSet>& gts, double threshold) {
  if (threshold <= 0.0 || threshold >= 1.0)
    throw std::invalid_argument("map_at_iou: threshold must be in (0,1)");
  for (const auto& p : preds)
    if (p.segments.size() != p.scores.size())
      throw std::invalid_argument("map_at_iou: segments/scores length mismatch");
  const auto by_id = index_by_id(preds);
  double acc = 0.0;
  int counted = 0;
  static const ScoredPredictions kEmpty{};
  for (const auto& gt : gts) {
    const auto it = by_id.find(gt.id);
    const ScoredPredictions& p = it == by_id.end() ? kEmpty : *it->second;
    if (gt.segments.empty() && p.segments.empty()) continue;  // nothing to score
    acc += sample_ap(p, gt.segments, threshold);
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("map_at_iou: no scorable samples");
  return acc / counted;
}

namespace {

int greedy_match_count(const std::vector<TimeSegment>& preds, const std::vector<TimeSegment>& gts,
                       double threshold) {
  const int np = static_cast<int>(preds.size());
  const int ng = static_cast<int>(gts.size());
  std::vector<bool> p_used(np, false), g_used(ng, false);
  int matches = 0;
  while (true) {
    double best = -1.0;
    int bp = -1, bg = -1;
    for (int g = 0; g < ng; ++g) {
      if (g_used[g]) continue;
      for (int p = 0; p < np; ++p) {
        if (p_used[p]) continue;
        const double iou = segment_iou(preds[p], gts[g]);
        // ties break toward the lower gt index, then the lower pred index,
        // which the scan order realizes with a strict comparison
        if (iou > best) {
          best = iou;
          bp = p;
          bg = g;
        }
      }
    }
    if (bp < 0 || best < threshold) break;
    p_used[bp] = true;
    g_used[bg] = true;
    ++matches;
  }
  return matches;
}

}  // namespace

F1Report dvc_temporal_f1(const std::vector<DVCPrediction>& preds,
                         const std::vector<GroundTruthSet>& gts, double threshold) {
  if (threshold <= 0.0 || threshold >= 1.0)
    throw std::invalid_argument("dvc_temporal_f1: threshold must be in (0,1)");
  const auto by_id = index_by_id(preds);
  F1Report rep;
  for (const auto& gt : gts) {
    const auto it = by_id.find(gt.id);
    const std::vector<TimeSegment> none;
    const std::vector<TimeSegment>& p = it == by_id.end() ? none : it->second->segments;
    rep.matches += greedy_match_count(p, gt.segments, threshold);
    rep.predictions += static_cast<int>(p.size());
    rep.ground_truths += static_cast<int>(gt.segments.size());
  }
  rep.precision = rep.predictions > 0 ? static_cast<double>(rep.matches) / rep.predictions : 0.0;
  rep.recall = rep.ground_truths > 0 ? static_cast<double>(rep.matches) / rep.ground_truths : 0.0;
  rep.f1 = (rep.precision + rep.recall) > 0.0
               ? 2.0 * rep.precision * rep.recall / (rep.precision + rep.recall)
               : 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// JSONL
// ---------------------------------------------------------------------------

std::string to_jsonl_line(const PredictionRecord& rec) {
  json j;
  j["id"] = rec.id;
  json segs = json::array();
  for (const auto& s : rec.segments) segs.push_back({s.start(), s.end()});
  j["segments"] = std::move(segs);
  if (!rec.scores.empty()) {
    if (rec.scores.size() != rec.segments.size())
      throw std::invalid_argument("prediction record: scores/segments length mismatch");
    j["scores"] = rec.scores;
  }
  if (!rec.answer.empty()) j["answer"] = rec.answer;
  return j.dump();
}

PredictionRecord parse_prediction_line(const std::string& line) {
  const json j = json::parse(line);
  PredictionRecord rec;
  rec.id = j.at("id").get<std::string>();
  for (const auto& seg : j.at("segments"))
    rec.segments.push_back(make_segment(seg.at(0).get<double>(), seg.at(1).get<double>()));
  if (j.contains("scores")) {
    rec.scores = j.at("scores").get<std::vector<double>>();
    if (rec.scores.size() != rec.segments.size())
      throw std::invalid_argument("prediction record: scores/segments length mismatch");
  }
  if (j.contains("answer")) rec.answer = j.at("answer").get<std::string>();
  return rec;
}

void write_predictions(const std::string& path, const std::vector<PredictionRecord>& recs) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_predictions: cannot open " + path);
  for (const auto& rec : recs) os << to_jsonl_line(rec) << '\n';
  if (!os) throw std::runtime_error("write_predictions: write failed for " + path);
}

std::vector<PredictionRecord> read_predictions(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::invalid_argument("read_predictions: cannot open " + path);
  std::vector<PredictionRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse_prediction_line(line));
    } catch (const std::exception& e) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string report_to_json(const std::map<std::string, double>& report) {
  json j(report);
  return j.dump(2);
}

}  // namespace timedist
