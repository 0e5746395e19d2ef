#include "timedist/ensemble.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_map>

namespace timedist {

using nlohmann::json;

double cosine_score(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine_score: dimension mismatch");
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 || nv == 0.0) throw std::invalid_argument("cosine_score: zero-norm vector");
  return u.dot(v) / (nu * nv);
}

double cosine_score(const EmbeddingPair& pair) { return cosine_score(pair.visual, pair.text); }

void ensure_scores(std::vector<CandidateSegment>& candidates) {
  for (auto& c : candidates) {
    if (c.score) continue;
    if (c.visual_emb && c.text_emb) {
      c.score = cosine_score(*c.visual_emb, *c.text_emb);
    } else {
      throw std::invalid_argument("candidate for event '" + c.event_id +
                                  "' has neither a score nor an embedding pair");
    }
  }
}

namespace {

// rank of a model for tie-breaking: position in the priority list, models
// not listed come after in lexicographic order
int model_rank(const std::string& model, const std::vector<std::string>& priority,
               const std::vector<std::string>& lex_rest) {
  for (size_t i = 0; i < priority.size(); ++i)
    if (priority[i] == model) return static_cast<int>(i);
  for (size_t i = 0; i < lex_rest.size(); ++i)
    if (lex_rest[i] == model)
      return static_cast<int>(priority.size() + i);
  return static_cast<int>(priority.size() + lex_rest.size());
}

}  // namespace

std::vector<CandidateSegment> select_ensemble(std::vector<CandidateSegment>& candidates,
                                              const std::map<std::string, double>& offsets,
                                              const std::vector<std::string>& priority) {
  if (candidates.empty()) throw std::invalid_argument("select_ensemble: no candidates");
  for (auto& c : candidates) {
    if (!c.score) throw std::invalid_argument("select_ensemble: unscored candidate (run scoring first)");
    c.chosen = false;
  }
  std::set<std::string> listed(priority.begin(), priority.end());
  std::set<std::string> rest_set;
  for (const auto& c : candidates)
    if (!listed.count(c.model)) rest_set.insert(c.model);
  const std::vector<std::string> lex_rest(rest_set.begin(), rest_set.end());

  auto offset_of = [&offsets](const std::string& model) {
    const auto it = offsets.find(model);
    return it == offsets.end() ? 0.0 : it->second;
  };

  // group by event id in first-appearance order
  std::vector<std::string> event_order;
  std::unordered_map<std::string, std::vector<CandidateSegment*>> groups;
  for (auto& c : candidates) {
    auto [it, inserted] = groups.try_emplace(c.event_id);
    if (inserted) event_order.push_back(c.event_id);
    it->second.push_back(&c);
  }

  std::vector<CandidateSegment> winners;
  winners.reserve(event_order.size());
  for (const auto& event : event_order) {
    CandidateSegment* best = nullptr;
    double best_score = 0.0;
    int best_rank = 0;
    for (CandidateSegment* c : groups[event]) {
      const double s = *c->score + offset_of(c->model);
      const int rank = model_rank(c->model, priority, lex_rest);
      const bool better =
          !best || s > best_score || (s == best_score && rank < best_rank) ||
          (s == best_score && rank == best_rank &&
           (c->segment.start() < best->segment.start() ||
            (c->segment.start() == best->segment.start() && c->segment.end() < best->segment.end())));
      if (better) {
        best = c;
        best_score = s;
        best_rank = rank;
      }
    }
    best->chosen = true;
    winners.push_back(*best);
  }
  return winners;
}

std::vector<CalibrationBin> calibration_curve(const std::vector<CandidateSegment>& candidates,
                                              int bins) {
  if (bins < 1) throw std::invalid_argument("calibration_curve: bins must be positive");
  std::vector<std::pair<double, double>> points;  // (score, iou)
  for (const auto& c : candidates) {
    if (!c.score || !c.gt) continue;
    points.emplace_back(*c.score, segment_iou(c.segment, *c.gt));
  }
  if (points.empty())
    throw std::invalid_argument("calibration_curve: no scored candidates with ground truth");

  double lo = points[0].first, hi = points[0].first;
  for (const auto& [s, _] : points) {
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  std::vector<CalibrationBin> out;
  if (hi == lo) {
    CalibrationBin b;
    b.center = lo;
    for (const auto& [_, iou] : points) b.mean_iou += iou;
    b.count = static_cast<int>(points.size());
    b.mean_iou /= b.count;
    out.push_back(b);
    return out;
  }
  const double width = (hi - lo) / bins;
  std::vector<double> sum(bins, 0.0);
  std::vector<int> count(bins, 0);
  for (const auto& [s, iou] : points) {
    int b = static_cast<int>((s - lo) / width);
    b = std::clamp(b, 0, bins - 1);
    sum[b] += iou;
    ++count[b];
  }
  for (int b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;  // empty bins omitted
    out.push_back(CalibrationBin{lo + (b + 0.5) * width, sum[b] / count[b], count[b]});
  }
  return out;
}

std::map<std::string, double> estimate_offsets(const std::vector<CandidateSegment>& candidates,
                                               double tolerance, int min_samples,
                                               const std::vector<std::string>& priority) {
  struct Fit {
    std::vector<double> scores, ious;
  };
  std::map<std::string, Fit> per_model;
  for (const auto& c : candidates) {
    if (!c.score || !c.gt) continue;
    auto& f = per_model[c.model];
    f.scores.push_back(*c.score);
    f.ious.push_back(segment_iou(c.segment, *c.gt));
  }
  if (per_model.empty()) throw std::invalid_argument("estimate_offsets: no usable candidates");
  for (const auto& [model, f] : per_model) {
    if (static_cast<int>(f.scores.size()) < min_samples)
      throw std::invalid_argument("estimate_offsets: model '" + model + "' has " +
                                  std::to_string(f.scores.size()) + " samples, needs " +
                                  std::to_string(min_samples));
  }

  // least squares score = c_m + d_m * iou per model; the intercept carries
  // any constant bias of that model's scorer
  std::map<std::string, double> intercepts;
  for (const auto& [model, f] : per_model) {
    const int n = static_cast<int>(f.scores.size());
    double mean_x = 0.0, mean_y = 0.0;
    for (int i = 0; i < n; ++i) {
      mean_x += f.ious[i];
      mean_y += f.scores[i];
    }
    mean_x /= n;
    mean_y /= n;
    double sxx = 0.0, sxy = 0.0;
    for (int i = 0; i < n; ++i) {
      sxx += (f.ious[i] - mean_x) * (f.ious[i] - mean_x);
      sxy += (f.ious[i] - mean_x) * (f.scores[i] - mean_y);
    }
    const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
    intercepts[model] = mean_y - slope * mean_x;
  }

  // reference model: first by priority, else lexicographically first
  std::string reference;
  for (const auto& p : priority)
    if (intercepts.count(p)) {
      reference = p;
      break;
    }
  if (reference.empty()) reference = intercepts.begin()->first;

  std::map<std::string, double> offsets;
  double max_abs = 0.0;
  for (const auto& [model, c] : intercepts) {
    offsets[model] = intercepts[reference] - c;
    max_abs = std::max(max_abs, std::abs(offsets[model]));
  }
  if (max_abs < tolerance)
    for (auto& [_, v] : offsets) v = 0.0;
  return offsets;
}

double spearman_correlation(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw std::invalid_argument("spearman_correlation: need two aligned series");
  auto ranks = [](const std::vector<double>& v) {
    const int n = static_cast<int>(v.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    int i = 0;
    while (i < n) {
      int j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = (i + j) / 2.0;  // average rank for ties
      for (int k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> rx = ranks(xs);
  const std::vector<double> ry = ranks(ys);
  const int n = static_cast<int>(xs.size());
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (int i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// JSONL
// ---------------------------------------------------------------------------

std::string to_jsonl_line(const CandidateSegment& c) {
  json j;
  j["event_id"] = c.event_id;
  j["model"] = c.model;
  j["segment"] = {c.segment.start(), c.segment.end()};
  if (c.visual_emb) {
    json v = json::array();
    for (Eigen::Index i = 0; i < c.visual_emb->size(); ++i) v.push_back((*c.visual_emb)(i));
    j["visual_emb"] = std::move(v);
  }
  if (c.text_emb) {
    json v = json::array();
    for (Eigen::Index i = 0; i < c.text_emb->size(); ++i) v.push_back((*c.text_emb)(i));
    j["text_emb"] = std::move(v);
  }
  if (c.score) j["score"] = *c.score;
  if (c.gt) j["gt"] = {c.gt->start(), c.gt->end()};
  if (c.chosen) j["chosen"] = true;
  return j.dump();
}

CandidateSegment parse_candidate_line(const std::string& line) {
  const json j = json::parse(line);
  CandidateSegment c;
  c.event_id = j.at("event_id").get<std::string>();
  c.model = j.at("model").get<std::string>();
  c.segment = make_segment(j.at("segment").at(0).get<double>(), j.at("segment").at(1).get<double>());
  auto read_vec = [&j](const char* key) -> std::optional<Eigen::VectorXd> {
    if (!j.contains(key)) return std::nullopt;
    const auto& arr = j.at(key);
    Eigen::VectorXd v(arr.size());
    for (size_t i = 0; i < arr.size(); ++i) v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
    return v;
  };
  c.visual_emb = read_vec("visual_emb");
  c.text_emb = read_vec("text_emb");
  if (j.contains("score")) c.score = j.at("score").get<double>();
  if (j.contains("gt"))
    c.gt = make_segment(j.at("gt").at(0).get<double>(), j.at("gt").at(1).get<double>());
  if (j.contains("chosen")) c.chosen = j.at("chosen").get<bool>();
  return c;
}

void write_candidates(const std::string& path, const std::vector<CandidateSegment>& cs) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_candidates: cannot open " + path);
  for (const auto& c : cs) os << to_jsonl_line(c) << '\n';
  if (!os) throw std::runtime_error("write_candidates: write failed for " + path);
}

std::vector<CandidateSegment> read_candidates(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::invalid_argument("read_candidates: cannot open " + path);
  std::vector<CandidateSegment> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse_candidate_line(line));
    } catch (const std::exception& e) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace timedist
