#include "timedist/ensemble.hpp"

#include "timedist/numerics.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

using namespace timedist;

namespace {

Eigen::VectorXd vec3(double a, double b, double c) {
  Eigen::VectorXd v(3);
  v << a, b, c;
  return v;
}

CandidateSegment cand(const std::string& event, const std::string& model, double s, double e,
                      double score) {
  CandidateSegment c;
  c.event_id = event;
  c.model = model;
  c.segment = make_segment(s, e);
  c.score = score;
  return c;
}

// score = IoU against gt plus per-model noise; the oracle-scorer used for
// end-to-end pipeline checks
std::vector<CandidateSegment> oracle_scored_set(uint64_t seed, int events, double noise) {
  Rng rng(seed);
  std::vector<CandidateSegment> out;
  const std::vector<std::string> models = {"alpha", "beta", "gamma"};
  for (int e = 0; e < events; ++e) {
    const double s = rng.uniform(0.0, 0.7);
    const TimeSegment gt = make_segment(s, s + rng.uniform(0.1, 0.3));
    for (size_t m = 0; m < models.size(); ++m) {
      const double js = std::clamp(gt.start() + rng.normal(0.0, 0.05 * (m + 1)), 0.0, 1.0);
      const double je = std::clamp(gt.end() + rng.normal(0.0, 0.05 * (m + 1)), 0.0, 1.0);
      CandidateSegment c;
      c.event_id = "e" + std::to_string(e);
      c.model = models[m];
      c.segment = make_segment(std::min(js, je), std::max(js, je));
      c.gt = gt;
      c.score = segment_iou(c.segment, gt) + rng.normal(0.0, noise);
      out.push_back(c);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("cosine score basics") {
  CHECK(cosine_score(vec3(1, 2, 3), vec3(1, 2, 3)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine_score(vec3(1, 0, 0), vec3(0, 1, 0)) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(cosine_score(vec3(1, 2, 3), vec3(-1, -2, -3)) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("cosine score is scale-invariant for positive scalings") {
  Rng rng(5);
  for (int it = 0; it < 100; ++it) {
    Eigen::VectorXd u(4), v(4);
    for (int i = 0; i < 4; ++i) {
      u(i) = rng.normal();
      v(i) = rng.normal();
    }
    if (u.norm() == 0 || v.norm() == 0) continue;
    const double alpha = rng.uniform(0.1, 10.0);
    const double beta = rng.uniform(0.1, 10.0);
    CHECK(cosine_score(alpha * u, beta * v) == doctest::Approx(cosine_score(u, v)).epsilon(1e-12));
  }
}

TEST_CASE("zero-norm vectors are rejected") {
  CHECK_THROWS_AS(cosine_score(vec3(0, 0, 0), vec3(1, 2, 3)), std::invalid_argument);
  CHECK_THROWS_AS(cosine_score(vec3(1, 2, 3), Eigen::VectorXd::Zero(3)), std::invalid_argument);
}

TEST_CASE("ensure_scores fills from embeddings and rejects bare candidates") {
  std::vector<CandidateSegment> cs(1);
  cs[0].event_id = "e";
  cs[0].model = "m";
  cs[0].segment = make_segment(0.1, 0.2);
  CHECK_THROWS_AS(ensure_scores(cs), std::invalid_argument);
  cs[0].visual_emb = vec3(1, 0, 0);
  cs[0].text_emb = vec3(1, 0, 0);
  ensure_scores(cs);
  CHECK(*cs[0].score == doctest::Approx(1.0));
}

TEST_CASE("a single candidate wins its event") {
  std::vector<CandidateSegment> cs = {cand("e1", "alpha", 0.2, 0.4, 0.3)};
  const auto winners = select_ensemble(cs);
  REQUIRE(winners.size() == 1);
  CHECK(winners[0].model == "alpha");
  CHECK(cs[0].chosen);
}

TEST_CASE("argmax picks the best score per event") {
  std::vector<CandidateSegment> cs = {cand("e1", "A", 0.1, 0.2, 0.7),
                                      cand("e1", "B", 0.3, 0.4, 0.9),
                                      cand("e1", "C", 0.5, 0.6, 0.4)};
  const auto winners = select_ensemble(cs);
  REQUIRE(winners.size() == 1);
  CHECK(winners[0].model == "B");
}

TEST_CASE("equal scores break by the priority list") {
  std::vector<CandidateSegment> cs = {cand("e1", "C", 0.5, 0.6, 0.5),
                                      cand("e1", "A", 0.1, 0.2, 0.5),
                                      cand("e1", "B", 0.3, 0.4, 0.5)};
  const auto winners = select_ensemble(cs, {}, {"A", "B", "C"});
  CHECK(winners[0].model == "A");
  // without a list the lexicographic order decides
  for (auto& c : cs) c.chosen = false;
  const auto lex = select_ensemble(cs);
  CHECK(lex[0].model == "A");
}

TEST_CASE("same model and score breaks by earlier start") {
  std::vector<CandidateSegment> cs = {cand("e1", "A", 0.5, 0.6, 0.5),
                                      cand("e1", "A", 0.2, 0.6, 0.5)};
  const auto winners = select_ensemble(cs);
  CHECK(winners[0].segment.start() == 0.2);
}

TEST_CASE("offsets shift scores before the argmax") {
  std::vector<CandidateSegment> cs = {cand("e1", "A", 0.1, 0.2, 0.6),
                                      cand("e1", "B", 0.3, 0.4, 0.5)};
  const auto winners = select_ensemble(cs, {{"B", 0.2}});
  CHECK(winners[0].model == "B");
}

TEST_CASE("selection is invariant under monotone score transformations") {
  Rng rng(9);
  for (uint64_t seed = 0; seed < 20; ++seed) {
    auto cs = oracle_scored_set(seed, 6, 0.02);
    auto winners = select_ensemble(cs);
    auto transformed = cs;
    for (auto& c : transformed) c.score = std::exp(3.0 * *c.score) + 1.5;  // strictly increasing
    auto winners2 = select_ensemble(transformed);
    REQUIRE(winners.size() == winners2.size());
    for (size_t i = 0; i < winners.size(); ++i) {
      CHECK(winners[i].model == winners2[i].model);
      CHECK(winners[i].segment == winners2[i].segment);
    }
  }
}

TEST_CASE("calibration of perfect candidates collapses to one bin") {
  std::vector<CandidateSegment> cs;
  for (int i = 0; i < 10; ++i) {
    CandidateSegment c = cand("e" + std::to_string(i), "m", 0.2, 0.6, 1.0);
    c.gt = make_segment(0.2, 0.6);
    cs.push_back(c);
  }
  const auto curve = calibration_curve(cs);
  REQUIRE(curve.size() == 1);
  CHECK(curve[0].center == 1.0);
  CHECK(curve[0].mean_iou == 1.0);
  CHECK(curve[0].count == 10);
}

TEST_CASE("calibration where score equals IoU stays inside bin bounds") {
  Rng rng(31);
  std::vector<CandidateSegment> cs;
  for (int i = 0; i < 400; ++i) {
    const TimeSegment gt = make_segment(0.3, 0.7);
    const double shift = rng.uniform(-0.3, 0.3);
    CandidateSegment c;
    c.event_id = "e" + std::to_string(i);
    c.model = "m";
    c.segment = make_segment(std::clamp(0.3 + shift, 0.0, 1.0), std::clamp(0.7 + shift, 0.0, 1.0));
    c.gt = gt;
    c.score = segment_iou(c.segment, gt);
    cs.push_back(c);
  }
  const auto curve = calibration_curve(cs);
  CHECK(curve.size() >= 3);
  for (const auto& bin : curve) {
    // per-bin mean IoU equals the bin's mean score, so it stays within the bin
    CHECK(bin.mean_iou >= bin.center - 0.05);
    CHECK(bin.mean_iou <= bin.center + 0.05);
  }
}

TEST_CASE("oracle-scored candidates calibrate with positive rank correlation") {
  const auto cs = oracle_scored_set(123, 300, 0.05);
  const auto curve = calibration_curve(cs);
  REQUIRE(curve.size() >= 3);
  std::vector<double> centers, mious;
  for (const auto& bin : curve) {
    centers.push_back(bin.center);
    mious.push_back(bin.mean_iou);
  }
  CHECK(spearman_correlation(centers, mious) > 0.0);
}

TEST_CASE("identical populations estimate all-zero offsets") {
  auto cs = oracle_scored_set(7, 40, 0.01);  // 120 candidates, 40 per model
  const auto offsets = estimate_offsets(cs);
  for (const auto& [model, off] : offsets) CHECK(off == 0.0);
}

TEST_CASE("a shifted scorer is detected with the right sign") {
  auto cs = oracle_scored_set(11, 60, 0.01);
  for (auto& c : cs)
    if (c.model == "beta") c.score = *c.score + 0.1;
  const auto offsets = estimate_offsets(cs);
  CHECK(std::abs(offsets.at("alpha")) < 0.02);
  CHECK(std::abs(offsets.at("beta") + 0.1) < 0.02);
}

TEST_CASE("offset estimation rejects undersampled models") {
  auto cs = oracle_scored_set(13, 10, 0.01);  // only 10 per model
  CHECK_THROWS_AS(estimate_offsets(cs), std::invalid_argument);
}

TEST_CASE("ensemble beats the best individual model on oracle scores") {
  int strictly_better = 0;
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    auto cs = oracle_scored_set(seed, 80, 0.05);
    const auto winners = select_ensemble(cs);
    double ens = 0.0;
    std::map<std::string, double> per_model;
    std::map<std::string, int> counts;
    for (const auto& c : cs) {
      per_model[c.model] += segment_iou(c.segment, *c.gt);
      counts[c.model] += 1;
    }
    for (auto& [m, v] : per_model) v /= counts[m];
    for (const auto& w : winners) ens += segment_iou(w.segment, *w.gt);
    ens /= winners.size();
    double best = 0.0;
    for (const auto& [m, v] : per_model) best = std::max(best, v);
    CHECK(ens >= best - 0.01);
    if (ens > best) ++strictly_better;
  }
  CHECK(strictly_better >= 15);
}

TEST_CASE("candidate JSONL round-trips with optional fields") {
  CandidateSegment c = cand("e9", "beta", 0.25, 0.75, 0.5);
  c.visual_emb = vec3(0.1, 0.2, 0.3);
  c.text_emb = vec3(0.3, 0.2, 0.1);
  c.gt = make_segment(0.2, 0.8);
  c.chosen = true;
  const std::string line = to_jsonl_line(c);
  const CandidateSegment back = parse_candidate_line(line);
  CHECK(back.event_id == c.event_id);
  CHECK(back.model == c.model);
  CHECK(back.segment == c.segment);
  CHECK(*back.score == *c.score);
  CHECK((*back.visual_emb - *c.visual_emb).cwiseAbs().maxCoeff() == 0.0);
  CHECK(*back.gt == *c.gt);
  CHECK(back.chosen);
  CHECK(to_jsonl_line(back) == line);
}

TEST_CASE("candidate files round-trip on disk") {
  const auto cs = oracle_scored_set(3, 5, 0.01);
  const std::string path = "test_ensemble_cands.jsonl";
  write_candidates(path, cs);
  const auto back = read_candidates(path);
  REQUIRE(back.size() == cs.size());
  for (size_t i = 0; i < cs.size(); ++i) CHECK(to_jsonl_line(back[i]) == to_jsonl_line(cs[i]));
  std::remove(path.c_str());
}
