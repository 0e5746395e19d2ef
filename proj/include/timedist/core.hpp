#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace timedist {

/// A point on the video timeline expressed as a fraction of the total
/// duration. Always in [0, 1].
class NormalizedTime {
 public:
  NormalizedTime() = default;
  explicit NormalizedTime(double v) : value_(v) {
    if (!std::isfinite(v)) throw std::invalid_argument("NormalizedTime: non-finite value");
    if (v < 0.0 || v > 1.0) throw std::invalid_argument("NormalizedTime: value outside [0,1]");
  }
  double value() const { return value_; }

  friend bool operator==(NormalizedTime a, NormalizedTime b) { return a.value_ == b.value_; }

 private:
  double value_ = 0.0;
};

/// A (start, end) span on the normalized timeline with start <= end.
class TimeSegment {
 public:
  TimeSegment() = default;
  TimeSegment(NormalizedTime start, NormalizedTime end) : start_(start), end_(end) {
    if (start.value() > end.value()) throw std::invalid_argument("TimeSegment: start > end");
  }

  double start() const { return start_.value(); }
  double end() const { return end_.value(); }
  double length() const { return end_.value() - start_.value(); }
  bool degenerate() const { return start_.value() == end_.value(); }

  friend bool operator==(const TimeSegment& a, const TimeSegment& b) {
    return a.start() == b.start() && a.end() == b.end();
  }

 private:
  NormalizedTime start_{};
  NormalizedTime end_{};
};

/// Builds a segment from raw endpoints. Out-of-range values are clamped to
/// [0,1] and a reversed pair is swapped, so every finite input yields a
/// valid segment. Non-finite input is rejected.
inline TimeSegment make_segment(double start, double end) {
  if (!std::isfinite(start) || !std::isfinite(end))
    throw std::invalid_argument("make_segment: non-finite endpoint");
  double s = std::clamp(start, 0.0, 1.0);
  double e = std::clamp(end, 0.0, 1.0);
  if (s > e) std::swap(s, e);
  return TimeSegment(NormalizedTime(s), NormalizedTime(e));
}

/// Intersection-over-union of two segments. Two coincident zero-length
/// segments count as a full match (IoU 1); a zero-length segment anywhere
/// else contributes no overlap (IoU 0).
inline double segment_iou(const TimeSegment& a, const TimeSegment& b) {
  const double inter = std::max(0.0, std::min(a.end(), b.end()) - std::max(a.start(), b.start()));
  const double uni = a.length() + b.length() - inter;
  if (uni <= 0.0) return a.start() == b.start() ? 1.0 : 0.0;
  return inter / uni;
}

/// Fixed anchor points a_i = i / reg_max partitioning the normalized time
/// axis into reg_max intervals (reg_max + 1 anchors).
class AnchorGrid {
 public:
  explicit AnchorGrid(int reg_max) : reg_max_(reg_max) {
    if (reg_max < 1) throw std::invalid_argument("AnchorGrid: reg_max must be positive");
    anchors_.resize(reg_max + 1);
    for (int i = 0; i <= reg_max; ++i) anchors_[i] = static_cast<double>(i) / reg_max;
  }

  int reg_max() const { return reg_max_; }
  int bin_count() const { return reg_max_ + 1; }
  const Eigen::VectorXd& anchors() const { return anchors_; }
  double anchor(int i) const { return anchors_[i]; }

 private:
  int reg_max_;
  Eigen::VectorXd anchors_;
};

/// Paired start/end probability vectors over the anchor bins.
struct TimeDistribution {
  Eigen::VectorXd start_probs;
  Eigen::VectorXd end_probs;

  void validate() const {
    auto check = [](const Eigen::VectorXd& p, const char* which) {
      if (p.size() == 0) throw std::invalid_argument(std::string("TimeDistribution: empty ") + which);
      if ((p.array() < 0.0).any())
        throw std::invalid_argument(std::string("TimeDistribution: negative entry in ") + which);
      if (std::abs(p.sum() - 1.0) > 1e-9)
        throw std::invalid_argument(std::string("TimeDistribution: ") + which + " does not sum to 1");
    };
    check(start_probs, "start_probs");
    check(end_probs, "end_probs");
    if (start_probs.size() != end_probs.size())
      throw std::invalid_argument("TimeDistribution: halves differ in size");
  }
};

/// d-dimensional hidden state extracted from the sequence core.
struct HiddenEmbedding {
  Eigen::VectorXd values;
};

/// d-dimensional embedding standing in for a time token at the model input.
struct TimeTokenEmbedding {
  Eigen::VectorXd values;
};

}  // namespace timedist
