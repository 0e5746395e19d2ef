#pragma once

#include "timedist/core.hpp"
#include "timedist/numerics.hpp"

namespace timedist {

struct LossWeights {
  double lambda_ntp = 1.0;
  double lambda_reg = 1.0;
  double lambda_dist = 1.0;

  void validate() const {
    if (lambda_ntp < 0 || lambda_reg < 0 || lambda_dist < 0)
      throw std::invalid_argument("LossWeights: weights must be non-negative");
  }
};

/// Distribution focal loss for one half: cross-entropy against the two
/// anchors bracketing the target, weighted by linear interpolation
/// (weights scaled by reg_max so they sum to 1). `half_logits` are raw
/// logits; softmax is applied internally. Targets outside [0,1] are clamped.
double dfl(const Eigen::VectorXd& half_logits, double target, const AnchorGrid& grid);
Var dfl(Tape& t, Var half_logits, double target, const AnchorGrid& grid);

/// 1-D generalized IoU loss: 1 - IoU + (|C| - |union|)/|C| with C the
/// smallest enclosing interval. Zero iff the segments coincide (two
/// coincident points also score zero, by convention). Range [0, 2).
double giou_1d(const TimeSegment& pred, const TimeSegment& gt);

/// Differentiable form over raw predicted endpoints; a reversed pair is
/// ordered internally with gradients routed accordingly.
Var giou_1d(Tape& t, Var pred_start, Var pred_end, const TimeSegment& gt);

struct NtpLoss {
  double value = 0.0;
  bool empty = false;  // every position ignored
};

/// Mean next-token cross-entropy over positions, skipping ignore_id labels.
NtpLoss ntp_loss(const Mat& logits, const std::vector<int>& target_ids, int ignore_id);

double total_loss(double ntp, double reg, double dist, const LossWeights& w);

}  // namespace timedist
