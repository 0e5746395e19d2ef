#include "timedist/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace timedist {

namespace {

struct DflBracket {
  int left;           // bin index i with a_i <= y <= a_{i+1}
  double w_left;      // (a_{i+1} - y) * reg_max
  double w_right;     // (y - a_i) * reg_max
};

DflBracket dfl_bracket(double target, const AnchorGrid& grid) {
  const int r = grid.reg_max();
  const double y = std::clamp(target, 0.0, 1.0);
  int i = std::min(static_cast<int>(std::floor(y * r)), r - 1);
  DflBracket b;
  b.left = i;
  b.w_left = (grid.anchor(i + 1) - y) * r;
  b.w_right = (y - grid.anchor(i)) * r;
  return b;
}

// log-softmax of a row, stabilized by max subtraction
Eigen::ArrayXd log_softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  const Eigen::ArrayXd shifted = logits.array() - m;
  return shifted - std::log(shifted.exp().sum());
}

}  // namespace

double dfl(const Eigen::VectorXd& half_logits, double target, const AnchorGrid& grid) {
  if (half_logits.size() != grid.bin_count())
    throw std::invalid_argument("dfl: logits/grid size mismatch");
  const DflBracket b = dfl_bracket(target, grid);
  const Eigen::ArrayXd ls = log_softmax(half_logits);
  return -(b.w_left * ls(b.left) + b.w_right * ls(b.left + 1));
}

Var dfl(Tape& t, Var half_logits, double target, const AnchorGrid& grid) {
  const Mat& x = t.value(half_logits);
  if (x.rows() != 1 || x.cols() != grid.bin_count())
    throw std::invalid_argument("dfl: logits row must be 1 x (reg_max+1)");
  const DflBracket b = dfl_bracket(target, grid);
  const Eigen::ArrayXd ls = log_softmax(x.row(0).transpose());
  Mat out(1, 1);
  out(0, 0) = -(b.w_left * ls(b.left) + b.w_right * ls(b.left + 1));
  Eigen::RowVectorXd probs = ls.exp().matrix().transpose();
  Var v = t.push(std::move(out));
  t.set_back(v, [half_logits, v, b, probs = std::move(probs)](Tape& tp) {
    // d/dlogits of -sum(t_k log S_k) with sum(t)=1 is S - t
    const double g = tp.grad(v)(0, 0);
    tp.grad(half_logits).row(0) += g * probs;
    tp.grad(half_logits)(0, b.left) -= g * b.w_left;
    tp.grad(half_logits)(0, b.left + 1) -= g * b.w_right;
  });
  return v;
}

namespace {

struct GiouEval {
  double loss;
  double d_start;  // w.r.t. the ordered start
  double d_end;    // w.r.t. the ordered end
};

GiouEval giou_eval(double ps, double pe, double gs, double ge) {
  GiouEval ev{0.0, 0.0, 0.0};
  const double inter = std::max(0.0, std::min(pe, ge) - std::max(ps, gs));
  const double uni = (pe - ps) + (ge - gs) - inter;
  const double c = std::max(pe, ge) - std::min(ps, gs);
  if (c <= 0.0) return ev;  // both degenerate and coincident
  double d_inter_s = 0.0, d_inter_e = 0.0;
  if (inter > 0.0) {
    if (ps > gs) d_inter_s = -1.0;
    if (pe < ge) d_inter_e = 1.0;
  }
  const double d_uni_s = -1.0 - d_inter_s;
  const double d_uni_e = 1.0 - d_inter_e;
  const double d_c_s = ps < gs ? -1.0 : 0.0;
  const double d_c_e = pe > ge ? 1.0 : 0.0;
  double iou = 0.0, d_iou_s = 0.0, d_iou_e = 0.0;
  if (uni > 0.0) {
    iou = inter / uni;
    d_iou_s = (d_inter_s * uni - inter * d_uni_s) / (uni * uni);
    d_iou_e = (d_inter_e * uni - inter * d_uni_e) / (uni * uni);
  }
  const double pen = (c - uni) / c;
  const double d_pen_s = -(d_uni_s * c - uni * d_c_s) / (c * c);
  const double d_pen_e = -(d_uni_e * c - uni * d_c_e) / (c * c);
  ev.loss = 1.0 - iou + pen;
  ev.d_start = -d_iou_s + d_pen_s;
  ev.d_end = -d_iou_e + d_pen_e;
  return ev;
}

}  // namespace

double giou_1d(const TimeSegment& pred, const TimeSegment& gt) {
  return giou_eval(pred.start(), pred.end(), gt.start(), gt.end()).loss;
}

Var giou_1d(Tape& t, Var pred_start, Var pred_end, const TimeSegment& gt) {
  if (t.value(pred_start).size() != 1 || t.value(pred_end).size() != 1)
    throw std::invalid_argument("giou_1d: endpoints must be scalars");
  const double a = t.scalar(pred_start);
  const double b = t.scalar(pred_end);
  const bool swapped = a > b;
  const GiouEval ev = giou_eval(std::min(a, b), std::max(a, b), gt.start(), gt.end());
  Mat out(1, 1);
  out(0, 0) = ev.loss;
  Var v = t.push(std::move(out));
  t.set_back(v, [pred_start, pred_end, v, ev, swapped](Tape& tp) {
    const double g = tp.grad(v)(0, 0);
    const double ds = g * ev.d_start;
    const double de = g * ev.d_end;
    tp.grad(pred_start)(0, 0) += swapped ? de : ds;
    tp.grad(pred_end)(0, 0) += swapped ? ds : de;
  });
  return v;
}

NtpLoss ntp_loss(const Mat& logits, const std::vector<int>& target_ids, int ignore_id) {
  Tape t;
  Var l = t.leaf(logits);
  NtpLoss out;
  Var v = mean_cross_entropy(t, l, target_ids, ignore_id, &out.empty);
  out.value = t.scalar(v);
  return out;
}

double total_loss(double ntp, double reg, double dist, const LossWeights& w) {
  w.validate();
  if (!std::isfinite(ntp) || !std::isfinite(reg) || !std::isfinite(dist))
    throw std::invalid_argument("total_loss: non-finite component");
  return w.lambda_ntp * ntp + w.lambda_reg * reg + w.lambda_dist * dist;
}

}  // namespace timedist
