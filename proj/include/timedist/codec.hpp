#pragma once

#include "timedist/core.hpp"
#include "timedist/numerics.hpp"

#include <iosfwd>

namespace timedist {

/// Maps a d-dimensional hidden state to paired start/end distributions over
/// the anchor bins (dense stack into 2*(reg_max+1) logits, softmax per half).
class TimeDecoder {
 public:
  TimeDecoder(int hidden_dim, const AnchorGrid& grid, int layer_count, int stack_width, Rng& rng);
  TimeDecoder(DenseStack stack, AnchorGrid grid);

  const AnchorGrid& grid() const { return grid_; }
  DenseStack& stack() { return stack_; }
  const DenseStack& stack() const { return stack_; }
  int hidden_dim() const { return stack_.input_dim(); }

 private:
  DenseStack stack_;
  AnchorGrid grid_;
};

/// Inverse direction: a segment becomes two discretized Gaussians over the
/// anchors, concatenated and projected to a d-dimensional token embedding.
class TimeEncoder {
 public:
  TimeEncoder(int hidden_dim, const AnchorGrid& grid, double delta, int layer_count,
              int stack_width, Rng& rng);
  TimeEncoder(DenseStack stack, AnchorGrid grid, double delta);

  const AnchorGrid& grid() const { return grid_; }
  double delta() const { return delta_; }
  DenseStack& stack() { return stack_; }
  const DenseStack& stack() const { return stack_; }
  int hidden_dim() const { return stack_.output_dim(); }

 private:
  DenseStack stack_;
  AnchorGrid grid_;
  double delta_;
};

/// Gaussian density with mean t and sigma = delta/reg_max evaluated at every
/// anchor, normalized to sum 1. delta is expressed in bin widths.
Eigen::VectorXd project_gaussian(NormalizedTime t, const AnchorGrid& grid, double delta);

TimeDistribution decode_distribution(const TimeDecoder& dec, const HiddenEmbedding& h);

/// Anchor-weighted expectation of both halves, clamped/swapped into a
/// segment.
TimeSegment expect_timestamps(const TimeDistribution& dist, const AnchorGrid& grid);

TimeTokenEmbedding encode_token(const TimeEncoder& enc, const TimeSegment& seg);

/// Instantaneous position: encode_token with start = end = t.
TimeTokenEmbedding encode_frame_time(const TimeEncoder& enc, NormalizedTime t);

// Tape-tracked variants used during training. Logits are returned unsplit
// (1 x 2*(reg_max+1)); helpers below carve out the halves.
Var decoder_logits(Tape& t, const TimeDecoder& dec, Var hidden_row,
                   const std::function<Var(const Mat&)>& bind);
Var encode_token(Tape& t, const TimeEncoder& enc, const TimeSegment& seg,
                 const std::function<Var(const Mat&)>& bind);

struct SplitLogits {
  Var start;  // 1 x (reg_max+1)
  Var end;
};
SplitLogits split_halves(Tape& t, Var logits, const AnchorGrid& grid);

/// Expectation decode of one softmaxed half: dot(softmax(logits), anchors).
Var expected_time(Tape& t, Var half_logits, const AnchorGrid& grid);

// Snapshot IO: magic, then a "DEC\0" section (stack) and an "ENC\0" section
// (delta as f64, then stack).
void save_codec(std::ostream& os, const TimeDecoder& dec, const TimeEncoder& enc);
std::pair<TimeDecoder, TimeEncoder> load_codec(std::istream& is);

}  // namespace timedist
