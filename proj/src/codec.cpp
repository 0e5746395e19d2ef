#include "timedist/codec.hpp"

#include "timedist/serialize.hpp"

#include <cmath>
#include <stdexcept>

namespace timedist {

namespace {

std::vector<int> codec_dims(int in, int out, int layer_count, int width) {
  if (layer_count < 1) throw std::invalid_argument("codec: layer_count must be >= 1");
  std::vector<int> dims;
  dims.push_back(in);
  for (int i = 0; i < layer_count - 1; ++i) dims.push_back(width);
  dims.push_back(out);
  return dims;
}

}  // namespace

TimeDecoder::TimeDecoder(int hidden_dim, const AnchorGrid& grid, int layer_count, int stack_width,
                         Rng& rng)
    : stack_(codec_dims(hidden_dim, 2 * grid.bin_count(), layer_count, stack_width), rng),
      grid_(grid) {}

TimeDecoder::TimeDecoder(DenseStack stack, AnchorGrid grid)
    : stack_(std::move(stack)), grid_(std::move(grid)) {
  if (stack_.output_dim() != 2 * grid_.bin_count())
    throw std::invalid_argument("TimeDecoder: stack output must be 2*(reg_max+1)");
}

TimeEncoder::TimeEncoder(int hidden_dim, const AnchorGrid& grid, double delta, int layer_count,
                         int stack_width, Rng& rng)
    : stack_(codec_dims(2 * grid.bin_count(), hidden_dim, layer_count, stack_width), rng),
      grid_(grid),
      delta_(delta) {
  if (delta <= 0.0) throw std::invalid_argument("TimeEncoder: delta must be positive");
}

TimeEncoder::TimeEncoder(DenseStack stack, AnchorGrid grid, double delta)
    : stack_(std::move(stack)), grid_(std::move(grid)), delta_(delta) {
  if (stack_.input_dim() != 2 * grid_.bin_count())
    throw std::invalid_argument("TimeEncoder: stack input must be 2*(reg_max+1)");
  if (delta <= 0.0) throw std::invalid_argument("TimeEncoder: delta must be positive");
}

Eigen::VectorXd project_gaussian(NormalizedTime t, const AnchorGrid& grid, double delta) {
  if (delta <= 0.0) throw std::invalid_argument("project_gaussian: delta must be positive");
  const double sigma = delta / grid.reg_max();
  Eigen::ArrayXd z = (grid.anchors().array() - t.value()) / sigma;
  Eigen::ArrayXd w = (-0.5 * z.square()).exp();
  return (w / w.sum()).matrix();
}

TimeDistribution decode_distribution(const TimeDecoder& dec, const HiddenEmbedding& h) {
  if (h.values.size() != dec.hidden_dim())
    throw std::invalid_argument("decode_distribution: hidden dim mismatch");
  const Mat logits = dec.stack().forward(h.values.transpose());
  const int bins = dec.grid().bin_count();
  TimeDistribution dist;
  dist.start_probs = softmax_rows(logits.leftCols(bins)).row(0).transpose();
  dist.end_probs = softmax_rows(logits.rightCols(bins)).row(0).transpose();
  return dist;
}

TimeSegment expect_timestamps(const TimeDistribution& dist, const AnchorGrid& grid) {
  if (dist.start_probs.size() != grid.bin_count() || dist.end_probs.size() != grid.bin_count())
    throw std::invalid_argument("expect_timestamps: distribution/grid size mismatch");
  const double st = dist.start_probs.dot(grid.anchors());
  const double et = dist.end_probs.dot(grid.anchors());
  return make_segment(st, et);
}

TimeTokenEmbedding encode_token(const TimeEncoder& enc, const TimeSegment& seg) {
  const int bins = enc.grid().bin_count();
  Mat input(1, 2 * bins);
  input.row(0).head(bins) =
      project_gaussian(NormalizedTime(seg.start()), enc.grid(), enc.delta()).transpose();
  input.row(0).tail(bins) =
      project_gaussian(NormalizedTime(seg.end()), enc.grid(), enc.delta()).transpose();
  return TimeTokenEmbedding{enc.stack().forward(input).row(0).transpose()};
}

TimeTokenEmbedding encode_frame_time(const TimeEncoder& enc, NormalizedTime t) {
  return encode_token(enc, TimeSegment(t, t));
}

Var decoder_logits(Tape& t, const TimeDecoder& dec, Var hidden_row,
                   const std::function<Var(const Mat&)>& bind) {
  return dec.stack().forward(t, hidden_row, bind);
}

Var encode_token(Tape& t, const TimeEncoder& enc, const TimeSegment& seg,
                 const std::function<Var(const Mat&)>& bind) {
  const int bins = enc.grid().bin_count();
  Mat input(1, 2 * bins);
  input.row(0).head(bins) =
      project_gaussian(NormalizedTime(seg.start()), enc.grid(), enc.delta()).transpose();
  input.row(0).tail(bins) =
      project_gaussian(NormalizedTime(seg.end()), enc.grid(), enc.delta()).transpose();
  return enc.stack().forward(t, t.leaf(std::move(input)), bind);
}

SplitLogits split_halves(Tape& t, Var logits, const AnchorGrid& grid) {
  const int bins = grid.bin_count();
  if (t.value(logits).cols() != 2 * bins)
    throw std::invalid_argument("split_halves: logits width mismatch");
  return SplitLogits{slice_cols(t, logits, 0, bins), slice_cols(t, logits, bins, bins)};
}

Var expected_time(Tape& t, Var half_logits, const AnchorGrid& grid) {
  return dot_vec(t, softmax_rows(t, half_logits), grid.anchors());
}

void save_codec(std::ostream& os, const TimeDecoder& dec, const TimeEncoder& enc) {
  if (dec.grid().reg_max() != enc.grid().reg_max())
    throw std::invalid_argument("save_codec: decoder/encoder grids differ");
  snapshot::write_magic(os);
  snapshot::write_tag(os, "DEC");
  snapshot::write_stack(os, dec.stack());
  snapshot::write_tag(os, "ENC");
  snapshot::write_f64(os, enc.delta());
  snapshot::write_stack(os, enc.stack());
}

std::pair<TimeDecoder, TimeEncoder> load_codec(std::istream& is) {
  snapshot::expect_magic(is);
  snapshot::expect_tag(is, "DEC");
  DenseStack dec_stack = snapshot::read_stack(is);
  if (dec_stack.output_dim() % 2 != 0) throw std::runtime_error("load_codec: odd decoder output");
  AnchorGrid grid(dec_stack.output_dim() / 2 - 1);
  snapshot::expect_tag(is, "ENC");
  const double delta = snapshot::read_f64(is);
  DenseStack enc_stack = snapshot::read_stack(is);
  return {TimeDecoder(std::move(dec_stack), grid), TimeEncoder(std::move(enc_stack), grid, delta)};
}

}  // namespace timedist
