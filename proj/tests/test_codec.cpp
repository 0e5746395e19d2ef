#include "timedist/codec.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace timedist;

namespace {

// Independent expectation of a discretized, normalized Gaussian: direct sums
// over the anchors, no library calls.
double naive_gaussian_expectation(double t, int reg_max, double delta) {
  const double sigma = delta / reg_max;
  double norm = 0.0, acc = 0.0;
  for (int i = 0; i <= reg_max; ++i) {
    const double a = static_cast<double>(i) / reg_max;
    const double w = std::exp(-0.5 * (a - t) * (a - t) / (sigma * sigma));
    norm += w;
    acc += w * a;
  }
  return acc / norm;
}

HiddenEmbedding random_hidden(int d, uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v(i) = rng.uniform(-1.5, 1.5);
  return HiddenEmbedding{v};
}

}  // namespace

TEST_CASE("zero-weight decoder emits uniform halves") {
  Rng rng(1);
  const AnchorGrid grid(32);
  TimeDecoder dec(8, grid, 3, 16, rng);
  for (auto& layer : dec.stack().layers()) {
    layer.w.setZero();
    layer.b.setZero();
  }
  const TimeDistribution dist = decode_distribution(dec, random_hidden(8, 3));
  dist.validate();
  for (int i = 0; i <= 32; ++i) {
    CHECK(dist.start_probs(i) == doctest::Approx(1.0 / 33).epsilon(1e-14));
    CHECK(dist.end_probs(i) == doctest::Approx(1.0 / 33).epsilon(1e-14));
  }
}

TEST_CASE("saturated logit turns into a one-hot bin") {
  Rng rng(1);
  const AnchorGrid grid(8);
  TimeDecoder dec(4, grid, 1, 4, rng);
  dec.stack().layers()[0].w.setZero();
  dec.stack().layers()[0].b.setZero();
  dec.stack().layers()[0].b(0, 5) = 1000.0;       // start half, bin 5
  dec.stack().layers()[0].b(0, 9 + 2) = 1000.0;   // end half, bin 2
  const TimeDistribution dist = decode_distribution(dec, random_hidden(4, 9));
  CHECK(dist.start_probs(5) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(dist.end_probs(2) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("random decoder halves are valid distributions and match the tape path") {
  Rng rng(7);
  const AnchorGrid grid(32);
  TimeDecoder dec(16, grid, 3, 24, rng);
  const HiddenEmbedding h = random_hidden(16, 21);
  const TimeDistribution dist = decode_distribution(dec, h);
  CHECK(std::abs(dist.start_probs.sum() - 1.0) < 1e-12);
  CHECK(std::abs(dist.end_probs.sum() - 1.0) < 1e-12);

  Tape t;
  ParamBinding bind(t);
  Var logits = decoder_logits(t, dec, t.leaf(h.values.transpose()),
                              [&bind](const Mat& m) { return bind(m); });
  SplitLogits halves = split_halves(t, logits, grid);
  Var st = expected_time(t, halves.start, grid);
  Var et = expected_time(t, halves.end, grid);
  const TimeSegment seg = expect_timestamps(dist, grid);
  CHECK(t.scalar(st) == doctest::Approx(std::min(seg.start(), seg.end())).epsilon(1e-15));
  CHECK(t.scalar(et) == doctest::Approx(std::max(seg.start(), seg.end())).epsilon(1e-15));
}

TEST_CASE("expectation decode of exact one-hots recovers every anchor") {
  for (int reg_max : {16, 32, 64}) {
    const AnchorGrid grid(reg_max);
    for (int k = 0; k <= reg_max; ++k) {
      TimeDistribution dist;
      dist.start_probs = Eigen::VectorXd::Zero(reg_max + 1);
      dist.end_probs = Eigen::VectorXd::Zero(reg_max + 1);
      dist.start_probs(k) = 1.0;
      dist.end_probs(k) = 1.0;
      const TimeSegment seg = expect_timestamps(dist, grid);
      CHECK(seg.start() == grid.anchor(k));
      CHECK(seg.end() == grid.anchor(k));
    }
  }
}

TEST_CASE("uniform distribution decodes to the midpoint") {
  const AnchorGrid grid(32);
  TimeDistribution dist;
  dist.start_probs = Eigen::VectorXd::Constant(33, 1.0 / 33);
  dist.end_probs = Eigen::VectorXd::Constant(33, 1.0 / 33);
  const TimeSegment seg = expect_timestamps(dist, grid);
  CHECK(seg.start() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(seg.end() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("half mass on each extreme bin decodes to the midpoint") {
  const AnchorGrid grid(32);
  TimeDistribution dist;
  dist.start_probs = Eigen::VectorXd::Zero(33);
  dist.start_probs(0) = 0.5;
  dist.start_probs(32) = 0.5;
  dist.end_probs = Eigen::VectorXd::Zero(33);
  dist.end_probs(16) = 1.0;
  const TimeSegment seg = expect_timestamps(dist, grid);
  CHECK(seg.start() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("gaussian projection is symmetric about an anchor-centered mean") {
  const AnchorGrid grid(32);
  const Eigen::VectorXd p = project_gaussian(NormalizedTime(0.5), grid, 1.0);
  CHECK(std::abs(p.sum() - 1.0) < 1e-12);
  int argmax = 0;
  p.maxCoeff(&argmax);
  CHECK(argmax == 16);
  for (int i = 0; i <= 32; ++i) CHECK(p(i) == doctest::Approx(p(32 - i)).epsilon(1e-12));
}

TEST_CASE("small-delta projection round-trips interior anchors tightly") {
  const AnchorGrid grid(32);
  for (int k = 4; k <= 28; ++k) {
    const double t = grid.anchor(k);
    const Eigen::VectorXd p = project_gaussian(NormalizedTime(t), grid, 0.25);
    const double back = p.dot(grid.anchors());
    CHECK(back == doctest::Approx(t).epsilon(1e-6));
    CHECK(back == doctest::Approx(naive_gaussian_expectation(t, 32, 0.25)).epsilon(1e-12));
  }
}

TEST_CASE("huge delta flattens the projection toward uniform") {
  const AnchorGrid grid(32);
  const Eigen::VectorXd p = project_gaussian(NormalizedTime(0.2), grid, 1000.0);
  const double back = p.dot(grid.anchors());
  CHECK(std::abs(back - 0.5) < 1e-3);
  for (int i = 0; i <= 32; ++i) CHECK(p(i) == doctest::Approx(1.0 / 33).epsilon(1e-2));
}

TEST_CASE("round-trip bias stays below half a bin for interior times") {
  const AnchorGrid grid(32);
  const double bound = 1.0 / (2 * 32);
  for (double delta : {0.5, 1.0, 2.0}) {
    const double sigma = delta / 32;
    const double lo = 2 * sigma, hi = 1.0 - 2 * sigma;
    for (int i = 0; i <= 200; ++i) {
      const double t = lo + (hi - lo) * i / 200.0;
      const Eigen::VectorXd p = project_gaussian(NormalizedTime(t), grid, delta);
      const double back = p.dot(grid.anchors());
      CAPTURE(delta);
      CAPTURE(t);
      CHECK(std::abs(back - t) <= bound);
    }
  }
}

TEST_CASE("zero-weight encoder returns its bias for any segment") {
  Rng rng(2);
  const AnchorGrid grid(16);
  TimeEncoder enc(6, grid, 1.0, 2, 8, rng);
  for (auto& layer : enc.stack().layers()) layer.w.setZero();
  enc.stack().layers()[0].b.setZero();
  enc.stack().layers()[1].b << 1, 2, 3, 4, 5, 6;
  const TimeTokenEmbedding a = encode_token(enc, make_segment(0.1, 0.4));
  const TimeTokenEmbedding b = encode_token(enc, make_segment(0.7, 0.9));
  CHECK((a.values - b.values).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.values(0) == 1.0);
  CHECK(a.values(5) == 6.0);
}

TEST_CASE("encode_token is pure: identical inputs give bitwise-identical output") {
  Rng rng(7);
  const AnchorGrid grid(32);
  TimeEncoder enc(12, grid, 1.0, 3, 16, rng);
  const TimeSegment seg = make_segment(0.25, 0.75);
  const TimeTokenEmbedding a = encode_token(enc, seg);
  const TimeTokenEmbedding b = encode_token(enc, seg);
  CHECK((a.values - b.values).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encoder output matches an independent projection + dense trace") {
  Rng rng(7);
  const AnchorGrid grid(8);
  TimeEncoder enc(5, grid, 1.0, 2, 6, rng);
  const TimeSegment seg = make_segment(0.25, 0.75);
  // independent re-implementation: naive gaussian weights + naive matmul
  const int bins = grid.bin_count();
  std::vector<double> input(2 * bins);
  for (int half = 0; half < 2; ++half) {
    const double mean = half == 0 ? seg.start() : seg.end();
    const double sigma = 1.0 / grid.reg_max();
    double norm = 0.0;
    for (int i = 0; i < bins; ++i) {
      const double a = grid.anchor(i);
      input[half * bins + i] = std::exp(-0.5 * (a - mean) * (a - mean) / (sigma * sigma));
      norm += input[half * bins + i];
    }
    for (int i = 0; i < bins; ++i) input[half * bins + i] /= norm;
  }
  std::vector<double> h = input;
  const auto& layers = enc.stack().layers();
  for (size_t li = 0; li < layers.size(); ++li) {
    std::vector<double> z(static_cast<size_t>(layers[li].w.cols()));
    for (Eigen::Index c = 0; c < layers[li].w.cols(); ++c) {
      double acc = layers[li].b(0, c);
      for (Eigen::Index r = 0; r < layers[li].w.rows(); ++r)
        acc += h[static_cast<size_t>(r)] * layers[li].w(r, c);
      z[static_cast<size_t>(c)] = acc;
    }
    if (li + 1 < layers.size())
      for (auto& v : z) v = std::max(v, 0.0);
    h = std::move(z);
  }
  const TimeTokenEmbedding got = encode_token(enc, seg);
  REQUIRE(got.values.size() == 5);
  for (int i = 0; i < 5; ++i)
    CHECK(got.values(i) == doctest::Approx(h[static_cast<size_t>(i)]).epsilon(1e-14));
}

TEST_CASE("frame-time encoding equals the degenerate segment encoding") {
  Rng rng(4);
  const AnchorGrid grid(32);
  TimeEncoder enc(8, grid, 1.0, 3, 12, rng);
  for (double t : {0.0, 0.5, 1.0}) {
    const TimeTokenEmbedding a = encode_frame_time(enc, NormalizedTime(t));
    const TimeTokenEmbedding b = encode_token(enc, make_segment(t, t));
    CHECK((a.values - b.values).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("instantaneous encoding uses identical halves internally") {
  const AnchorGrid grid(32);
  const Eigen::VectorXd h0 = project_gaussian(NormalizedTime(0.5), grid, 1.0);
  const TimeSegment seg = make_segment(0.5, 0.5);
  const Eigen::VectorXd s = project_gaussian(NormalizedTime(seg.start()), grid, 1.0);
  const Eigen::VectorXd e = project_gaussian(NormalizedTime(seg.end()), grid, 1.0);
  CHECK((s - e).cwiseAbs().maxCoeff() == 0.0);
  CHECK((s - h0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("codec snapshot round-trips through the section-tagged format") {
  Rng rng(31);
  const AnchorGrid grid(16);
  TimeDecoder dec(10, grid, 3, 12, rng);
  TimeEncoder enc(10, grid, 0.75, 3, 12, rng);
  std::ostringstream os(std::ios::binary);
  save_codec(os, dec, enc);
  std::istringstream is(os.str(), std::ios::binary);
  auto [dec2, enc2] = load_codec(is);
  CHECK(dec2.grid().reg_max() == 16);
  CHECK(enc2.delta() == 0.75);
  const HiddenEmbedding h = random_hidden(10, 5);
  const TimeDistribution a = decode_distribution(dec, h);
  const TimeDistribution b = decode_distribution(dec2, h);
  CHECK((a.start_probs - b.start_probs).cwiseAbs().maxCoeff() == 0.0);
  const TimeTokenEmbedding ta = encode_token(enc, make_segment(0.2, 0.8));
  const TimeTokenEmbedding tb = encode_token(enc2, make_segment(0.2, 0.8));
  CHECK((ta.values - tb.values).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("expectation decode always lands in the unit square") {
  Rng rng(88);
  const AnchorGrid grid(32);
  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd s(33), e(33);
    for (int i = 0; i <= 32; ++i) {
      s(i) = rng.uniform();
      e(i) = rng.uniform();
    }
    s /= s.sum();
    e /= e.sum();
    const TimeSegment seg = expect_timestamps(TimeDistribution{s, e}, grid);
    CHECK(seg.start() >= 0.0);
    CHECK(seg.end() <= 1.0);
    CHECK(seg.start() <= seg.end());
  }
}

TEST_CASE("dimension mismatches are rejected") {
  Rng rng(1);
  const AnchorGrid grid(8);
  TimeDecoder dec(6, grid, 2, 8, rng);
  CHECK_THROWS_AS(decode_distribution(dec, random_hidden(5, 1)), std::invalid_argument);
  CHECK_THROWS_AS(project_gaussian(NormalizedTime(0.5), grid, 0.0), std::invalid_argument);
}
