#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace timedist {

using Mat = Eigen::MatrixXd;

/// Deterministic RNG used everywhere randomness is needed. Wraps a 64-bit
/// Mersenne twister with hand-rolled draws so streams are stable across
/// standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi);

  /// Standard normal via Box-Muller (no cached spare).
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 gen_;
};

// ---------------------------------------------------------------------------
// Reverse-mode tape
// ---------------------------------------------------------------------------

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Records a forward computation as a sequence of nodes with backward
/// closures; backward() replays them in reverse. One tape serves one
/// forward/backward pair; call reset() (or use a fresh tape) to start over.
class Tape {
 public:
  Var leaf(Mat value);

  Var push(Mat value);
  void set_back(Var v, std::function<void(Tape&)> back);

  const Mat& value(Var v) const { return values_[v.id]; }
  Mat& grad(Var v) { return grads_[v.id]; }
  const Mat& grad(Var v) const { return grads_[v.id]; }

  double scalar(Var v) const { return values_[v.id](0, 0); }

  /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. The loss
  /// node must be 1x1. A second call without reset() is rejected.
  void backward(Var loss);

  void reset();

  int size() const { return static_cast<int>(values_.size()); }
  bool backward_done() const { return backward_done_; }

  /// Smallest |pre-activation| seen by any relu on this tape; used by the
  /// finite-difference checker to skip evaluations next to a kink.
  double min_abs_relu_input() const { return min_abs_relu_input_; }
  void note_relu_input(double min_abs);

 private:
  std::vector<Mat> values_;
  std::vector<Mat> grads_;
  std::vector<std::function<void(Tape&)>> backs_;
  bool backward_done_ = false;
  double min_abs_relu_input_ = std::numeric_limits<double>::infinity();
};

// Tape ops. All are free functions: value-in, Var-out, gradients wired up
// behind the scenes.
Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var add_rowvec(Tape& t, Var a, Var row);
Var mul_rowvec(Tape& t, Var a, Var row);
Var add_const(Tape& t, Var a, const Mat& c);
Var scale(Tape& t, Var a, double s);
Var relu(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
Var softmax_rows(Tape& t, Var a);
Var rms_norm_rows(Tape& t, Var a, Var gain, double eps = 1e-6);
Var slice_cols(Tape& t, Var a, int col0, int ncols);
Var slice_rows(Tape& t, Var a, int row0, int nrows);
Var pick_row(Tape& t, Var a, int row);
Var transpose(Tape& t, Var a);
Var vstack(Tape& t, const std::vector<Var>& parts);
Var sum_all(Tape& t, Var a);
Var weighted_sum(Tape& t, const std::vector<Var>& scalars, const std::vector<double>& weights);
Var dot_vec(Tape& t, Var row, const Eigen::VectorXd& v);

/// Mean cross-entropy over rows of `logits` against `targets`, skipping
/// positions whose target equals `ignore_id`. If every position is ignored
/// the loss is 0 and *empty_flag (when given) is set.
Var mean_cross_entropy(Tape& t, Var logits, const std::vector<int>& targets, int ignore_id,
                       bool* empty_flag = nullptr);

// ---------------------------------------------------------------------------
// Plain (tape-free) kernels
// ---------------------------------------------------------------------------

/// Row-stabilized softmax; every output row sums to 1 within 1e-12.
Mat softmax_rows(const Mat& x);

// ---------------------------------------------------------------------------
// Dense stacks
// ---------------------------------------------------------------------------

struct DenseLayer {
  Mat w;  // in x out
  Mat b;  // 1 x out
};

/// A stack of fully connected layers with relu between them and no
/// activation after the last.
class DenseStack {
 public:
  DenseStack() = default;

  /// dims = {in, hidden..., out}; weights drawn uniform in
  /// +-sqrt(6/(fan_in+fan_out)), biases zero.
  DenseStack(const std::vector<int>& dims, Rng& rng);

  int layer_count() const { return static_cast<int>(layers_.size()); }
  int input_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().w.rows()); }
  int output_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().w.cols()); }
  std::vector<int> dims() const;

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  /// Pure evaluation; input rows are independent samples.
  Mat forward(const Mat& input) const;

  /// Tape evaluation recording everything needed for backprop. `bind` maps
  /// parameter matrices to tape leaves (see ParamBinding).
  Var forward(Tape& t, Var input, const std::function<Var(const Mat&)>& bind) const;

 private:
  std::vector<DenseLayer> layers_;
};

// ---------------------------------------------------------------------------
// Parameter registry
// ---------------------------------------------------------------------------

/// Ordered, named view over a model's parameter matrices. The order fixes
/// serialization layout, optimizer state alignment, and the flat coordinate
/// addressing used by the gradient checker (row-major within each matrix).
class ParamSet {
 public:
  void add(const std::string& name, Mat* m) { entries_.push_back({name, m}); }

  struct Entry {
    std::string name;
    Mat* mat;
  };

  const std::vector<Entry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }

  size_t total_coords() const;
  double get_coord(size_t flat) const;
  void set_coord(size_t flat, double v);

 private:
  std::vector<Entry> entries_;
};

/// Per-forward cache mapping parameter matrices to tape leaves so each
/// parameter becomes exactly one leaf per tape regardless of how many ops
/// consume it.
class ParamBinding {
 public:
  explicit ParamBinding(Tape& t) : tape_(&t) {}

  Var operator()(const Mat& m);

  /// Gradients aligned with `params` order; zero matrices for parameters
  /// that never appeared on the tape.
  std::vector<Mat> grads(const ParamSet& params) const;

 private:
  Tape* tape_;
  std::unordered_map<const Mat*, Var> index_;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

struct LossProbe {
  double loss = 0.0;
  double min_abs_relu = std::numeric_limits<double>::infinity();
};

struct FdResult {
  double max_rel_error = 0.0;
  int evaluated = 0;
  int rejected = 0;
};

/// Samples `n_coords` parameter coordinates uniformly at random (seeded),
/// compares central differences of `loss_at_params` against
/// `grads_at_params` (one analytic pass at the base point), and returns the
/// worst relative error with denominator max(|analytic|, |numeric|, 1e-8).
/// Coordinates whose evaluations put any relu pre-activation within 1e-6 of
/// zero are rejected and resampled. A parameter-free model reports 0.
FdResult finite_difference_check(ParamSet& params, const std::function<LossProbe()>& loss_at_params,
                                 const std::function<std::vector<Mat>()>& grads_at_params,
                                 int n_coords, double step, uint64_t seed);

}  // namespace timedist
