#include "timedist/numerics.hpp"

#include <cmath>
#include <stdexcept>

namespace timedist {

int Rng::uniform_int(int lo, int hi) {
  if (lo > hi) throw std::invalid_argument("Rng::uniform_int: empty range");
  const uint64_t span = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
  // modulo rejection keeps the draw exactly uniform
  const uint64_t limit = std::numeric_limits<uint64_t>::max() - std::numeric_limits<uint64_t>::max() % span;
  uint64_t x;
  do {
    x = gen_();
  } while (x >= limit);
  return lo + static_cast<int>(x % span);
}

double Rng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Var Tape::leaf(Mat value) { return push(std::move(value)); }

Var Tape::push(Mat value) {
  values_.push_back(std::move(value));
  backs_.emplace_back();
  return Var{static_cast<int>(values_.size()) - 1};
}

void Tape::set_back(Var v, std::function<void(Tape&)> back) { backs_[v.id] = std::move(back); }

void Tape::backward(Var loss) {
  if (backward_done_) throw std::logic_error("Tape::backward called twice without a new forward");
  if (!loss.valid() || loss.id >= size()) throw std::invalid_argument("Tape::backward: bad loss node");
  if (values_[loss.id].size() != 1) throw std::invalid_argument("Tape::backward: loss must be 1x1");
  grads_.clear();
  grads_.reserve(values_.size());
  for (const Mat& v : values_) grads_.push_back(Mat::Zero(v.rows(), v.cols()));
  grads_[loss.id](0, 0) = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    if (backs_[i]) backs_[i](*this);
  }
  backward_done_ = true;
}

void Tape::reset() {
  values_.clear();
  grads_.clear();
  backs_.clear();
  backward_done_ = false;
  min_abs_relu_input_ = std::numeric_limits<double>::infinity();
}

void Tape::note_relu_input(double min_abs) {
  if (min_abs < min_abs_relu_input_) min_abs_relu_input_ = min_abs;
}

// ---------------------------------------------------------------------------
// Tape ops
// ---------------------------------------------------------------------------

Var matmul(Tape& t, Var a, Var b) {
  if (t.value(a).cols() != t.value(b).rows())
    throw std::invalid_argument("matmul: inner dimensions differ");
  Var out = t.push(t.value(a) * t.value(b));
  t.set_back(out, [a, b, out](Tape& tp) {
    const Mat& g = tp.grad(out);
    tp.grad(a) += g * tp.value(b).transpose();
    tp.grad(b) += tp.value(a).transpose() * g;
  });
  return out;
}

Var add(Tape& t, Var a, Var b) {
  if (t.value(a).rows() != t.value(b).rows() || t.value(a).cols() != t.value(b).cols())
    throw std::invalid_argument("add: shape mismatch");
  Var out = t.push(t.value(a) + t.value(b));
  t.set_back(out, [a, b, out](Tape& tp) {
    tp.grad(a) += tp.grad(out);
    tp.grad(b) += tp.grad(out);
  });
  return out;
}

Var add_rowvec(Tape& t, Var a, Var row) {
  if (t.value(row).rows() != 1 || t.value(row).cols() != t.value(a).cols())
    throw std::invalid_argument("add_rowvec: row must be 1 x cols(a)");
  Mat out = t.value(a);
  out.rowwise() += t.value(row).row(0);
  Var v = t.push(std::move(out));
  t.set_back(v, [a, row, v](Tape& tp) {
    tp.grad(a) += tp.grad(v);
    tp.grad(row).row(0) += tp.grad(v).colwise().sum();
  });
  return v;
}

Var mul_rowvec(Tape& t, Var a, Var row) {
  if (t.value(row).rows() != 1 || t.value(row).cols() != t.value(a).cols())
    throw std::invalid_argument("mul_rowvec: row must be 1 x cols(a)");
  Mat out = t.value(a).array().rowwise() * t.value(row).row(0).array();
  Var v = t.push(std::move(out));
  t.set_back(v, [a, row, v](Tape& tp) {
    const Mat& g = tp.grad(v);
    tp.grad(a).array() += g.array().rowwise() * tp.value(row).row(0).array();
    tp.grad(row).row(0).array() += (g.array() * tp.value(a).array()).colwise().sum();
  });
  return v;
}

Var add_const(Tape& t, Var a, const Mat& c) {
  if (t.value(a).rows() != c.rows() || t.value(a).cols() != c.cols())
    throw std::invalid_argument("add_const: shape mismatch");
  Var out = t.push(t.value(a) + c);
  t.set_back(out, [a, out](Tape& tp) { tp.grad(a) += tp.grad(out); });
  return out;
}

Var scale(Tape& t, Var a, double s) {
  Var out = t.push(t.value(a) * s);
  t.set_back(out, [a, out, s](Tape& tp) { tp.grad(a) += s * tp.grad(out); });
  return out;
}

Var relu(Tape& t, Var a) {
  const Mat& x = t.value(a);
  if (x.size() > 0) t.note_relu_input(x.array().abs().minCoeff());
  Var out = t.push(x.cwiseMax(0.0));
  t.set_back(out, [a, out](Tape& tp) {
    // subgradient at 0 is 0
    tp.grad(a).array() += tp.grad(out).array() * (tp.value(a).array() > 0.0).cast<double>();
  });
  return out;
}

Var sigmoid(Tape& t, Var a) {
  Mat y = (1.0 / (1.0 + (-t.value(a).array()).exp())).matrix();
  Var out = t.push(std::move(y));
  t.set_back(out, [a, out](Tape& tp) {
    const auto& y = tp.value(out).array();
    tp.grad(a).array() += tp.grad(out).array() * y * (1.0 - y);
  });
  return out;
}

Var softmax_rows(Tape& t, Var a) {
  Var out = t.push(softmax_rows(t.value(a)));
  t.set_back(out, [a, out](Tape& tp) {
    const Mat& y = tp.value(out);
    const Mat& g = tp.grad(out);
    for (int r = 0; r < y.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      tp.grad(a).row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
    }
  });
  return out;
}

Var rms_norm_rows(Tape& t, Var a, Var gain, double eps) {
  const Mat& x = t.value(a);
  if (t.value(gain).rows() != 1 || t.value(gain).cols() != x.cols())
    throw std::invalid_argument("rms_norm_rows: gain must be 1 x cols(a)");
  const int n = static_cast<int>(x.cols());
  Eigen::VectorXd inv_rms(x.rows());
  for (int r = 0; r < x.rows(); ++r)
    inv_rms(r) = 1.0 / std::sqrt(x.row(r).squaredNorm() / n + eps);
  Mat unit = x.array().colwise() * inv_rms.array();
  Mat out = unit.array().rowwise() * t.value(gain).row(0).array();
  Var v = t.push(std::move(out));
  t.set_back(v, [a, gain, v, unit = std::move(unit), inv_rms = std::move(inv_rms), n](Tape& tp) {
    const Mat& g = tp.grad(v);
    Mat du = g.array().rowwise() * tp.value(gain).row(0).array();
    tp.grad(gain).row(0).array() += (g.array() * unit.array()).colwise().sum();
    for (int r = 0; r < du.rows(); ++r) {
      const double dot = du.row(r).dot(unit.row(r));
      tp.grad(a).row(r).array() +=
          (du.row(r).array() - unit.row(r).array() * (dot / n)) * inv_rms(r);
    }
  });
  return v;
}

Var slice_cols(Tape& t, Var a, int col0, int ncols) {
  if (col0 < 0 || ncols < 0 || col0 + ncols > t.value(a).cols())
    throw std::invalid_argument("slice_cols: range out of bounds");
  Var out = t.push(t.value(a).middleCols(col0, ncols));
  t.set_back(out, [a, out, col0, ncols](Tape& tp) {
    tp.grad(a).middleCols(col0, ncols) += tp.grad(out);
  });
  return out;
}

Var slice_rows(Tape& t, Var a, int row0, int nrows) {
  if (row0 < 0 || nrows < 0 || row0 + nrows > t.value(a).rows())
    throw std::invalid_argument("slice_rows: range out of bounds");
  Var out = t.push(t.value(a).middleRows(row0, nrows));
  t.set_back(out, [a, out, row0, nrows](Tape& tp) {
    tp.grad(a).middleRows(row0, nrows) += tp.grad(out);
  });
  return out;
}

Var transpose(Tape& t, Var a) {
  Var out = t.push(t.value(a).transpose());
  t.set_back(out, [a, out](Tape& tp) { tp.grad(a) += tp.grad(out).transpose(); });
  return out;
}

Var pick_row(Tape& t, Var a, int row) {
  if (row < 0 || row >= t.value(a).rows()) throw std::invalid_argument("pick_row: out of bounds");
  Var out = t.push(t.value(a).row(row));
  t.set_back(out, [a, out, row](Tape& tp) { tp.grad(a).row(row) += tp.grad(out); });
  return out;
}

Var vstack(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("vstack: no parts");
  const auto cols = t.value(parts[0]).cols();
  Eigen::Index rows = 0;
  for (Var p : parts) {
    if (t.value(p).cols() != cols) throw std::invalid_argument("vstack: column mismatch");
    rows += t.value(p).rows();
  }
  Mat out(rows, cols);
  std::vector<int> offsets(parts.size());
  Eigen::Index at = 0;
  for (size_t i = 0; i < parts.size(); ++i) {
    offsets[i] = static_cast<int>(at);
    out.middleRows(at, t.value(parts[i]).rows()) = t.value(parts[i]);
    at += t.value(parts[i]).rows();
  }
  Var v = t.push(std::move(out));
  t.set_back(v, [parts, offsets, v](Tape& tp) {
    for (size_t i = 0; i < parts.size(); ++i) {
      const auto n = tp.value(parts[i]).rows();
      tp.grad(parts[i]) += tp.grad(v).middleRows(offsets[i], n);
    }
  });
  return v;
}

Var sum_all(Tape& t, Var a) {
  Mat out(1, 1);
  out(0, 0) = t.value(a).sum();
  Var v = t.push(std::move(out));
  t.set_back(v, [a, v](Tape& tp) { tp.grad(a).array() += tp.grad(v)(0, 0); });
  return v;
}

Var weighted_sum(Tape& t, const std::vector<Var>& scalars, const std::vector<double>& weights) {
  if (scalars.size() != weights.size()) throw std::invalid_argument("weighted_sum: length mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < scalars.size(); ++i) {
    if (t.value(scalars[i]).size() != 1) throw std::invalid_argument("weighted_sum: non-scalar term");
    acc += weights[i] * t.scalar(scalars[i]);
  }
  Mat out(1, 1);
  out(0, 0) = acc;
  Var v = t.push(std::move(out));
  t.set_back(v, [scalars, weights, v](Tape& tp) {
    const double g = tp.grad(v)(0, 0);
    for (size_t i = 0; i < scalars.size(); ++i) tp.grad(scalars[i])(0, 0) += g * weights[i];
  });
  return v;
}

Var dot_vec(Tape& t, Var row, const Eigen::VectorXd& v) {
  if (t.value(row).rows() != 1 || t.value(row).cols() != v.size())
    throw std::invalid_argument("dot_vec: row must be 1 x |v|");
  Mat out(1, 1);
  out(0, 0) = t.value(row).row(0).dot(v);
  Var r = t.push(std::move(out));
  t.set_back(r, [row, r, v](Tape& tp) {
    tp.grad(row).row(0) += tp.grad(r)(0, 0) * v.transpose();
  });
  return r;
}

Var mean_cross_entropy(Tape& t, Var logits, const std::vector<int>& targets, int ignore_id,
                       bool* empty_flag) {
  const Mat& x = t.value(logits);
  if (x.rows() != static_cast<Eigen::Index>(targets.size()))
    throw std::invalid_argument("mean_cross_entropy: one target per logits row required");
  int effective = 0;
  double acc = 0.0;
  Mat probs = softmax_rows(x);
  for (int r = 0; r < x.rows(); ++r) {
    const int tgt = targets[r];
    if (tgt == ignore_id) continue;
    if (tgt < 0 || tgt >= x.cols()) throw std::invalid_argument("mean_cross_entropy: target out of range");
    const double m = x.row(r).maxCoeff();
    const double log_z = m + std::log((x.row(r).array() - m).exp().sum());
    acc += log_z - x(r, tgt);
    ++effective;
  }
  if (empty_flag) *empty_flag = (effective == 0);
  Mat out(1, 1);
  out(0, 0) = effective > 0 ? acc / effective : 0.0;
  Var v = t.push(std::move(out));
  if (effective > 0) {
    t.set_back(v, [logits, v, targets, ignore_id, probs = std::move(probs), effective](Tape& tp) {
      const double g = tp.grad(v)(0, 0) / effective;
      for (int r = 0; r < probs.rows(); ++r) {
        if (targets[r] == ignore_id) continue;
        tp.grad(logits).row(r) += g * probs.row(r);
        tp.grad(logits)(r, targets[r]) -= g;
      }
    });
  }
  return v;
}

// ---------------------------------------------------------------------------
// Plain kernels
// ---------------------------------------------------------------------------

Mat softmax_rows(const Mat& x) {
  Mat out(x.rows(), x.cols());
  for (int r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    Eigen::ArrayXd e = (x.row(r).array() - m).exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  return out;
}

// ---------------------------------------------------------------------------
// DenseStack
// ---------------------------------------------------------------------------

DenseStack::DenseStack(const std::vector<int>& dims, Rng& rng) {
  if (dims.size() < 2) throw std::invalid_argument("DenseStack: need at least in/out dims");
  for (int d : dims)
    if (d < 1) throw std::invalid_argument("DenseStack: dims must be positive");
  layers_.reserve(dims.size() - 1);
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    const int fan_in = dims[i];
    const int fan_out = dims[i + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    DenseLayer layer;
    layer.w.resize(fan_in, fan_out);
    for (int r = 0; r < fan_in; ++r)
      for (int c = 0; c < fan_out; ++c) layer.w(r, c) = rng.uniform(-bound, bound);
    layer.b = Mat::Zero(1, fan_out);
    layers_.push_back(std::move(layer));
  }
}

std::vector<int> DenseStack::dims() const {
  std::vector<int> d;
  if (layers_.empty()) return d;
  d.push_back(static_cast<int>(layers_.front().w.rows()));
  for (const auto& l : layers_) d.push_back(static_cast<int>(l.w.cols()));
  return d;
}

Mat DenseStack::forward(const Mat& input) const {
  if (layers_.empty()) throw std::logic_error("DenseStack::forward: empty stack");
  if (input.cols() != layers_.front().w.rows())
    throw std::invalid_argument("DenseStack::forward: input dim mismatch");
  Mat h = input;
  for (size_t i = 0; i < layers_.size(); ++i) {
    Mat z = h * layers_[i].w;
    z.rowwise() += layers_[i].b.row(0);
    h = (i + 1 < layers_.size()) ? z.cwiseMax(0.0) : std::move(z);
  }
  return h;
}

Var DenseStack::forward(Tape& t, Var input, const std::function<Var(const Mat&)>& bind) const {
  if (layers_.empty()) throw std::logic_error("DenseStack::forward: empty stack");
  Var h = input;
  for (size_t i = 0; i < layers_.size(); ++i) {
    Var z = add_rowvec(t, matmul(t, h, bind(layers_[i].w)), bind(layers_[i].b));
    h = (i + 1 < layers_.size()) ? relu(t, z) : z;
  }
  return h;
}

// ---------------------------------------------------------------------------
// ParamSet / ParamBinding
// ---------------------------------------------------------------------------

size_t ParamSet::total_coords() const {
  size_t n = 0;
  for (const auto& e : entries_) n += static_cast<size_t>(e.mat->size());
  return n;
}

double ParamSet::get_coord(size_t flat) const {
  for (const auto& e : entries_) {
    const size_t n = static_cast<size_t>(e.mat->size());
    if (flat < n) {
      const auto cols = static_cast<size_t>(e.mat->cols());
      return (*e.mat)(static_cast<Eigen::Index>(flat / cols), static_cast<Eigen::Index>(flat % cols));
    }
    flat -= n;
  }
  throw std::out_of_range("ParamSet::get_coord");
}

void ParamSet::set_coord(size_t flat, double v) {
  for (const auto& e : entries_) {
    const size_t n = static_cast<size_t>(e.mat->size());
    if (flat < n) {
      const auto cols = static_cast<size_t>(e.mat->cols());
      (*e.mat)(static_cast<Eigen::Index>(flat / cols), static_cast<Eigen::Index>(flat % cols)) = v;
      return;
    }
    flat -= n;
  }
  throw std::out_of_range("ParamSet::set_coord");
}

Var ParamBinding::operator()(const Mat& m) {
  auto it = index_.find(&m);
  if (it != index_.end()) return it->second;
  Var v = tape_->leaf(m);
  index_.emplace(&m, v);
  return v;
}

std::vector<Mat> ParamBinding::grads(const ParamSet& params) const {
  std::vector<Mat> out;
  out.reserve(params.size());
  for (const auto& e : params.entries()) {
    auto it = index_.find(e.mat);
    if (it != index_.end() && tape_->backward_done())
      out.push_back(tape_->grad(it->second));
    else
      out.push_back(Mat::Zero(e.mat->rows(), e.mat->cols()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

FdResult finite_difference_check(ParamSet& params, const std::function<LossProbe()>& loss_at_params,
                                 const std::function<std::vector<Mat>()>& grads_at_params,
                                 int n_coords, double step, uint64_t seed) {
  FdResult result;
  const size_t total = params.total_coords();
  if (total == 0 || n_coords <= 0) return result;
  if (step <= 0.0) throw std::invalid_argument("finite_difference_check: step must be positive");

  const std::vector<Mat> analytic = grads_at_params();
  // flatten analytic grads to match the flat coordinate addressing
  std::vector<double> flat;
  flat.reserve(total);
  for (const Mat& g : analytic)
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      for (Eigen::Index c = 0; c < g.cols(); ++c) flat.push_back(g(r, c));
  if (flat.size() != total)
    throw std::logic_error("finite_difference_check: gradient/parameter shape mismatch");

  const LossProbe base = loss_at_params();
  constexpr double kKinkGuard = 1e-6;
  Rng rng(seed);
  const int max_attempts = 50 * n_coords;
  int attempts = 0;
  while (result.evaluated < n_coords && attempts < max_attempts) {
    ++attempts;
    const size_t k = static_cast<size_t>(rng.next_u64() % total);
    const double saved = params.get_coord(k);
    params.set_coord(k, saved + step);
    const LossProbe plus = loss_at_params();
    params.set_coord(k, saved - step);
    const LossProbe minus = loss_at_params();
    params.set_coord(k, saved);
    const double kink = std::min({base.min_abs_relu, plus.min_abs_relu, minus.min_abs_relu});
    if (kink < kKinkGuard) {
      ++result.rejected;
      continue;
    }
    const double numeric = (plus.loss - minus.loss) / (2.0 * step);
    const double denom = std::max({std::abs(flat[k]), std::abs(numeric), 1e-8});
    const double rel = std::abs(numeric - flat[k]) / denom;
    if (rel > result.max_rel_error) result.max_rel_error = rel;
    ++result.evaluated;
  }
  return result;
}

}  // namespace timedist
