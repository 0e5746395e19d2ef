#include "timedist/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace timedist {

void TrainConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("TrainConfig: steps must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (lr <= 0.0) throw std::invalid_argument("TrainConfig: learning rate must be positive");
  if (eval_every < 1) throw std::invalid_argument("TrainConfig: eval_every must be >= 1");
  if (max_new_items < 1) throw std::invalid_argument("TrainConfig: max_new_items must be >= 1");
  weights.validate();
}

ModelConfig TrainConfig::model_config() const {
  Vocabulary vocab(pattern_count);
  ModelConfig mc;
  mc.d = d;
  mc.d_v = d_v;
  mc.core_layers = core_layers;
  mc.d_ff = d_ff;
  mc.max_len = max_len;
  mc.vocab_size = vocab.size();
  mc.reg_max = reg_max;
  mc.delta = delta;
  mc.codec_layers = codec_layers;
  mc.codec_width = codec_width;
  mc.time_stamp_id = vocab.time_stamp();
  mc.eos_id = vocab.eos();
  return mc;
}

AdamOptimizer::AdamOptimizer(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamOptimizer::step(ParamSet& params, const std::vector<Mat>& grads, double lr_scale) {
  if (grads.size() != params.size())
    throw std::invalid_argument("AdamOptimizer: gradient/parameter count mismatch");
  if (m_.empty()) {
    for (const auto& e : params.entries()) {
      m_.push_back(Mat::Zero(e.mat->rows(), e.mat->cols()));
      v_.push_back(Mat::Zero(e.mat->rows(), e.mat->cols()));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double alpha = lr_ * lr_scale;
  for (size_t i = 0; i < params.size(); ++i) {
    Mat& p = *params.entries()[i].mat;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
    p.array() -=
        alpha * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
  }
}

// ---------------------------------------------------------------------------
// Sample plumbing
// ---------------------------------------------------------------------------

std::vector<FrameFeature> sample_frames(const GroundingSample& sample) {
  std::vector<FrameFeature> frames;
  frames.reserve(sample.frames.size());
  for (size_t i = 0; i < sample.frames.size(); ++i)
    frames.push_back(FrameFeature{sample.frames[i], sample.timestamps[i]});
  return frames;
}

std::vector<int> query_tokens(const Vocabulary& vocab, const GroundingSample& sample) {
  if (sample.task == TaskKind::kMomentRetrieval) return {vocab.pattern_token(sample.query)};
  return {vocab.dvc_task()};
}

std::vector<GroundingSample> samples_of(const std::vector<DatasetRecord>& records) {
  std::vector<GroundingSample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.sample);
  return out;
}

namespace {

struct SampleLossTerms {
  Var total;  // lambda-weighted sum on the tape
  double ntp = 0.0;
  double reg = 0.0;
  double dist = 0.0;
};

SampleLossTerms sample_loss(Tape& tape, ParamBinding& bind, const ToySeqModel& model,
                            const Vocabulary& vocab, const GroundingSample& sample,
                            const InstructionRecord& instruction, Arm arm,
                            const LossWeights& weights, bool reencode_from_gt) {
  std::vector<SeqItem> answer =
      tokenize_answer(vocab, instruction.answer_template, instruction.payloads);

  if (arm == Arm::kDistReenc && !reencode_from_gt) {
    // first pass under raw slot embeddings supplies the payloads to re-encode
    Tape probe_tape;
    ParamBinding probe_bind(probe_tape);
    InputSequence probe_seq = compose_input(sample_frames(sample), query_tokens(vocab, sample), answer);
    auto probe = model.forward_teacher_forced(probe_tape, probe_bind, probe_seq, Arm::kDist);
    size_t slot_idx = 0;
    for (auto& item : answer) {
      if (auto* slot = std::get_if<TimeStampSlot>(&item))
        slot->target = probe.slots[slot_idx++].decoded;
    }
  }

  InputSequence seq = compose_input(sample_frames(sample), query_tokens(vocab, sample), answer);
  auto fwd = model.forward_teacher_forced(tape, bind, seq, arm);

  Var ntp = mean_cross_entropy(tape, fwd.logits, fwd.ntp_targets, -1);

  std::vector<Var> reg_terms;
  std::vector<Var> dist_terms;
  for (const auto& slot : fwd.slots) {
    // gradients flow through the expectation decode (or the direct head)
    if (arm == Arm::kDirect) {
      reg_terms.push_back(giou_1d(tape, slot.direct_start, slot.direct_end, slot.target));
    } else {
      reg_terms.push_back(giou_1d(tape, slot.exp_start, slot.exp_end, slot.target));
      const AnchorGrid& grid = model.time_decoder.grid();
      Var d_start = dfl(tape, slot.start_logits, slot.target.start(), grid);
      Var d_end = dfl(tape, slot.end_logits, slot.target.end(), grid);
      dist_terms.push_back(weighted_sum(tape, {d_start, d_end}, {1.0, 1.0}));
    }
  }
  auto mean_of = [&tape](const std::vector<Var>& terms) {
    if (terms.empty()) return tape.leaf(Mat::Zero(1, 1));
    return weighted_sum(tape, terms, std::vector<double>(terms.size(), 1.0 / terms.size()));
  };
  Var reg = mean_of(reg_terms);
  Var dist = mean_of(dist_terms);

  SampleLossTerms out;
  out.total = weighted_sum(tape, {ntp, reg, dist},
                           {weights.lambda_ntp, weights.lambda_reg, weights.lambda_dist});
  out.ntp = tape.scalar(ntp);
  out.reg = tape.scalar(reg);
  out.dist = tape.scalar(dist);
  return out;
}

}  // namespace

BatchLoss batch_loss_and_grads(ToySeqModel& model, const Vocabulary& vocab,
                               const std::vector<DatasetRecord>& batch, Arm arm,
                               const LossWeights& weights, bool reencode_from_gt,
                               ParamSet* trainable, std::vector<Mat>* grads_out) {
  if (batch.empty()) throw std::invalid_argument("batch_loss_and_grads: empty batch");
  BatchLoss out;
  const double inv_n = 1.0 / batch.size();
  if (grads_out) {
    grads_out->clear();
    for (const auto& e : trainable->entries())
      grads_out->push_back(Mat::Zero(e.mat->rows(), e.mat->cols()));
  }
  for (const auto& record : batch) {
    Tape tape;
    ParamBinding bind(tape);
    SampleLossTerms terms = sample_loss(tape, bind, model, vocab, record.sample,
                                        record.instruction, arm, weights, reencode_from_gt);
    out.total += inv_n * tape.scalar(terms.total);
    out.ntp += inv_n * terms.ntp;
    out.reg += inv_n * terms.reg;
    out.dist += inv_n * terms.dist;
    out.min_abs_relu = std::min(out.min_abs_relu, tape.min_abs_relu_input());
    if (grads_out) {
      tape.backward(terms.total);
      std::vector<Mat> g = bind.grads(*trainable);
      for (size_t i = 0; i < g.size(); ++i) (*grads_out)[i] += inv_n * g[i];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TrainResult train(const TrainConfig& config, const std::vector<DatasetRecord>& train_set,
                  const std::vector<DatasetRecord>& eval_set) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: dataset must be non-empty");
  Vocabulary vocab(config.pattern_count);
  ToySeqModel model(config.model_config(), config.seed);
  ParamSet trainable = model.trainable_params(config.train_frame_projector);
  AdamOptimizer adam(config.lr, config.beta1, config.beta2, config.eps);
  Rng shuffle_rng(config.seed ^ 0x5affe11eull);

  const int n = static_cast<int>(train_set.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  int cursor = n;  // forces a shuffle on first use

  const bool refine_eval = config.arm == Arm::kDistReenc;
  const std::vector<GroundingSample> eval_samples = samples_of(eval_set);
  TrainResult result{std::move(model), config.arm, {}, 0.0};

  std::vector<DatasetRecord> batch;
  std::vector<Mat> grads;
  for (int step = 1; step <= config.steps; ++step) {
    batch.clear();
    for (int b = 0; b < config.batch_size; ++b) {
      if (cursor >= n) {
        for (int i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);
        cursor = 0;
      }
      batch.push_back(train_set[order[cursor++]]);
    }
    BatchLoss loss = batch_loss_and_grads(result.model, vocab, batch, config.arm, config.weights,
                                          config.reencode_from_gt, &trainable, &grads);
    if (!std::isfinite(loss.total))
      throw std::runtime_error("training diverged at step " + std::to_string(step));
    const double warm =
        config.warmup_steps > 0 ? std::min(1.0, static_cast<double>(step) / config.warmup_steps)
                                : 1.0;
    adam.step(trainable, grads, warm);
    result.final_loss = loss.total;

    if (step % config.eval_every == 0 || step == config.steps) {
      TraceRow row;
      row.step = step;
      row.loss = loss.total;
      if (!eval_samples.empty()) {
        EvalReport rep =
            evaluate(result.model, config.arm, eval_samples, refine_eval, config.max_new_items);
        row.miou = rep.miou;
        row.r1_03 = rep.r1_03;
        row.r1_05 = rep.r1_05;
        row.r1_07 = rep.r1_07;
      }
      result.trace.push_back(row);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

std::vector<TimeSegment> predict_segments(const ToySeqModel& model, Arm arm,
                                          const GroundingSample& sample, bool refine,
                                          int max_new_items) {
  Vocabulary vocab = Vocabulary::from_size(model.config().vocab_size);
  auto out = model.generate(sample_frames(sample), query_tokens(vocab, sample), max_new_items,
                            refine, arm);
  std::vector<TimeSegment> segments;
  for (const auto& item : out)
    if (item.is_segment) segments.push_back(item.segment);
  return segments;
}

EvalReport evaluate_with(const Predictor& predict, const std::vector<GroundingSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  std::vector<MRPrediction> preds;
  std::vector<GroundTruthSet> gts;
  for (size_t i = 0; i < samples.size(); ++i) {
    const GroundingSample& s = samples[i];
    const std::vector<TimeSegment> decoded = predict(s);
    if (s.task == TaskKind::kMomentRetrieval) {
      const std::string id = std::to_string(i);
      gts.push_back(GroundTruthSet{id, s.segments});
      if (!decoded.empty()) preds.push_back(MRPrediction{id, decoded[0], std::nullopt});
    } else {
      // order-aware per-event units: k-th decoded segment vs k-th event
      for (size_t k = 0; k < s.segments.size(); ++k) {
        const std::string id = std::to_string(i) + "#" + std::to_string(k);
        gts.push_back(GroundTruthSet{id, {s.segments[k]}});
        if (k < decoded.size()) preds.push_back(MRPrediction{id, decoded[k], std::nullopt});
      }
    }
  }
  EvalReport rep;
  rep.samples = static_cast<int>(gts.size());
  rep.miou = mean_iou(preds, gts);
  rep.r1_03 = recall_at_1(preds, gts, 0.3);
  rep.r1_05 = recall_at_1(preds, gts, 0.5);
  rep.r1_07 = recall_at_1(preds, gts, 0.7);
  return rep;
}

EvalReport evaluate(const ToySeqModel& model, Arm arm, const std::vector<GroundingSample>& samples,
                    bool refine, int max_new_items) {
  return evaluate_with(
      [&](const GroundingSample& s) {
        return predict_segments(model, arm, s, refine, max_new_items);
      },
      samples);
}

// ---------------------------------------------------------------------------
// Gradient checking over the full objective
// ---------------------------------------------------------------------------

FdResult check_full_loss_gradients(ToySeqModel& model, const Vocabulary& vocab,
                                   const std::vector<DatasetRecord>& batch, Arm arm,
                                   const LossWeights& weights, int n_coords, double step,
                                   uint64_t seed) {
  ParamSet trainable = model.trainable_params(true);
  auto loss_at = [&]() {
    BatchLoss l = batch_loss_and_grads(model, vocab, batch, arm, weights, true, nullptr, nullptr);
    return LossProbe{l.total, l.min_abs_relu};
  };
  auto grads_at = [&]() {
    std::vector<Mat> grads;
    batch_loss_and_grads(model, vocab, batch, arm, weights, true, &trainable, &grads);
    return grads;
  };
  return finite_difference_check(trainable, loss_at, grads_at, n_coords, step, seed);
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_trace_csv: cannot open " + path);
  os << "step,loss,miou,r1_03,r1_05,r1_07\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.loss, r.miou,
                  r.r1_03, r.r1_05, r.r1_07);
    os << buf;
  }
  if (!os) throw std::runtime_error("write_trace_csv: write failed for " + path);
}

}  // namespace timedist
