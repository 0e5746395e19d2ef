#pragma once

#include "timedist/losses.hpp"
#include "timedist/metrics.hpp"
#include "timedist/seqmodel.hpp"
#include "timedist/synthgen.hpp"

#include <functional>
#include <string>
#include <vector>

namespace timedist {

struct TrainConfig {
  uint64_t seed = 1;
  int steps = 10000;
  int batch_size = 8;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int warmup_steps = 0;  // linear warm-up when > 0
  Arm arm = Arm::kDistReenc;
  int reg_max = 32;
  double delta = 1.0;
  LossWeights weights;
  int eval_every = 500;
  int max_new_items = 24;
  int d = 64;
  int d_v = 16;
  int core_layers = 2;
  int d_ff = 128;
  int max_len = 96;
  int codec_layers = 3;
  int codec_width = 64;
  int pattern_count = 4;
  bool train_frame_projector = true;
  bool reencode_from_gt = true;  // teacher-forced slots re-encode ground truth
                                 // (false: re-encode a first-pass prediction)

  void validate() const;
  ModelConfig model_config() const;
};

/// Adam with bias correction; state rows align with the parameter registry.
class AdamOptimizer {
 public:
  AdamOptimizer(double lr, double beta1, double beta2, double eps);

  void step(ParamSet& params, const std::vector<Mat>& grads, double lr_scale = 1.0);
  long steps_taken() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Mat> m_, v_;
};

struct TraceRow {
  long step = 0;
  double loss = 0.0;
  double miou = 0.0;
  double r1_03 = 0.0;
  double r1_05 = 0.0;
  double r1_07 = 0.0;
};

struct EvalReport {
  double miou = 0.0;
  double r1_03 = 0.0;
  double r1_05 = 0.0;
  double r1_07 = 0.0;
  int samples = 0;
};

struct TrainResult {
  ToySeqModel model;
  Arm arm;
  std::vector<TraceRow> trace;
  double final_loss = 0.0;
};

/// Teacher-forced training with deterministic batching (sequential over a
/// seeded shuffle) and periodic held-out evaluation. Throws on a non-finite
/// loss, naming the step.
TrainResult train(const TrainConfig& config, const std::vector<DatasetRecord>& train_set,
                  const std::vector<DatasetRecord>& eval_set);

std::vector<GroundingSample> samples_of(const std::vector<DatasetRecord>& records);

/// Per-sample predictor interface so evaluation can also run against stubs.
using Predictor = std::function<std::vector<TimeSegment>(const GroundingSample&)>;

/// Greedy-decodes every sample and scores R@1 at {0.3, 0.5, 0.7} and mean
/// IoU. Moment-retrieval samples score their first decoded segment against
/// all ground-truth segments; dense-captioning samples are scored per event,
/// the k-th decoded segment against the k-th event in start order.
EvalReport evaluate(const ToySeqModel& model, Arm arm, const std::vector<GroundingSample>& samples,
                    bool refine, int max_new_items = 24);

EvalReport evaluate_with(const Predictor& predict, const std::vector<GroundingSample>& samples);

/// Query tokens fed to the model: the pattern token for moment retrieval,
/// the generic describe-task token for dense captioning.
std::vector<int> query_tokens(const Vocabulary& vocab, const GroundingSample& sample);
std::vector<FrameFeature> sample_frames(const GroundingSample& sample);

/// Decoded segments (in emission order) for one sample.
std::vector<TimeSegment> predict_segments(const ToySeqModel& model, Arm arm,
                                          const GroundingSample& sample, bool refine,
                                          int max_new_items = 24);

/// Batch loss over `samples` with gradients; used by training and the
/// gradient checker.
struct BatchLoss {
  double total = 0.0;
  double ntp = 0.0;
  double reg = 0.0;
  double dist = 0.0;
  double min_abs_relu = std::numeric_limits<double>::infinity();
};

BatchLoss batch_loss_and_grads(ToySeqModel& model, const Vocabulary& vocab,
                               const std::vector<DatasetRecord>& batch, Arm arm,
                               const LossWeights& weights, bool reencode_from_gt,
                               ParamSet* trainable, std::vector<Mat>* grads_out);

/// Finite-difference check of the full objective over a fixed batch.
FdResult check_full_loss_gradients(ToySeqModel& model, const Vocabulary& vocab,
                                   const std::vector<DatasetRecord>& batch, Arm arm,
                                   const LossWeights& weights, int n_coords, double step,
                                   uint64_t seed);

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& rows);

}  // namespace timedist
