#pragma once

#include "timedist/synthgen.hpp"
#include "timedist/trainer.hpp"

#include <map>
#include <string>

namespace timedist {

/// Flat `key = value` config files; '#' starts a comment. Reads are tracked
/// so unknown keys can be rejected after mapping.
class KvConfig {
 public:
  static KvConfig from_file(const std::string& path);
  static KvConfig from_string(const std::string& text);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get_string(const std::string& key, const std::string& fallback);
  int get_int(const std::string& key, int fallback);
  double get_double(const std::string& key, double fallback);
  bool get_bool(const std::string& key, bool fallback);

  /// Throws listing any key that was never read.
  void reject_unknown_keys() const;

 private:
  std::map<std::string, std::string> values_;
  mutable std::map<std::string, bool> consumed_;
};

/// Dataset-generation keys: frames, feature_dim, pattern_count,
/// event_min_len, event_max_len, signal_magnitude, noise_sigma,
/// boundary_fuzz, dvc_fraction, dvc_min_events, dvc_max_events,
/// pattern_seed, count.
GenConfig gen_config_from_kv(KvConfig& kv, int* count_out);

/// Training keys mirror TrainConfig fields (steps, batch_size, lr, beta1,
/// beta2, eps, warmup_steps, arm, reg_max, delta, lambda_ntp, lambda_reg,
/// lambda_dist, eval_every, max_new_items, d, d_v, core_layers, d_ff,
/// max_len, codec_layers, codec_width, pattern_count, train_frame_projector,
/// reencode_from_gt, eval_holdout).
TrainConfig train_config_from_kv(KvConfig& kv, int* eval_holdout_out);

}  // namespace timedist
