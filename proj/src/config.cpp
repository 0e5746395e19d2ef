#include "timedist/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace timedist {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

KvConfig KvConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_string(ss.str());
}

KvConfig KvConfig::from_string(const std::string& text) {
  KvConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
    cfg.values_[key] = value;
  }
  return cfg;
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) {
  consumed_[key] = true;
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

int KvConfig::get_int(const std::string& key, int fallback) {
  consumed_[key] = true;
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  size_t used = 0;
  const int v = std::stoi(it->second, &used);
  if (used != it->second.size()) throw std::runtime_error("config: bad integer for " + key);
  return v;
}

double KvConfig::get_double(const std::string& key, double fallback) {
  consumed_[key] = true;
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  size_t used = 0;
  const double v = std::stod(it->second, &used);
  if (used != it->second.size()) throw std::runtime_error("config: bad number for " + key);
  return v;
}

bool KvConfig::get_bool(const std::string& key, bool fallback) {
  consumed_[key] = true;
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1" || it->second == "on") return true;
  if (it->second == "false" || it->second == "0" || it->second == "off") return false;
  throw std::runtime_error("config: bad boolean for " + key);
}

void KvConfig::reject_unknown_keys() const {
  std::string unknown;
  for (const auto& [key, _] : values_) {
    if (!consumed_.count(key)) unknown += unknown.empty() ? key : ", " + key;
  }
  if (!unknown.empty()) throw std::runtime_error("config: unknown keys: " + unknown);
}

GenConfig gen_config_from_kv(KvConfig& kv, int* count_out) {
  GenConfig cfg;
  cfg.frames = kv.get_int("frames", cfg.frames);
  cfg.feature_dim = kv.get_int("feature_dim", cfg.feature_dim);
  cfg.pattern_count = kv.get_int("pattern_count", cfg.pattern_count);
  cfg.event_min_len = kv.get_int("event_min_len", cfg.event_min_len);
  cfg.event_max_len = kv.get_int("event_max_len", cfg.event_max_len);
  cfg.signal_magnitude = kv.get_double("signal_magnitude", cfg.signal_magnitude);
  cfg.noise_sigma = kv.get_double("noise_sigma", cfg.noise_sigma);
  cfg.boundary_fuzz = kv.get_double("boundary_fuzz", cfg.boundary_fuzz);
  cfg.dvc_fraction = kv.get_double("dvc_fraction", cfg.dvc_fraction);
  cfg.dvc_min_events = kv.get_int("dvc_min_events", cfg.dvc_min_events);
  cfg.dvc_max_events = kv.get_int("dvc_max_events", cfg.dvc_max_events);
  cfg.pattern_seed = static_cast<uint64_t>(kv.get_int("pattern_seed", static_cast<int>(cfg.pattern_seed)));
  if (count_out) *count_out = kv.get_int("count", 1000);
  kv.reject_unknown_keys();
  cfg.validate();
  return cfg;
}

TrainConfig train_config_from_kv(KvConfig& kv, int* eval_holdout_out) {
  TrainConfig cfg;
  cfg.steps = kv.get_int("steps", cfg.steps);
  cfg.batch_size = kv.get_int("batch_size", cfg.batch_size);
  cfg.lr = kv.get_double("lr", cfg.lr);
  cfg.beta1 = kv.get_double("beta1", cfg.beta1);
  cfg.beta2 = kv.get_double("beta2", cfg.beta2);
  cfg.eps = kv.get_double("eps", cfg.eps);
  cfg.warmup_steps = kv.get_int("warmup_steps", cfg.warmup_steps);
  cfg.arm = arm_from_string(kv.get_string("arm", to_string(cfg.arm)));
  cfg.reg_max = kv.get_int("reg_max", cfg.reg_max);
  cfg.delta = kv.get_double("delta", cfg.delta);
  cfg.weights.lambda_ntp = kv.get_double("lambda_ntp", cfg.weights.lambda_ntp);
  cfg.weights.lambda_reg = kv.get_double("lambda_reg", cfg.weights.lambda_reg);
  cfg.weights.lambda_dist = kv.get_double("lambda_dist", cfg.weights.lambda_dist);
  cfg.eval_every = kv.get_int("eval_every", cfg.eval_every);
  cfg.max_new_items = kv.get_int("max_new_items", cfg.max_new_items);
  cfg.d = kv.get_int("d", cfg.d);
  cfg.d_v = kv.get_int("d_v", cfg.d_v);
  cfg.core_layers = kv.get_int("core_layers", cfg.core_layers);
  cfg.d_ff = kv.get_int("d_ff", cfg.d_ff);
  cfg.max_len = kv.get_int("max_len", cfg.max_len);
  cfg.codec_layers = kv.get_int("codec_layers", cfg.codec_layers);
  cfg.codec_width = kv.get_int("codec_width", cfg.codec_width);
  cfg.pattern_count = kv.get_int("pattern_count", cfg.pattern_count);
  cfg.train_frame_projector = kv.get_bool("train_frame_projector", cfg.train_frame_projector);
  cfg.reencode_from_gt = kv.get_bool("reencode_from_gt", cfg.reencode_from_gt);
  if (eval_holdout_out) *eval_holdout_out = kv.get_int("eval_holdout", 200);
  kv.reject_unknown_keys();
  cfg.validate();
  return cfg;
}

}  // namespace timedist
