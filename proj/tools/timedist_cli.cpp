// Command-line surface: dataset generation, training, evaluation,
// generation, ensemble selection, calibration, and gradient checking.

#include "timedist/config.hpp"
#include "timedist/ensemble.hpp"
#include "timedist/metrics.hpp"
#include "timedist/synthgen.hpp"
#include "timedist/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>

namespace fs = std::filesystem;
using namespace timedist;

namespace {

// Outputs land in a temp file first so failed runs leave nothing behind.
void write_file_atomically(const std::string& path,
                           const std::function<void(const std::string&)>& writer) {
  const std::string tmp = path + ".tmp";
  try {
    writer(tmp);
    fs::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

std::string json_escape_free(const std::map<std::string, double>& report) {
  return report_to_json(report);
}

void emit_report(const std::string& out_path, const std::map<std::string, double>& report) {
  for (const auto& [k, v] : report) std::cout << k << ": " << v << "\n";
  if (!out_path.empty()) {
    write_file_atomically(out_path, [&](const std::string& tmp) {
      std::ofstream os(tmp, std::ios::binary);
      if (!os) throw std::runtime_error("cannot open " + tmp);
      os << json_escape_free(report) << "\n";
      if (!os) throw std::runtime_error("write failed for " + tmp);
    });
    std::cout << "report written to " << out_path << "\n";
  }
}

std::string render_output_items(const std::vector<ToySeqModel::OutputItem>& items,
                                const Vocabulary& vocab, double duration) {
  std::string text;
  for (const auto& item : items) {
    std::string piece =
        item.is_segment ? render_segment(item.segment, duration) : vocab.text_of(item.token_id);
    const bool punct = !item.is_segment && (piece == "," || piece == ".");
    if (!text.empty() && !punct) text += " ";
    text += piece;
  }
  return text;
}

int run_gen_data(uint64_t seed, const std::string& config_path, const std::string& out_path) {
  KvConfig kv = config_path.empty() ? KvConfig::from_string("") : KvConfig::from_file(config_path);
  int count = 0;
  GenConfig cfg = gen_config_from_kv(kv, &count);
  const auto records = make_dataset(seed, cfg, count);
  write_file_atomically(out_path, [&](const std::string& tmp) { write_dataset(tmp, records); });
  std::cout << "wrote " << records.size() << " samples to " << out_path << "\n";
  return 0;
}

int run_train(uint64_t seed, const std::string& config_path, const std::string& data_path,
              const std::string& out_dir, const std::string& arm_override) {
  KvConfig kv = config_path.empty() ? KvConfig::from_string("") : KvConfig::from_file(config_path);
  int holdout = 0;
  TrainConfig cfg = train_config_from_kv(kv, &holdout);
  cfg.seed = seed;
  if (!arm_override.empty()) cfg.arm = arm_from_string(arm_override);

  const auto records = read_dataset(data_path);
  if (static_cast<int>(records.size()) <= holdout)
    throw std::invalid_argument("dataset smaller than the evaluation holdout");
  const std::vector<DatasetRecord> train_set(records.begin(), records.end() - holdout);
  const std::vector<DatasetRecord> eval_set(records.end() - holdout, records.end());

  TrainResult result = train(cfg, train_set, eval_set);

  fs::create_directories(out_dir);
  const std::string ckpt = (fs::path(out_dir) / "checkpoint.bin").string();
  const std::string trace = (fs::path(out_dir) / "trace.csv").string();
  write_file_atomically(ckpt, [&](const std::string& tmp) {
    save_model_file(tmp, result.model, result.arm, result.arm == Arm::kDistReenc);
  });
  write_file_atomically(trace,
                        [&](const std::string& tmp) { write_trace_csv(tmp, result.trace); });
  std::cout << "final loss " << result.final_loss << "\n";
  if (!result.trace.empty()) {
    const TraceRow& last = result.trace.back();
    std::cout << "held-out mIoU " << last.miou << " r1@0.5 " << last.r1_05 << "\n";
  }
  std::cout << "checkpoint " << ckpt << "\ntrace " << trace << "\n";
  return 0;
}

int run_generate(const std::string& checkpoint_path, const std::string& data_path,
                 const std::string& refine_flag, double duration, const std::string& out_path,
                 int max_new) {
  ModelCheckpoint ckpt = load_model_file(checkpoint_path);
  bool refine = ckpt.refine_default;
  if (refine_flag == "on") refine = true;
  if (refine_flag == "off") refine = false;
  Vocabulary vocab = Vocabulary::from_size(ckpt.model.config().vocab_size);
  const auto records = read_dataset(data_path);
  std::vector<PredictionRecord> preds;
  preds.reserve(records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    const GroundingSample& s = records[i].sample;
    auto items = ckpt.model.generate(sample_frames(s), query_tokens(vocab, s), max_new, refine,
                                     ckpt.arm);
    PredictionRecord rec;
    rec.id = std::to_string(i);
    for (const auto& item : items)
      if (item.is_segment) rec.segments.push_back(item.segment);
    rec.answer = render_output_items(items, vocab, duration);
    preds.push_back(std::move(rec));
  }
  write_file_atomically(out_path, [&](const std::string& tmp) { write_predictions(tmp, preds); });
  std::cout << "wrote " << preds.size() << " predictions to " << out_path << "\n";
  return 0;
}

std::map<std::string, double> eval_model(const std::string& checkpoint_path,
                                         const std::string& data_path,
                                         const std::string& refine_flag, int max_new) {
  ModelCheckpoint ckpt = load_model_file(checkpoint_path);
  bool refine = ckpt.refine_default;
  if (refine_flag == "on") refine = true;
  if (refine_flag == "off") refine = false;
  const auto records = read_dataset(data_path);
  const auto samples = samples_of(records);
  EvalReport rep = evaluate(ckpt.model, ckpt.arm, samples, refine, max_new);
  return {{"miou", rep.miou},
          {"r1_03", rep.r1_03},
          {"r1_05", rep.r1_05},
          {"r1_07", rep.r1_07},
          {"samples", static_cast<double>(rep.samples)}};
}

std::map<std::string, double> eval_files(const std::string& pred_path, const std::string& gt_path,
                                         double threshold) {
  const auto pred_recs = read_predictions(pred_path);
  const auto gt_recs = read_predictions(gt_path);
  std::vector<MRPrediction> top1;
  std::vector<ScoredPredictions> scored;
  std::vector<DVCPrediction> lists;
  bool any_scores = false;
  for (const auto& p : pred_recs) {
    if (!p.segments.empty()) top1.push_back(MRPrediction{p.id, p.segments[0], std::nullopt});
    lists.push_back(DVCPrediction{p.id, p.segments});
    ScoredPredictions sp;
    sp.id = p.id;
    sp.segments = p.segments;
    sp.scores = p.scores;
    if (!p.scores.empty()) any_scores = true;
    scored.push_back(std::move(sp));
  }
  std::vector<GroundTruthSet> gts;
  for (const auto& g : gt_recs) gts.push_back(GroundTruthSet{g.id, g.segments});

  std::map<std::string, double> report;
  report["miou"] = mean_iou(top1, gts);
  report["r1_03"] = recall_at_1(top1, gts, 0.3);
  report["r1_05"] = recall_at_1(top1, gts, 0.5);
  report["r1_07"] = recall_at_1(top1, gts, 0.7);
  const F1Report f1 = dvc_temporal_f1(lists, gts, threshold);
  report["dvc_precision"] = f1.precision;
  report["dvc_recall"] = f1.recall;
  report["dvc_f1"] = f1.f1;
  report["dvc_threshold"] = threshold;
  if (any_scores) {
    for (auto& sp : scored)
      if (sp.scores.empty()) sp.scores.assign(sp.segments.size(), 0.0);
    report["map_05"] = map_at_iou(scored, gts, 0.5);
    report["map_075"] = map_at_iou(scored, gts, 0.75);
  }
  report["samples"] = static_cast<double>(gts.size());
  return report;
}

int run_ensemble(const std::string& data_path, const std::string& offsets_path,
                 const std::string& out_path) {
  auto candidates = read_candidates(data_path);
  ensure_scores(candidates);
  std::map<std::string, double> offsets;
  if (!offsets_path.empty()) {
    KvConfig kv = KvConfig::from_file(offsets_path);
    // offsets file: one `model = offset` line per model
    for (const auto& c : candidates)
      offsets[c.model] = kv.get_double(c.model, 0.0);
    kv.reject_unknown_keys();
  }
  const auto winners = select_ensemble(candidates, offsets);
  write_file_atomically(out_path,
                        [&](const std::string& tmp) { write_candidates(tmp, candidates); });
  std::cout << "selected " << winners.size() << " events into " << out_path << "\n";
  return 0;
}

int run_calibrate(const std::string& data_path, const std::string& out_path, double tolerance) {
  auto candidates = read_candidates(data_path);
  ensure_scores(candidates);
  const auto curve = calibration_curve(candidates);
  std::map<std::string, double> report;
  std::vector<double> centers, mious;
  for (size_t i = 0; i < curve.size(); ++i) {
    const std::string p = "bin_" + std::to_string(i) + "_";
    report[p + "center"] = curve[i].center;
    report[p + "mean_iou"] = curve[i].mean_iou;
    report[p + "count"] = curve[i].count;
    centers.push_back(curve[i].center);
    mious.push_back(curve[i].mean_iou);
  }
  if (curve.size() >= 2) report["spearman"] = spearman_correlation(centers, mious);
  try {
    const auto offsets = estimate_offsets(candidates, tolerance);
    for (const auto& [model, off] : offsets) report["offset_" + model] = off;
  } catch (const std::invalid_argument&) {
    // not enough samples per model; the curve is still worth reporting
    report["offsets_available"] = 0.0;
  }
  emit_report(out_path, report);
  return 0;
}

int run_gradcheck(uint64_t seed, const std::string& out_path) {
  GenConfig gen;
  gen.dvc_fraction = 0.25;
  std::vector<DatasetRecord> batch = make_dataset(seed, gen, 3);
  TrainConfig cfg;
  cfg.seed = seed;
  Vocabulary vocab(cfg.pattern_count);
  double worst = 0.0;
  std::map<std::string, double> report;
  for (Arm arm : {Arm::kDirect, Arm::kDist, Arm::kDistReenc}) {
    ToySeqModel model(cfg.model_config(), seed);
    FdResult res =
        check_full_loss_gradients(model, vocab, batch, arm, cfg.weights, 40, 1e-5, seed + 7);
    std::cout << "arm " << to_string(arm) << ": max rel error " << res.max_rel_error << " over "
              << res.evaluated << " coordinates (" << res.rejected << " rejected)\n";
    report["max_rel_error_" + to_string(arm)] = res.max_rel_error;
    worst = std::max(worst, res.max_rel_error);
  }
  report["max_rel_error"] = worst;
  emit_report(out_path, report);
  std::cout << "max rel error " << worst << "\n";
  if (worst >= 1e-4) {
    std::cerr << "gradient check FAILED (>= 1e-4)\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"distribution-based time token toolkit"};
  app.require_subcommand(1);

  uint64_t seed = 1;
  std::string config_path, data_path, out_path, checkpoint_path, arm, refine = "default";
  std::string pred_path, offsets_path;
  double threshold = 0.5, duration = 60.0, tolerance = 0.02;
  int max_new = 24;

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset as JSONL");
  gen->add_option("--seed", seed, "rng seed");
  gen->add_option("--config", config_path, "generation config (key = value)");
  gen->add_option("--out", out_path, "output JSONL path")->required();

  auto* tr = app.add_subcommand("train", "train a model on a dataset");
  tr->add_option("--seed", seed, "rng seed");
  tr->add_option("--config", config_path, "training config (key = value)");
  tr->add_option("--data", data_path, "dataset JSONL")->required();
  tr->add_option("--out", out_path, "output directory (checkpoint.bin, trace.csv)")->required();
  tr->add_option("--arm", arm, "ablation arm: direct|dist|dist_reenc");

  auto* ev = app.add_subcommand("eval", "score predictions or a checkpoint");
  ev->add_option("predictions", pred_path, "prediction JSONL (file mode)");
  ev->add_option("--checkpoint", checkpoint_path, "checkpoint (model mode)");
  ev->add_option("--data", data_path, "ground-truth / dataset JSONL")->required();
  ev->add_option("--refine", refine, "on|off (model mode)");
  ev->add_option("--threshold", threshold, "IoU threshold for the event F1");
  ev->add_option("--out", out_path, "metric report JSON");

  auto* gn = app.add_subcommand("generate", "run a checkpoint over a dataset");
  gn->add_option("--checkpoint", checkpoint_path, "checkpoint")->required();
  gn->add_option("--data", data_path, "dataset JSONL")->required();
  gn->add_option("--refine", refine, "on|off");
  gn->add_option("--duration", duration, "video duration in seconds for rendering");
  gn->add_option("--out", out_path, "prediction JSONL")->required();

  auto* en = app.add_subcommand("ensemble", "pick the best candidate per event");
  en->add_option("--data", data_path, "candidate JSONL")->required();
  en->add_option("--config", offsets_path, "per-model offsets (model = offset)");
  en->add_option("--out", out_path, "output JSONL")->required();

  auto* ca = app.add_subcommand("calibrate", "score-vs-IoU calibration and offsets");
  ca->add_option("--data", data_path, "candidate JSONL with gt")->required();
  ca->add_option("--threshold", tolerance, "offset equality tolerance");
  ca->add_option("--out", out_path, "report JSON");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gc->add_option("--seed", seed, "rng seed");
  gc->add_option("--out", out_path, "report JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return run_gen_data(seed, config_path, out_path);
    if (tr->parsed()) return run_train(seed, config_path, data_path, out_path, arm);
    if (ev->parsed()) {
      if (!checkpoint_path.empty() && !pred_path.empty())
        throw std::invalid_argument("eval: give either a checkpoint or a prediction file");
      std::map<std::string, double> report;
      if (!checkpoint_path.empty())
        report = eval_model(checkpoint_path, data_path, refine, max_new);
      else if (!pred_path.empty())
        report = eval_files(pred_path, data_path, threshold);
      else
        throw std::invalid_argument("eval: need --checkpoint or a prediction file");
      emit_report(out_path, report);
      return 0;
    }
    if (gn->parsed())
      return run_generate(checkpoint_path, data_path, refine, duration, out_path, max_new);
    if (en->parsed()) return run_ensemble(data_path, offsets_path, out_path);
    if (ca->parsed()) return run_calibrate(data_path, out_path, tolerance);
    if (gc->parsed()) return run_gradcheck(seed, out_path);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
