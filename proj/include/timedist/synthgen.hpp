#pragma once

#include "timedist/core.hpp"
#include "timedist/numerics.hpp"

#include <array>
#include <string>
#include <vector>

namespace timedist {

enum class TaskKind { kMomentRetrieval, kDenseCaptioning };

std::string to_string(TaskKind task);
TaskKind task_from_string(const std::string& s);

/// Knobs for the synthetic grounding tasks. Pattern feature directions are
/// derived from `pattern_seed` alone so every sample of a pattern shares the
/// same signal regardless of the per-sample seed.
struct GenConfig {
  int frames = 16;              // T
  int feature_dim = 16;         // d_v
  int pattern_count = 4;        // K
  int event_min_len = 2;        // span length in frame gaps
  int event_max_len = 10;
  double signal_magnitude = 1.0;
  double noise_sigma = 0.25;
  double boundary_fuzz = 0.3;   // chance to blend a span edge 50/50 with background
  double dvc_fraction = 0.0;    // share of dense-captioning samples
  int dvc_min_events = 2;
  int dvc_max_events = 4;
  uint64_t pattern_seed = 0x9e3779b9u;

  void validate() const;
};

/// One synthetic video with its query and ground-truth segment(s).
struct GroundingSample {
  std::vector<Eigen::VectorXd> frames;
  std::vector<double> timestamps;      // i/(T-1)
  int query = -1;                      // pattern id for MR, -1 for DVC
  std::vector<TimeSegment> segments;   // sorted by start for DVC
  std::vector<int> patterns;           // pattern id per segment
  TaskKind task = TaskKind::kMomentRetrieval;
};

/// Pattern signal directions (unit L2 rows, K x d_v).
Mat pattern_bank(int pattern_count, int feature_dim, uint64_t pattern_seed);

/// Pure function of (seed, config).
GroundingSample gen_sample(uint64_t seed, const GenConfig& config);

std::string pattern_name(int pattern);

// Instruction templates. MR instructions carry a <query_placeholder>; every
// answer template carries one <TIME_STAMP> marker per event.
const std::array<std::string, 5>& mr_instruction_templates();
const std::array<std::string, 5>& mr_answer_templates();
const std::array<std::string, 5>& dvc_instruction_templates();

/// A single-turn conversation: filled instruction, answer text with
/// <TIME_STAMP> markers, and one segment payload per marker.
struct InstructionRecord {
  std::string instruction;
  std::string answer_template;
  std::vector<TimeSegment> payloads;
  std::string task;  // "mr" | "dvc"
  int query = -1;
  int instruction_template = 0;
  int answer_format = 0;

  void validate() const;

  friend bool operator==(const InstructionRecord&, const InstructionRecord&) = default;
};

int count_markers(const std::string& text);

InstructionRecord write_instruction(const GroundingSample& sample, Rng& rng);

/// Replaces each marker with "Xs - Ys" (one decimal place) scaled to the
/// given duration in seconds.
std::string render_final_answer(const InstructionRecord& record, double duration_seconds);
std::string render_segment(const TimeSegment& seg, double duration_seconds);

// ---------------------------------------------------------------------------
// Dataset JSONL
// ---------------------------------------------------------------------------

struct DatasetRecord {
  GroundingSample sample;
  InstructionRecord instruction;
};

std::string to_jsonl_line(const DatasetRecord& record);
DatasetRecord parse_jsonl_line(const std::string& line);

std::vector<DatasetRecord> make_dataset(uint64_t seed, const GenConfig& config, int count);

void write_dataset(const std::string& path, const std::vector<DatasetRecord>& records);
std::vector<DatasetRecord> read_dataset(const std::string& path);

}  // namespace timedist
