#include "timedist/synthgen.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace timedist {

using nlohmann::json;

std::string to_string(TaskKind task) {
  return task == TaskKind::kMomentRetrieval ? "mr" : "dvc";
}

TaskKind task_from_string(const std::string& s) {
  if (s == "mr") return TaskKind::kMomentRetrieval;
  if (s == "dvc") return TaskKind::kDenseCaptioning;
  throw std::invalid_argument("unknown task kind: " + s);
}

void GenConfig::validate() const {
  if (frames < 2) throw std::invalid_argument("GenConfig: need at least 2 frames");
  if (feature_dim < 1) throw std::invalid_argument("GenConfig: feature_dim must be positive");
  if (pattern_count < 1) throw std::invalid_argument("GenConfig: pattern_count must be positive");
  if (event_min_len < 1 || event_min_len > event_max_len)
    throw std::invalid_argument("GenConfig: bad event length bounds");
  if (event_min_len > frames - 1)
    throw std::invalid_argument("GenConfig: event bounds exceed the frame range");
  if (noise_sigma < 0.0) throw std::invalid_argument("GenConfig: negative noise");
  if (boundary_fuzz < 0.0 || boundary_fuzz > 1.0)
    throw std::invalid_argument("GenConfig: boundary_fuzz outside [0,1]");
  if (dvc_fraction < 0.0 || dvc_fraction > 1.0)
    throw std::invalid_argument("GenConfig: dvc_fraction outside [0,1]");
  if (dvc_fraction > 0.0) {
    if (dvc_min_events < 1 || dvc_min_events > dvc_max_events)
      throw std::invalid_argument("GenConfig: bad dvc event count bounds");
    if (dvc_max_events > pattern_count)
      throw std::invalid_argument("GenConfig: dvc events exceed distinct patterns");
    if (dvc_max_events * event_min_len + 2 * (dvc_max_events - 1) > frames - 1)
      throw std::invalid_argument("GenConfig: dvc event bounds exceed the frame range");
  }
}

Mat pattern_bank(int pattern_count, int feature_dim, uint64_t pattern_seed) {
  Mat bank(pattern_count, feature_dim);
  for (int k = 0; k < pattern_count; ++k) {
    Rng rng(pattern_seed + 0x100000001b3ull * static_cast<uint64_t>(k + 1));
    for (int c = 0; c < feature_dim; ++c) bank(k, c) = rng.normal();
    bank.row(k).normalize();
  }
  return bank;
}

std::string pattern_name(int pattern) { return "pattern_" + std::to_string(pattern); }

namespace {

struct Span {
  int first = 0;  // first in-span frame
  int last = 0;   // last in-span frame
  int pattern = 0;
};

std::vector<Span> draw_spans(Rng& rng, const GenConfig& cfg, TaskKind task) {
  const int top = cfg.frames - 1;
  std::vector<Span> spans;
  if (task == TaskKind::kMomentRetrieval) {
    Span s;
    s.pattern = rng.uniform_int(0, cfg.pattern_count - 1);
    const int len = rng.uniform_int(cfg.event_min_len, std::min(cfg.event_max_len, top));
    s.first = rng.uniform_int(0, top - len);
    s.last = s.first + len;
    spans.push_back(s);
    return spans;
  }
  const int n = rng.uniform_int(cfg.dvc_min_events, cfg.dvc_max_events);
  // distinct patterns via a seeded shuffle
  std::vector<int> order(cfg.pattern_count);
  std::iota(order.begin(), order.end(), 0);
  for (int i = cfg.pattern_count - 1; i > 0; --i)
    std::swap(order[i], order[rng.uniform_int(0, i)]);
  // events keep at least one background frame between them, so the layout
  // needs sum(len) + 2*(n-1) gaps; lengths are drawn under a running
  // feasibility cap so placement always fits
  std::vector<int> lens(n);
  int used = 0;
  for (int i = 0; i < n; ++i) {
    const int reserve = (n - 1 - i) * cfg.event_min_len + 2 * (n - 1);
    const int cap = std::min(cfg.event_max_len, top - reserve - used);
    lens[i] = rng.uniform_int(cfg.event_min_len, cap);
    used += lens[i];
  }
  int slack = top - used - 2 * (n - 1);
  int cursor = 0;
  for (int i = 0; i < n; ++i) {
    const int extra = rng.uniform_int(0, slack);
    slack -= extra;
    Span s;
    s.pattern = order[i];
    s.first = cursor + extra;
    s.last = s.first + lens[i];
    cursor = s.last + 2;
    spans.push_back(s);
  }
  return spans;
}

}  // namespace

GroundingSample gen_sample(uint64_t seed, const GenConfig& config) {
  config.validate();
  Rng rng(seed);
  GroundingSample sample;
  sample.task = (config.dvc_fraction > 0.0 && rng.uniform() < config.dvc_fraction)
                    ? TaskKind::kDenseCaptioning
                    : TaskKind::kMomentRetrieval;
  const std::vector<Span> spans = draw_spans(rng, config, sample.task);
  const Mat bank = pattern_bank(config.pattern_count, config.feature_dim, config.pattern_seed);
  const int top = config.frames - 1;

  sample.timestamps.resize(config.frames);
  for (int f = 0; f < config.frames; ++f)
    sample.timestamps[f] = static_cast<double>(f) / top;

  std::vector<int> frame_pattern(config.frames, -1);
  for (const Span& s : spans)
    for (int f = s.first; f <= s.last; ++f) frame_pattern[f] = s.pattern;

  sample.frames.resize(config.frames);
  for (int f = 0; f < config.frames; ++f) {
    Eigen::VectorXd v(config.feature_dim);
    for (int c = 0; c < config.feature_dim; ++c) v(c) = rng.normal(0.0, config.noise_sigma);
    if (frame_pattern[f] >= 0)
      v += config.signal_magnitude * bank.row(frame_pattern[f]).transpose();
    sample.frames[f] = std::move(v);
  }

  // boundary ambiguity: edge frames may carry only half the signal
  for (const Span& s : spans) {
    for (int edge : {s.first, s.last}) {
      const bool fuzz = rng.uniform() < config.boundary_fuzz;
      if (!fuzz) continue;
      Eigen::VectorXd bg(config.feature_dim);
      for (int c = 0; c < config.feature_dim; ++c) bg(c) = rng.normal(0.0, config.noise_sigma);
      sample.frames[edge] = 0.5 * sample.frames[edge] + 0.5 * bg;
      if (s.first == s.last) break;  // single-frame span has one edge
    }
  }

  for (const Span& s : spans) {
    sample.segments.push_back(make_segment(static_cast<double>(s.first) / top,
                                           static_cast<double>(s.last) / top));
    sample.patterns.push_back(s.pattern);
  }
  sample.query = sample.task == TaskKind::kMomentRetrieval ? spans[0].pattern : -1;
  return sample;
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

const std::array<std::string, 5>& mr_instruction_templates() {
  static const std::array<std::string, 5> bank = {
      "Give you a textual query: <query_placeholder>. When does the described content occur in "
      "the video? Please return the timestamp.",
      "Here is a text query:<query_placeholder>. At what point in the video does the described "
      "event happen? Please provide the timestamp.",
      "Analyze the event description:<query_placeholder>. At what moment in the video does the "
      "described event take place? Return the timestamp.",
      "Consider the query: <query_placeholder>. When is the described event occurring in the "
      "video? Kindly provide the timestamp.",
      "Examine the following text query: <query_placeholder>. When is the described event taking "
      "place in the video? Please return the timestamp."};
  return bank;
}

const std::array<std::string, 5>& mr_answer_templates() {
  static const std::array<std::string, 5> bank = {
      "The event occurs at <TIME_STAMP>.", "The described event takes place at <TIME_STAMP>.",
      "This situation happens at <TIME_STAMP>.", "This event is at <TIME_STAMP>.",
      "It takes place at <TIME_STAMP>."};
  return bank;
}

const std::array<std::string, 5>& dvc_instruction_templates() {
  static const std::array<std::string, 5> bank = {
      "Identify and localize a series of steps or actions occurring in the video, providing "
      "start and end timestamps and related descriptions.",
      "Localize a series of action steps in the given video, output a start and end timestamp "
      "for each step, and briefly describe the step.",
      "Capture and describe the activity events in the given video, specifying their respective "
      "time intervals, and output the time.",
      "Pinpoint the time intervals of activity events in the video, and provide detailed "
      "descriptions for each event.",
      "Detect and report the start and end timestamps of activity events in the video, along "
      "with descriptions."};
  return bank;
}

// ---------------------------------------------------------------------------
// Instruction records
// ---------------------------------------------------------------------------

int count_markers(const std::string& text) {
  static const std::string kMarker = "<TIME_STAMP>";
  int n = 0;
  size_t pos = 0;
  while ((pos = text.find(kMarker, pos)) != std::string::npos) {
    ++n;
    pos += kMarker.size();
  }
  return n;
}

void InstructionRecord::validate() const {
  if (count_markers(answer_template) != static_cast<int>(payloads.size()))
    throw std::invalid_argument("InstructionRecord: marker/payload count mismatch");
  if (task != "mr" && task != "dvc")
    throw std::invalid_argument("InstructionRecord: unknown task");
}

namespace {

std::string replace_once(std::string text, const std::string& needle, const std::string& value) {
  const size_t pos = text.find(needle);
  if (pos == std::string::npos) return text;
  text.replace(pos, needle.size(), value);
  return text;
}

std::string dvc_answer_text(const GroundingSample& sample) {
  std::string out;
  for (size_t i = 0; i < sample.segments.size(); ++i) {
    if (i > 0) out += " ";
    out += "<TIME_STAMP>, " + pattern_name(sample.patterns[i]) + ".";
  }
  return out;
}

}  // namespace

InstructionRecord write_instruction(const GroundingSample& sample, Rng& rng) {
  InstructionRecord rec;
  rec.task = to_string(sample.task);
  rec.query = sample.query;
  rec.payloads = sample.segments;
  if (sample.task == TaskKind::kMomentRetrieval) {
    rec.instruction_template = rng.uniform_int(0, 4);
    rec.answer_format = rng.uniform_int(0, 4);
    rec.instruction = replace_once(mr_instruction_templates()[rec.instruction_template],
                                   "<query_placeholder>", pattern_name(sample.query));
    rec.answer_template = mr_answer_templates()[rec.answer_format];
  } else {
    rec.instruction_template = rng.uniform_int(0, 4);
    rec.answer_format = 0;
    rec.instruction = dvc_instruction_templates()[rec.instruction_template];
    rec.answer_template = dvc_answer_text(sample);
  }
  rec.validate();
  return rec;
}

std::string render_segment(const TimeSegment& seg, double duration_seconds) {
  if (duration_seconds <= 0.0) throw std::invalid_argument("render_segment: duration must be > 0");
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1fs - %.1fs", seg.start() * duration_seconds,
                seg.end() * duration_seconds);
  return buf;
}

std::string render_final_answer(const InstructionRecord& record, double duration_seconds) {
  record.validate();
  static const std::string kMarker = "<TIME_STAMP>";
  std::string out = record.answer_template;
  size_t pos = 0;
  for (const TimeSegment& seg : record.payloads) {
    pos = out.find(kMarker, pos);
    const std::string text = render_segment(seg, duration_seconds);
    out.replace(pos, kMarker.size(), text);
    pos += text.size();
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSONL
// ---------------------------------------------------------------------------

std::string to_jsonl_line(const DatasetRecord& record) {
  record.instruction.validate();
  json j;
  json frames = json::array();
  for (const auto& f : record.sample.frames) {
    json row = json::array();
    for (Eigen::Index i = 0; i < f.size(); ++i) row.push_back(f(i));
    frames.push_back(std::move(row));
  }
  j["frames"] = std::move(frames);
  j["timestamps"] = record.sample.timestamps;
  j["query"] = record.sample.query;
  json segs = json::array();
  for (const auto& s : record.sample.segments) segs.push_back({s.start(), s.end()});
  j["segments"] = std::move(segs);
  j["task"] = to_string(record.sample.task);
  j["instruction"] = record.instruction.instruction;
  j["answer_template"] = record.instruction.answer_template;
  return j.dump();
}

namespace {

// Template indices are not serialized; they are recovered by matching the
// texts back against the banks.
void recover_template_indices(DatasetRecord& rec) {
  auto& ir = rec.instruction;
  if (rec.sample.task == TaskKind::kMomentRetrieval) {
    for (int i = 0; i < 5; ++i) {
      if (replace_once(mr_instruction_templates()[i], "<query_placeholder>",
                       pattern_name(rec.sample.query)) == ir.instruction)
        ir.instruction_template = i;
      if (mr_answer_templates()[i] == ir.answer_template) ir.answer_format = i;
    }
  } else {
    for (int i = 0; i < 5; ++i)
      if (dvc_instruction_templates()[i] == ir.instruction) ir.instruction_template = i;
    ir.answer_format = 0;
  }
}

// "<TIME_STAMP>, pattern_k." blocks carry the per-event pattern ids
std::vector<int> recover_patterns(const DatasetRecord& rec) {
  if (rec.sample.task == TaskKind::kMomentRetrieval)
    return std::vector<int>(rec.sample.segments.size(), rec.sample.query);
  std::vector<int> out;
  const std::string& text = rec.instruction.answer_template;
  static const std::string kPrefix = "pattern_";
  size_t pos = 0;
  while ((pos = text.find(kPrefix, pos)) != std::string::npos) {
    pos += kPrefix.size();
    size_t end = pos;
    while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) ++end;
    out.push_back(std::stoi(text.substr(pos, end - pos)));
    pos = end;
  }
  return out;
}

}  // namespace

DatasetRecord parse_jsonl_line(const std::string& line) {
  const json j = json::parse(line);
  DatasetRecord rec;
  rec.sample.task = task_from_string(j.at("task").get<std::string>());
  rec.sample.query = j.at("query").get<int>();
  rec.sample.timestamps = j.at("timestamps").get<std::vector<double>>();
  for (const auto& row : j.at("frames")) {
    Eigen::VectorXd v(row.size());
    for (size_t i = 0; i < row.size(); ++i) v(static_cast<Eigen::Index>(i)) = row[i].get<double>();
    rec.sample.frames.push_back(std::move(v));
  }
  for (const auto& seg : j.at("segments"))
    rec.sample.segments.push_back(make_segment(seg.at(0).get<double>(), seg.at(1).get<double>()));
  rec.instruction.instruction = j.at("instruction").get<std::string>();
  rec.instruction.answer_template = j.at("answer_template").get<std::string>();
  rec.instruction.task = j.at("task").get<std::string>();
  rec.instruction.query = rec.sample.query;
  rec.instruction.payloads = rec.sample.segments;
  rec.sample.patterns = recover_patterns(rec);
  recover_template_indices(rec);
  rec.instruction.validate();
  return rec;
}

std::vector<DatasetRecord> make_dataset(uint64_t seed, const GenConfig& config, int count) {
  if (count < 1) throw std::invalid_argument("make_dataset: count must be positive");
  std::vector<DatasetRecord> out;
  out.reserve(count);
  auto mix = [](uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  };
  for (int i = 0; i < count; ++i) {
    DatasetRecord rec;
    rec.sample = gen_sample(mix(seed, 2ull * i), config);
    Rng irng(mix(seed, 2ull * i + 1));
    rec.instruction = write_instruction(rec.sample, irng);
    out.push_back(std::move(rec));
  }
  return out;
}

void write_dataset(const std::string& path, const std::vector<DatasetRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_dataset: cannot open " + path);
  for (const auto& rec : records) os << to_jsonl_line(rec) << '\n';
  if (!os) throw std::runtime_error("write_dataset: write failed for " + path);
}

std::vector<DatasetRecord> read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::invalid_argument("read_dataset: cannot open " + path);
  std::vector<DatasetRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse_jsonl_line(line));
    } catch (const std::exception& e) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace timedist
