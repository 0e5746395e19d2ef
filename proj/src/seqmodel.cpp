#include "timedist/seqmodel.hpp"

#include "timedist/serialize.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace timedist {

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

namespace {

const std::vector<std::string>& template_words() {
  static const std::vector<std::string> words = {"the",  "event",     "occurs",  "at",
                                                 "described", "takes", "place",   "this",
                                                 "situation", "happens", "is",    "it"};
  return words;
}

constexpr int kNumeralCount = 10;

}  // namespace

Vocabulary::Vocabulary(int pattern_count) : pattern_count_(pattern_count) {
  if (pattern_count < 1) throw std::invalid_argument("Vocabulary: pattern_count must be positive");
  id_to_text_ = {"<eos>", "<time_stamp>", "<unk>", ",", ".", "describe"};
  for (int i = 0; i < kNumeralCount; ++i) id_to_text_.push_back(std::to_string(i));
  for (const auto& w : template_words()) id_to_text_.push_back(w);
  for (int k = 0; k < pattern_count; ++k) id_to_text_.push_back("pattern_" + std::to_string(k));
  for (int i = 0; i < static_cast<int>(id_to_text_.size()); ++i) text_to_id_[id_to_text_[i]] = i;
}

int Vocabulary::pattern_token(int pattern) const {
  if (pattern < 0 || pattern >= pattern_count_)
    throw std::out_of_range("Vocabulary::pattern_token");
  return size() - pattern_count_ + pattern;
}

const std::string& Vocabulary::text_of(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("Vocabulary::text_of");
  return id_to_text_[id];
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = text_to_id_.find(token);
  return it == text_to_id_.end() ? unk() : it->second;
}

std::vector<int> Vocabulary::tokenize_words(const std::string& text) const {
  std::vector<int> ids;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      ids.push_back(id_of(word));
      word.clear();
    }
  };
  for (char c : text) {
    if (c == ',' || c == '.') {
      flush();
      ids.push_back(c == ',' ? comma() : period());
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return ids;
}

Vocabulary Vocabulary::from_size(int size) {
  const int base = 6 + kNumeralCount + static_cast<int>(template_words().size());
  if (size <= base) throw std::invalid_argument("Vocabulary::from_size: size too small");
  return Vocabulary(size - base);
}

// ---------------------------------------------------------------------------
// Sequences
// ---------------------------------------------------------------------------

InputSequence compose_input(const std::vector<FrameFeature>& frames,
                            const std::vector<int>& query_ids,
                            const std::vector<SeqItem>& answer_items) {
  if (frames.empty()) throw std::invalid_argument("compose_input: frames must be non-empty");
  double prev = 0.0;
  for (const auto& f : frames) {
    if (f.timestamp < 0.0 || f.timestamp > 1.0)
      throw std::invalid_argument("compose_input: frame timestamp outside [0,1]");
    if (f.timestamp < prev)
      throw std::invalid_argument("compose_input: frame timestamps must be non-decreasing");
    prev = f.timestamp;
  }
  InputSequence seq;
  seq.items.reserve(2 * frames.size() + query_ids.size() + answer_items.size());
  for (const auto& f : frames) {
    seq.items.emplace_back(TimeMarker{f.timestamp});
    seq.items.emplace_back(f);
  }
  for (int id : query_ids) seq.items.emplace_back(QueryTok{id});
  for (const auto& item : answer_items) seq.items.push_back(item);
  return seq;
}

std::vector<SeqItem> tokenize_answer(const Vocabulary& vocab, const std::string& answer_template,
                                     const std::vector<TimeSegment>& payloads) {
  static const std::string kMarker = "<TIME_STAMP>";
  std::vector<SeqItem> items;
  size_t pos = 0;
  size_t used = 0;
  while (pos < answer_template.size()) {
    const size_t hit = answer_template.find(kMarker, pos);
    const std::string chunk = answer_template.substr(pos, hit == std::string::npos ? std::string::npos
                                                                                   : hit - pos);
    for (int id : vocab.tokenize_words(chunk)) items.emplace_back(AnswerTok{id});
    if (hit == std::string::npos) break;
    if (used >= payloads.size())
      throw std::invalid_argument("tokenize_answer: more markers than payloads");
    items.emplace_back(TimeStampSlot{payloads[used++]});
    pos = hit + kMarker.size();
  }
  if (used != payloads.size())
    throw std::invalid_argument("tokenize_answer: marker/payload count mismatch");
  items.emplace_back(AnswerTok{vocab.eos()});
  return items;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

Arm arm_from_string(const std::string& s) {
  if (s == "direct") return Arm::kDirect;
  if (s == "dist") return Arm::kDist;
  if (s == "dist_reenc") return Arm::kDistReenc;
  throw std::invalid_argument("unknown arm: " + s);
}

std::string to_string(Arm arm) {
  switch (arm) {
    case Arm::kDirect: return "direct";
    case Arm::kDist: return "dist";
    case Arm::kDistReenc: return "dist_reenc";
  }
  throw std::logic_error("bad arm");
}

void ModelConfig::validate() const {
  if (d < 1 || d_v < 1 || core_layers < 1 || d_ff < 1 || max_len < 4 || vocab_size < 4 ||
      reg_max < 1 || codec_layers < 1 || codec_width < 1)
    throw std::invalid_argument("ModelConfig: non-positive dimension");
  if (delta <= 0.0) throw std::invalid_argument("ModelConfig: delta must be positive");
  if (time_stamp_id < 0 || time_stamp_id >= vocab_size || eos_id < 0 || eos_id >= vocab_size ||
      time_stamp_id == eos_id)
    throw std::invalid_argument("ModelConfig: bad reserved token ids");
}

namespace {

Mat fan_uniform(int rows, int cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / (rows + cols));
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
  return m;
}

TimeDecoder make_decoder(const ModelConfig& cfg, uint64_t seed) {
  Rng rng(seed ^ 0xdec0dec0dec0ull);
  return TimeDecoder(cfg.d, AnchorGrid(cfg.reg_max), cfg.codec_layers, cfg.codec_width, rng);
}

TimeEncoder make_encoder(const ModelConfig& cfg, uint64_t seed) {
  Rng rng(seed ^ 0xe2c0e2c0e2c0ull);
  return TimeEncoder(cfg.d, AnchorGrid(cfg.reg_max), cfg.delta, cfg.codec_layers, cfg.codec_width,
                     rng);
}

Mat causal_mask(int n) {
  Mat m = Mat::Zero(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = r + 1; c < n; ++c) m(r, c) = -1e9;
  return m;
}

}  // namespace

ToySeqModel::ToySeqModel(const ModelConfig& config, uint64_t seed)
    : config_(config),
      time_decoder(make_decoder(config, seed)),
      time_encoder(make_encoder(config, seed)) {
  config_.validate();
  Rng rng(seed);
  frame_w = fan_uniform(config_.d_v, config_.d, rng);
  frame_b = Mat::Zero(1, config_.d);
  token_emb = fan_uniform(config_.vocab_size, config_.d, rng);
  pos_emb = fan_uniform(config_.max_len, config_.d, rng);
  blocks.resize(config_.core_layers);
  for (auto& blk : blocks) {
    blk.wq = fan_uniform(config_.d, config_.d, rng);
    blk.wk = fan_uniform(config_.d, config_.d, rng);
    blk.wv = fan_uniform(config_.d, config_.d, rng);
    blk.wo = fan_uniform(config_.d, config_.d, rng);
    blk.norm1_g = Mat::Ones(1, config_.d);
    blk.norm2_g = Mat::Ones(1, config_.d);
    blk.ffn_w1 = fan_uniform(config_.d, config_.d_ff, rng);
    blk.ffn_b1 = Mat::Zero(1, config_.d_ff);
    blk.ffn_w2 = fan_uniform(config_.d_ff, config_.d, rng);
    blk.ffn_b2 = Mat::Zero(1, config_.d);
  }
  head_w = fan_uniform(config_.d, config_.vocab_size, rng);
  head_b = Mat::Zero(1, config_.vocab_size);
  direct_w = fan_uniform(config_.d, 2, rng);
  direct_b = Mat::Zero(1, 2);
}

ParamSet ToySeqModel::params() {
  ParamSet ps;
  ps.add("frame_w", &frame_w);
  ps.add("frame_b", &frame_b);
  ps.add("token_emb", &token_emb);
  ps.add("pos_emb", &pos_emb);
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    auto& blk = blocks[i];
    ps.add(p + "wq", &blk.wq);
    ps.add(p + "wk", &blk.wk);
    ps.add(p + "wv", &blk.wv);
    ps.add(p + "wo", &blk.wo);
    ps.add(p + "norm1_g", &blk.norm1_g);
    ps.add(p + "norm2_g", &blk.norm2_g);
    ps.add(p + "ffn_w1", &blk.ffn_w1);
    ps.add(p + "ffn_b1", &blk.ffn_b1);
    ps.add(p + "ffn_w2", &blk.ffn_w2);
    ps.add(p + "ffn_b2", &blk.ffn_b2);
  }
  ps.add("head_w", &head_w);
  ps.add("head_b", &head_b);
  ps.add("direct_w", &direct_w);
  ps.add("direct_b", &direct_b);
  auto add_stack = [&ps](const std::string& prefix, DenseStack& stack) {
    for (size_t i = 0; i < stack.layers().size(); ++i) {
      ps.add(prefix + ".w" + std::to_string(i), &stack.layers()[i].w);
      ps.add(prefix + ".b" + std::to_string(i), &stack.layers()[i].b);
    }
  };
  add_stack("time_decoder", time_decoder.stack());
  add_stack("time_encoder", time_encoder.stack());
  return ps;
}

ParamSet ToySeqModel::trainable_params(bool train_frame_projector) {
  ParamSet all = params();
  if (train_frame_projector) return all;
  ParamSet ps;
  for (const auto& e : all.entries())
    if (e.name != "frame_w" && e.name != "frame_b") ps.add(e.name, e.mat);
  return ps;
}

Var ToySeqModel::embed_sequence(Tape& tape, ParamBinding& bind, const std::vector<SeqItem>& items,
                                EmbedPolicy policy) const {
  if (items.empty()) throw std::invalid_argument("embed_sequence: empty sequence");
  if (static_cast<int>(items.size()) > config_.max_len)
    throw std::invalid_argument("embed_sequence: sequence longer than max_len");
  std::vector<Var> rows;
  rows.reserve(items.size());
  for (const auto& item : items) {
    if (const auto* marker = std::get_if<TimeMarker>(&item)) {
      const TimeSegment instant = make_segment(marker->timestamp, marker->timestamp);
      rows.push_back(encode_token(tape, time_encoder, instant,
                                  [&bind](const Mat& m) { return bind(m); }));
    } else if (const auto* frame = std::get_if<FrameFeature>(&item)) {
      if (frame->feature.size() != config_.d_v)
        throw std::invalid_argument("embed_sequence: frame feature width mismatch");
      Var feat = tape.leaf(frame->feature.transpose());
      rows.push_back(add_rowvec(tape, matmul(tape, feat, bind(frame_w)), bind(frame_b)));
    } else if (const auto* q = std::get_if<QueryTok>(&item)) {
      rows.push_back(pick_row(tape, bind(token_emb), q->id));
    } else if (const auto* a = std::get_if<AnswerTok>(&item)) {
      rows.push_back(pick_row(tape, bind(token_emb), a->id));
    } else if (const auto* slot = std::get_if<TimeStampSlot>(&item)) {
      if (policy.reencode_slots) {
        rows.push_back(encode_token(tape, time_encoder, slot->target,
                                    [&bind](const Mat& m) { return bind(m); }));
      } else {
        rows.push_back(pick_row(tape, bind(token_emb), config_.time_stamp_id));
      }
    }
  }
  Var x = vstack(tape, rows);
  return add(tape, x, slice_rows(tape, bind(pos_emb), 0, static_cast<int>(items.size())));
}

Var ToySeqModel::core_forward(Tape& tape, ParamBinding& bind, Var x) const {
  const int n = static_cast<int>(tape.value(x).rows());
  const Mat mask = causal_mask(n);
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(config_.d));
  for (const auto& blk : blocks) {
    Var normed = rms_norm_rows(tape, x, bind(blk.norm1_g));
    Var q = matmul(tape, normed, bind(blk.wq));
    Var k = matmul(tape, normed, bind(blk.wk));
    Var v = matmul(tape, normed, bind(blk.wv));
    Var scores = add_const(tape, scale(tape, matmul(tape, q, transpose(tape, k)), att_scale), mask);
    Var ctx = matmul(tape, softmax_rows(tape, scores), v);
    x = add(tape, x, matmul(tape, ctx, bind(blk.wo)));
    Var normed2 = rms_norm_rows(tape, x, bind(blk.norm2_g));
    Var h1 = relu(tape, add_rowvec(tape, matmul(tape, normed2, bind(blk.ffn_w1)), bind(blk.ffn_b1)));
    Var ff = add_rowvec(tape, matmul(tape, h1, bind(blk.ffn_w2)), bind(blk.ffn_b2));
    x = add(tape, x, ff);
  }
  return x;
}

namespace {

// keeps a poisoned forward alive long enough for the loss to surface it
TimeSegment decoded_or_empty(double st, double et) {
  if (!std::isfinite(st) || !std::isfinite(et)) return TimeSegment{};
  return make_segment(st, et);
}

}  // namespace

ToySeqModel::SlotOutput ToySeqModel::decode_slot(Tape& tape, ParamBinding& bind, Var hidden,
                                                 int emit_position, Arm arm) const {
  SlotOutput out;
  Var h_row = pick_row(tape, hidden, emit_position);
  if (arm == Arm::kDirect) {
    Var z = add_rowvec(tape, matmul(tape, h_row, bind(direct_w)), bind(direct_b));
    Var squashed = sigmoid(tape, z);
    out.direct_start = slice_cols(tape, squashed, 0, 1);
    out.direct_end = slice_cols(tape, squashed, 1, 1);
    out.decoded = decoded_or_empty(tape.scalar(out.direct_start), tape.scalar(out.direct_end));
  } else {
    Var logits = decoder_logits(tape, time_decoder, h_row, [&bind](const Mat& m) { return bind(m); });
    SplitLogits halves = split_halves(tape, logits, time_decoder.grid());
    out.start_logits = halves.start;
    out.end_logits = halves.end;
    out.exp_start = expected_time(tape, halves.start, time_decoder.grid());
    out.exp_end = expected_time(tape, halves.end, time_decoder.grid());
    out.decoded = decoded_or_empty(tape.scalar(out.exp_start), tape.scalar(out.exp_end));
  }
  return out;
}

ToySeqModel::ForwardResult ToySeqModel::forward_teacher_forced(Tape& tape, ParamBinding& bind,
                                                               const InputSequence& seq,
                                                               Arm arm) const {
  EmbedPolicy policy{arm == Arm::kDistReenc};
  Var x = embed_sequence(tape, bind, seq.items, policy);
  ForwardResult result;
  result.hidden = core_forward(tape, bind, x);
  result.logits = add_rowvec(tape, matmul(tape, result.hidden, bind(head_w)), bind(head_b));
  const int n = seq.length();
  result.ntp_targets.assign(n, -1);
  for (int p = 0; p + 1 < n; ++p) {
    const SeqItem& next = seq.items[p + 1];
    if (const auto* a = std::get_if<AnswerTok>(&next)) {
      result.ntp_targets[p] = a->id;
    } else if (std::holds_alternative<TimeStampSlot>(next)) {
      result.ntp_targets[p] = config_.time_stamp_id;
    }
  }
  for (int s = 0; s < n; ++s) {
    if (const auto* slot = std::get_if<TimeStampSlot>(&seq.items[s])) {
      if (s == 0) throw std::invalid_argument("forward_teacher_forced: slot cannot open a sequence");
      SlotOutput so = decode_slot(tape, bind, result.hidden, s - 1, arm);
      so.position = s;
      so.target = slot->target;
      result.slots.push_back(std::move(so));
    }
  }
  return result;
}

std::vector<ToySeqModel::OutputItem> ToySeqModel::generate(const std::vector<FrameFeature>& frames,
                                                           const std::vector<int>& query_ids,
                                                           int max_new_items, bool refine,
                                                           Arm arm) const {
  if (max_new_items < 1) throw std::invalid_argument("generate: max_new_items must be >= 1");
  std::vector<SeqItem> items = compose_input(frames, query_ids).items;
  EmbedPolicy policy{refine};
  std::vector<OutputItem> output;
  for (int step = 0; step < max_new_items; ++step) {
    if (static_cast<int>(items.size()) >= config_.max_len) break;
    Tape tape;
    ParamBinding bind(tape);
    Var x = embed_sequence(tape, bind, items, policy);
    Var hidden = core_forward(tape, bind, x);
    const int last = static_cast<int>(items.size()) - 1;
    Var logit_row =
        add_rowvec(tape, matmul(tape, pick_row(tape, hidden, last), bind(head_w)), bind(head_b));
    Eigen::Index emitted = 0;
    tape.value(logit_row).row(0).maxCoeff(&emitted);
    const int id = static_cast<int>(emitted);
    if (id == config_.eos_id) break;
    if (id == config_.time_stamp_id) {
      SlotOutput slot = decode_slot(tape, bind, hidden, last, arm);
      OutputItem item;
      item.is_segment = true;
      item.segment = slot.decoded;
      output.push_back(item);
      items.emplace_back(TimeStampSlot{slot.decoded});
    } else {
      OutputItem item;
      item.token_id = id;
      output.push_back(item);
      items.emplace_back(AnswerTok{id});
    }
  }
  return output;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_model(std::ostream& os, const ToySeqModel& model, Arm arm, bool refine_default) {
  const ModelConfig& c = model.config();
  snapshot::write_magic(os);
  snapshot::write_tag(os, "MDL");
  for (int v : {c.d, c.d_v, c.core_layers, c.d_ff, c.max_len, c.vocab_size, c.reg_max,
                c.codec_layers, c.codec_width, c.time_stamp_id, c.eos_id})
    snapshot::write_u32(os, static_cast<uint32_t>(v));
  snapshot::write_u32(os, static_cast<uint32_t>(arm));
  snapshot::write_u32(os, refine_default ? 1u : 0u);
  snapshot::write_f64(os, c.delta);
  ParamSet ps = const_cast<ToySeqModel&>(model).params();
  for (const auto& e : ps.entries()) snapshot::write_mat(os, *e.mat);
}

ModelCheckpoint load_model(std::istream& is) {
  snapshot::expect_magic(is);
  snapshot::expect_tag(is, "MDL");
  ModelConfig c;
  c.d = static_cast<int>(snapshot::read_u32(is));
  c.d_v = static_cast<int>(snapshot::read_u32(is));
  c.core_layers = static_cast<int>(snapshot::read_u32(is));
  c.d_ff = static_cast<int>(snapshot::read_u32(is));
  c.max_len = static_cast<int>(snapshot::read_u32(is));
  c.vocab_size = static_cast<int>(snapshot::read_u32(is));
  c.reg_max = static_cast<int>(snapshot::read_u32(is));
  c.codec_layers = static_cast<int>(snapshot::read_u32(is));
  c.codec_width = static_cast<int>(snapshot::read_u32(is));
  c.time_stamp_id = static_cast<int>(snapshot::read_u32(is));
  c.eos_id = static_cast<int>(snapshot::read_u32(is));
  const uint32_t arm_word = snapshot::read_u32(is);
  if (arm_word > 2) throw std::runtime_error("load_model: bad arm word");
  const bool refine_default = snapshot::read_u32(is) != 0;
  c.delta = snapshot::read_f64(is);
  ModelCheckpoint ckpt{ToySeqModel(c, 0), static_cast<Arm>(arm_word), refine_default};
  ParamSet ps = ckpt.model.params();
  for (const auto& e : ps.entries()) snapshot::read_mat(is, *e.mat);
  return ckpt;
}

void save_model_file(const std::string& path, const ToySeqModel& model, Arm arm,
                     bool refine_default) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_model_file: cannot open " + path);
  save_model(os, model, arm, refine_default);
  if (!os) throw std::runtime_error("save_model_file: write failed for " + path);
}

ModelCheckpoint load_model_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_model_file: cannot open " + path);
  return load_model(is);
}

}  // namespace timedist
