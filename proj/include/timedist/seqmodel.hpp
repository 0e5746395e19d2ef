#pragma once

#include "timedist/codec.hpp"
#include "timedist/core.hpp"
#include "timedist/losses.hpp"
#include "timedist/numerics.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace timedist {

/// Token inventory for the toy model: end-of-sequence, the reserved
/// <TIME_STAMP> id, punctuation, the answer-template words, numerals
/// (reserved for a text-numeral baseline), and one token per pattern.
class Vocabulary {
 public:
  explicit Vocabulary(int pattern_count);

  int size() const { return static_cast<int>(id_to_text_.size()); }
  int pattern_count() const { return pattern_count_; }

  int eos() const { return 0; }
  int time_stamp() const { return 1; }
  int unk() const { return 2; }
  int comma() const { return 3; }
  int period() const { return 4; }
  int dvc_task() const { return 5; }
  int pattern_token(int pattern) const;

  const std::string& text_of(int id) const;
  int id_of(const std::string& token) const;  // unk() when unknown

  /// Splits plain answer text (no <TIME_STAMP> markers) into ids; commas and
  /// periods become their own tokens, words are lowercased.
  std::vector<int> tokenize_words(const std::string& text) const;

  /// Reconstructs a vocabulary from its size (the layout is fixed).
  static Vocabulary from_size(int size);

 private:
  int pattern_count_;
  std::vector<std::string> id_to_text_;
  std::unordered_map<std::string, int> text_to_id_;
};

// ---------------------------------------------------------------------------
// Input sequences
// ---------------------------------------------------------------------------

struct TimeMarker {
  double timestamp = 0.0;  // frame time token, encoded with start = end = t
};

struct FrameFeature {
  Eigen::VectorXd feature;
  double timestamp = 0.0;
};

struct QueryTok {
  int id = 0;
};

struct AnswerTok {
  int id = 0;
};

/// Placeholder for a time token inside an answer. `target` is the
/// ground-truth payload during teacher forcing, or the decoded segment when
/// a generated sequence is replayed.
struct TimeStampSlot {
  TimeSegment target;
};

using SeqItem = std::variant<TimeMarker, FrameFeature, QueryTok, AnswerTok, TimeStampSlot>;

struct InputSequence {
  std::vector<SeqItem> items;
  int length() const { return static_cast<int>(items.size()); }
};

/// Interleaves a time marker before every frame, then appends query tokens
/// and (for training) the answer items. Frames must be non-empty with
/// non-decreasing timestamps in [0,1].
InputSequence compose_input(const std::vector<FrameFeature>& frames,
                            const std::vector<int>& query_ids,
                            const std::vector<SeqItem>& answer_items = {});

/// Turns an answer template ("The event occurs at <TIME_STAMP>.") plus its
/// payload segments into answer items, appending end-of-sequence.
std::vector<SeqItem> tokenize_answer(const Vocabulary& vocab, const std::string& answer_template,
                                     const std::vector<TimeSegment>& payloads);

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

enum class Arm { kDirect, kDist, kDistReenc };

Arm arm_from_string(const std::string& s);
std::string to_string(Arm arm);

struct ModelConfig {
  int d = 64;             // model width
  int d_v = 16;           // frame feature width
  int core_layers = 2;    // causal mixing blocks
  int d_ff = 128;         // feed-forward width
  int max_len = 96;       // positional table size
  int vocab_size = 0;
  int reg_max = 32;
  double delta = 1.0;
  int codec_layers = 3;
  int codec_width = 64;
  int time_stamp_id = 1;
  int eos_id = 0;

  void validate() const;
};

/// A deliberately small causal sequence model: frame projector, token
/// embeddings, learned positions, pre-norm attention blocks, a vocabulary
/// head, a direct regression head, and the time codec.
class ToySeqModel {
 public:
  ToySeqModel(const ModelConfig& config, uint64_t seed);

  const ModelConfig& config() const { return config_; }

  struct Block {
    Mat wq, wk, wv, wo;      // d x d
    Mat norm1_g, norm2_g;    // 1 x d
    Mat ffn_w1, ffn_b1;      // d x d_ff, 1 x d_ff
    Mat ffn_w2, ffn_b2;      // d_ff x d, 1 x d
  };

  Mat frame_w, frame_b;  // d_v x d, 1 x d
  Mat token_emb;         // V x d
  Mat pos_emb;           // max_len x d
  std::vector<Block> blocks;
  Mat head_w, head_b;      // d x V, 1 x V
  Mat direct_w, direct_b;  // d x 2, 1 x 2

  TimeDecoder time_decoder;
  TimeEncoder time_encoder;

  /// Every parameter, in the declaration order used for checkpoints,
  /// optimizer state, and flat coordinate addressing.
  ParamSet params();
  /// Same minus the frame projector when it is frozen.
  ParamSet trainable_params(bool train_frame_projector);

  struct SlotOutput {
    int position = -1;       // sequence position of the slot token
    TimeSegment target;      // payload attached to the slot
    TimeSegment decoded;     // value-level decode through the active arm
    Var exp_start, exp_end;  // dist arms: expectation scalars on the tape
    Var start_logits, end_logits;  // dist arms: pre-softmax halves
    Var direct_start, direct_end;  // direct arm: squashed endpoints
  };

  struct ForwardResult {
    Var hidden;  // n x d
    Var logits;  // n x V
    std::vector<SlotOutput> slots;
    std::vector<int> ntp_targets;  // -1 = ignored position
  };

  /// Teacher-forced pass over a composed sequence. Slot input embeddings
  /// follow the arm: dist_reenc re-encodes the ground-truth payload through
  /// the time encoder, the other arms feed the raw <TIME_STAMP> embedding.
  ForwardResult forward_teacher_forced(Tape& tape, ParamBinding& bind, const InputSequence& seq,
                                       Arm arm) const;

  struct OutputItem {
    bool is_segment = false;
    int token_id = -1;
    TimeSegment segment;
  };

  /// Greedy decoding. When <TIME_STAMP> is emitted its emitting hidden state
  /// is decoded to a segment which replaces the token in the output; with
  /// refine on, the next-step input embedding is the re-encoded segment
  /// rather than the raw <TIME_STAMP> embedding.
  std::vector<OutputItem> generate(const std::vector<FrameFeature>& frames,
                                   const std::vector<int>& query_ids, int max_new_items,
                                   bool refine, Arm arm) const;

 private:
  ModelConfig config_;

  struct EmbedPolicy {
    bool reencode_slots = false;
  };

  Var embed_sequence(Tape& tape, ParamBinding& bind, const std::vector<SeqItem>& items,
                     EmbedPolicy policy) const;
  Var core_forward(Tape& tape, ParamBinding& bind, Var x) const;
  SlotOutput decode_slot(Tape& tape, ParamBinding& bind, Var hidden, int emit_position,
                         Arm arm) const;
};

// Checkpoint IO: magic, architecture words, arm and default refine flag,
// delta, then all parameters in declaration order.
struct ModelCheckpoint {
  ToySeqModel model;
  Arm arm = Arm::kDistReenc;
  bool refine_default = true;
};

void save_model(std::ostream& os, const ToySeqModel& model, Arm arm, bool refine_default);
ModelCheckpoint load_model(std::istream& is);
void save_model_file(const std::string& path, const ToySeqModel& model, Arm arm,
                     bool refine_default);
ModelCheckpoint load_model_file(const std::string& path);

}  // namespace timedist
