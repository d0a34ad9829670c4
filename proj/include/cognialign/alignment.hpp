#pragma once

// Word-level alignment of a frame-level acoustic stream with a timestamped
// transcript, plus pause tokenization.
//
// Every word becomes the mean of the frames whose timestamps fall in its
// half-open interval [start, end). Inter-word gaps of at least 0.5 s become
// pause tokens (",", ".", "...") on the text side and the mean of the gap's
// frames on the audio side. Words split into several subword tokens repeat
// the word's audio row for every piece, so both streams stay the same length.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "cognialign/matrix.hpp"

namespace cognialign {

enum class Label { HealthyControl = 0, Alzheimers = 1 };

// "CH" / "AD" as used in files.
std::string_view label_code(Label label);
Label parse_label(std::string_view code);

struct Word {
  std::string text;
  double start = 0.0;  // seconds
  double end = 0.0;
};

struct Transcript {
  std::string subject_id;
  std::vector<Word> words;
  std::optional<Label> label;
  std::optional<double> mmse;
};

// Clips t_end(i) to t_start(i+1) where successive words overlap and checks
// the remaining invariants (0 <= start < end, sorted starts). Returns the
// number of clipped words. Throws FormatError naming the offending index.
std::size_t normalize_transcript(Transcript& transcript);

// Removes leading/trailing punctuation from every word and drops words that
// were punctuation only, so inserted pause marks are the only punctuation.
Transcript strip_punctuation(const Transcript& transcript);

struct FrameStream {
  double stride = 0.02;  // seconds between frames
  double offset = 0.0;   // timestamp of frame 0
  Matrix features;       // [frames × d]

  std::size_t frames() const { return features.rows; }
  std::size_t dim() const { return features.cols; }
  double timestamp(std::size_t j) const { return offset + static_cast<double>(j) * stride; }
};

enum class PauseCategory { None, Comma, Period, Ellipsis };

std::string_view pause_mark(PauseCategory category);
// Category for a token text, None when it is not a pause mark.
PauseCategory pause_category_of(std::string_view token);

struct PauseEvent {
  double start = 0.0;  // end of the preceding word
  double end = 0.0;    // start of the following word
  PauseCategory category = PauseCategory::None;
  std::size_t after_word_index = 0;

  double duration() const { return end - start; }
};

// Half-open buckets: [0,0.5) None, [0.5,1) Comma, [1,1.5) Period,
// [1.5,inf) Ellipsis. Durations within kBoundarySlack below a boundary are
// treated as on it, so gaps computed by subtracting timestamps do not fall
// through a bucket edge by one ulp.
inline constexpr double kBoundarySlack = 1e-9;
PauseCategory classify_pause(double duration);

// One event per inter-word gap that classifies as a pause. Nothing before
// the first word or after the last one.
std::vector<PauseEvent> detect_pauses(const Transcript& transcript);

// Mean of frames with t_j in [t_start, t_end). When no frame falls inside,
// the frame nearest the interval midpoint (lower index on ties).
std::vector<float> pool_word_embedding(const FrameStream& stream, double t_start, double t_end);
std::vector<float> pause_embedding(const FrameStream& stream, const PauseEvent& event);

// Word texts with pause marks inserted after their preceding word.
std::vector<std::string> insert_pause_tokens(const Transcript& transcript,
                                             const std::vector<PauseEvent>& events);

// Greedy longest-match subword tokenizer with a one-character fallback.
// Pause marks are never split.
class Tokenizer {
 public:
  Tokenizer() = default;
  explicit Tokenizer(std::vector<std::string> vocabulary);

  // One entry per line; blank lines ignored.
  static Tokenizer from_file(const std::string& path);

  std::vector<std::string> tokenize(std::string_view word) const;
  std::size_t vocabulary_size() const { return vocabulary_.size(); }
  const std::vector<std::string>& vocabulary() const { return ordered_; }

 private:
  std::unordered_set<std::string> vocabulary_;
  std::vector<std::string> ordered_;
  std::size_t longest_ = 0;
};

struct SubwordToken {
  std::string text;
  std::size_t parent = 0;  // index into the input word list
};

std::vector<SubwordToken> expand_subwords(const std::vector<std::string>& words,
                                          const Tokenizer& tokenizer);

// Source of text-side vectors for tokens that have no precomputed embedding
// (every token when tokenizing in-process, pause marks otherwise).
class TokenEmbedder {
 public:
  virtual ~TokenEmbedder() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<float> embed(std::string_view token) const = 0;
};

// Deterministic pseudo-random vector per token string: N(0, scale²) entries
// keyed on (seed, token).
class HashEmbedder final : public TokenEmbedder {
 public:
  HashEmbedder(std::size_t dim, std::uint64_t seed, float scale = 1.0f)
      : dim_(dim), seed_(seed), scale_(scale) {}
  std::size_t dim() const override { return dim_; }
  std::vector<float> embed(std::string_view token) const override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  float scale_;
};

// Fixed rows for the three pause marks, falling back to another embedder
// for any other token.
class PauseTableEmbedder final : public TokenEmbedder {
 public:
  // rows: comma, period, ellipsis.
  PauseTableEmbedder(Matrix pause_rows, const TokenEmbedder* fallback = nullptr);
  std::size_t dim() const override { return rows_.cols; }
  std::vector<float> embed(std::string_view token) const override;

 private:
  Matrix rows_;
  const TokenEmbedder* fallback_;
};

// Token list and embeddings exported by an external encoder; accepted
// verbatim. Parents index transcript words and must be non-decreasing with
// every word covered.
struct PretokenizedText {
  std::vector<SubwordToken> tokens;
  Matrix embeddings;  // [tokens × d]
};

enum class TokenKind { Word, Subword, Pause };
std::string_view token_kind_name(TokenKind kind);
TokenKind parse_token_kind(std::string_view name);

struct AlignedToken {
  std::string text;
  TokenKind kind = TokenKind::Word;
  // Source word; for pauses, the word the pause follows.
  std::size_t word_index = 0;
};

struct AlignedPair {
  std::string subject_id;
  std::optional<Label> label;
  std::optional<double> mmse;
  std::vector<AlignedToken> tokens;
  Matrix audio;  // [L × d]
  Matrix text;   // [L × d]

  std::size_t length() const { return tokens.size(); }
  std::size_t dim() const { return audio.cols; }
  // Throws ContractError when the three sequences disagree in length.
  void validate() const;
};

struct AlignOptions {
  bool insert_pauses = true;
  // Applies to in-process tokenization only; pretokenized input is verbatim.
  bool strip_asr_punctuation = true;
};

AlignedPair build_aligned_pair(const Transcript& transcript, const FrameStream& stream,
                               const TokenEmbedder& embedder, const Tokenizer& tokenizer,
                               const AlignOptions& options = {});

AlignedPair build_aligned_pair(const Transcript& transcript, const FrameStream& stream,
                               const PretokenizedText& text, const TokenEmbedder& pause_embedder,
                               const AlignOptions& options = {});

}  // namespace cognialign
