#include "cognialign/alignment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>

#include "cognialign/rng.hpp"

namespace cognialign {

std::string_view label_code(Label label) {
  return label == Label::Alzheimers ? "AD" : "CH";
}

Label parse_label(std::string_view code) {
  if (code == "AD") return Label::Alzheimers;
  if (code == "CH") return Label::HealthyControl;
  throw FormatError("unknown label '" + std::string(code) + "' (expected CH or AD)");
}

std::size_t normalize_transcript(Transcript& transcript) {
  auto& words = transcript.words;
  if (words.empty()) throw FormatError("transcript '" + transcript.subject_id + "' has no words");
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (!(words[i].start >= 0.0) || !(words[i].end >= 0.0) || !std::isfinite(words[i].start) ||
        !std::isfinite(words[i].end))
      throw FormatError("word " + std::to_string(i) + " has a negative or non-finite time");
    if (i > 0 && words[i].start < words[i - 1].start)
      throw FormatError("word " + std::to_string(i) + " starts before word " + std::to_string(i - 1));
  }
  std::size_t clipped = 0;
  for (std::size_t i = 0; i + 1 < words.size(); ++i) {
    if (words[i].end > words[i + 1].start) {
      words[i].end = words[i + 1].start;
      ++clipped;
    }
  }
  for (std::size_t i = 0; i < words.size(); ++i)
    if (!(words[i].start < words[i].end))
      throw FormatError("word " + std::to_string(i) + " has start >= end after overlap clipping");
  return clipped;
}

Transcript strip_punctuation(const Transcript& transcript) {
  Transcript out = transcript;
  out.words.clear();
  for (const auto& w : transcript.words) {
    std::size_t b = 0, e = w.text.size();
    while (b < e && std::ispunct(static_cast<unsigned char>(w.text[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(w.text[e - 1]))) --e;
    if (b == e) continue;
    out.words.push_back({w.text.substr(b, e - b), w.start, w.end});
  }
  return out;
}

std::string_view pause_mark(PauseCategory category) {
  switch (category) {
    case PauseCategory::Comma: return ",";
    case PauseCategory::Period: return ".";
    case PauseCategory::Ellipsis: return "...";
    case PauseCategory::None: break;
  }
  return "";
}

PauseCategory pause_category_of(std::string_view token) {
  if (token == ",") return PauseCategory::Comma;
  if (token == ".") return PauseCategory::Period;
  if (token == "...") return PauseCategory::Ellipsis;
  return PauseCategory::None;
}

PauseCategory classify_pause(double duration) {
  if (!(duration >= 0.0)) throw ContractError("classify_pause: negative duration");
  const double d = duration + kBoundarySlack;
  if (d < 0.5) return PauseCategory::None;
  if (d < 1.0) return PauseCategory::Comma;
  if (d < 1.5) return PauseCategory::Period;
  return PauseCategory::Ellipsis;
}

std::vector<PauseEvent> detect_pauses(const Transcript& transcript) {
  std::vector<PauseEvent> events;
  const auto& words = transcript.words;
  for (std::size_t i = 0; i + 1 < words.size(); ++i) {
    const double gap = words[i + 1].start - words[i].end;
    if (gap < 0.0) continue;
    const auto category = classify_pause(gap);
    if (category != PauseCategory::None)
      events.push_back({words[i].end, words[i + 1].start, category, i});
  }
  return events;
}

namespace {

std::size_t nearest_frame(const FrameStream& stream, double t) {
  const double pos = (t - stream.offset) / stream.stride;
  const double last = static_cast<double>(stream.frames() - 1);
  const double guess = std::clamp(std::floor(pos), 0.0, last);
  auto best = static_cast<std::size_t>(guess);
  double best_dist = std::abs(stream.timestamp(best) - t);
  // The rounding guess can be off by one; check neighbours in index order
  // so ties resolve to the lower index.
  const std::size_t lo = best > 0 ? best - 1 : 0;
  const std::size_t hi = std::min(best + 2, stream.frames() - 1);
  for (std::size_t j = lo; j <= hi; ++j) {
    const double dist = std::abs(stream.timestamp(j) - t);
    if (dist < best_dist || (dist == best_dist && j < best)) {
      best = j;
      best_dist = dist;
    }
  }
  return best;
}

}  // namespace

std::vector<float> pool_word_embedding(const FrameStream& stream, double t_start, double t_end) {
  if (stream.frames() == 0 || stream.dim() == 0)
    throw ContractError("pool_word_embedding: empty frame stream");
  if (!(stream.stride > 0.0)) throw ContractError("pool_word_embedding: stride must be positive");
  if (!(t_start < t_end)) throw ContractError("pool_word_embedding: interval start must precede end");

  const std::size_t d = stream.dim();
  // Candidate index range from the timestamps, then exact membership tests
  // against t_j so the result agrees with a direct scan.
  const double first = std::ceil((t_start - stream.offset) / stream.stride) - 1.0;
  const double last = std::floor((t_end - stream.offset) / stream.stride) + 1.0;
  const auto j0 = static_cast<std::size_t>(std::max(0.0, first));
  const double last_clamped = std::min(last, static_cast<double>(stream.frames()) - 1.0);

  std::vector<double> acc(d, 0.0);
  std::size_t count = 0;
  if (last_clamped >= 0.0) {
    const auto j1 = static_cast<std::size_t>(last_clamped);
    for (std::size_t j = j0; j <= j1; ++j) {
      const double t = stream.timestamp(j);
      if (t < t_start || t >= t_end) continue;
      const auto row = stream.features.row(j);
      for (std::size_t c = 0; c < d; ++c) acc[c] += row[c];
      ++count;
    }
  }
  std::vector<float> out(d);
  if (count == 0) {
    const auto row = stream.features.row(nearest_frame(stream, 0.5 * (t_start + t_end)));
    std::copy(row.begin(), row.end(), out.begin());
    return out;
  }
  for (std::size_t c = 0; c < d; ++c) out[c] = static_cast<float>(acc[c] / static_cast<double>(count));
  return out;
}

std::vector<float> pause_embedding(const FrameStream& stream, const PauseEvent& event) {
  return pool_word_embedding(stream, event.start, event.end);
}

std::vector<std::string> insert_pause_tokens(const Transcript& transcript,
                                             const std::vector<PauseEvent>& events) {
  for (std::size_t e = 1; e < events.size(); ++e)
    if (events[e].after_word_index < events[e - 1].after_word_index)
      throw ContractError("insert_pause_tokens: events must be sorted by position");
  std::vector<std::string> out;
  out.reserve(transcript.words.size() + events.size());
  std::size_t next = 0;
  for (std::size_t i = 0; i < transcript.words.size(); ++i) {
    out.push_back(transcript.words[i].text);
    while (next < events.size() && events[next].after_word_index == i) {
      if (events[next].category != PauseCategory::None)
        out.emplace_back(pause_mark(events[next].category));
      ++next;
    }
  }
  return out;
}

Tokenizer::Tokenizer(std::vector<std::string> vocabulary) {
  for (auto& entry : vocabulary) {
    if (entry.empty()) continue;
    longest_ = std::max(longest_, entry.size());
    if (vocabulary_.insert(entry).second) ordered_.push_back(std::move(entry));
  }
}

Tokenizer Tokenizer::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open vocabulary file '" + path + "'");
  std::vector<std::string> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) entries.push_back(line);
  }
  return Tokenizer(std::move(entries));
}

std::vector<std::string> Tokenizer::tokenize(std::string_view word) const {
  if (word.empty()) throw ContractError("tokenize: empty word");
  if (pause_category_of(word) != PauseCategory::None) return {std::string(word)};
  std::vector<std::string> pieces;
  std::size_t pos = 0;
  while (pos < word.size()) {
    std::size_t take = 1;
    const std::size_t max_len = std::min(longest_, word.size() - pos);
    for (std::size_t len = max_len; len >= 1; --len) {
      if (vocabulary_.count(std::string(word.substr(pos, len)))) {
        take = len;
        break;
      }
    }
    pieces.emplace_back(word.substr(pos, take));
    pos += take;
  }
  return pieces;
}

std::vector<SubwordToken> expand_subwords(const std::vector<std::string>& words,
                                          const Tokenizer& tokenizer) {
  std::vector<SubwordToken> out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (words[i].empty())
      throw ContractError("expand_subwords: word " + std::to_string(i) + " is empty");
    for (auto& piece : tokenizer.tokenize(words[i])) out.push_back({std::move(piece), i});
  }
  return out;
}

std::vector<float> HashEmbedder::embed(std::string_view token) const {
  Rng rng(hash_combine(seed_, fnv1a(token)));
  std::vector<float> v(dim_);
  for (auto& x : v) x = static_cast<float>(rng.normal() * scale_);
  return v;
}

PauseTableEmbedder::PauseTableEmbedder(Matrix pause_rows, const TokenEmbedder* fallback)
    : rows_(std::move(pause_rows)), fallback_(fallback) {
  if (rows_.rows != 3)
    throw ContractError("pause embedding table needs 3 rows (comma, period, ellipsis), got " +
                        std::to_string(rows_.rows));
  if (fallback_ && fallback_->dim() != rows_.cols)
    throw ContractError("pause table width " + std::to_string(rows_.cols) +
                        " differs from fallback embedder width " + std::to_string(fallback_->dim()));
}

std::vector<float> PauseTableEmbedder::embed(std::string_view token) const {
  const auto category = pause_category_of(token);
  if (category != PauseCategory::None) {
    const auto row = rows_.row(static_cast<std::size_t>(category) - 1);
    return {row.begin(), row.end()};
  }
  if (!fallback_) throw ContractError("no embedding available for token '" + std::string(token) + "'");
  return fallback_->embed(token);
}

std::string_view token_kind_name(TokenKind kind) {
  switch (kind) {
    case TokenKind::Word: return "word";
    case TokenKind::Subword: return "subword";
    case TokenKind::Pause: return "pause";
  }
  return "word";
}

TokenKind parse_token_kind(std::string_view name) {
  if (name == "word") return TokenKind::Word;
  if (name == "subword") return TokenKind::Subword;
  if (name == "pause") return TokenKind::Pause;
  throw FormatError("unknown token kind '" + std::string(name) + "'");
}

void AlignedPair::validate() const {
  if (tokens.size() != audio.rows || tokens.size() != text.rows)
    throw ContractError("aligned pair '" + subject_id + "' has " + std::to_string(tokens.size()) +
                        " tokens, " + std::to_string(audio.rows) + " audio rows and " +
                        std::to_string(text.rows) + " text rows");
  if (audio.cols != text.cols)
    throw ContractError("aligned pair '" + subject_id + "' has audio d=" + std::to_string(audio.cols) +
                        " but text d=" + std::to_string(text.cols));
}

namespace {

void check_dims(std::size_t audio_d, std::size_t text_d) {
  if (audio_d != text_d)
    throw ContractError("embedding dimension mismatch: audio d=" + std::to_string(audio_d) +
                        ", text d=" + std::to_string(text_d));
}

// Shared assembly: word tokens (with their text rows) are already resolved;
// this interleaves pauses and fills the audio side.
AlignedPair assemble(const Transcript& transcript, const FrameStream& stream,
                     const std::vector<SubwordToken>& word_tokens, const Matrix& word_token_text,
                     const TokenEmbedder& pause_embedder, const AlignOptions& options) {
  AlignedPair pair;
  pair.subject_id = transcript.subject_id;
  pair.label = transcript.label;
  pair.mmse = transcript.mmse;
  const std::size_t d = stream.dim();
  pair.audio = Matrix(0, d);
  pair.text = Matrix(0, d);

  std::vector<PauseEvent> events;
  if (options.insert_pauses) events = detect_pauses(transcript);

  std::vector<std::size_t> pieces_per_word(transcript.words.size(), 0);
  for (const auto& t : word_tokens) ++pieces_per_word.at(t.parent);

  std::size_t next_event = 0;
  std::size_t tok = 0;
  for (std::size_t w = 0; w < transcript.words.size(); ++w) {
    const auto& word = transcript.words[w];
    const auto audio_row = pool_word_embedding(stream, word.start, word.end);
    const TokenKind kind = pieces_per_word[w] > 1 ? TokenKind::Subword : TokenKind::Word;
    for (; tok < word_tokens.size() && word_tokens[tok].parent == w; ++tok) {
      pair.tokens.push_back({word_tokens[tok].text, kind, w});
      pair.audio.append_row(audio_row);
      pair.text.append_row(word_token_text.row(tok));
    }
    for (; next_event < events.size() && events[next_event].after_word_index == w; ++next_event) {
      const auto& ev = events[next_event];
      const std::string mark(pause_mark(ev.category));
      pair.tokens.push_back({mark, TokenKind::Pause, w});
      pair.audio.append_row(pause_embedding(stream, ev));
      const auto text_row = pause_embedder.embed(mark);
      check_dims(d, text_row.size());
      pair.text.append_row(text_row);
    }
  }
  pair.validate();
  return pair;
}

}  // namespace

AlignedPair build_aligned_pair(const Transcript& transcript, const FrameStream& stream,
                               const TokenEmbedder& embedder, const Tokenizer& tokenizer,
                               const AlignOptions& options) {
  check_dims(stream.dim(), embedder.dim());
  Transcript words = options.strip_asr_punctuation ? strip_punctuation(transcript) : transcript;
  if (words.words.empty())
    throw ContractError("transcript '" + transcript.subject_id + "' has no words after punctuation stripping");
  std::vector<std::string> texts;
  for (const auto& w : words.words) texts.push_back(w.text);
  const auto pieces = expand_subwords(texts, tokenizer);
  Matrix text(0, embedder.dim());
  for (const auto& p : pieces) text.append_row(embedder.embed(p.text));
  return assemble(words, stream, pieces, text, embedder, options);
}

AlignedPair build_aligned_pair(const Transcript& transcript, const FrameStream& stream,
                               const PretokenizedText& text, const TokenEmbedder& pause_embedder,
                               const AlignOptions& options) {
  check_dims(stream.dim(), text.embeddings.cols);
  if (text.tokens.size() != text.embeddings.rows)
    throw ContractError("pretokenized text has " + std::to_string(text.tokens.size()) +
                        " tokens but " + std::to_string(text.embeddings.rows) + " embedding rows");
  std::size_t expect = 0;
  for (std::size_t i = 0; i < text.tokens.size(); ++i) {
    const auto parent = text.tokens[i].parent;
    if (parent != expect && parent != expect + 1)
      throw ContractError("token " + std::to_string(i) + " has parent " + std::to_string(parent) +
                          "; parents must cover every word in order");
    if (i == 0 && parent != 0) throw ContractError("first token must belong to word 0");
    expect = parent;
  }
  if (text.tokens.empty() || expect + 1 != transcript.words.size())
    throw ContractError("token parentage covers " + std::to_string(text.tokens.empty() ? 0 : expect + 1) +
                        " words but the transcript has " + std::to_string(transcript.words.size()));
  return assemble(transcript, stream, text.tokens, text.embeddings, pause_embedder, options);
}

}  // namespace cognialign
