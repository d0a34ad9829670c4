#include "cognialign/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"

namespace cognialign {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// --- byte helpers -------------------------------------------------------------

namespace {

class ByteWriter {
 public:
  template <class T>
  void put(T value) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    buffer_.append(bytes, sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) { buffer_.append(static_cast<const char*>(data), n); }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    buffer_ += s;
  }
  const std::string& bytes() const { return buffer_; }

 private:
  std::string buffer_;
};

class ByteReader {
 public:
  ByteReader(std::string_view data, std::string context) : data_(data), context_(std::move(context)) {}

  template <class T>
  T get(const char* what) {
    T value;
    std::memcpy(&value, take(sizeof(T), what), sizeof(T));
    return value;
  }
  const char* take(std::size_t n, const char* what) {
    if (data_.size() - pos_ < n)
      throw FormatError(context_ + ": truncated " + what + " (needed " + std::to_string(n) + " bytes, " +
                            std::to_string(data_.size() - pos_) + " left)",
                        data_.size());
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string get_string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    return std::string(take(n, what), n);
  }
  std::size_t position() const { return pos_; }
  bool at_end() const { return pos_ == data_.size(); }
  const std::string& context() const { return context_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
  std::string context_;
};

std::string slurp(std::istream& in) { return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()}; }

json parse_json(const std::string& text, const std::string& context) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(context + ": invalid JSON: " + e.what(), e.byte);
  }
}

json read_json(const fs::path& path) { return parse_json(read_file(path), path.string()); }

template <class T>
T field(const json& j, const char* key, const std::string& context) {
  if (!j.is_object() || !j.contains(key)) throw FormatError(context + ": missing \"" + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError(context + ": field \"" + key + "\" has the wrong type");
  }
}

template <class T>
std::optional<T> optional_field(const json& j, const char* key, const std::string& context) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return field<T>(j, key, context);
}

std::optional<Label> optional_label(const json& j, const std::string& context) {
  const auto code = optional_field<std::string>(j, "label", context);
  if (!code) return std::nullopt;
  try {
    return parse_label(*code);
  } catch (const FormatError& e) {
    throw FormatError(context + ": " + e.what());
  }
}

template <class J>
void put_subject_meta(J& j, const std::string& id, const std::optional<Label>& label,
                      const std::optional<double>& mmse) {
  j["subject_id"] = id;
  j["label"] = label ? J(std::string(label_code(*label))) : J(nullptr);
  j["mmse"] = mmse ? J(*mmse) : J(nullptr);
}

std::string format_number(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open '" + tmp.string() + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw FormatError("write to '" + tmp.string() + "' failed");
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  return slurp(in);
}

// --- CGNM -----------------------------------------------------------------------

namespace {

std::string encode_matrix(const Matrix& m, double stride, double offset) {
  if (m.values.size() != m.rows * m.cols) throw ContractError("matrix payload does not match its shape");
  if (m.rows > UINT32_MAX || m.cols > UINT32_MAX) throw ContractError("matrix too large for the CGNM format");
  ByteWriter w;
  w.put_bytes("CGNM", 4);
  w.put(kMatrixVersion);
  w.put(static_cast<std::uint32_t>(m.rows));
  w.put(static_cast<std::uint32_t>(m.cols));
  w.put(stride);
  w.put(offset);
  w.put_bytes(m.values.data(), m.values.size() * sizeof(float));
  return w.bytes();
}

MatrixHeader decode_matrix_header(ByteReader& r) {
  const char* magic = r.take(4, "header");
  if (std::memcmp(magic, "CGNM", 4) != 0) throw FormatError(r.context() + ": bad magic (not a CGNM matrix)", 0);
  const auto version = r.get<std::uint32_t>("header");
  if (version != kMatrixVersion)
    throw FormatError(r.context() + ": unsupported CGNM version " + std::to_string(version), 4);
  MatrixHeader h;
  h.rows = r.get<std::uint32_t>("header");
  h.cols = r.get<std::uint32_t>("header");
  h.stride = r.get<double>("header");
  h.offset = r.get<double>("header");
  return h;
}

Matrix decode_matrix(std::string_view bytes, const std::string& context, MatrixHeader* header) {
  ByteReader r(bytes, context);
  const MatrixHeader h = decode_matrix_header(r);
  const std::uint64_t n = static_cast<std::uint64_t>(h.rows) * h.cols;
  const std::uint64_t available = bytes.size() - kMatrixHeaderBytes;
  if (available < n * sizeof(float))
    throw FormatError(context + ": truncated payload (" + std::to_string(h.rows) + "x" + std::to_string(h.cols) +
                          " needs " + std::to_string(n * sizeof(float)) + " bytes, " + std::to_string(available) +
                          " present)",
                      bytes.size());
  if (available > n * sizeof(float))
    throw FormatError(context + ": " + std::to_string(available - n * sizeof(float)) +
                          " trailing bytes after the payload",
                      kMatrixHeaderBytes + n * sizeof(float));
  Matrix m(h.rows, h.cols);
  std::memcpy(m.values.data(), r.take(n * sizeof(float), "payload"), n * sizeof(float));
  if (header) *header = h;
  return m;
}

}  // namespace

void write_matrix(std::ostream& out, const Matrix& m, double stride, double offset) {
  const std::string bytes = encode_matrix(m, stride, offset);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_matrix(const fs::path& path, const Matrix& m, double stride, double offset) {
  write_file_atomic(path, encode_matrix(m, stride, offset));
}

void write_frames(const fs::path& path, const FrameStream& stream) {
  write_matrix(path, stream.features, stream.stride, stream.offset);
}

MatrixHeader read_matrix_header(std::istream& in) {
  std::string bytes(kMatrixHeaderBytes, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(kMatrixHeaderBytes));
  bytes.resize(static_cast<std::size_t>(in.gcount()));
  ByteReader r(bytes, "matrix");
  return decode_matrix_header(r);
}

MatrixHeader read_matrix_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::string bytes(kMatrixHeaderBytes, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(kMatrixHeaderBytes));
  bytes.resize(static_cast<std::size_t>(in.gcount()));
  ByteReader r(bytes, path.string());
  const MatrixHeader h = decode_matrix_header(r);
  const std::uint64_t expected = kMatrixHeaderBytes + std::uint64_t{h.rows} * h.cols * sizeof(float);
  const std::uint64_t size = fs::file_size(path);
  if (size != expected)
    throw FormatError(path.string() + ": file is " + std::to_string(size) + " bytes, header implies " +
                          std::to_string(expected),
                      std::min(size, expected));
  return h;
}

Matrix read_matrix(std::istream& in, MatrixHeader* header) { return decode_matrix(slurp(in), "matrix", header); }

Matrix read_matrix(const fs::path& path, MatrixHeader* header) {
  return decode_matrix(read_file(path), path.string(), header);
}

FrameStream read_frames(const fs::path& path) {
  MatrixHeader h;
  FrameStream s;
  s.features = read_matrix(path, &h);
  s.stride = h.stride;
  s.offset = h.offset;
  return s;
}

// --- transcripts ------------------------------------------------------------------

TranscriptLoad parse_transcript(const std::string& json_text) {
  const json j = parse_json(json_text, "transcript");
  const std::string ctx = "transcript";
  TranscriptLoad load;
  Transcript& t = load.transcript;
  t.subject_id = field<std::string>(j, "subject_id", ctx);
  t.label = optional_label(j, ctx);
  t.mmse = optional_field<double>(j, "mmse", ctx);
  const json& words = j.contains("words") ? j.at("words") : json();
  if (!words.is_array()) throw FormatError(ctx + " '" + t.subject_id + "': \"words\" must be an array");
  if (words.empty()) throw FormatError(ctx + " '" + t.subject_id + "': empty word list");
  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::string wctx = ctx + " '" + t.subject_id + "' word " + std::to_string(i);
    Word w{field<std::string>(words[i], "word", wctx), field<double>(words[i], "start", wctx),
           field<double>(words[i], "end", wctx)};
    if (!std::isfinite(w.start) || !std::isfinite(w.end) || w.start < 0 || w.end < 0)
      throw FormatError(wctx + ": negative or non-finite time");
    t.words.push_back(std::move(w));
  }
  load.clipped = normalize_transcript(t);
  return load;
}

TranscriptLoad read_transcript(const fs::path& path) {
  try {
    return parse_transcript(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_transcript(const fs::path& path, const Transcript& transcript) {
  ordered_json j;
  put_subject_meta(j, transcript.subject_id, transcript.label, transcript.mmse);
  j["words"] = ordered_json::array();
  for (const auto& w : transcript.words) j["words"].push_back({{"word", w.text}, {"start", w.start}, {"end", w.end}});
  write_file_atomic(path, j.dump(1) + "\n");
}

void write_annotated_transcript(const fs::path& path, const AnnotatedTranscript& transcript) {
  ordered_json j;
  put_subject_meta(j, transcript.subject_id, transcript.label, transcript.mmse);
  j["duration"] = transcript.duration;
  j["tokens"] = transcript.tokens;
  write_file_atomic(path, j.dump(1) + "\n");
}

AnnotatedTranscript read_annotated_transcript(const fs::path& path) {
  const json j = read_json(path);
  const std::string ctx = path.string();
  AnnotatedTranscript t;
  t.subject_id = field<std::string>(j, "subject_id", ctx);
  t.label = optional_label(j, ctx);
  t.mmse = optional_field<double>(j, "mmse", ctx);
  t.duration = field<double>(j, "duration", ctx);
  t.tokens = field<std::vector<std::string>>(j, "tokens", ctx);
  return t;
}

std::vector<SubwordToken> read_token_list(const fs::path& path) {
  const json j = read_json(path);
  if (!j.is_array()) throw FormatError(path.string() + ": token list must be an array");
  std::vector<SubwordToken> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string ctx = path.string() + " token " + std::to_string(i);
    out.push_back({field<std::string>(j[i], "text", ctx), field<std::size_t>(j[i], "word", ctx)});
  }
  return out;
}

void write_token_list(const fs::path& path, const std::vector<SubwordToken>& tokens) {
  ordered_json j = ordered_json::array();
  for (const auto& t : tokens) j.push_back({{"text", t.text}, {"word", t.parent}});
  write_file_atomic(path, j.dump(1) + "\n");
}

// --- manifest ---------------------------------------------------------------------

DatasetManifest read_manifest(const fs::path& path) {
  const json j = read_json(path);
  const std::string ctx = path.string();
  if (field<std::string>(j, "format", ctx) != "cognialign-dataset")
    throw FormatError(ctx + ": not a cognialign dataset manifest");
  if (field<int>(j, "version", ctx) != 1) throw FormatError(ctx + ": unsupported manifest version");
  DatasetManifest m;
  m.directory = path.parent_path();
  m.embedding_dim = field<std::size_t>(j, "embedding_dim", ctx);
  m.frame_stride = field<double>(j, "frame_stride", ctx);
  m.vocabulary = optional_field<std::string>(j, "vocabulary", ctx);
  if (j.contains("text_embedding")) {
    const json& te = j.at("text_embedding");
    m.text_hash_seed = field<std::uint64_t>(te, "hash_seed", ctx + " text_embedding");
    m.text_hash_scale = field<double>(te, "scale", ctx + " text_embedding");
  }
  if (j.contains("generator")) m.generator_json = j.at("generator").dump();
  if (m.embedding_dim == 0) throw FormatError(ctx + ": embedding_dim must be positive");
  if (!(m.frame_stride > 0)) throw FormatError(ctx + ": frame_stride must be positive");
  const json& samples = j.contains("samples") ? j.at("samples") : json();
  if (!samples.is_array()) throw FormatError(ctx + ": \"samples\" must be an array");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string sctx = ctx + " sample " + std::to_string(i);
    const json& s = samples[i];
    SampleRecord r;
    r.subject_id = field<std::string>(s, "subject_id", sctx);
    r.label = optional_label(s, sctx);
    r.mmse = optional_field<double>(s, "mmse", sctx);
    r.transcript = field<std::string>(s, "transcript", sctx);
    r.frames = field<std::string>(s, "frames", sctx);
    r.tokens = optional_field<std::string>(s, "tokens", sctx);
    r.token_embeddings = optional_field<std::string>(s, "token_embeddings", sctx);
    if (r.tokens.has_value() != r.token_embeddings.has_value())
      throw FormatError(sctx + ": \"tokens\" and \"token_embeddings\" must be given together");
    m.samples.push_back(std::move(r));
  }
  return m;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  ordered_json j;
  j["format"] = "cognialign-dataset";
  j["version"] = 1;
  j["embedding_dim"] = manifest.embedding_dim;
  j["frame_stride"] = manifest.frame_stride;
  if (manifest.vocabulary) j["vocabulary"] = *manifest.vocabulary;
  j["text_embedding"] = {{"hash_seed", manifest.text_hash_seed}, {"scale", manifest.text_hash_scale}};
  j["generator"] = ordered_json::parse(manifest.generator_json);
  j["samples"] = ordered_json::array();
  for (const auto& r : manifest.samples) {
    ordered_json s;
    put_subject_meta(s, r.subject_id, r.label, r.mmse);
    s["transcript"] = r.transcript;
    s["frames"] = r.frames;
    if (r.tokens) s["tokens"] = *r.tokens;
    if (r.token_embeddings) s["token_embeddings"] = *r.token_embeddings;
    j["samples"].push_back(std::move(s));
  }
  write_file_atomic(path, j.dump(1) + "\n");
}

void validate_dataset(const DatasetManifest& manifest) {
  for (const auto& r : manifest.samples) {
    const std::string ctx = "sample '" + r.subject_id + "'";
    const auto frames = read_matrix_header(manifest.resolve(r.frames));
    if (frames.cols != manifest.embedding_dim)
      throw FormatError(ctx + ": frame matrix has d=" + std::to_string(frames.cols) + ", manifest declares d=" +
                        std::to_string(manifest.embedding_dim));
    if (std::abs(frames.stride - manifest.frame_stride) > 1e-12)
      throw FormatError(ctx + ": frame stride " + std::to_string(frames.stride) + " differs from manifest stride " +
                        std::to_string(manifest.frame_stride));
    const auto t = read_transcript(manifest.resolve(r.transcript)).transcript;
    if (t.subject_id != r.subject_id)
      throw FormatError(ctx + ": transcript belongs to '" + t.subject_id + "'");
    if (r.token_embeddings) {
      const auto emb = read_matrix_header(manifest.resolve(*r.token_embeddings));
      if (emb.cols != manifest.embedding_dim)
        throw FormatError(ctx + ": token embeddings have d=" + std::to_string(emb.cols) + ", manifest declares d=" +
                          std::to_string(manifest.embedding_dim));
      const auto tokens = read_token_list(manifest.resolve(*r.tokens));
      if (tokens.size() != emb.rows)
        throw FormatError(ctx + ": " + std::to_string(tokens.size()) + " tokens but " + std::to_string(emb.rows) +
                          " embedding rows");
    }
  }
}

SampleBundle load_sample(const DatasetManifest& manifest, const SampleRecord& record) {
  SampleBundle b;
  auto t = read_transcript(manifest.resolve(record.transcript));
  b.transcript = std::move(t.transcript);
  b.clipped = t.clipped;
  // Manifest metadata is authoritative for labels.
  b.transcript.label = record.label;
  b.transcript.mmse = record.mmse;
  b.frames = read_frames(manifest.resolve(record.frames));
  if (record.tokens) {
    PretokenizedText text;
    text.tokens = read_token_list(manifest.resolve(*record.tokens));
    text.embeddings = read_matrix(manifest.resolve(*record.token_embeddings));
    b.text = std::move(text);
  }
  return b;
}

std::vector<AlignedPair> align_dataset(const DatasetManifest& manifest, const AlignOptions& options) {
  validate_dataset(manifest);
  const Tokenizer tokenizer =
      manifest.vocabulary ? Tokenizer::from_file(manifest.resolve(*manifest.vocabulary).string()) : Tokenizer();
  const HashEmbedder embedder(manifest.embedding_dim, manifest.text_hash_seed,
                              static_cast<float>(manifest.text_hash_scale));
  std::vector<AlignedPair> out;
  out.reserve(manifest.samples.size());
  for (const auto& r : manifest.samples) {
    const SampleBundle b = load_sample(manifest, r);
    if (b.text)
      out.push_back(build_aligned_pair(b.transcript, b.frames, *b.text, embedder, options));
    else
      out.push_back(build_aligned_pair(b.transcript, b.frames, embedder, tokenizer, options));
  }
  return out;
}

AnnotatedTranscript annotate_sample(const DatasetManifest& manifest, const SampleRecord& record) {
  auto t = read_transcript(manifest.resolve(record.transcript)).transcript;
  t.label = record.label;
  t.mmse = record.mmse;
  const auto h = read_matrix_header(manifest.resolve(record.frames));
  return annotate_pauses(t, h.offset + h.rows * h.stride);
}

// --- aligned datasets -------------------------------------------------------------

void write_aligned_dataset(const fs::path& directory, const std::vector<AlignedPair>& pairs) {
  ordered_json j;
  j["format"] = "cognialign-aligned";
  j["version"] = 1;
  j["dim"] = pairs.empty() ? 0 : pairs.front().dim();
  j["pairs"] = ordered_json::array();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const AlignedPair& p = pairs[i];
    p.validate();
    char stem[32];
    std::snprintf(stem, sizeof stem, "pair_%05zu", i);
    ordered_json e;
    put_subject_meta(e, p.subject_id, p.label, p.mmse);
    e["audio"] = std::string("pairs/") + stem + ".audio.cgnm";
    e["text"] = std::string("pairs/") + stem + ".text.cgnm";
    e["tokens"] = ordered_json::array();
    for (const auto& t : p.tokens)
      e["tokens"].push_back({{"text", t.text}, {"kind", token_kind_name(t.kind)}, {"word", t.word_index}});
    write_matrix(directory / e["audio"].get<std::string>(), p.audio);
    write_matrix(directory / e["text"].get<std::string>(), p.text);
    j["pairs"].push_back(std::move(e));
  }
  write_file_atomic(directory / "aligned.json", j.dump(1) + "\n");
}

std::vector<AlignedPair> read_aligned_dataset(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "aligned.json" : path;
  const fs::path dir = file.parent_path();
  const json j = read_json(file);
  const std::string ctx = file.string();
  if (field<std::string>(j, "format", ctx) != "cognialign-aligned")
    throw FormatError(ctx + ": not an aligned dataset");
  if (field<int>(j, "version", ctx) != 1) throw FormatError(ctx + ": unsupported aligned dataset version");
  const auto dim = field<std::size_t>(j, "dim", ctx);
  std::vector<AlignedPair> out;
  const json& pairs = j.at("pairs");
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::string pctx = ctx + " pair " + std::to_string(i);
    const json& e = pairs[i];
    AlignedPair p;
    p.subject_id = field<std::string>(e, "subject_id", pctx);
    p.label = optional_label(e, pctx);
    p.mmse = optional_field<double>(e, "mmse", pctx);
    for (const auto& t : e.at("tokens"))
      p.tokens.push_back({field<std::string>(t, "text", pctx), parse_token_kind(field<std::string>(t, "kind", pctx)),
                          field<std::size_t>(t, "word", pctx)});
    p.audio = read_matrix(dir / field<std::string>(e, "audio", pctx));
    p.text = read_matrix(dir / field<std::string>(e, "text", pctx));
    if (p.audio.cols != dim || p.text.cols != dim)
      throw FormatError(pctx + ": matrices have d=" + std::to_string(p.audio.cols) + "/" + std::to_string(p.text.cols) +
                        ", dataset declares d=" + std::to_string(dim));
    try {
      p.validate();
    } catch (const ContractError& err) {
      throw FormatError(pctx + ": " + err.what());
    }
    out.push_back(std::move(p));
  }
  return out;
}

// --- configuration ----------------------------------------------------------------

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& ctx) {
  if (!j.is_object()) throw FormatError(ctx + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw FormatError(ctx + ": unknown key \"" + key + "\"");
  }
}

template <class T>
void maybe(const json& j, const char* key, T& target, const std::string& ctx) {
  if (j.contains(key)) target = field<T>(j, key, ctx);
}

template <class E, class Parse>
void maybe_enum(const json& j, const char* key, E& target, Parse parse, const std::string& ctx) {
  if (!j.contains(key)) return;
  const auto name = field<std::string>(j, key, ctx);
  try {
    target = parse(name);
  } catch (const std::exception& e) {
    throw FormatError(ctx + ": " + e.what());
  }
}

ModelConfig model_from(const json& j, ModelConfig c, const std::string& ctx) {
  reject_unknown(j, {"input_dim", "d_model", "n_heads", "d_ff", "n_layers", "fusion", "query_modality", "pooling",
                     "task", "dropout_rate", "seed", "max_len"},
                 ctx);
  maybe(j, "input_dim", c.input_dim, ctx);
  maybe(j, "d_model", c.d_model, ctx);
  maybe(j, "n_heads", c.n_heads, ctx);
  maybe(j, "d_ff", c.d_ff, ctx);
  maybe(j, "n_layers", c.n_layers, ctx);
  maybe_enum(j, "fusion", c.fusion, parse_fusion, ctx);
  maybe_enum(j, "query_modality", c.query_modality, parse_modality, ctx);
  maybe_enum(j, "pooling", c.pooling, parse_pooling, ctx);
  maybe_enum(j, "task", c.task, parse_task, ctx);
  maybe(j, "dropout_rate", c.dropout_rate, ctx);
  maybe(j, "seed", c.seed, ctx);
  maybe(j, "max_len", c.max_len, ctx);
  return c;
}

ordered_json model_to(const ModelConfig& c) {
  return {{"input_dim", c.input_dim},
          {"d_model", c.d_model},
          {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},
          {"n_layers", c.n_layers},
          {"fusion", fusion_name(c.fusion)},
          {"query_modality", modality_name(c.query_modality)},
          {"pooling", pooling_name(c.pooling)},
          {"task", task_name(c.task)},
          {"dropout_rate", c.dropout_rate},
          {"seed", c.seed},
          {"max_len", c.max_len}};
}

}  // namespace

void PipelineConfig::validate() const {
  model.validate();
  train.validate();
  if (split.protocol == Protocol::KFold && split.k < 2) throw ContractError("split.k must be at least 2");
}

PipelineConfig parse_config(const std::string& json_text) {
  const json j = parse_json(json_text, "config");
  reject_unknown(j, {"seed", "model", "train", "split", "align"}, "config");
  PipelineConfig c;
  if (j.contains("seed")) {
    const auto seed = field<std::uint64_t>(j, "seed", "config");
    c.model.seed = seed;
    c.train.seed = seed;
  }
  if (j.contains("model")) c.model = model_from(j.at("model"), c.model, "config.model");
  if (j.contains("train")) {
    const json& t = j.at("train");
    const std::string ctx = "config.train";
    reject_unknown(t, {"lr_peak", "weight_decay", "warmup_epochs", "max_epochs", "batch_size", "early_stop_patience",
                       "loso_epochs", "validation_fraction", "beta1", "beta2", "eps", "seed"},
                   ctx);
    maybe(t, "lr_peak", c.train.lr_peak, ctx);
    maybe(t, "weight_decay", c.train.weight_decay, ctx);
    maybe(t, "warmup_epochs", c.train.warmup_epochs, ctx);
    maybe(t, "max_epochs", c.train.max_epochs, ctx);
    maybe(t, "batch_size", c.train.batch_size, ctx);
    maybe(t, "early_stop_patience", c.train.early_stop_patience, ctx);
    maybe(t, "loso_epochs", c.train.loso_epochs, ctx);
    maybe(t, "validation_fraction", c.train.validation_fraction, ctx);
    maybe(t, "beta1", c.train.beta1, ctx);
    maybe(t, "beta2", c.train.beta2, ctx);
    maybe(t, "eps", c.train.eps, ctx);
    maybe(t, "seed", c.train.seed, ctx);
  }
  if (j.contains("split")) {
    const json& s = j.at("split");
    const std::string ctx = "config.split";
    reject_unknown(s, {"protocol", "k", "stratified"}, ctx);
    if (s.contains("protocol")) {
      const auto p = field<std::string>(s, "protocol", ctx);
      if (p == "kfold")
        c.split.protocol = Protocol::KFold;
      else if (p == "loso")
        c.split.protocol = Protocol::LOSO;
      else
        throw FormatError(ctx + ": unknown protocol '" + p + "' (expected kfold or loso)");
    }
    maybe(s, "k", c.split.k, ctx);
    maybe(s, "stratified", c.split.stratified, ctx);
  }
  if (j.contains("align")) {
    const json& a = j.at("align");
    reject_unknown(a, {"insert_pauses", "strip_asr_punctuation"}, "config.align");
    maybe(a, "insert_pauses", c.align.insert_pauses, "config.align");
    maybe(a, "strip_asr_punctuation", c.align.strip_asr_punctuation, "config.align");
  }
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  return c;
}

PipelineConfig read_config(const fs::path& path) {
  try {
    return parse_config(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string config_to_json(const PipelineConfig& c) {
  ordered_json j;
  j["model"] = model_to(c.model);
  const TrainConfig& t = c.train;
  j["train"] = {{"lr_peak", t.lr_peak},
                {"weight_decay", t.weight_decay},
                {"warmup_epochs", t.warmup_epochs},
                {"max_epochs", t.max_epochs},
                {"batch_size", t.batch_size},
                {"early_stop_patience", t.early_stop_patience},
                {"loso_epochs", t.loso_epochs},
                {"validation_fraction", t.validation_fraction},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"eps", t.eps},
                {"seed", t.seed}};
  j["split"] = {{"protocol", c.split.protocol == Protocol::KFold ? "kfold" : "loso"},
                {"k", c.split.k},
                {"stratified", c.split.stratified}};
  j["align"] = {{"insert_pauses", c.align.insert_pauses}, {"strip_asr_punctuation", c.align.strip_asr_punctuation}};
  return j.dump(2) + "\n";
}

std::string model_config_to_json(const ModelConfig& config) { return model_to(config).dump(); }

ModelConfig model_config_from_json(const std::string& json_text) {
  return model_from(parse_json(json_text, "model config"), ModelConfig{}, "model config");
}

// --- checkpoint -------------------------------------------------------------------

void save_checkpoint(const fs::path& path, const Model& model) {
  ByteWriter w;
  w.put_bytes("CGNA", 4);
  w.put(kCheckpointVersion);
  w.put_string(model_config_to_json(model.config()));
  const auto& params = model.parameters();
  w.put(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.put_string(p.name);
    w.put(static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) w.put(static_cast<std::uint32_t>(d));
    w.put_bytes(p.tensor.data().data(), p.tensor.numel() * sizeof(float));
  }
  write_file_atomic(path, w.bytes());
}

Model load_checkpoint(const fs::path& path) {
  const std::string bytes = read_file(path);
  const std::string ctx = path.string();
  ByteReader r(bytes, ctx);
  if (std::memcmp(r.take(4, "header"), "CGNA", 4) != 0) throw FormatError(ctx + ": bad magic (not a CGNA checkpoint)", 0);
  const auto version = r.get<std::uint32_t>("header");
  if (version != kCheckpointVersion)
    throw FormatError(ctx + ": unsupported checkpoint version " + std::to_string(version), 4);
  const std::size_t config_at = r.position();
  ModelConfig config;
  try {
    config = model_config_from_json(r.get_string("config record"));
    config.validate();
  } catch (const ContractError& e) {
    throw FormatError(ctx + ": invalid config record: " + e.what(), config_at);
  }
  Model model(config);
  const auto count = r.get<std::uint32_t>("tensor count");
  const auto& params = model.parameters();
  if (count != params.size())
    throw FormatError(ctx + ": " + std::to_string(count) + " tensors, the configured model has " +
                          std::to_string(params.size()),
                      r.position() - 4);
  for (const auto& p : params) {
    const std::size_t at = r.position();
    const std::string name = r.get_string("tensor name");
    if (name != p.name) throw FormatError(ctx + ": expected tensor '" + p.name + "', found '" + name + "'", at);
    const auto rank = r.get<std::uint32_t>("tensor rank");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.get<std::uint32_t>("tensor shape"));
    if (shape != p.tensor.shape())
      throw FormatError(ctx + ": tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                            shape_string(p.tensor.shape()),
                        at);
    auto dst = p.tensor;
    auto values = dst.mutable_data();
    std::memcpy(values.data(), r.take(values.size() * sizeof(float), "tensor values"), values.size() * sizeof(float));
  }
  if (!r.at_end()) throw FormatError(ctx + ": trailing bytes after the last tensor", r.position());
  return model;
}

// --- reports ----------------------------------------------------------------------

namespace {

std::string metric_row(const std::string& name, const EvalReport& e, const TrainResult* training) {
  const std::size_t n = e.predictions.size();
  std::string row = name + "\t" + std::to_string(n);
  if (e.task == Task::Classify) {
    const auto& m = e.metrics;
    for (double v : {m.accuracy, m.precision, m.recall, m.f1}) row += "\t" + format_number("%.4f", v);
    row += "\tNA";
  } else {
    row += "\tNA\tNA\tNA\tNA\t" + format_number("%.4f", e.rmse);
  }
  row += "\t" + format_number("%.6f", e.mean_loss);
  if (training)
    row += "\t" + std::to_string(training->epochs_run) + "\t" + std::to_string(training->best_epoch);
  else
    row += "\tNA\tNA";
  return row + "\n";
}

constexpr const char* kMetricHeader = "fold\tsubjects\taccuracy\tprecision\trecall\tf1\trmse\tloss\tepochs\tbest_epoch\n";

ordered_json metrics_json(const EvalReport& e) {
  ordered_json j;
  j["task"] = task_name(e.task);
  j["subjects"] = e.predictions.size();
  if (e.task == Task::Classify) {
    const auto& m = e.metrics;
    j["accuracy"] = m.accuracy;
    j["precision"] = m.precision;
    j["recall"] = m.recall;
    j["f1"] = m.f1;
    j["per_class"] = ordered_json::object();
    for (std::size_t c = 0; c < 2; ++c)
      j["per_class"][std::string(label_code(static_cast<Label>(c)))] = {
          {"precision", m.class_precision[c]}, {"recall", m.class_recall[c]}, {"f1", m.class_f1[c]}};
    j["confusion"] = {{"true_CH", {{"pred_CH", e.confusion.counts[0][0]}, {"pred_AD", e.confusion.counts[0][1]}}},
                      {"true_AD", {{"pred_CH", e.confusion.counts[1][0]}, {"pred_AD", e.confusion.counts[1][1]}}}};
  } else {
    j["rmse"] = e.rmse;
  }
  j["mean_loss"] = e.mean_loss;
  return j;
}

ordered_json predictions_json(const EvalReport& e) {
  ordered_json arr = ordered_json::array();
  for (const auto& p : e.predictions) {
    ordered_json j;
    put_subject_meta(j, p.subject_id, p.label, p.mmse);
    if (e.task == Task::Classify) {
      j["predicted"] = label_code(static_cast<Label>(p.predicted_class));
      j["probability_ad"] = p.probability_ad;
    } else {
      j["score"] = p.score;
    }
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace

void write_cv_report_tsv(std::ostream& out, const CrossValidationResult& result) {
  out << kMetricHeader;
  for (const auto& f : result.folds) out << metric_row(std::to_string(f.fold), f.eval, &f.training);
  out << metric_row("all", result.aggregate, nullptr);
}

void write_cv_report_json(std::ostream& out, const CrossValidationResult& result) {
  ordered_json j;
  j["protocol"] = result.plan.protocol == Protocol::KFold ? "kfold" : "loso";
  j["stratified"] = result.plan.stratified;
  j["folds"] = ordered_json::array();
  for (const auto& f : result.folds) {
    ordered_json fj;
    fj["fold"] = f.fold;
    fj["metrics"] = metrics_json(f.eval);
    fj["epochs_run"] = f.training.epochs_run;
    fj["best_epoch"] = f.training.best_epoch;
    fj["early_stopped"] = f.training.early_stopped;
    fj["predictions"] = predictions_json(f.eval);
    j["folds"].push_back(std::move(fj));
  }
  j["aggregate"] = metrics_json(result.aggregate);
  out << j.dump(1) << "\n";
}

void write_eval_report_tsv(std::ostream& out, const EvalReport& report) {
  out << kMetricHeader << metric_row("all", report, nullptr);
}

void write_eval_report_json(std::ostream& out, const EvalReport& report) {
  ordered_json j;
  j["metrics"] = metrics_json(report);
  j["predictions"] = predictions_json(report);
  out << j.dump(1) << "\n";
}

void write_corpus_stats_tsv(std::ostream& out, const CorpusStats& stats) {
  out << "class\tsubjects\tcomma\tperiod\tellipsis\tduration\twords\n";
  for (Label l : {Label::HealthyControl, Label::Alzheimers}) {
    out << label_code(l);
    if (const auto& s = stats.of(l)) {
      out << "\t" << s->subjects;
      for (double v : {s->comma, s->period, s->ellipsis, s->duration, s->words}) out << "\t" << format_number("%.4f", v);
    } else {
      out << "\t0\tNA\tNA\tNA\tNA\tNA";
    }
    out << "\n";
  }
}

void write_corpus_stats_json(std::ostream& out, const CorpusStats& stats) {
  ordered_json j;
  for (Label l : {Label::HealthyControl, Label::Alzheimers}) {
    const auto& s = stats.of(l);
    j[std::string(label_code(l))] =
        s ? ordered_json{{"subjects", s->subjects}, {"comma", s->comma},       {"period", s->period},
                         {"ellipsis", s->ellipsis}, {"duration", s->duration}, {"words", s->words}}
          : ordered_json(nullptr);
  }
  out << j.dump(1) << "\n";
}

}  // namespace cognialign
