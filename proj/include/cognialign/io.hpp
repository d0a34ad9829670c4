#pragma once

// File formats: CGNM matrices, JSON transcripts/manifests/config, aligned
// datasets, CGNA checkpoints and metric reports.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cognialign/alignment.hpp"
#include "cognialign/explain.hpp"
#include "cognialign/model.hpp"
#include "cognialign/training.hpp"

namespace cognialign {

namespace fs = std::filesystem;

// --- CGNM matrix container --------------------------------------------------
//
// "CGNM", u32 version = 1, u32 rows, u32 cols, f64 stride_seconds,
// f64 offset_seconds, then rows*cols little-endian f32, row-major.

inline constexpr std::uint32_t kMatrixVersion = 1;
inline constexpr std::size_t kMatrixHeaderBytes = 32;

struct MatrixHeader {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  double stride = 0.0;
  double offset = 0.0;
};

void write_matrix(std::ostream& out, const Matrix& m, double stride = 0.0, double offset = 0.0);
void write_matrix(const fs::path& path, const Matrix& m, double stride = 0.0, double offset = 0.0);
void write_frames(const fs::path& path, const FrameStream& stream);

// FormatError on bad magic, version or a truncated payload (with the byte
// offset at which data ran out).
MatrixHeader read_matrix_header(std::istream& in);
MatrixHeader read_matrix_header(const fs::path& path);
Matrix read_matrix(std::istream& in, MatrixHeader* header = nullptr);
Matrix read_matrix(const fs::path& path, MatrixHeader* header = nullptr);
FrameStream read_frames(const fs::path& path);

// --- transcripts ------------------------------------------------------------
//
// {"subject_id": .., "label": "CH"|"AD", "mmse": .., "words": [{"word", "start", "end"}]}

struct TranscriptLoad {
  Transcript transcript;
  std::size_t clipped = 0;  // overlapping words clipped to the next start
};

TranscriptLoad read_transcript(const fs::path& path);
TranscriptLoad parse_transcript(const std::string& json_text);
void write_transcript(const fs::path& path, const Transcript& transcript);

void write_annotated_transcript(const fs::path& path, const AnnotatedTranscript& transcript);
AnnotatedTranscript read_annotated_transcript(const fs::path& path);

// Token list exported with precomputed embeddings: [{"text", "word"}].
std::vector<SubwordToken> read_token_list(const fs::path& path);
void write_token_list(const fs::path& path, const std::vector<SubwordToken>& tokens);

// --- dataset manifest -------------------------------------------------------

struct SampleRecord {
  std::string subject_id;
  std::optional<Label> label;
  std::optional<double> mmse;
  std::string transcript;  // paths relative to the manifest directory
  std::string frames;
  std::optional<std::string> tokens;            // with token_embeddings
  std::optional<std::string> token_embeddings;  // CGNM [tokens × dim]
};

struct DatasetManifest {
  std::size_t embedding_dim = 0;
  double frame_stride = 0.02;
  // Vocabulary file for in-process tokenization (relative path).
  std::optional<std::string> vocabulary;
  // Text-side vectors for tokens without precomputed embeddings.
  std::uint64_t text_hash_seed = 0;
  double text_hash_scale = 1.0;
  // Free-form generation record (synthetic cohorts store ground truth here).
  std::string generator_json = "null";
  std::vector<SampleRecord> samples;
  fs::path directory;  // set on read

  fs::path resolve(const std::string& relative) const { return directory / relative; }
};

DatasetManifest read_manifest(const fs::path& path);
void write_manifest(const fs::path& path, const DatasetManifest& manifest);

// Checks every matrix header against the manifest's dim and stride and that
// transcripts parse, without reading payloads. Throws FormatError on the
// first mismatch.
void validate_dataset(const DatasetManifest& manifest);

struct SampleBundle {
  Transcript transcript;
  FrameStream frames;
  std::optional<PretokenizedText> text;
  std::size_t clipped = 0;
};

SampleBundle load_sample(const DatasetManifest& manifest, const SampleRecord& record);

// Validates, then aligns every sample. Pause marks use the hash embedder
// when the sample is pretokenized.
std::vector<AlignedPair> align_dataset(const DatasetManifest& manifest, const AlignOptions& options);

AnnotatedTranscript annotate_sample(const DatasetManifest& manifest, const SampleRecord& record);

// --- aligned datasets -------------------------------------------------------
//
// Directory with aligned.json plus two CGNM files per pair.

void write_aligned_dataset(const fs::path& directory, const std::vector<AlignedPair>& pairs);
std::vector<AlignedPair> read_aligned_dataset(const fs::path& path);  // directory or aligned.json

// --- configuration ----------------------------------------------------------

struct PipelineConfig {
  ModelConfig model;
  TrainConfig train;
  SplitSpec split;
  AlignOptions align;

  void validate() const;
};

// Unknown keys are rejected; missing keys keep their defaults.
PipelineConfig read_config(const fs::path& path);
PipelineConfig parse_config(const std::string& json_text);
std::string config_to_json(const PipelineConfig& config);
std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& json_text);

// --- CGNA checkpoint --------------------------------------------------------
//
// "CGNA", u32 version = 1, u32 config length, config JSON, u32 tensor count,
// then per tensor: u32 name length, name, u32 rank, u32 dims[rank],
// little-endian f32 values.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const fs::path& path, const Model& model);
Model load_checkpoint(const fs::path& path);

// --- reports ----------------------------------------------------------------

// One row per fold plus an "all" row over the pooled predictions.
void write_cv_report_tsv(std::ostream& out, const CrossValidationResult& result);
void write_cv_report_json(std::ostream& out, const CrossValidationResult& result);
void write_eval_report_tsv(std::ostream& out, const EvalReport& report);
void write_eval_report_json(std::ostream& out, const EvalReport& report);
void write_corpus_stats_tsv(std::ostream& out, const CorpusStats& stats);
void write_corpus_stats_json(std::ostream& out, const CorpusStats& stats);

// Writes `content` to `path` via a temporary file in the same directory.
void write_file_atomic(const fs::path& path, const std::string& content);
std::string read_file(const fs::path& path);

}  // namespace cognialign
