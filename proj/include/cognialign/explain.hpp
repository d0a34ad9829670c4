#pragma once

// Integrated Gradients token attribution and per-class corpus prosody
// statistics.

#include <array>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cognialign/alignment.hpp"
#include "cognialign/model.hpp"

namespace cognialign {

struct AttributionMap {
  std::vector<std::string> tokens;
  std::vector<double> scores;  // signed, one per token
  std::size_t predicted_class = 0;
  double completeness_gap = 0;  // |sum(attributions) - (F(x) - F(x'))|
  double output_delta = 0;      // F(x) - F(x')

  void validate() const;
};

struct IntegratedGradientsOptions {
  std::size_t steps = 256;
  // Output index to attribute; the predicted class when empty (index 0 for
  // regression).
  std::optional<std::size_t> target;
  // Zero embeddings on both streams when empty.
  std::optional<Matrix> baseline_audio;
  std::optional<Matrix> baseline_text;
};

// Per-element result for a scalar function of two input matrices.
struct PathAttribution {
  std::vector<double> audio;  // same layout as the inputs
  std::vector<double> text;
  double f_input = 0;
  double f_baseline = 0;
  double completeness_gap = 0;
};

using ScalarFunction = std::function<Tensor64(const Tensor64& audio, const Tensor64& text)>;

// Trapezoid rule over steps+1 points of the straight path from the baseline
// to the input. Throws NumericalError if any gradient is not finite.
PathAttribution integrate_path(const ScalarFunction& f, const Tensor64& audio, const Tensor64& text,
                               const Tensor64& baseline_audio, const Tensor64& baseline_text,
                               std::size_t steps);

// Evaluated in eval mode at 64 bits. A token's score sums the attributions
// of its audio and text rows.
AttributionMap integrated_gradients(const Model& model, const AlignedPair& pair,
                                    const IntegratedGradientsOptions& options = {});

// |score| / max|score|, all zero when every score is zero.
std::vector<double> attribution_intensity(const std::vector<double>& scores);

// Text report: "#"-prefixed header lines, then one "token<TAB>score" line per
// token. Tabs, newlines and backslashes inside tokens are escaped.
void write_attribution_text(std::ostream& out, const AttributionMap& map);
AttributionMap read_attribution_text(std::istream& in);
// Standalone HTML page; positive tokens green, negative red, opacity scaled
// by intensity.
void write_attribution_html(std::ostream& out, const AttributionMap& map);

// --- corpus statistics -------------------------------------------------------

// Transcript with pause marks inserted, as written by annotate-pauses.
struct AnnotatedTranscript {
  std::string subject_id;
  std::optional<Label> label;
  std::optional<double> mmse;
  std::vector<std::string> tokens;
  double duration = 0;  // seconds of audio
};

// Strips ASR punctuation, detects pauses and inserts their marks. Duration
// defaults to the end of the last word.
AnnotatedTranscript annotate_pauses(const Transcript& transcript, std::optional<double> duration = std::nullopt);

struct ClassStats {
  std::size_t subjects = 0;
  double comma = 0, period = 0, ellipsis = 0;  // mean pause tokens per subject
  double duration = 0;                          // mean seconds
  double words = 0;                             // mean non-pause tokens
};

struct CorpusStats {
  // Indexed by Label; empty when the class has no subjects.
  std::array<std::optional<ClassStats>, 2> per_class;

  const std::optional<ClassStats>& of(Label label) const { return per_class[static_cast<std::size_t>(label)]; }
};

// Throws ContractError when a subject has no label.
CorpusStats corpus_stats(const std::vector<AnnotatedTranscript>& corpus);

}  // namespace cognialign
