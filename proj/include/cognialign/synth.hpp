#pragma once

// Synthetic cohorts with a tunable lexical signal and per-class pause rates.
//
// Each class has an indicative word set. Every word slot draws from the
// subject's own indicative set with probability lexical_signal, otherwise
// from a shared neutral set. Pause gaps are planted per transcript as
// Poisson counts per category. Audio frames are Gaussian around a per-word
// acoustic embedding; silence frames are low-variance noise.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cognialign/alignment.hpp"
#include "cognialign/io.hpp"

namespace cognialign {

struct PauseRates {
  double comma = 0;
  double period = 0;
  double ellipsis = 0;
  friend bool operator==(const PauseRates&, const PauseRates&) = default;
};

struct SynthSpec {
  std::size_t subjects_per_class = 100;
  std::size_t vocabulary_size = 200;
  std::size_t dim = 64;
  // Indexed by Label: CH, AD.
  std::array<PauseRates, 2> pause_rates{PauseRates{3.0, 1.0, 1.0}, PauseRates{3.0, 2.0, 3.0}};
  double lexical_signal = 0.8;
  std::size_t min_words = 30;
  std::size_t max_words = 50;
  double frame_stride = 0.02;
  double frame_noise = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

struct SyntheticSubject {
  Transcript transcript;
  FrameStream frames;
  PauseRates planted;  // pause counts actually placed
};

struct SyntheticCohort {
  SynthSpec spec;
  std::vector<std::string> vocabulary;  // tokenizer vocabulary
  std::uint64_t text_hash_seed = 0;
  std::vector<SyntheticSubject> subjects;
};

// The i-th pseudo-word: two or three syllables, unique per index.
std::string synthetic_word(std::size_t index);

SyntheticCohort generate_synthetic_cohort(const SynthSpec& spec);

// Same alignment as align_dataset on the written cohort.
std::vector<AlignedPair> align_cohort(const SyntheticCohort& cohort, const AlignOptions& options = {});

std::vector<AnnotatedTranscript> annotate_cohort(const SyntheticCohort& cohort);

// manifest.json, vocab.txt and subjects/<id>.{transcript.json,frames.cgnm}.
// Returns the manifest path.
fs::path write_synthetic_cohort(const fs::path& directory, const SyntheticCohort& cohort);

std::string synth_spec_to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const std::string& json_text);

}  // namespace cognialign
