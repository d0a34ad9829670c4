#include "cognialign/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cognialign/rng.hpp"
#include "json.hpp"

namespace cognialign {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::array<const char*, 12> kSyllables = {"ka", "lo", "mi", "tu", "ne", "ra",
                                                    "si", "po", "de", "gu", "fa", "bi"};

// Gap duration ranges per category, inside the bucket away from its edges.
constexpr double kPlainGap[2] = {0.05, 0.35};
constexpr double kCommaGap[2] = {0.55, 0.95};
constexpr double kPeriodGap[2] = {1.05, 1.45};
// AD ellipses run longer.
constexpr double kEllipsisGap[2][2] = {{1.6, 2.4}, {1.8, 3.0}};

std::string subject_id(Label label, std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%s%03zu", label == Label::Alzheimers ? "AD" : "CH", i);
  return buf;
}

SyntheticSubject make_subject(const SynthSpec& spec, Label label, std::size_t index, Rng rng,
                              const HashEmbedder& acoustic) {
  const std::size_t cls = static_cast<std::size_t>(label);
  const std::size_t indicative = std::max<std::size_t>(1, spec.vocabulary_size / 8);
  const std::size_t neutral_begin = 2 * indicative;

  SyntheticSubject s;
  Transcript& t = s.transcript;
  t.subject_id = subject_id(label, index);
  t.label = label;
  t.mmse = label == Label::Alzheimers ? std::round(rng.uniform(12.0, 24.0)) : std::round(rng.uniform(26.0, 30.0));

  const std::size_t n_words = spec.min_words + rng.below(spec.max_words - spec.min_words + 1);
  std::vector<std::size_t> word_ids(n_words);
  for (auto& w : word_ids) {
    if (rng.uniform() < spec.lexical_signal)
      w = cls * indicative + rng.below(indicative);
    else
      w = neutral_begin + rng.below(spec.vocabulary_size - neutral_begin);
  }

  // Gap g follows word g. Each planted pause takes a distinct gap.
  std::vector<PauseCategory> gaps(n_words - 1, PauseCategory::None);
  std::vector<std::size_t> free(gaps.size());
  for (std::size_t i = 0; i < free.size(); ++i) free[i] = i;
  rng.shuffle(free);
  const PauseRates& rates = spec.pause_rates[cls];
  std::size_t next_free = 0;
  auto plant = [&](double lambda, PauseCategory category) {
    const std::size_t want = static_cast<std::size_t>(rng.poisson(lambda));
    std::size_t placed = 0;
    for (; placed < want && next_free < free.size(); ++placed) gaps[free[next_free++]] = category;
    return static_cast<double>(placed);
  };
  s.planted.comma = plant(rates.comma, PauseCategory::Comma);
  s.planted.period = plant(rates.period, PauseCategory::Period);
  s.planted.ellipsis = plant(rates.ellipsis, PauseCategory::Ellipsis);

  double clock = rng.uniform(0.1, 0.5);
  for (std::size_t i = 0; i < n_words; ++i) {
    const double start = clock;
    const double end = start + rng.uniform(0.2, 0.6);
    t.words.push_back({synthetic_word(word_ids[i]), start, end});
    clock = end;
    if (i + 1 < n_words) {
      const double* range = kPlainGap;
      switch (gaps[i]) {
        case PauseCategory::Comma: range = kCommaGap; break;
        case PauseCategory::Period: range = kPeriodGap; break;
        case PauseCategory::Ellipsis: range = kEllipsisGap[cls]; break;
        case PauseCategory::None: break;
      }
      clock += rng.uniform(range[0], range[1]);
    }
  }

  const double total = clock + rng.uniform(0.1, 0.5);
  FrameStream& f = s.frames;
  f.stride = spec.frame_stride;
  f.offset = 0.0;
  const std::size_t frames = static_cast<std::size_t>(std::ceil(total / spec.frame_stride));
  f.features = Matrix(frames, spec.dim);
  std::size_t w = 0;
  std::vector<float> centre;
  std::size_t centre_word = SIZE_MAX;
  for (std::size_t j = 0; j < frames; ++j) {
    const double time = f.timestamp(j);
    while (w < n_words && t.words[w].end <= time) ++w;
    const bool speaking = w < n_words && t.words[w].start <= time;
    if (speaking && centre_word != w) {
      centre = acoustic.embed(t.words[w].text);
      centre_word = w;
    }
    auto row = f.features.row(j);
    for (std::size_t c = 0; c < spec.dim; ++c)
      row[c] = static_cast<float>(speaking ? centre[c] + spec.frame_noise * rng.normal()
                                           : 0.3 * spec.frame_noise * rng.normal());
  }
  return s;
}

ordered_json rates_json(const PauseRates& r) {
  return {{"comma", r.comma}, {"period", r.period}, {"ellipsis", r.ellipsis}};
}

}  // namespace

void SynthSpec::validate() const {
  if (subjects_per_class == 0) throw ContractError("synth: subjects_per_class must be positive");
  if (dim < 2) throw ContractError("synth: dim must be at least 2");
  if (vocabulary_size < 16) throw ContractError("synth: vocabulary_size must be at least 16");
  if (vocabulary_size > 144 + 1728) throw ContractError("synth: vocabulary_size must be at most 1872");
  if (!(lexical_signal >= 0.0 && lexical_signal <= 1.0)) throw ContractError("synth: lexical_signal must be in [0, 1]");
  if (min_words < 2 || max_words < min_words) throw ContractError("synth: need 2 <= min_words <= max_words");
  if (!(frame_stride > 0)) throw ContractError("synth: frame_stride must be positive");
  if (!(frame_noise >= 0)) throw ContractError("synth: frame_noise must be non-negative");
  for (const auto& r : pause_rates)
    if (!(r.comma >= 0 && r.period >= 0 && r.ellipsis >= 0)) throw ContractError("synth: pause rates must be >= 0");
}

std::string synthetic_word(std::size_t index) {
  const std::size_t n = kSyllables.size();
  if (index < n * n) return std::string(kSyllables[index / n]) + kSyllables[index % n];
  index -= n * n;
  return std::string(kSyllables[index / (n * n) % n]) + kSyllables[index / n % n] + kSyllables[index % n];
}

SyntheticCohort generate_synthetic_cohort(const SynthSpec& spec) {
  spec.validate();
  const Rng root(spec.seed);
  SyntheticCohort cohort;
  cohort.spec = spec;
  cohort.text_hash_seed = root.substream("text-embedding").seed();
  const HashEmbedder acoustic(spec.dim, root.substream("acoustic-embedding").seed());

  // Whole-word entries for indicative words and every other neutral word;
  // the rest split into syllables.
  cohort.vocabulary.assign(kSyllables.begin(), kSyllables.end());
  const std::size_t indicative = std::max<std::size_t>(1, spec.vocabulary_size / 8);
  for (std::size_t i = 0; i < spec.vocabulary_size; ++i)
    if (i < 2 * indicative || i % 2 == 0) cohort.vocabulary.push_back(synthetic_word(i));

  const Rng subjects = root.substream("subjects");
  for (Label label : {Label::HealthyControl, Label::Alzheimers})
    for (std::size_t i = 0; i < spec.subjects_per_class; ++i)
      cohort.subjects.push_back(
          make_subject(spec, label, i, subjects.substream(label_code(label)).substream(i), acoustic));
  return cohort;
}

std::vector<AlignedPair> align_cohort(const SyntheticCohort& cohort, const AlignOptions& options) {
  const Tokenizer tokenizer(cohort.vocabulary);
  const HashEmbedder embedder(cohort.spec.dim, cohort.text_hash_seed);
  std::vector<AlignedPair> out;
  out.reserve(cohort.subjects.size());
  for (const auto& s : cohort.subjects)
    out.push_back(build_aligned_pair(s.transcript, s.frames, embedder, tokenizer, options));
  return out;
}

std::vector<AnnotatedTranscript> annotate_cohort(const SyntheticCohort& cohort) {
  std::vector<AnnotatedTranscript> out;
  for (const auto& s : cohort.subjects)
    out.push_back(annotate_pauses(s.transcript, s.frames.offset + s.frames.frames() * s.frames.stride));
  return out;
}

fs::path write_synthetic_cohort(const fs::path& directory, const SyntheticCohort& cohort) {
  DatasetManifest m;
  m.embedding_dim = cohort.spec.dim;
  m.frame_stride = cohort.spec.frame_stride;
  m.vocabulary = "vocab.txt";
  m.text_hash_seed = cohort.text_hash_seed;
  m.text_hash_scale = 1.0;

  ordered_json generator;
  generator["kind"] = "synthetic";
  generator["spec"] = ordered_json::parse(synth_spec_to_json(cohort.spec));
  generator["planted"] = ordered_json::object();
  for (const auto& s : cohort.subjects) {
    const std::string& id = s.transcript.subject_id;
    generator["planted"][id] = rates_json(s.planted);
    SampleRecord r;
    r.subject_id = id;
    r.label = s.transcript.label;
    r.mmse = s.transcript.mmse;
    r.transcript = "subjects/" + id + ".transcript.json";
    r.frames = "subjects/" + id + ".frames.cgnm";
    write_transcript(directory / r.transcript, s.transcript);
    write_frames(directory / r.frames, s.frames);
    m.samples.push_back(std::move(r));
  }
  m.generator_json = generator.dump();

  std::string vocab;
  for (const auto& v : cohort.vocabulary) vocab += v + "\n";
  write_file_atomic(directory / "vocab.txt", vocab);
  const fs::path manifest = directory / "manifest.json";
  write_manifest(manifest, m);
  return manifest;
}

std::string synth_spec_to_json(const SynthSpec& spec) {
  ordered_json j;
  j["subjects_per_class"] = spec.subjects_per_class;
  j["vocabulary_size"] = spec.vocabulary_size;
  j["dim"] = spec.dim;
  j["pause_rates"] = {{"CH", rates_json(spec.pause_rates[0])}, {"AD", rates_json(spec.pause_rates[1])}};
  j["lexical_signal"] = spec.lexical_signal;
  j["min_words"] = spec.min_words;
  j["max_words"] = spec.max_words;
  j["frame_stride"] = spec.frame_stride;
  j["frame_noise"] = spec.frame_noise;
  j["seed"] = spec.seed;
  return j.dump();
}

SynthSpec synth_spec_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("synth spec: invalid JSON: ") + e.what(), e.byte);
  }
  SynthSpec s;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "subjects_per_class") s.subjects_per_class = value.get<std::size_t>();
      else if (key == "vocabulary_size") s.vocabulary_size = value.get<std::size_t>();
      else if (key == "dim") s.dim = value.get<std::size_t>();
      else if (key == "lexical_signal") s.lexical_signal = value.get<double>();
      else if (key == "min_words") s.min_words = value.get<std::size_t>();
      else if (key == "max_words") s.max_words = value.get<std::size_t>();
      else if (key == "frame_stride") s.frame_stride = value.get<double>();
      else if (key == "frame_noise") s.frame_noise = value.get<double>();
      else if (key == "seed") s.seed = value.get<std::uint64_t>();
      else if (key == "pause_rates") {
        for (const auto& [cls, r] : value.items()) {
          PauseRates& dst = s.pause_rates[static_cast<std::size_t>(parse_label(cls))];
          for (const auto& [cat, rate] : r.items()) {
            if (cat == "comma") dst.comma = rate.get<double>();
            else if (cat == "period") dst.period = rate.get<double>();
            else if (cat == "ellipsis") dst.ellipsis = rate.get<double>();
            else throw FormatError("synth spec: unknown pause category \"" + cat + "\"");
          }
        }
      } else {
        throw FormatError("synth spec: unknown key \"" + key + "\"");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("synth spec: ") + e.what());
  }
  try {
    s.validate();
  } catch (const ContractError& e) {
    throw FormatError(e.what());
  }
  return s;
}

}  // namespace cognialign
