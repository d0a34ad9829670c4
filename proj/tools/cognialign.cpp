// Command-line front end: synth, align, annotate-pauses, train, eval,
// explain, stats and gradcheck.
//
// Exit status: 0 on success, 1 when an input or a check fails validation,
// 2 on usage errors.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "cognialign/explain.hpp"
#include "cognialign/io.hpp"
#include "cognialign/model_check.hpp"
#include "cognialign/synth.hpp"
#include "cognialign/training.hpp"

using namespace cognialign;

namespace {

constexpr int kValidationFailure = 1;
constexpr int kUsageError = 2;

std::string to_text(const std::function<void(std::ostream&)>& write) {
  std::ostringstream s;
  write(s);
  return s.str();
}

PipelineConfig load_config(const std::string& path) { return path.empty() ? PipelineConfig{} : read_config(path); }

// --- synth --------------------------------------------------------------------

struct SynthArgs {
  std::string out, spec;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> subjects, dim, vocabulary;
  std::optional<double> lexical;
  std::vector<double> rates_ch, rates_ad;
};

int run_synth(const SynthArgs& a) {
  SynthSpec spec = a.spec.empty() ? SynthSpec{} : synth_spec_from_json(read_file(a.spec));
  if (a.seed) spec.seed = *a.seed;
  if (a.subjects) spec.subjects_per_class = *a.subjects;
  if (a.dim) spec.dim = *a.dim;
  if (a.vocabulary) spec.vocabulary_size = *a.vocabulary;
  if (a.lexical) spec.lexical_signal = *a.lexical;
  if (!a.rates_ch.empty()) spec.pause_rates[0] = {a.rates_ch[0], a.rates_ch[1], a.rates_ch[2]};
  if (!a.rates_ad.empty()) spec.pause_rates[1] = {a.rates_ad[0], a.rates_ad[1], a.rates_ad[2]};
  const auto cohort = generate_synthetic_cohort(spec);
  const auto manifest = write_synthetic_cohort(a.out, cohort);
  std::cout << "wrote " << cohort.subjects.size() << " subjects to " << manifest.string() << "\n";
  return 0;
}

// --- align / annotate ------------------------------------------------------------

int run_align(const std::string& dataset, const std::string& out, const std::string& config_path, bool no_pauses) {
  AlignOptions options = load_config(config_path).align;
  if (no_pauses) options.insert_pauses = false;
  const auto manifest = read_manifest(dataset);
  std::size_t clipped = 0;
  for (const auto& r : manifest.samples) clipped += read_transcript(manifest.resolve(r.transcript)).clipped;
  const auto pairs = align_dataset(manifest, options);
  write_aligned_dataset(out, pairs);
  std::size_t tokens = 0;
  for (const auto& p : pairs) tokens += p.length();
  std::cout << "aligned " << pairs.size() << " samples, " << tokens << " tokens";
  if (clipped) std::cout << "; warning: clipped " << clipped << " overlapping words";
  std::cout << "\n";
  return 0;
}

int run_annotate(const std::string& transcript, const std::string& dataset, const std::string& out,
                 std::optional<double> duration) {
  if (!transcript.empty()) {
    const auto load = read_transcript(transcript);
    if (load.clipped) std::cerr << "warning: clipped " << load.clipped << " overlapping words\n";
    write_annotated_transcript(out, annotate_pauses(load.transcript, duration));
    return 0;
  }
  const auto manifest = read_manifest(dataset);
  validate_dataset(manifest);
  for (const auto& r : manifest.samples)
    write_annotated_transcript(fs::path(out) / (r.subject_id + ".annotated.json"), annotate_sample(manifest, r));
  std::cout << "annotated " << manifest.samples.size() << " transcripts\n";
  return 0;
}

// --- train / eval -------------------------------------------------------------

int run_train(const std::string& config_path, const std::string& data, const std::string& out, bool no_cv) {
  const PipelineConfig config = load_config(config_path);
  const auto pairs = read_aligned_dataset(data);
  if (pairs.empty()) throw ContractError("dataset has no samples");
  ModelConfig model_config = config.model;
  if (pairs.front().dim() != model_config.input_dim)
    throw ContractError("dataset embeddings have d=" + std::to_string(pairs.front().dim()) +
                        " but model.input_dim is " + std::to_string(model_config.input_dim));
  const fs::path dir(out);
  fs::create_directories(dir);
  write_file_atomic(dir / "config.json", config_to_json(config));

  if (!no_cv) {
    const auto cv = cross_validate(pairs, model_config, config.train, config.split);
    const std::string tsv = to_text([&](std::ostream& o) { write_cv_report_tsv(o, cv); });
    write_file_atomic(dir / "cv_report.tsv", tsv);
    write_file_atomic(dir / "cv_report.json", to_text([&](std::ostream& o) { write_cv_report_json(o, cv); }));
    std::cout << tsv;
  }

  Model model(model_config);
  const auto result = fit(model, pairs, config.train, config.split.protocol);
  std::string history = "epoch\tlr\ttrain_loss\tval_loss\tval_accuracy\n";
  for (const auto& h : result.history) {
    char line[160];
    std::snprintf(line, sizeof line, "%zu\t%.6g\t%.6f\t", h.epoch, h.lr, h.train_loss);
    history += line;
    history += h.val_loss ? (std::snprintf(line, sizeof line, "%.6f", *h.val_loss), line) : "NA";
    history += "\t";
    history += h.val_accuracy ? (std::snprintf(line, sizeof line, "%.4f", *h.val_accuracy), line) : "NA";
    history += "\n";
  }
  write_file_atomic(dir / "history.tsv", history);
  save_checkpoint(dir / "model.cgna", model);
  std::cout << "final fit: " << result.epochs_run << " epochs, best epoch " << result.best_epoch << "; checkpoint "
            << (dir / "model.cgna").string() << "\n";
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& data, const std::string& out) {
  const Model model = load_checkpoint(checkpoint);
  const auto pairs = read_aligned_dataset(data);
  const auto report = evaluate(model, pairs);
  const std::string tsv = to_text([&](std::ostream& o) { write_eval_report_tsv(o, report); });
  if (!out.empty()) {
    write_file_atomic(out + ".tsv", tsv);
    write_file_atomic(out + ".json", to_text([&](std::ostream& o) { write_eval_report_json(o, report); }));
  }
  std::cout << tsv;
  return 0;
}

// --- explain ------------------------------------------------------------------

int run_explain(const std::string& checkpoint, const std::string& data, const std::string& subject,
                std::size_t steps, const std::string& out, const std::string& html) {
  const Model model = load_checkpoint(checkpoint);
  const auto pairs = read_aligned_dataset(data);
  const AlignedPair* pair = nullptr;
  for (const auto& p : pairs)
    if (subject.empty() || p.subject_id == subject) {
      pair = &p;
      break;
    }
  if (!pair) throw ContractError("subject '" + subject + "' not found in " + data);
  IntegratedGradientsOptions options;
  options.steps = steps;
  const auto map = integrated_gradients(model, *pair, options);
  const std::string text = to_text([&](std::ostream& o) { write_attribution_text(o, map); });
  if (!out.empty())
    write_file_atomic(out, text);
  else
    std::cout << text;
  if (!html.empty()) write_file_atomic(html, to_text([&](std::ostream& o) { write_attribution_html(o, map); }));
  std::cerr << "subject " << pair->subject_id << ": completeness gap " << map.completeness_gap << " of output delta "
            << map.output_delta << "\n";
  return 0;
}

// --- stats / gradcheck ------------------------------------------------------------

int run_stats(const std::string& dataset, const std::vector<std::string>& annotated, const std::string& out) {
  std::vector<AnnotatedTranscript> corpus;
  if (!dataset.empty()) {
    const auto manifest = read_manifest(dataset);
    validate_dataset(manifest);
    for (const auto& r : manifest.samples) corpus.push_back(annotate_sample(manifest, r));
  }
  for (const auto& path : annotated) corpus.push_back(read_annotated_transcript(path));
  const auto stats = corpus_stats(corpus);
  const std::string tsv = to_text([&](std::ostream& o) { write_corpus_stats_tsv(o, stats); });
  if (!out.empty()) {
    write_file_atomic(out + ".tsv", tsv);
    write_file_atomic(out + ".json", to_text([&](std::ostream& o) { write_corpus_stats_json(o, stats); }));
  }
  std::cout << tsv;
  return 0;
}

int run_gradcheck(const std::string& config_path, std::size_t seeds, std::size_t length, bool full_size) {
  const PipelineConfig config = load_config(config_path);
  const ModelConfig model_config = full_size ? config.model : reduced_for_gradcheck(config.model, length);
  bool passed = true;
  double worst = 0.0;
  std::printf("%-4s %-40s %8s %14s\n", "seed", "tensor", "numel", "max_rel_error");
  for (std::size_t s = 0; s < seeds; ++s) {
    const auto report = check_model_gradients(model_config, s, length);
    for (const auto& p : report.parameters)
      std::printf("%-4zu %-40s %8zu %14.3e\n", s, p.name.c_str(), p.numel, p.max_relative_error);
    passed = passed && report.passed;
    worst = std::max(worst, report.worst());
  }
  std::printf("%s: worst relative error %.3e (tolerance 1e-4) over %zu seeds\n", passed ? "PASS" : "FAIL", worst,
              seeds);
  return passed ? 0 : kValidationFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio-text fusion pipeline for dementia screening research"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic cohort");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--spec", synth.spec, "Generator spec (JSON)")->check(CLI::ExistingFile);
  synth_cmd->add_option("--seed", synth.seed, "Random seed");
  synth_cmd->add_option("--subjects-per-class", synth.subjects, "Subjects per class");
  synth_cmd->add_option("--dim", synth.dim, "Embedding dimension");
  synth_cmd->add_option("--vocabulary-size", synth.vocabulary, "Number of pseudo-words");
  synth_cmd->add_option("--lexical-signal", synth.lexical, "Lexical signal strength in [0, 1]");
  synth_cmd->add_option("--pause-rates-ch", synth.rates_ch, "CH comma, period, ellipsis rates")->expected(3);
  synth_cmd->add_option("--pause-rates-ad", synth.rates_ad, "AD comma, period, ellipsis rates")->expected(3);

  std::string dataset, out, config_path, data, checkpoint, subject, transcript, html;
  bool no_pauses = false, no_cv = false, full_size = false;
  std::optional<double> duration;
  std::size_t steps = 256, seeds = 3, length = 5;
  std::vector<std::string> annotated;

  auto* align_cmd = app.add_subcommand("align", "Align a dataset into token-level audio/text pairs");
  align_cmd->add_option("--dataset", dataset, "Dataset manifest")->required()->check(CLI::ExistingFile);
  align_cmd->add_option("--out", out, "Output directory")->required();
  align_cmd->add_option("--config", config_path, "Pipeline config (JSON)")->check(CLI::ExistingFile);
  align_cmd->add_flag("--no-pauses", no_pauses, "Do not insert pause tokens");

  auto* annotate_cmd = app.add_subcommand("annotate-pauses", "Insert pause marks into transcripts");
  auto* t_opt = annotate_cmd->add_option("--transcript", transcript, "Transcript (JSON)")->check(CLI::ExistingFile);
  auto* d_opt = annotate_cmd->add_option("--dataset", dataset, "Dataset manifest")->check(CLI::ExistingFile);
  t_opt->excludes(d_opt);
  annotate_cmd->add_option("--out", out, "Output file (--transcript) or directory (--dataset)")->required();
  annotate_cmd->add_option("--duration", duration, "Audio duration in seconds")->needs(t_opt);

  auto* train_cmd = app.add_subcommand("train", "Cross-validate and fit a model");
  train_cmd->add_option("--config", config_path, "Pipeline config (JSON)")->check(CLI::ExistingFile);
  train_cmd->add_option("--data", data, "Aligned dataset")->required()->check(CLI::ExistingPath);
  train_cmd->add_option("--out", out, "Run directory")->required();
  train_cmd->add_flag("--no-cv", no_cv, "Skip cross-validation, only fit the final model");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", data, "Aligned dataset")->required()->check(CLI::ExistingPath);
  eval_cmd->add_option("--out", out, "Report path prefix (.tsv and .json)");

  auto* explain_cmd = app.add_subcommand("explain", "Integrated Gradients token attributions");
  explain_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  explain_cmd->add_option("--data", data, "Aligned dataset")->required()->check(CLI::ExistingPath);
  explain_cmd->add_option("--subject", subject, "Subject id (default: first sample)");
  explain_cmd->add_option("--steps", steps, "Path integration steps")->check(CLI::Range(8, 1 << 20));
  explain_cmd->add_option("--out", out, "Text report path (default: stdout)");
  explain_cmd->add_option("--html", html, "HTML report path");

  auto* stats_cmd = app.add_subcommand("stats", "Per-class pause and word statistics");
  auto* ds_opt = stats_cmd->add_option("--dataset", dataset, "Dataset manifest")->check(CLI::ExistingFile);
  auto* an_opt = stats_cmd->add_option("--annotated", annotated, "Annotated transcripts")->check(CLI::ExistingFile);
  stats_cmd->add_option("--out", out, "Report path prefix (.tsv and .json)");

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check of the configured model");
  grad_cmd->add_option("--config", config_path, "Pipeline config (JSON)")->check(CLI::ExistingFile);
  grad_cmd->add_option("--seeds", seeds, "Number of seeded instances")->check(CLI::PositiveNumber);
  grad_cmd->add_option("--length", length, "Sequence length")->check(CLI::PositiveNumber);
  grad_cmd->add_flag("--full-size", full_size, "Check at the configured widths instead of reduced ones");

  try {
    app.parse(argc, argv);
    if (annotate_cmd->parsed() && transcript.empty() && dataset.empty())
      throw CLI::RequiredError("annotate-pauses needs --transcript or --dataset");
    if (stats_cmd->parsed() && ds_opt->count() == 0 && an_opt->count() == 0)
      throw CLI::RequiredError("stats needs --dataset or --annotated");
  } catch (const CLI::Error& e) {
    const int code = app.exit(e);
    if (code == 0) return 0;
    for (const auto* sub : app.get_subcommands()) std::cerr << sub->help();
    if (app.get_subcommands().empty()) std::cerr << app.help();
    return kUsageError;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth);
    if (align_cmd->parsed()) return run_align(dataset, out, config_path, no_pauses);
    if (annotate_cmd->parsed()) return run_annotate(transcript, dataset, out, duration);
    if (train_cmd->parsed()) return run_train(config_path, data, out, no_cv);
    if (eval_cmd->parsed()) return run_eval(checkpoint, data, out);
    if (explain_cmd->parsed()) return run_explain(checkpoint, data, subject, steps, out, html);
    if (stats_cmd->parsed()) return run_stats(dataset, annotated, out);
    if (grad_cmd->parsed()) return run_gradcheck(config_path, seeds, length, full_size);
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidationFailure;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidationFailure;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidationFailure;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidationFailure;
  }
  return kUsageError;
}
