#include "cognialign/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace cognialign {

void AttributionMap::validate() const {
  if (tokens.size() != scores.size())
    throw ContractError("attribution map has " + std::to_string(tokens.size()) + " tokens but " +
                        std::to_string(scores.size()) + " scores");
}

namespace {

Tensor64 lerp(const Tensor64& from, const Tensor64& to, double alpha) {
  std::vector<double> v(from.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = from.at(i) + alpha * (to.at(i) - from.at(i));
  return Tensor64(from.shape(), std::move(v), true);
}

double evaluate_scalar(const ScalarFunction& f, const Tensor64& audio, const Tensor64& text) {
  const Tensor64 out = f(audio.detach(), text.detach());
  if (out.numel() != 1) throw ContractError("integrated gradients: function must return a scalar");
  return out.item();
}

}  // namespace

PathAttribution integrate_path(const ScalarFunction& f, const Tensor64& audio, const Tensor64& text,
                               const Tensor64& baseline_audio, const Tensor64& baseline_text,
                               std::size_t steps) {
  if (steps == 0) throw ContractError("integrated gradients: steps must be positive");
  if (baseline_audio.shape() != audio.shape() || baseline_text.shape() != text.shape())
    throw ContractError("integrated gradients: baseline shape " + shape_string(baseline_audio.shape()) + "/" +
                        shape_string(baseline_text.shape()) + " differs from input " +
                        shape_string(audio.shape()) + "/" + shape_string(text.shape()));

  std::vector<double> mean_audio(audio.numel(), 0.0), mean_text(text.numel(), 0.0);
  for (std::size_t k = 0; k <= steps; ++k) {
    const double alpha = static_cast<double>(k) / static_cast<double>(steps);
    const double weight = (k == 0 || k == steps ? 0.5 : 1.0) / static_cast<double>(steps);
    Tensor64 a = lerp(baseline_audio, audio, alpha);
    Tensor64 t = lerp(baseline_text, text, alpha);
    const Tensor64 out = f(a, t);
    if (out.numel() != 1) throw ContractError("integrated gradients: function must return a scalar");
    backward(out);
    const auto ga = a.grad(), gt = t.grad();
    for (std::size_t i = 0; i < ga.size(); ++i) mean_audio[i] += weight * ga[i];
    for (std::size_t i = 0; i < gt.size(); ++i) mean_text[i] += weight * gt[i];
    const bool finite = std::all_of(ga.begin(), ga.end(), [](double g) { return std::isfinite(g); }) &&
                        std::all_of(gt.begin(), gt.end(), [](double g) { return std::isfinite(g); });
    if (!finite)
      throw NumericalError("integrated gradients: non-finite gradient at path point " + std::to_string(k) +
                           " of " + std::to_string(steps) + " (alpha = " + std::to_string(alpha) + ")");
  }

  PathAttribution r;
  r.audio.resize(audio.numel());
  r.text.resize(text.numel());
  double total = 0.0;
  for (std::size_t i = 0; i < r.audio.size(); ++i) {
    r.audio[i] = (audio.at(i) - baseline_audio.at(i)) * mean_audio[i];
    total += r.audio[i];
  }
  for (std::size_t i = 0; i < r.text.size(); ++i) {
    r.text[i] = (text.at(i) - baseline_text.at(i)) * mean_text[i];
    total += r.text[i];
  }
  r.f_input = evaluate_scalar(f, audio, text);
  r.f_baseline = evaluate_scalar(f, baseline_audio, baseline_text);
  r.completeness_gap = std::abs(total - (r.f_input - r.f_baseline));
  return r;
}

AttributionMap integrated_gradients(const Model& model, const AlignedPair& pair,
                                    const IntegratedGradientsOptions& options) {
  if (options.steps < 8)
    throw ContractError("integrated gradients: steps must be at least 8, got " + std::to_string(options.steps));
  pair.validate();

  Model64 m = model.cast<double>();
  for (auto p : m.parameters()) p.tensor.set_requires_grad(false);

  const Tensor64 audio = to_tensor<double>(pair.audio);
  const Tensor64 text = to_tensor<double>(pair.text);
  auto baseline = [&](const std::optional<Matrix>& given, const Tensor64& like) {
    if (!given) return Tensor64::zeros(like.shape());
    if (given->rows != like.rows() || given->cols != like.cols())
      throw ContractError("integrated gradients: baseline is " + std::to_string(given->rows) + "x" +
                          std::to_string(given->cols) + ", input is " + shape_string(like.shape()));
    return to_tensor<double>(*given);
  };
  const Tensor64 base_audio = baseline(options.baseline_audio, audio);
  const Tensor64 base_text = baseline(options.baseline_text, text);

  const Tensor64 logits = m.forward(audio, text);
  std::size_t predicted = 0;
  for (std::size_t j = 1; j < logits.numel(); ++j)
    if (logits.at(j) > logits.at(predicted)) predicted = j;
  const std::size_t target = options.target.value_or(predicted);
  if (target >= logits.numel())
    throw ContractError("integrated gradients: target " + std::to_string(target) + " out of range for " +
                        std::to_string(logits.numel()) + " outputs");

  const ScalarFunction f = [&](const Tensor64& a, const Tensor64& t) {
    return sum(slice(m.forward(a, t), 1, target, target + 1));
  };
  const PathAttribution path = integrate_path(f, audio, text, base_audio, base_text, options.steps);

  AttributionMap map;
  map.predicted_class = predicted;
  map.completeness_gap = path.completeness_gap;
  map.output_delta = path.f_input - path.f_baseline;
  const std::size_t d = pair.dim();
  for (std::size_t r = 0; r < pair.length(); ++r) {
    double score = 0.0;
    for (std::size_t c = 0; c < d; ++c) score += path.audio[r * d + c] + path.text[r * d + c];
    map.tokens.push_back(pair.tokens[r].text);
    map.scores.push_back(score);
  }
  return map;
}

std::vector<double> attribution_intensity(const std::vector<double>& scores) {
  double peak = 0.0;
  for (double s : scores) peak = std::max(peak, std::abs(s));
  std::vector<double> out(scores.size(), 0.0);
  if (peak > 0.0)
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = std::abs(scores[i]) / peak;
  return out;
}

// --- reports -----------------------------------------------------------------

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// A leading '#' is escaped so subword tokens such as "##ing" are not read
// back as header lines.
std::string escape_token(const std::string& s) {
  std::string out = !s.empty() && s[0] == '#' ? "\\" : "";
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out += c;
    }
  }
  return out;
}

std::string unescape_token(const std::string& s, std::size_t line) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out += s[i];
      continue;
    }
    if (++i == s.size()) throw FormatError("attribution report line " + std::to_string(line) + ": dangling escape");
    switch (s[i]) {
      case '\\': out += '\\'; break;
      case 't': out += '\t'; break;
      case 'n': out += '\n'; break;
      case 'r': out += '\r'; break;
      case '#': out += '#'; break;
      default:
        throw FormatError("attribution report line " + std::to_string(line) + ": unknown escape \\" + s[i]);
    }
  }
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size())
    throw FormatError("attribution report line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

std::string html_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void write_attribution_text(std::ostream& out, const AttributionMap& map) {
  map.validate();
  out << "# cognialign attributions\n";
  out << "# predicted_class\t" << map.predicted_class << "\n";
  out << "# completeness_gap\t" << format_double(map.completeness_gap) << "\n";
  out << "# output_delta\t" << format_double(map.output_delta) << "\n";
  for (std::size_t i = 0; i < map.tokens.size(); ++i)
    out << escape_token(map.tokens[i]) << "\t" << format_double(map.scores[i]) << "\n";
}

AttributionMap read_attribution_text(std::istream& in) {
  AttributionMap map;
  bool saw_class = false, saw_gap = false;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) continue;
      const std::string key = line.substr(2, tab - 2), value = line.substr(tab + 1);
      if (key == "predicted_class") {
        map.predicted_class = static_cast<std::size_t>(parse_double(value, n));
        saw_class = true;
      } else if (key == "completeness_gap") {
        map.completeness_gap = parse_double(value, n);
        saw_gap = true;
      } else if (key == "output_delta") {
        map.output_delta = parse_double(value, n);
      }
      continue;
    }
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos)
      throw FormatError("attribution report line " + std::to_string(n) + ": expected token<TAB>score");
    map.tokens.push_back(unescape_token(line.substr(0, tab), n));
    map.scores.push_back(parse_double(line.substr(tab + 1), n));
  }
  if (!saw_class || !saw_gap)
    throw FormatError("attribution report: header lacks predicted_class or completeness_gap");
  return map;
}

void write_attribution_html(std::ostream& out, const AttributionMap& map) {
  map.validate();
  const auto intensity = attribution_intensity(map.scores);
  out << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>attributions</title></head><body>\n";
  out << "<p>predicted class " << map.predicted_class << ", completeness gap "
      << format_double(map.completeness_gap) << "</p>\n<p>\n";
  for (std::size_t i = 0; i < map.tokens.size(); ++i) {
    const char* rgb = map.scores[i] > 0 ? "0,160,0" : map.scores[i] < 0 ? "200,0,0" : "128,128,128";
    char alpha[16];
    std::snprintf(alpha, sizeof alpha, "%.3f", intensity[i]);
    out << "<span class=\"" << (map.scores[i] > 0 ? "pos" : map.scores[i] < 0 ? "neg" : "zero")
        << "\" style=\"background: rgba(" << rgb << "," << alpha << ")\" title=\""
        << format_double(map.scores[i]) << "\">" << html_escape(map.tokens[i]) << "</span>\n";
  }
  out << "</p>\n</body></html>\n";
}

// --- corpus statistics -------------------------------------------------------

AnnotatedTranscript annotate_pauses(const Transcript& transcript, std::optional<double> duration) {
  Transcript clean = strip_punctuation(transcript);
  normalize_transcript(clean);
  AnnotatedTranscript out;
  out.subject_id = transcript.subject_id;
  out.label = transcript.label;
  out.mmse = transcript.mmse;
  out.tokens = insert_pause_tokens(clean, detect_pauses(clean));
  out.duration = duration.value_or(clean.words.empty() ? 0.0 : clean.words.back().end);
  return out;
}

CorpusStats corpus_stats(const std::vector<AnnotatedTranscript>& corpus) {
  std::array<ClassStats, 2> sums{};
  for (const auto& t : corpus) {
    if (!t.label) throw ContractError("corpus_stats: subject '" + t.subject_id + "' has no label");
    ClassStats& s = sums[static_cast<std::size_t>(*t.label)];
    ++s.subjects;
    s.duration += t.duration;
    for (const auto& token : t.tokens) {
      switch (pause_category_of(token)) {
        case PauseCategory::Comma: s.comma += 1; break;
        case PauseCategory::Period: s.period += 1; break;
        case PauseCategory::Ellipsis: s.ellipsis += 1; break;
        case PauseCategory::None: s.words += 1; break;
      }
    }
  }
  CorpusStats stats;
  for (std::size_t c = 0; c < 2; ++c) {
    ClassStats s = sums[c];
    if (s.subjects == 0) continue;
    const double n = static_cast<double>(s.subjects);
    s.comma /= n;
    s.period /= n;
    s.ellipsis /= n;
    s.duration /= n;
    s.words /= n;
    stats.per_class[c] = s;
  }
  return stats;
}

}  // namespace cognialign
