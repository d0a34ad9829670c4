#include "cognialign/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <map>
#include <numeric>

#include "cognialign/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cognialign {

TrainConfig TrainConfig::paper_scale() {
  TrainConfig c;
  c.lr_peak = 2e-5;
  return c;
}

void TrainConfig::validate() const {
  if (!(lr_peak >= 0.0) || !std::isfinite(lr_peak)) throw ContractError("lr_peak must be >= 0");
  if (!(weight_decay >= 0.0)) throw ContractError("weight_decay must be >= 0");
  if (max_epochs == 0 || batch_size == 0 || loso_epochs == 0)
    throw ContractError("max_epochs, loso_epochs and batch_size must be positive");
  if (warmup_epochs >= max_epochs)
    throw ContractError("warmup_epochs (" + std::to_string(warmup_epochs) + ") must be below max_epochs (" +
                        std::to_string(max_epochs) + ")");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw ContractError("validation_fraction must be in (0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0))
    throw ContractError("invalid AdamW betas/eps");
}

// --- optimizer ----------------------------------------------------------------

template <class T>
void AdamW::step(const std::vector<NamedTensor<T>>& params, double lr, double weight_decay) {
  if (lr < 0.0) throw ContractError("learning rate must be >= 0");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ContractError("optimizer state does not match the parameter list");
  std::vector<std::vector<T>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) {
    grads.push_back(p.tensor.grad());
    for (T g : grads.back())
      if (!std::isfinite(static_cast<double>(g)))
        throw NumericalError("non-finite gradient in parameter '" + p.name + "'");
  }

  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto tensor = params[k].tensor;
    auto w = tensor.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    const auto& g = grads[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      double wi = static_cast<double>(w[i]);
      wi -= lr * weight_decay * wi;
      wi -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      w[i] = static_cast<T>(wi);
    }
  }
}

template void AdamW::step<float>(const std::vector<NamedTensor<float>>&, double, double);
template void AdamW::step<double>(const std::vector<NamedTensor<double>>&, double, double);

double lr_at(double epoch, double lr_peak, std::size_t warmup_epochs, std::size_t max_epochs) {
  const double w = static_cast<double>(warmup_epochs);
  const double total = static_cast<double>(max_epochs);
  if (epoch < w) return lr_peak * epoch / w;
  const double progress = std::clamp((epoch - w) / (total - w), 0.0, 1.0);
  constexpr double kPi = 3.14159265358979323846;
  return lr_peak * 0.5 * (1.0 + std::cos(kPi * progress));
}

double lr_at(double epoch, const TrainConfig& config) {
  return lr_at(epoch, config.lr_peak, config.warmup_epochs, config.max_epochs);
}

// --- splits -------------------------------------------------------------------

namespace {

struct SubjectGroups {
  std::vector<std::string> ids;
  std::vector<std::optional<Label>> labels;
  std::vector<std::vector<std::size_t>> members;  // roster indices
};

SubjectGroups group_subjects(const std::vector<SubjectInfo>& roster, std::span<const std::size_t> indices) {
  SubjectGroups g;
  std::map<std::string, std::size_t> slot;
  for (std::size_t i : indices) {
    auto [it, inserted] = slot.emplace(roster[i].id, g.ids.size());
    if (inserted) {
      g.ids.push_back(roster[i].id);
      g.labels.push_back(roster[i].label);
      g.members.emplace_back();
    }
    g.members[it->second].push_back(i);
  }
  return g;
}

bool all_labeled(const SubjectGroups& g) {
  return std::all_of(g.labels.begin(), g.labels.end(), [](const auto& l) { return l.has_value(); });
}

// Subject groups in dealing order: per class (CH, then AD) when stratified,
// each shuffled.
std::vector<std::vector<std::size_t>> dealing_order(const SubjectGroups& g, bool stratified, Rng& rng) {
  std::vector<std::vector<std::size_t>> classes(stratified ? 2 : 1);
  for (std::size_t s = 0; s < g.ids.size(); ++s)
    classes[stratified ? static_cast<std::size_t>(*g.labels[s]) : 0].push_back(s);
  for (auto& c : classes) rng.shuffle(c);
  return classes;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

// Stratified hold-out of whole subjects from a training partition.
std::pair<std::vector<const AlignedPair*>, std::vector<const AlignedPair*>> carve_validation(
    const std::vector<AlignedPair>& data, const std::vector<SubjectInfo>& roster,
    const std::vector<std::size_t>& train, double fraction, Rng rng) {
  const auto g = group_subjects(roster, train);
  const bool stratified = all_labeled(g);
  std::vector<bool> held(g.ids.size(), false);
  std::size_t held_count = 0;
  for (const auto& cls : dealing_order(g, stratified, rng)) {
    const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(cls.size())));
    for (std::size_t i = 0; i < take && i < cls.size(); ++i) {
      held[cls[i]] = true;
      ++held_count;
    }
  }
  if (held_count == 0 && g.ids.size() >= 2) held[0] = true;
  if (held_count == g.ids.size()) held[0] = false;
  std::vector<const AlignedPair*> fit, validation;
  for (std::size_t s = 0; s < g.ids.size(); ++s)
    for (std::size_t i : g.members[s]) (held[s] ? validation : fit).push_back(&data[i]);
  return {fit, validation};
}

}  // namespace

std::vector<SubjectInfo> roster_of(const std::vector<AlignedPair>& data) {
  std::vector<SubjectInfo> roster;
  roster.reserve(data.size());
  for (const auto& p : data) roster.push_back({p.subject_id, p.label});
  return roster;
}

SplitPlan make_splits(const std::vector<SubjectInfo>& roster, const SplitSpec& spec, std::uint64_t seed) {
  if (roster.empty()) throw ContractError("make_splits: empty roster");
  const auto indices = all_indices(roster.size());
  const auto g = group_subjects(roster, indices);
  const std::size_t n = g.ids.size();

  SplitPlan plan;
  plan.protocol = spec.protocol;
  std::vector<std::size_t> fold_of(n);
  std::size_t k = 0;
  if (spec.protocol == Protocol::LOSO) {
    if (n < 2) throw ContractError("LOSO needs at least 2 subjects");
    k = n;
    fold_of = all_indices(n);
  } else {
    k = spec.k;
    if (k < 2) throw ContractError("KFold needs k >= 2");
    if (k > n)
      throw ContractError("k = " + std::to_string(k) + " exceeds the " + std::to_string(n) + " subjects");
    plan.stratified = spec.stratified && all_labeled(g);
    Rng rng = Rng(seed).substream("splits");
    std::size_t counter = 0;
    for (const auto& cls : dealing_order(g, plan.stratified, rng))
      for (std::size_t s : cls) fold_of[s] = counter++ % k;
  }

  plan.folds.resize(k);
  std::vector<std::size_t> subject_fold(roster.size());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i : g.members[s]) subject_fold[i] = fold_of[s];
  for (std::size_t i = 0; i < roster.size(); ++i)
    for (std::size_t f = 0; f < k; ++f) (subject_fold[i] == f ? plan.folds[f].test : plan.folds[f].train).push_back(i);
  return plan;
}

void SplitPlan::validate(const std::vector<SubjectInfo>& roster) const {
  std::vector<int> seen(roster.size(), 0);
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto& fold = folds[f];
    if (fold.test.empty()) throw ContractError("fold " + std::to_string(f) + " has an empty test set");
    std::map<std::string, int> side;
    for (std::size_t i : fold.train) {
      if (i >= roster.size()) throw ContractError("fold index out of range");
      side[roster[i].id] |= 1;
    }
    for (std::size_t i : fold.test) {
      if (i >= roster.size()) throw ContractError("fold index out of range");
      side[roster[i].id] |= 2;
      ++seen[i];
    }
    for (const auto& [id, s] : side)
      if (s == 3) throw ContractError("subject " + id + " is in both train and test of fold " + std::to_string(f));
    if (fold.train.size() + fold.test.size() != roster.size())
      throw ContractError("fold " + std::to_string(f) + " does not cover the roster");
  }
  for (std::size_t i = 0; i < roster.size(); ++i)
    if (seen[i] != 1)
      throw ContractError("sample " + std::to_string(i) + " appears in " + std::to_string(seen[i]) + " test sets");
}

// --- metrics ------------------------------------------------------------------

Confusion& Confusion::operator+=(const Confusion& other) {
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) counts[i][j] += other.counts[i][j];
  return *this;
}

ClassificationMetrics metrics_from_confusion(const Confusion& c) {
  ClassificationMetrics m;
  const double total = static_cast<double>(c.total());
  if (total == 0) return m;
  m.accuracy = 100.0 * static_cast<double>(c.counts[0][0] + c.counts[1][1]) / total;
  for (std::size_t k = 0; k < 2; ++k) {
    const double tp = static_cast<double>(c.counts[k][k]);
    const double predicted = static_cast<double>(c.counts[0][k] + c.counts[1][k]);
    const double actual = static_cast<double>(c.counts[k][0] + c.counts[k][1]);
    const double p = predicted > 0 ? tp / predicted : 0.0;
    const double r = actual > 0 ? tp / actual : 0.0;
    m.class_precision[k] = 100.0 * p;
    m.class_recall[k] = 100.0 * r;
    m.class_f1[k] = p + r > 0 ? 100.0 * 2.0 * p * r / (p + r) : 0.0;
  }
  m.precision = 0.5 * (m.class_precision[0] + m.class_precision[1]);
  m.recall = 0.5 * (m.class_recall[0] + m.class_recall[1]);
  m.f1 = 0.5 * (m.class_f1[0] + m.class_f1[1]);
  return m;
}

namespace {

Prediction prediction_from_output(Task task, const Tensor& out, const AlignedPair& pair) {
  Prediction p{pair.subject_id, pair.label, pair.mmse};
  if (task == Task::Classify) {
    const double z0 = out.at(0), z1 = out.at(1);
    p.probability_ad = 1.0 / (1.0 + std::exp(z0 - z1));
    p.predicted_class = z1 > z0 ? 1 : 0;
  } else {
    p.score = std::clamp(static_cast<double>(out.at(0)), 0.0, 30.0);
  }
  return p;
}

}  // namespace

Prediction predict(const Model& model, const AlignedPair& pair) {
  return prediction_from_output(model.config().task, model.forward(pair), pair);
}

EvalReport summarize(Task task, std::vector<Prediction> predictions, double mean_loss) {
  EvalReport r;
  r.task = task;
  r.mean_loss = mean_loss;
  double sq = 0;
  std::size_t scored = 0;
  for (const auto& p : predictions) {
    if (task == Task::Classify && p.label) r.confusion.add(static_cast<std::size_t>(*p.label), p.predicted_class);
    if (task == Task::Regress && p.mmse) {
      sq += (p.score - *p.mmse) * (p.score - *p.mmse);
      ++scored;
    }
  }
  r.metrics = metrics_from_confusion(r.confusion);
  r.rmse = scored ? std::sqrt(sq / static_cast<double>(scored)) : 0.0;
  r.predictions = std::move(predictions);
  return r;
}

EvalReport evaluate(const Model& model, std::span<const AlignedPair* const> subjects) {
  if (subjects.empty()) throw ContractError("evaluate: empty test set");
  std::vector<Prediction> predictions;
  double loss = 0;
  for (const AlignedPair* pair : subjects) {
    const auto out = model.forward(*pair);
    loss += model.loss(out, *pair).item();
    auto p = prediction_from_output(model.config().task, out, *pair);
    predictions.push_back(std::move(p));
  }
  return summarize(model.config().task, std::move(predictions), loss / static_cast<double>(subjects.size()));
}

EvalReport evaluate(const Model& model, const std::vector<AlignedPair>& subjects) {
  std::vector<const AlignedPair*> ptrs;
  for (const auto& p : subjects) ptrs.push_back(&p);
  return evaluate(model, std::span<const AlignedPair* const>(ptrs));
}

// --- training -----------------------------------------------------------------

TrainResult train(Model& model, std::span<const AlignedPair* const> train_set,
                  std::span<const AlignedPair* const> validation_set, const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) throw ContractError("train: empty training split");
  const bool early_stopping = !validation_set.empty();
  const bool classify = model.config().task == Task::Classify;

  const Rng root(config.seed);
  const Rng data_rng = root.substream("data");
  DropoutContext dropout{root.substream("dropout").seed(), 0};
  AdamW optimizer(config.beta1, config.beta2, config.eps);

  const std::size_t n = train_set.size();
  const std::size_t batch = std::min(config.batch_size, n);
  const std::size_t steps = (n + batch - 1) / batch;

  TrainResult result;
  std::vector<std::vector<float>> best;
  double best_accuracy = -1, best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    auto order = all_indices(n);
    Rng epoch_rng = data_rng.substream(epoch);
    epoch_rng.shuffle(order);

    EpochRecord record;
    record.epoch = epoch;
    double total = 0;
    for (std::size_t s = 0; s < steps; ++s) {
      model.zero_grad();
      const std::size_t b0 = s * batch, b1 = std::min(n, b0 + batch);
      const double inv = 1.0 / static_cast<double>(b1 - b0);
      for (std::size_t i = b0; i < b1; ++i) {
        const AlignedPair& pair = *train_set[order[i]];
        const auto loss = model.loss(model.forward(pair, {.train = true, .dropout = &dropout}), pair);
        const double value = loss.item();
        if (!std::isfinite(value))
          throw NumericalError("non-finite training loss on subject " + pair.subject_id + " at epoch " +
                               std::to_string(epoch));
        total += value;
        backward(scale(loss, static_cast<float>(inv)));
      }
      record.lr = lr_at(static_cast<double>(epoch) + static_cast<double>(s + 1) / static_cast<double>(steps), config);
      optimizer.step(model.parameters(), record.lr, config.weight_decay);
    }
    record.train_loss = total / static_cast<double>(n);

    if (early_stopping) {
      const auto report = evaluate(model, validation_set);
      record.val_loss = report.mean_loss;
      if (classify) record.val_accuracy = report.metrics.accuracy;
      const bool improved = classify ? (report.metrics.accuracy > best_accuracy ||
                                        (report.metrics.accuracy == best_accuracy && report.mean_loss < best_loss))
                                     : report.mean_loss < best_loss;
      if (improved) {
        best_accuracy = classify ? report.metrics.accuracy : best_accuracy;
        best_loss = report.mean_loss;
        best = model.snapshot();
        result.best_epoch = epoch;
        since_best = 0;
      } else {
        ++since_best;
      }
    } else {
      result.best_epoch = epoch;
    }
    result.history.push_back(record);
    result.epochs_run = epoch + 1;
    if (early_stopping && since_best >= config.early_stop_patience) {
      result.early_stopped = true;
      break;
    }
  }
  if (early_stopping && !best.empty()) model.restore(best);
  return result;
}

// --- cross-validation -----------------------------------------------------------

std::size_t fold_thread_cap() {
  long cap = 1;
#ifdef _OPENMP
  cap = omp_get_max_threads();
#endif
  if (const char* env = std::getenv("CGNA_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) cap = v;
  }
  return static_cast<std::size_t>(std::max(1L, cap));
}

CrossValidationResult cross_validate(const std::vector<AlignedPair>& data, const ModelConfig& model_config,
                                     const TrainConfig& train_config, const SplitSpec& split) {
  train_config.validate();
  model_config.validate();
  const auto roster = roster_of(data);
  CrossValidationResult result;
  result.plan = make_splits(roster, split, train_config.seed);
  result.plan.validate(roster);
  const std::size_t k = result.plan.folds.size();
  result.folds.resize(k);
  std::vector<std::exception_ptr> errors(k);

  auto run_fold = [&](std::size_t f) {
    const Fold& fold = result.plan.folds[f];
    TrainConfig fold_config = train_config;
    fold_config.seed = Rng(train_config.seed).substream("fold").substream(f).seed();
    Model model(model_config);

    std::vector<const AlignedPair*> fit, validation;
    if (result.plan.protocol == Protocol::LOSO) {
      fold_config.max_epochs = train_config.loso_epochs;
      fold_config.warmup_epochs = std::min(train_config.warmup_epochs, fold_config.max_epochs - 1);
      for (std::size_t i : fold.train) fit.push_back(&data[i]);
    } else {
      std::tie(fit, validation) = carve_validation(data, roster, fold.train, train_config.validation_fraction,
                                                   Rng(fold_config.seed).substream("validation"));
    }
    std::vector<const AlignedPair*> test;
    for (std::size_t i : fold.test) test.push_back(&data[i]);

    FoldResult& out = result.folds[f];
    out.fold = f;
    out.training = train(model, fit, validation, fold_config);
    out.eval = evaluate(model, test);
  };

  const int threads = static_cast<int>(std::min(fold_thread_cap(), k));
#pragma omp parallel for schedule(dynamic) num_threads(threads) if (threads > 1)
  for (long f = 0; f < static_cast<long>(k); ++f) {
    try {
      run_fold(static_cast<std::size_t>(f));
    } catch (...) {
      errors[static_cast<std::size_t>(f)] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<Prediction> pooled;
  double loss = 0;
  std::size_t count = 0;
  for (const auto& fold : result.folds) {
    pooled.insert(pooled.end(), fold.eval.predictions.begin(), fold.eval.predictions.end());
    loss += fold.eval.mean_loss * static_cast<double>(fold.eval.predictions.size());
    count += fold.eval.predictions.size();
  }
  result.aggregate = summarize(model_config.task, std::move(pooled), loss / static_cast<double>(count));
  return result;
}

TrainResult fit(Model& model, const std::vector<AlignedPair>& data, const TrainConfig& config, Protocol protocol) {
  config.validate();
  if (data.empty()) throw ContractError("fit: empty dataset");
  TrainConfig c = config;
  std::vector<const AlignedPair*> train_set, validation;
  if (protocol == Protocol::LOSO) {
    c.max_epochs = config.loso_epochs;
    c.warmup_epochs = std::min(config.warmup_epochs, c.max_epochs - 1);
    for (const auto& p : data) train_set.push_back(&p);
  } else {
    std::tie(train_set, validation) = carve_validation(data, roster_of(data), all_indices(data.size()),
                                                       config.validation_fraction,
                                                       Rng(config.seed).substream("final").substream("validation"));
  }
  return train(model, train_set, validation, c);
}

// --- significance ---------------------------------------------------------------

namespace {

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIterations = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) return h;
  }
  throw NumericalError("incomplete beta continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw ContractError("incomplete_beta: a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw ContractError("incomplete_beta: x must be in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw ContractError("student_t_cdf: df must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = 0.5 * incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
  return t > 0 ? 1.0 - tail : tail;
}

PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ContractError("paired_t_test: lengths differ (" + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + ")");
  if (a.size() < 2) throw ContractError("paired_t_test: need at least 2 pairs");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  PairedTTest r;
  r.mean_diff = mean;
  r.df = n - 1;
  // Differences that agree to rounding carry no variance estimate.
  if (sd <= 1e-12 * std::max(1.0, std::abs(mean))) return r;
  const double t = mean / (sd / std::sqrt(static_cast<double>(n)));
  const double df = static_cast<double>(r.df);
  r.t = t;
  r.p = incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
  return r;
}

}  // namespace cognialign
