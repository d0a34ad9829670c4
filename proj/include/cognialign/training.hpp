#pragma once

// Optimizer, learning-rate schedule, cross-validation splits, the training
// loop, evaluation metrics and the paired t-test.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cognialign/alignment.hpp"
#include "cognialign/model.hpp"

namespace cognialign {

struct TrainConfig {
  // 1e-3 is a desk-scale choice for small randomly initialized encoders; the
  // frozen-encoder setting uses 2e-5 (see paper_scale()).
  double lr_peak = 1e-3;
  double weight_decay = 0.1;
  std::size_t warmup_epochs = 20;
  std::size_t max_epochs = 200;
  std::size_t batch_size = 32;
  std::size_t early_stop_patience = 15;
  std::size_t loso_epochs = 60;
  // Share of each KFold training partition held out for early stopping.
  double validation_fraction = 0.2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;

  static TrainConfig paper_scale();
  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Decoupled weight decay: w <- w - lr*wd*w, then the bias-corrected Adam
// update. Moments are kept in double for every parameter tensor.
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Consumes the accumulated gradients of `params`. A non-finite gradient
  // raises NumericalError naming the tensor before anything is updated.
  template <class T>
  void step(const std::vector<NamedTensor<T>>& params, double lr, double weight_decay);

  std::uint64_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Linear warmup from 0 to lr_peak over warmup_epochs, then a half cosine to
// 0 at max_epochs. `epoch` may be fractional.
double lr_at(double epoch, const TrainConfig& config);
double lr_at(double epoch, double lr_peak, std::size_t warmup_epochs, std::size_t max_epochs);

// --- splits -----------------------------------------------------------------

enum class Protocol { KFold, LOSO };

struct SplitSpec {
  Protocol protocol = Protocol::KFold;
  std::size_t k = 5;
  bool stratified = true;
};

struct SubjectInfo {
  std::string id;
  std::optional<Label> label;
};

struct Fold {
  std::vector<std::size_t> train;  // roster indices
  std::vector<std::size_t> test;
};

struct SplitPlan {
  Protocol protocol = Protocol::KFold;
  bool stratified = false;
  std::vector<Fold> folds;

  // Throws ContractError unless the test sets partition the roster and no
  // subject id appears on both sides of any fold.
  void validate(const std::vector<SubjectInfo>& roster) const;
};

// Samples sharing a subject id always land in the same fold. Stratified
// KFold shuffles each class and deals subjects round-robin, carrying the
// fold counter across classes, so per-class and total fold sizes differ by
// at most one.
SplitPlan make_splits(const std::vector<SubjectInfo>& roster, const SplitSpec& spec, std::uint64_t seed);

std::vector<SubjectInfo> roster_of(const std::vector<AlignedPair>& data);

// --- metrics ----------------------------------------------------------------

struct Confusion {
  // counts[true][predicted], class 1 = AD (positive).
  std::array<std::array<std::size_t, 2>, 2> counts{};

  void add(std::size_t truth, std::size_t predicted) { ++counts.at(truth).at(predicted); }
  std::size_t total() const { return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1]; }
  Confusion& operator+=(const Confusion& other);
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

// Percentages. Macro averages over the two classes; a class with no
// predicted (or no true) members contributes 0 precision (recall).
struct ClassificationMetrics {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
  std::array<double, 2> class_precision{}, class_recall{}, class_f1{};
};

ClassificationMetrics metrics_from_confusion(const Confusion& confusion);

struct Prediction {
  std::string subject_id;
  std::optional<Label> label;
  std::optional<double> mmse;
  std::size_t predicted_class = 0;
  double probability_ad = 0;  // Classify
  double score = 0;           // Regress, clamped to [0, 30]
};

struct EvalReport {
  Task task = Task::Classify;
  std::vector<Prediction> predictions;
  Confusion confusion;
  ClassificationMetrics metrics;
  double rmse = 0;       // Regress
  double mean_loss = 0;  // unclamped
};

Prediction predict(const Model& model, const AlignedPair& pair);
EvalReport evaluate(const Model& model, std::span<const AlignedPair* const> subjects);
EvalReport evaluate(const Model& model, const std::vector<AlignedPair>& subjects);
// Metrics over already collected predictions.
EvalReport summarize(Task task, std::vector<Prediction> predictions, double mean_loss = 0);

// --- training ---------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0;  // at the last step of the epoch
  double train_loss = 0;
  std::optional<double> val_loss;
  std::optional<double> val_accuracy;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  bool early_stopped = false;
};

// Mini-batch training. With a non-empty validation set, trains up to
// max_epochs with early stopping and restores the best-validation weights
// (accuracy, ties broken by lower loss; loss alone for regression). With an
// empty one, runs max_epochs and keeps the final weights. Each batch sums
// per-sample gradients of loss/B.
TrainResult train(Model& model, std::span<const AlignedPair* const> train_set,
                  std::span<const AlignedPair* const> validation_set, const TrainConfig& config);

// --- cross-validation -------------------------------------------------------

struct FoldResult {
  std::size_t fold = 0;
  EvalReport eval;
  TrainResult training;
};

struct CrossValidationResult {
  SplitPlan plan;
  std::vector<FoldResult> folds;
  // Metrics over the pooled test predictions of all folds.
  EvalReport aggregate;
};

// Every fold re-initializes the model from model_config.seed; shuffling and
// dropout draw from train_config.seed and the fold index. Folds run in
// parallel (capped by CGNA_THREADS) and the result does not depend on the
// thread count.
CrossValidationResult cross_validate(const std::vector<AlignedPair>& data, const ModelConfig& model_config,
                                     const TrainConfig& train_config, const SplitSpec& split);

// Trains on a whole dataset the way a fold is trained: KFold holds out a
// stratified validation share of subjects for early stopping, LOSO runs
// loso_epochs without validation.
TrainResult fit(Model& model, const std::vector<AlignedPair>& data, const TrainConfig& config, Protocol protocol);

// Thread cap from CGNA_THREADS, else the OpenMP default; at least 1.
std::size_t fold_thread_cap();

// --- significance -----------------------------------------------------------

// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double incomplete_beta(double a, double b, double x);
// P(T <= t) for Student's t with `df` degrees of freedom.
double student_t_cdf(double t, double df);

struct PairedTTest {
  std::optional<double> t;  // empty when every difference is identical
  std::optional<double> p;  // two-sided
  double mean_diff = 0;
  std::size_t df = 0;
  bool degenerate() const { return !t.has_value(); }
};

// Two-sided Student t on the differences a_i - b_i.
PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b);

}  // namespace cognialign
