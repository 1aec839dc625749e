#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lmda/metrics.hpp"
#include "lmda/model.hpp"
#include "lmda/tensor.hpp"
#include "lmda/trialset.hpp"

namespace lmda::train {

enum class Metric { kAccuracy, kAuc };

const char* metric_name(Metric m);

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  bool shuffle = true;
  Metric metric = Metric::kAccuracy;
  /// Weight the loss by inverse class frequency of the training set.
  bool class_weights = false;

  void validate() const;
};

struct EpochRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double test_kappa = 0.0;
  std::optional<double> test_auc;
};

struct TrainRecord {
  Metric metric = Metric::kAccuracy;
  std::vector<EpochRow> rows;
  double best_metric = 0.0;
  double last10_mean = 0.0;

  double primary(const EpochRow& row) const;
  /// Recomputes best_metric and last10_mean from rows.
  void summarize();
  /// `epoch,train_loss,test_acc,test_kappa,test_auc`, 6 significant digits.
  std::string to_csv() const;
};

std::string format_metric(double v);
/// One CSV row without the trailing newline.
std::string csv_row(const EpochRow& row);

struct AdamWState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::size_t step = 0;
};

/// One AdamW update. Weight decay is decoupled: p <- p - lr*wd*p, then the
/// bias-corrected Adam step. Tensors without a gradient are treated as
/// having a zero gradient.
void adamw_step(std::span<Tensor> params, AdamWState& state, const TrainConfig& cfg);

/// Mean negative log-likelihood of the labels under softmax(logits).
/// With class weights, a weighted mean normalized by the summed weights.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels,
                     std::span<const double> class_weights = {});

struct Evaluation {
  double accuracy = 0.0;
  double kappa = 0.0;
  std::optional<double> auc;  // two-class data only
  std::vector<int> predictions;
  /// Row-major [n_trials x n_classes] softmax probabilities.
  std::vector<double> probabilities;
};

/// Inference-mode evaluation of every trial.
Evaluation evaluate(const LmdaModel& model, const TrialSet& data,
                    std::size_t batch_size = 64);

using EpochCallback = std::function<void(const EpochRow&)>;

/// Full protocol: per epoch a seeded shuffle, mini-batches (the last
/// partial batch is kept), AdamW, then evaluation on `test`.
TrainRecord train_loop(LmdaModel& model, const TrialSet& train, const TrialSet& test,
                       const TrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace lmda::train
