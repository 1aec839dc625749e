#include "lmda/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace lmda::train {

const char* metric_name(Metric m) { return m == Metric::kAuc ? "auc" : "acc"; }

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train config: weight_decay must be >= 0");
}

double TrainRecord::primary(const EpochRow& row) const {
  if (metric == Metric::kAuc) {
    if (!row.test_auc) throw std::logic_error("AUC requested but not recorded");
    return *row.test_auc;
  }
  return row.test_accuracy;
}

void TrainRecord::summarize() {
  if (rows.empty()) {
    best_metric = last10_mean = 0.0;
    return;
  }
  best_metric = primary(rows.front());
  for (const auto& r : rows) best_metric = std::max(best_metric, primary(r));
  const std::size_t n = std::min<std::size_t>(10, rows.size());
  double acc = 0.0;
  for (std::size_t i = rows.size() - n; i < rows.size(); ++i) acc += primary(rows[i]);
  last10_mean = acc / static_cast<double>(n);
}

std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string csv_row(const EpochRow& r) {
  std::string s = std::to_string(r.epoch) + "," + format_metric(r.train_loss) + "," +
                  format_metric(r.test_accuracy) + "," + format_metric(r.test_kappa) + ",";
  if (r.test_auc) s += format_metric(*r.test_auc);
  return s;
}

std::string TrainRecord::to_csv() const {
  std::string out = "epoch,train_loss,test_acc,test_kappa,test_auc\n";
  for (const auto& r : rows) out += csv_row(r) + "\n";
  return out;
}

void adamw_step(std::span<Tensor> params, AdamWState& state, const TrainConfig& cfg) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw std::invalid_argument("adamw_step: optimizer state tracks " +
                                std::to_string(state.first_moment.size()) +
                                " tensors, got " + std::to_string(params.size()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].mutable_data();
    const auto grad = params[k].grad();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != values.size()) {
      throw std::invalid_argument("adamw_step: shape of tensor " + std::to_string(k) +
                                  " changed");
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      values[i] *= decay;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      values[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels,
                     std::span<const double> class_weights) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy: logits must be [B,K], got " +
                     shape_to_string(logits.shape()));
  }
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  if (labels.size() != B) {
    throw ShapeError("cross_entropy: " + std::to_string(B) + " rows but " +
                     std::to_string(labels.size()) + " labels");
  }
  if (!class_weights.empty() && class_weights.size() != K) {
    throw ShapeError("cross_entropy: " + std::to_string(class_weights.size()) +
                     " class weights for " + std::to_string(K) + " classes");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= K) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(l) +
                                  " outside [0, " + std::to_string(K) + ")");
    }
  }
  const auto z = logits.data();
  std::vector<double> probs(B * K);
  std::vector<double> weight(B, 1.0);
  double total = 0.0, norm = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double* row = z.data() + b * K;
    const double mx = *std::max_element(row, row + K);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(row[k] - mx);
    const double log_z = mx + std::log(s);
    for (std::size_t k = 0; k < K; ++k) probs[b * K + k] = std::exp(row[k] - log_z);
    const auto y = static_cast<std::size_t>(labels[b]);
    if (!class_weights.empty()) weight[b] = class_weights[y];
    total += weight[b] * (log_z - row[y]);
    norm += weight[b];
  }
  if (!(norm > 0.0)) throw std::invalid_argument("cross_entropy: class weights sum to zero");
  Tensor out = Tensor::scalar(total / norm);
  if (should_record({&logits})) {
    out.set_requires_grad(true);
    std::vector<int> ys(labels.begin(), labels.end());
    active_tape()->record({logits}, out, [logits, out, probs, weight, ys, norm, B, K]() mutable {
      const double g = out.grad()[0];
      auto gz = logits.grad_buffer();
      for (std::size_t b = 0; b < B; ++b) {
        const double scale = g * weight[b] / norm;
        for (std::size_t k = 0; k < K; ++k) {
          const double target = static_cast<std::size_t>(ys[b]) == k ? 1.0 : 0.0;
          gz[b * K + k] += scale * (probs[b * K + k] - target);
        }
      }
    });
  }
  return out;
}

Evaluation evaluate(const LmdaModel& model, const TrialSet& data, std::size_t batch_size) {
  const std::size_t K = model.config().n_classes;
  if (data.n_classes() != K) {
    throw std::invalid_argument("evaluate: data has " + std::to_string(data.n_classes()) +
                                " classes, model " + std::to_string(K));
  }
  Evaluation ev;
  ev.predictions.resize(data.n_trials);
  ev.probabilities.resize(data.n_trials * K);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.n_trials; start += batch_size) {
    const std::size_t end = std::min(data.n_trials, start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor logits = model.infer(data.to_tensor(idx)).logits;
    const auto z = logits.data();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const double* row = z.data() + r * K;
      const double mx = *std::max_element(row, row + K);
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) s += std::exp(row[k] - mx);
      for (std::size_t k = 0; k < K; ++k) {
        ev.probabilities[(start + r) * K + k] = std::exp(row[k] - mx) / s;
      }
      ev.predictions[start + r] =
          static_cast<int>(std::max_element(row, row + K) - row);
    }
  }
  ev.accuracy = accuracy(ev.predictions, data.labels);
  ev.kappa = kappa(ev.accuracy, K);
  if (K == 2) {
    std::vector<double> scores(data.n_trials);
    for (std::size_t i = 0; i < data.n_trials; ++i) scores[i] = ev.probabilities[i * 2 + 1];
    const bool both = std::any_of(data.labels.begin(), data.labels.end(), [](int l) { return l == 0; }) &&
                      std::any_of(data.labels.begin(), data.labels.end(), [](int l) { return l == 1; });
    if (both) ev.auc = auc(scores, data.labels);
  }
  return ev;
}

TrainRecord train_loop(LmdaModel& model, const TrialSet& train, const TrialSet& test,
                       const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  require_compatible(train, test);
  const auto& mc = model.config();
  if (train.n_channels != mc.n_channels || train.n_samples != mc.n_samples) {
    throw std::invalid_argument("train_loop: data shape [" + std::to_string(train.n_channels) +
                                "," + std::to_string(train.n_samples) +
                                "] does not match the model");
  }
  if (train.n_classes() != mc.n_classes) {
    throw std::invalid_argument("train_loop: class count does not match the model");
  }
  if (cfg.metric == Metric::kAuc && mc.n_classes != 2) {
    throw std::invalid_argument("train_loop: AUC needs a two-class problem");
  }

  std::vector<double> class_weights;
  if (cfg.class_weights) {
    std::vector<double> counts(mc.n_classes, 0.0);
    for (int l : train.labels) counts[static_cast<std::size_t>(l)] += 1.0;
    for (double c : counts) {
      class_weights.push_back(c > 0.0 ? static_cast<double>(train.n_trials) /
                                            (static_cast<double>(mc.n_classes) * c)
                                      : 0.0);
    }
  }

  std::vector<Tensor> params;
  for (const auto& p : model.parameters()) params.push_back(p.value);
  AdamWState opt;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.n_trials);
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainRecord record;
  record.metric = cfg.metric;
  std::vector<std::size_t> batch;
  std::vector<int> batch_labels;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                   order.begin() + static_cast<std::ptrdiff_t>(end));
      batch_labels.clear();
      for (std::size_t i : batch) batch_labels.push_back(train.labels[i]);

      for (auto& p : params) p.clear_grad();
      Tape tape;
      TapeScope scope(tape);
      const Tensor logits = model.forward(train.to_tensor(batch), true);
      const Tensor loss = cross_entropy(logits, batch_labels, class_weights);
      tape.backward(loss);
      adamw_step(params, opt, cfg);
      for (const auto& p : params) {
        for (double v : p.data()) {
          if (!std::isfinite(v)) throw NumericError("train_loop: parameter diverged");
        }
      }
      loss_sum += loss.item() * static_cast<double>(batch.size());
    }
    for (auto& p : params) p.clear_grad();

    const Evaluation ev = evaluate(model, test);
    EpochRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(train.n_trials);
    row.test_accuracy = ev.accuracy;
    row.test_kappa = ev.kappa;
    row.test_auc = ev.auc;
    if (cfg.metric == Metric::kAuc && !row.test_auc) {
      throw std::invalid_argument("train_loop: AUC needs both classes in the test set");
    }
    record.rows.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  record.summarize();
  return record;
}

}  // namespace lmda::train
