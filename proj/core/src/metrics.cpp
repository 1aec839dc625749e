#include "lmda/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace lmda::train {

double kappa(double accuracy, std::size_t n_classes) {
  if (n_classes < 2) throw std::invalid_argument("kappa: needs at least two classes");
  const double chance = 1.0 / static_cast<double>(n_classes);
  return (accuracy - chance) / (1.0 - chance);
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("auc: " + std::to_string(scores.size()) + " scores but " +
                                std::to_string(labels.size()) + " labels");
  }
  std::size_t n_pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::invalid_argument("auc: labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw std::invalid_argument("auc: both classes must be present");
  }
  // Mann-Whitney U via average ranks.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) rank_sum += avg_rank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size() || labels.empty()) {
    throw std::invalid_argument("accuracy: prediction/label size mismatch or empty input");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace lmda::train
