#pragma once

#include <cstddef>
#include <span>

namespace lmda::train {

/// Chance-corrected accuracy for K balanced classes: (acc - 1/K) / (1 - 1/K).
double kappa(double accuracy, std::size_t n_classes);

/// Area under the ROC curve as the probability that a random positive
/// outranks a random negative (ties count one half). Labels are 0/1.
/// Throws std::invalid_argument if either class is absent.
double auc(std::span<const double> scores, std::span<const int> labels);

/// Fraction of predictions equal to labels.
double accuracy(std::span<const int> predictions, std::span<const int> labels);

}  // namespace lmda::train
