#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "multibreath/icbhi.hpp"

namespace mb::metrics {

// class order: Normal, Crackle, Wheeze, Crackle&Wheeze
struct ConfusionMatrix4 {
  std::array<std::array<long, 4>, 4> counts{};  // [true][pred]

  long total() const {
    long n = 0;
    for (const auto& row : counts)
      for (long c : row) n += c;
    return n;
  }
  long row_sum(int cls) const {
    long n = 0;
    for (long c : counts[cls]) n += c;
    return n;
  }
};

struct MetricsReport {
  std::optional<double> specificity;        // C_n / N_n
  std::optional<double> sensitivity;        // strict 4-class abnormal recall
  std::optional<double> score;              // (Sp + Se) / 2
  std::optional<double> binary_sensitivity; // any-abnormal detected as abnormal
  std::array<std::optional<double>, 4> per_class_recall;
  ConfusionMatrix4 matrix;
};

ConfusionMatrix4 confusion(const std::vector<icbhi::LabelVector>& truth,
                           const std::vector<icbhi::LabelVector>& pred);

MetricsReport icbhi_metrics(const ConfusionMatrix4& cm);

// flat key-value document plus the 4x4 matrix; stable key names
std::string format_metrics(const MetricsReport& r);

}  // namespace mb::metrics
