#include "multibreath/metrics.hpp"

#include <iomanip>
#include <sstream>

#include "multibreath/errors.hpp"

namespace mb::metrics {

ConfusionMatrix4 confusion(const std::vector<icbhi::LabelVector>& truth,
                           const std::vector<icbhi::LabelVector>& pred) {
  if (truth.size() != pred.size())
    throw UsageError("confusion: " + std::to_string(truth.size()) +
                     " truth labels vs " + std::to_string(pred.size()) +
                     " predictions");
  ConfusionMatrix4 cm;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = icbhi::class_from_flags(truth[i].crackle, truth[i].wheeze);
    const int p = icbhi::class_from_flags(pred[i].crackle, pred[i].wheeze);
    cm.counts[t][p]++;
  }
  return cm;
}

MetricsReport icbhi_metrics(const ConfusionMatrix4& cm) {
  if (cm.total() == 0) throw DataError("icbhi_metrics: empty confusion matrix");
  MetricsReport r;
  r.matrix = cm;

  const long normal_total = cm.row_sum(0);
  long abnormal_correct = 0, abnormal_total = 0, abnormal_pred_abnormal = 0;
  for (int cls = 1; cls < 4; ++cls) {
    abnormal_correct += cm.counts[cls][cls];
    abnormal_total += cm.row_sum(cls);
    for (int p = 1; p < 4; ++p) abnormal_pred_abnormal += cm.counts[cls][p];
  }

  for (int cls = 0; cls < 4; ++cls)
    if (cm.row_sum(cls) > 0)
      r.per_class_recall[cls] =
          static_cast<double>(cm.counts[cls][cls]) / cm.row_sum(cls);

  if (normal_total > 0)
    r.specificity = static_cast<double>(cm.counts[0][0]) / normal_total;
  if (abnormal_total > 0) {
    r.sensitivity = static_cast<double>(abnormal_correct) / abnormal_total;
    r.binary_sensitivity =
        static_cast<double>(abnormal_pred_abnormal) / abnormal_total;
  }
  // Score is withheld when either term is undefined
  if (r.specificity && r.sensitivity)
    r.score = (*r.specificity + *r.sensitivity) / 2.0;
  return r;
}

namespace {

void emit(std::ostringstream& os, const char* key,
          const std::optional<double>& v) {
  os << key << " ";
  if (v)
    os << std::fixed << std::setprecision(4) << *v;
  else
    os << "undefined";
  os << "\n";
}

}  // namespace

std::string format_metrics(const MetricsReport& r) {
  std::ostringstream os;
  emit(os, "specificity", r.specificity);
  emit(os, "sensitivity", r.sensitivity);
  emit(os, "score", r.score);
  emit(os, "binary_sensitivity", r.binary_sensitivity);
  static const char* kRecallKeys[4] = {
      "recall_normal", "recall_crackle", "recall_wheeze", "recall_both"};
  for (int c = 0; c < 4; ++c) emit(os, kRecallKeys[c], r.per_class_recall[c]);
  os << "total_cycles " << r.matrix.total() << "\n";
  os << "confusion_matrix true_class x predicted_class (Normal Crackle Wheeze Crackle&Wheeze)\n";
  for (int t = 0; t < 4; ++t) {
    for (int p = 0; p < 4; ++p) os << (p ? " " : "") << r.matrix.counts[t][p];
    os << "\n";
  }
  return os.str();
}

}  // namespace mb::metrics
