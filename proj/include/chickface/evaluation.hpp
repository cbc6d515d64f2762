// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chickface/classifier.hpp"
#include "chickface/dataset.hpp"

namespace chickface {

/// Binary confusion counts with male as the positive class.
struct ConfusionMatrix {
  long tn = 0;
  long fp = 0;
  long fn = 0;
  long tp = 0;

  long total() const { return tn + fp + fn + tp; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Set when the matching denominator was zero and the value defaulted to 0.
  bool accuracy_degenerate = false;
  bool precision_degenerate = false;
  bool recall_degenerate = false;
  bool f1_degenerate = false;
};

struct FoldMetrics {
  int fold = 0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc = 0.0;  // NaN when the validation fold holds a single class
  // Class-averaged (female and male) variants.
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
};

struct MetricsReport {
  std::vector<FoldMetrics> per_fold;
  FoldMetrics averages;  // fold = -1
};

using RateMatrix = std::array<std::array<double, 2>, 2>;

struct CVResult {
  ClassifierConfig config;
  CropKind crop_kind = CropKind::kFull;
  FoldPlan fold_plan;
  MetricsReport report;
  RateMatrix averaged_cm{};
  std::vector<ConfusionMatrix> fold_cms;
  std::vector<int> best_epochs;
  std::vector<std::vector<EpochStats>> histories;

  nlohmann::json to_json() const;
  static CVResult from_json(const nlohmann::json& j);
};

struct ReportDocuments {
  std::string per_fold_csv;
  std::string averages_csv;
  std::string per_fold_text;
  std::string averages_text;
};

namespace evaluation {

ConfusionMatrix confusion(std::span<const Gender> preds, std::span<const Gender> labels);
Metrics metrics(const ConfusionMatrix& cm);
/// Precision, recall and F1 averaged over the two classes.
Metrics macro_metrics(const ConfusionMatrix& cm);

/// Tie-credited rank statistic P(score_male > score_female) + 0.5 P(tie).
double auc(std::span<const double> scores, std::span<const Gender> labels);

/// Row-normalizes each matrix ([[tn, fp], [fn, tp]]) and averages them.
/// Rows without samples are left out of that row's mean.
RateMatrix average_confusion(std::span<const ConfusionMatrix> cms);

/// Mean of the per-fold values (fold field set to -1). AUC averages only the
/// folds where it is defined.
FoldMetrics average(std::span<const FoldMetrics> folds);

using FoldCallback = std::function<void(int fold, const TrainResult&)>;

/// Trains on the other folds and validates on fold i for every i, scoring
/// each fold at its best-accuracy epoch.
CVResult run_cross_validation(const std::vector<LabeledImage>& samples, const FoldPlan& plan,
                              const ClassifierConfig& cfg, CropKind kind,
                              const FoldCallback& on_fold = {});

ReportDocuments render_report(const std::vector<CVResult>& results);

}  // namespace evaluation
}  // namespace chickface
