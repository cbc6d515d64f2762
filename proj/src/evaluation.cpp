// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#include "chickface/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "chickface/error.hpp"

namespace chickface {

namespace {

// JSON has no NaN; an undefined AUC is stored as null.
nlohmann::json auc_to_json(double v) { return std::isnan(v) ? nlohmann::json() : nlohmann::json(v); }

double auc_from_json(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

nlohmann::json fold_to_json(const FoldMetrics& f) {
  return {{"fold", f.fold},           {"accuracy", f.accuracy},
          {"precision", f.precision}, {"recall", f.recall},
          {"f1", f.f1},               {"auc", auc_to_json(f.auc)},
          {"macro_precision", f.macro_precision},
          {"macro_recall", f.macro_recall},
          {"macro_f1", f.macro_f1}};
}

FoldMetrics fold_from_json(const nlohmann::json& j) {
  FoldMetrics f;
  f.fold = j.at("fold");
  f.accuracy = j.at("accuracy");
  f.precision = j.at("precision");
  f.recall = j.at("recall");
  f.f1 = j.at("f1");
  f.auc = auc_from_json(j.at("auc"));
  f.macro_precision = j.value("macro_precision", 0.0);
  f.macro_recall = j.value("macro_recall", 0.0);
  f.macro_f1 = j.value("macro_f1", 0.0);
  return f;
}

double ratio(double num, double den, bool* degenerate) {
  *degenerate = den == 0.0;
  return den == 0.0 ? 0.0 : num / den;
}

}  // namespace

nlohmann::json CVResult::to_json() const {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : report.per_fold) folds.push_back(fold_to_json(f));
  nlohmann::json cms = nlohmann::json::array();
  for (const auto& c : fold_cms) cms.push_back({{"tn", c.tn}, {"fp", c.fp}, {"fn", c.fn}, {"tp", c.tp}});
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& h : histories) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& e : h) {
      rows.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_accuracy", e.val_accuracy}});
    }
    hist.push_back(std::move(rows));
  }
  return {{"config", config.to_json()},
          {"crop_kind", to_string(crop_kind)},
          {"fold_plan", fold_plan.to_json()},
          {"report", {{"per_fold", folds}, {"averages", fold_to_json(report.averages)}}},
          {"averaged_cm", averaged_cm},
          {"fold_cms", cms},
          {"best_epochs", best_epochs},
          {"histories", hist}};
}

CVResult CVResult::from_json(const nlohmann::json& j) {
  CVResult r;
  r.config = ClassifierConfig::from_json(j.at("config"));
  r.crop_kind = crop_kind_from_string(j.at("crop_kind").get<std::string>());
  r.fold_plan = FoldPlan::from_json(j.at("fold_plan"));
  for (const auto& f : j.at("report").at("per_fold")) r.report.per_fold.push_back(fold_from_json(f));
  r.report.averages = fold_from_json(j.at("report").at("averages"));
  r.averaged_cm = j.at("averaged_cm").get<RateMatrix>();
  for (const auto& c : j.at("fold_cms")) {
    r.fold_cms.push_back({c.at("tn"), c.at("fp"), c.at("fn"), c.at("tp")});
  }
  r.best_epochs = j.at("best_epochs").get<std::vector<int>>();
  for (const auto& h : j.at("histories")) {
    std::vector<EpochStats> rows;
    for (const auto& e : h) rows.push_back({e.at("epoch"), e.at("train_loss"), e.at("val_accuracy")});
    r.histories.push_back(std::move(rows));
  }
  return r;
}

namespace evaluation {

ConfusionMatrix confusion(std::span<const Gender> preds, std::span<const Gender> labels) {
  if (preds.size() != labels.size()) {
    throw Error(ErrorCode::kInvalidInput, "predictions and labels differ in length");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool pm = preds[i] == Gender::kMale;
    const bool lm = labels[i] == Gender::kMale;
    if (pm && lm) ++cm.tp;
    else if (pm) ++cm.fp;
    else if (lm) ++cm.fn;
    else ++cm.tn;
  }
  return cm;
}

Metrics metrics(const ConfusionMatrix& cm) {
  const double tp = static_cast<double>(cm.tp);
  const double tn = static_cast<double>(cm.tn);
  const double fp = static_cast<double>(cm.fp);
  const double fn = static_cast<double>(cm.fn);
  Metrics m;
  m.accuracy = ratio(tp + tn, tp + tn + fp + fn, &m.accuracy_degenerate);
  m.precision = ratio(tp, tp + fp, &m.precision_degenerate);
  m.recall = ratio(tp, tp + fn, &m.recall_degenerate);
  m.f1 = ratio(2.0 * m.precision * m.recall, m.precision + m.recall, &m.f1_degenerate);
  return m;
}

Metrics macro_metrics(const ConfusionMatrix& cm) {
  const Metrics male = metrics(cm);
  // Swapping the roles of the classes makes female the positive class.
  const Metrics female = metrics({cm.tp, cm.fn, cm.fp, cm.tn});
  Metrics m;
  m.accuracy = male.accuracy;
  m.accuracy_degenerate = male.accuracy_degenerate;
  m.precision = 0.5 * (male.precision + female.precision);
  m.recall = 0.5 * (male.recall + female.recall);
  m.f1 = 0.5 * (male.f1 + female.f1);
  m.precision_degenerate = male.precision_degenerate || female.precision_degenerate;
  m.recall_degenerate = male.recall_degenerate || female.recall_degenerate;
  m.f1_degenerate = male.f1_degenerate || female.f1_degenerate;
  return m;
}

double auc(std::span<const double> scores, std::span<const Gender> labels) {
  if (scores.size() != labels.size()) {
    throw Error(ErrorCode::kInvalidInput, "scores and labels differ in length");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of male ranks with average ranks over tie groups (Mann-Whitney U).
  double male_rank_sum = 0.0;
  std::size_t n_male = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == Gender::kMale) {
        male_rank_sum += avg_rank;
        ++n_male;
      }
    }
    i = j;
  }
  const std::size_t n_female = scores.size() - n_male;
  if (n_male == 0 || n_female == 0) {
    throw Error(ErrorCode::kUndefinedMetric, "AUC needs at least one sample of each class");
  }
  const double nm = static_cast<double>(n_male);
  const double u = male_rank_sum - nm * (nm + 1.0) / 2.0;
  return u / (nm * static_cast<double>(n_female));
}

RateMatrix average_confusion(std::span<const ConfusionMatrix> cms) {
  RateMatrix out{};
  std::array<int, 2> rows_used{0, 0};
  for (const auto& cm : cms) {
    const std::array<std::array<double, 2>, 2> raw = {
        {{static_cast<double>(cm.tn), static_cast<double>(cm.fp)},
         {static_cast<double>(cm.fn), static_cast<double>(cm.tp)}}};
    for (int r = 0; r < 2; ++r) {
      const double sum = raw[r][0] + raw[r][1];
      if (sum == 0.0) continue;
      ++rows_used[r];
      out[r][0] += raw[r][0] / sum;
      out[r][1] += raw[r][1] / sum;
    }
  }
  for (int r = 0; r < 2; ++r) {
    if (rows_used[r] == 0) continue;
    out[r][0] /= rows_used[r];
    out[r][1] /= rows_used[r];
  }
  return out;
}

FoldMetrics average(std::span<const FoldMetrics> folds) {
  FoldMetrics avg;
  avg.fold = -1;
  if (folds.empty()) return avg;
  int auc_folds = 0;
  for (const auto& f : folds) {
    avg.accuracy += f.accuracy;
    avg.precision += f.precision;
    avg.recall += f.recall;
    avg.f1 += f.f1;
    if (!std::isnan(f.auc)) {
      avg.auc += f.auc;
      ++auc_folds;
    }
    avg.macro_precision += f.macro_precision;
    avg.macro_recall += f.macro_recall;
    avg.macro_f1 += f.macro_f1;
  }
  const double n = static_cast<double>(folds.size());
  avg.accuracy /= n;
  avg.precision /= n;
  avg.recall /= n;
  avg.f1 /= n;
  avg.auc = auc_folds > 0 ? avg.auc / auc_folds : std::numeric_limits<double>::quiet_NaN();
  avg.macro_precision /= n;
  avg.macro_recall /= n;
  avg.macro_f1 /= n;
  return avg;
}

CVResult run_cross_validation(const std::vector<LabeledImage>& samples, const FoldPlan& plan,
                              const ClassifierConfig& cfg, CropKind kind,
                              const FoldCallback& on_fold) {
  cfg.validate();
  if (plan.k < 2) throw Error(ErrorCode::kPlanning, "fold plan needs k >= 2");
  CVResult result;
  result.config = cfg;
  result.crop_kind = kind;
  result.fold_plan = plan;

  std::vector<int> fold_of(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto it = plan.assignment.find(samples[i].chick_id);
    if (it == plan.assignment.end()) {
      throw Error(ErrorCode::kProtocol, "chick " + samples[i].chick_id + " is not in the fold plan");
    }
    fold_of[i] = it->second;
  }

  for (int fold = 0; fold < plan.k; ++fold) {
    std::vector<LabeledImage> train;
    std::vector<LabeledImage> val;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      (fold_of[i] == fold ? val : train).push_back(samples[i]);
    }
    std::set<std::string> seen;
    for (const auto& s : train) seen.insert(s.chick_id);
    for (const auto& s : val) {
      if (seen.count(s.chick_id)) {
        throw Error(ErrorCode::kProtocol, "fold " + std::to_string(fold) + ": chick " + s.chick_id +
                                              " leaked into training");
      }
    }

    ClassifierConfig fold_cfg = cfg;
    fold_cfg.seed = cfg.seed + static_cast<std::uint64_t>(fold);
    TrainResult tr = [&] {
      try {
        return classifier::train_classifier(train, val, fold_cfg);
      } catch (const Error& e) {
        throw Error(e.code(), "fold " + std::to_string(fold) + ": " + e.what());
      }
    }();

    std::vector<Gender> preds;
    std::vector<Gender> labels;
    for (std::size_t i = 0; i < val.size(); ++i) {
      preds.push_back(classifier::decide_gender(tr.best_val_scores[i], cfg.threshold));
      labels.push_back(val[i].gender);
    }
    const ConfusionMatrix cm = confusion(preds, labels);
    const Metrics m = metrics(cm);
    const Metrics macro = macro_metrics(cm);
    FoldMetrics fm;
    fm.fold = fold;
    fm.accuracy = m.accuracy;
    fm.precision = m.precision;
    fm.recall = m.recall;
    fm.f1 = m.f1;
    try {
      fm.auc = auc(tr.best_val_scores, labels);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kUndefinedMetric) throw;
      fm.auc = std::numeric_limits<double>::quiet_NaN();
    }
    fm.macro_precision = macro.precision;
    fm.macro_recall = macro.recall;
    fm.macro_f1 = macro.f1;

    result.report.per_fold.push_back(fm);
    result.fold_cms.push_back(cm);
    result.best_epochs.push_back(tr.best_epoch);
    result.histories.push_back(tr.history);
    if (on_fold) on_fold(fold, tr);
  }
  result.report.averages = average(result.report.per_fold);
  result.averaged_cm = average_confusion(result.fold_cms);
  return result;
}

namespace {

constexpr std::array<const char*, 5> kMetricHeaders = {"Accuracy", "Precision", "Recall",
                                                       "F1-Score", "AUC"};

std::array<double, 5> headline(const FoldMetrics& f) {
  return {f.accuracy, f.precision, f.recall, f.f1, f.auc};
}

std::string full_precision(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string percent(double v) {
  if (std::isnan(v)) return "n/a";
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
  return buf;
}

void csv_row(std::ostringstream& os, const std::string& backbone, CropKind kind,
             const std::string& fold, const FoldMetrics& f) {
  os << backbone << ',' << to_string(kind) << ',' << fold << ',' << full_precision(f.accuracy) << ','
     << full_precision(f.precision) << ',' << full_precision(f.recall) << ','
     << full_precision(f.f1) << ',' << full_precision(f.auc) << ','
     << full_precision(f.macro_precision) << ',' << full_precision(f.macro_recall) << ','
     << full_precision(f.macro_f1) << '\n';
}

std::string render_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> widths;
  for (const auto& r : rows) {
    widths.resize(std::max(widths.size(), r.size()), 0);
    for (std::size_t i = 0; i < r.size(); ++i) widths[i] = std::max(widths[i], r[i].size());
  }
  std::ostringstream os;
  for (std::size_t ri = 0; ri < rows.size(); ++ri) {
    const auto& r = rows[ri];
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i > 0) os << " | ";
      os << r[i] << std::string(widths[i] - r[i].size(), ' ');
    }
    os << '\n';
    if (ri == 1) {
      for (std::size_t i = 0; i < widths.size(); ++i) {
        if (i > 0) os << "-+-";
        os << std::string(widths[i], '-');
      }
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace

ReportDocuments render_report(const std::vector<CVResult>& results) {
  // Group by backbone; columns are crop kinds (full first, then middle).
  std::map<std::string, std::map<CropKind, const CVResult*>> by_backbone;
  std::set<CropKind> kinds;
  for (const auto& r : results) {
    by_backbone[r.config.backbone][r.crop_kind] = &r;
    kinds.insert(r.crop_kind);
  }
  std::vector<CropKind> columns;
  for (CropKind k : {CropKind::kFull, CropKind::kMiddle, CropKind::kNone}) {
    if (kinds.count(k)) columns.push_back(k);
  }

  auto sort_key = [&](const std::map<CropKind, const CVResult*>& m) {
    for (CropKind k : columns) {
      auto it = m.find(k);
      if (it != m.end()) return it->second->report.averages.accuracy;
    }
    return 0.0;
  };
  std::vector<std::string> backbones;
  for (const auto& [name, m] : by_backbone) backbones.push_back(name);
  std::stable_sort(backbones.begin(), backbones.end(), [&](const std::string& a, const std::string& b) {
    return sort_key(by_backbone[a]) > sort_key(by_backbone[b]);
  });

  ReportDocuments docs;
  const std::string header =
      "backbone,crop,fold,accuracy,precision,recall,f1,auc,macro_precision,macro_recall,macro_f1\n";
  std::ostringstream fold_csv;
  std::ostringstream avg_csv;
  fold_csv << header;
  avg_csv << header;

  std::vector<std::vector<std::string>> fold_rows;
  std::vector<std::vector<std::string>> avg_rows;
  std::vector<std::string> group_row = {"", ""};
  std::vector<std::string> metric_row = {"Backbones", "Folds"};
  for (CropKind k : columns) {
    const std::string title = k == CropKind::kFull     ? "Cropped Full Face"
                              : k == CropKind::kMiddle ? "Cropped Middle Face"
                                                       : "Uncropped";
    group_row.push_back(title);
    for (std::size_t i = 1; i < kMetricHeaders.size(); ++i) group_row.push_back("");
    for (const char* h : kMetricHeaders) metric_row.push_back(h);
  }
  fold_rows.push_back(group_row);
  fold_rows.push_back(metric_row);
  avg_rows.push_back(std::vector<std::string>(group_row.begin() + 1, group_row.end()));
  avg_rows.back()[0] = "";
  std::vector<std::string> avg_metric_row(metric_row.begin() + 1, metric_row.end());
  avg_metric_row[0] = "Backbones";
  avg_rows.push_back(avg_metric_row);

  for (const auto& name : backbones) {
    const auto& m = by_backbone[name];
    int max_folds = 0;
    for (const auto& [k, r] : m) max_folds = std::max(max_folds, static_cast<int>(r->report.per_fold.size()));

    for (CropKind k : columns) {
      auto it = m.find(k);
      if (it == m.end()) continue;
      for (const auto& f : it->second->report.per_fold) {
        csv_row(fold_csv, name, k, std::to_string(f.fold), f);
      }
      csv_row(avg_csv, name, k, "avg", it->second->report.averages);
    }

    for (int fold = 0; fold < max_folds; ++fold) {
      std::vector<std::string> row = {fold == 0 ? name : "", std::to_string(fold)};
      for (CropKind k : columns) {
        auto it = m.find(k);
        if (it == m.end() || fold >= static_cast<int>(it->second->report.per_fold.size())) {
          for (std::size_t i = 0; i < kMetricHeaders.size(); ++i) row.push_back("-");
          continue;
        }
        for (double v : headline(it->second->report.per_fold[fold])) row.push_back(percent(v));
      }
      fold_rows.push_back(std::move(row));
    }

    std::vector<std::string> row = {name};
    for (CropKind k : columns) {
      auto it = m.find(k);
      if (it == m.end()) {
        for (std::size_t i = 0; i < kMetricHeaders.size(); ++i) row.push_back("-");
        continue;
      }
      for (double v : headline(it->second->report.averages)) row.push_back(percent(v));
    }
    avg_rows.push_back(std::move(row));
  }

  docs.per_fold_csv = fold_csv.str();
  docs.averages_csv = avg_csv.str();
  docs.per_fold_text = "Performance per fold (%)\n" + render_table(fold_rows);
  docs.averages_text = "Average performance (%)\n" + render_table(avg_rows);
  return docs;
}

}  // namespace evaluation
}  // namespace chickface
