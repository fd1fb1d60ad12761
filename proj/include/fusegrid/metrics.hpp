#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fusegrid {

/// One evaluated case: predicted probability of the abnormal class and the
/// true label (1 = abnormal).
struct ScoredCase {
  std::string id;
  double p = 0.0;
  int z = 0;
};

struct Confusion {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct ConfusionMetrics {
  double sen = 0.0, spec = 0.0, f1 = 0.0;
};

struct RocPoint {
  double fpr = 0.0, tpr = 0.0;
};

struct RocCurve {
  double auc = 0.0;
  std::vector<RocPoint> points;  // starts at (0,0), ends at (1,1)
};

/// Full evaluation of one score set at a fixed operating point plus the
/// threshold-free ROC/AUC.
struct EvalReport {
  std::vector<ScoredCase> scores;
  double threshold = 0.5;
  Confusion counts;
  double sen = 0.0, spec = 0.0, f1 = 0.0, auc = 0.0;
  std::vector<RocPoint> roc;
};

inline constexpr double kDefaultThreshold = 0.5;

/// Classification rule: p >= threshold predicts abnormal. Labels must be
/// binary (ValidationError otherwise); class counts may be zero here.
Confusion confusion_counts(const std::vector<ScoredCase>& scores, double threshold = kDefaultThreshold);

/// sen = tp/(tp+fn), spec = tn/(tn+fp), f1 = 2*prec*rec/(prec+rec). Any
/// metric whose denominator is zero is reported as 0; in particular tp+fp == 0
/// yields f1 = 0.
ConfusionMetrics metrics_from_counts(const Confusion& counts);

/// Both classes must be present (ValidationError otherwise).
ConfusionMetrics confusion_metrics(const std::vector<ScoredCase>& scores,
                                   double threshold = kDefaultThreshold);

/// ROC by sweeping the distinct scores descending; cases with equal scores
/// move between thresholds together. AUC by trapezoidal integration, which
/// for this curve equals the pairwise-ranking statistic exactly. Both classes
/// must be present.
RocCurve roc_auc(const std::vector<ScoredCase>& scores);

/// Brute-force O(pos*neg) rank statistic: P(p_pos > p_neg) + 0.5*P(tie).
/// Cross-check oracle for roc_auc.
double pairwise_auc(const std::vector<ScoredCase>& scores);

/// Per-case arithmetic mean of two aligned score lists (same ids and labels
/// in the same order; ValidationError on any mismatch).
std::vector<ScoredCase> naive_fusion(const std::vector<ScoredCase>& scores_mask,
                                     const std::vector<ScoredCase>& scores_image);

/// Oracle fusion: a case counts as correctly classified when either score
/// list classifies it correctly at the threshold. Its sen/spec bound both
/// inputs' from above.
ConfusionMetrics gt_upper_bound(const std::vector<ScoredCase>& scores_mask,
                                const std::vector<ScoredCase>& scores_image,
                                double threshold = kDefaultThreshold);

/// Confusion metrics at the threshold plus ROC/AUC in one report.
EvalReport evaluate(const std::vector<ScoredCase>& scores, double threshold = kDefaultThreshold);

/// Score CSV: header "case_id,p,z", one case per row.
std::vector<ScoredCase> read_scores_csv(const std::filesystem::path& path);
void write_scores_csv(const std::filesystem::path& path, const std::vector<ScoredCase>& scores);

/// ROC CSV: header "fpr,tpr", one point per row.
void write_roc_csv(const std::filesystem::path& path, const std::vector<RocPoint>& roc);

}  // namespace fusegrid
