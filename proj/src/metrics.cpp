#include "fusegrid/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "fusegrid/errors.hpp"

namespace fusegrid {

namespace {

void require_binary_labels(const std::vector<ScoredCase>& scores, const char* op) {
  for (const ScoredCase& c : scores)
    if (c.z != 0 && c.z != 1)
      throw ValidationError(std::string(op) + ": label of case '" + c.id + "' is " +
                            std::to_string(c.z) + ", must be 0 or 1");
}

void require_both_classes(const std::vector<ScoredCase>& scores, const char* op) {
  bool pos = false, neg = false;
  for (const ScoredCase& c : scores) (c.z ? pos : neg) = true;
  if (!pos || !neg)
    throw ValidationError(std::string(op) + ": need at least one case of each class");
}

void require_aligned(const std::vector<ScoredCase>& a, const std::vector<ScoredCase>& b,
                     const char* op) {
  if (a.size() != b.size())
    throw ValidationError(std::string(op) + ": score lists have different lengths (" +
                          std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].id != b[i].id)
      throw ValidationError(std::string(op) + ": case id mismatch at row " + std::to_string(i) +
                            " ('" + a[i].id + "' vs '" + b[i].id + "')");
    if (a[i].z != b[i].z)
      throw ValidationError(std::string(op) + ": label mismatch for case '" + a[i].id + "'");
  }
}

}  // namespace

Confusion confusion_counts(const std::vector<ScoredCase>& scores, double threshold) {
  require_binary_labels(scores, "confusion_counts");
  Confusion c;
  for (const ScoredCase& s : scores) {
    const bool predicted = s.p >= threshold;
    if (s.z == 1)
      (predicted ? c.tp : c.fn)++;
    else
      (predicted ? c.fp : c.tn)++;
  }
  return c;
}

ConfusionMetrics metrics_from_counts(const Confusion& c) {
  ConfusionMetrics m;
  if (c.tp + c.fn > 0) m.sen = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (c.tn + c.fp > 0) m.spec = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  if (c.tp > 0) {
    const double prec = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    const double rec = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    m.f1 = 2.0 * prec * rec / (prec + rec);
  }
  return m;
}

ConfusionMetrics confusion_metrics(const std::vector<ScoredCase>& scores, double threshold) {
  require_both_classes(scores, "confusion_metrics");
  return metrics_from_counts(confusion_counts(scores, threshold));
}

RocCurve roc_auc(const std::vector<ScoredCase>& scores) {
  require_binary_labels(scores, "roc_auc");
  require_both_classes(scores, "roc_auc");

  std::vector<size_t> order(scores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a].p > scores[b].p; });

  std::int64_t pos = 0, neg = 0;
  for (const ScoredCase& c : scores) (c.z ? pos : neg)++;

  RocCurve curve;
  curve.points.push_back({0.0, 0.0});

  // Walk threshold groups descending. Accumulating twice the trapezoid area
  // in units of (1/pos)*(1/neg) cells keeps every partial sum an integer, so
  // the final division is the only rounding step and the result matches the
  // pairwise rank statistic bit for bit.
  std::int64_t tp = 0, fp = 0;
  double twice_cells = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    const double p = scores[order[i]].p;
    std::int64_t group_pos = 0, group_neg = 0;
    while (i < order.size() && scores[order[i]].p == p) {
      (scores[order[i]].z ? group_pos : group_neg)++;
      ++i;
    }
    twice_cells += static_cast<double>(group_neg) * static_cast<double>(2 * tp + group_pos);
    tp += group_pos;
    fp += group_neg;
    curve.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                            static_cast<double>(tp) / static_cast<double>(pos)});
  }
  curve.auc = twice_cells / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return curve;
}

double pairwise_auc(const std::vector<ScoredCase>& scores) {
  require_binary_labels(scores, "pairwise_auc");
  require_both_classes(scores, "pairwise_auc");
  std::int64_t pos = 0, neg = 0;
  double twice_wins = 0.0;
  for (const ScoredCase& a : scores) {
    if (a.z != 1) continue;
    pos++;
    for (const ScoredCase& b : scores) {
      if (b.z != 0) continue;
      if (a.p > b.p)
        twice_wins += 2.0;
      else if (a.p == b.p)
        twice_wins += 1.0;
    }
  }
  for (const ScoredCase& b : scores) neg += (b.z == 0);
  return twice_wins / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

std::vector<ScoredCase> naive_fusion(const std::vector<ScoredCase>& scores_mask,
                                     const std::vector<ScoredCase>& scores_image) {
  require_aligned(scores_mask, scores_image, "naive_fusion");
  std::vector<ScoredCase> fused;
  fused.reserve(scores_mask.size());
  for (size_t i = 0; i < scores_mask.size(); ++i)
    fused.push_back({scores_mask[i].id, 0.5 * (scores_mask[i].p + scores_image[i].p),
                     scores_mask[i].z});
  return fused;
}

ConfusionMetrics gt_upper_bound(const std::vector<ScoredCase>& scores_mask,
                                const std::vector<ScoredCase>& scores_image, double threshold) {
  require_binary_labels(scores_mask, "gt_upper_bound");
  require_aligned(scores_mask, scores_image, "gt_upper_bound");
  Confusion c;
  for (size_t i = 0; i < scores_mask.size(); ++i) {
    const int z = scores_mask[i].z;
    const bool correct = (scores_mask[i].p >= threshold) == (z == 1) ||
                         (scores_image[i].p >= threshold) == (z == 1);
    if (z == 1)
      (correct ? c.tp : c.fn)++;
    else
      (correct ? c.tn : c.fp)++;
  }
  return metrics_from_counts(c);
}

EvalReport evaluate(const std::vector<ScoredCase>& scores, double threshold) {
  require_both_classes(scores, "evaluate");
  EvalReport report;
  report.scores = scores;
  report.threshold = threshold;
  report.counts = confusion_counts(scores, threshold);
  const ConfusionMetrics m = metrics_from_counts(report.counts);
  report.sen = m.sen;
  report.spec = m.spec;
  report.f1 = m.f1;
  RocCurve curve = roc_auc(scores);
  report.auc = curve.auc;
  report.roc = std::move(curve.points);
  return report;
}

std::vector<ScoredCase> read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open score file " + path.string());
  std::vector<ScoredCase> scores;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("case_id,", 0) == 0) continue;
    std::istringstream row(line);
    ScoredCase c;
    std::string p_str, z_str;
    if (!std::getline(row, c.id, ',') || !std::getline(row, p_str, ',') ||
        !std::getline(row, z_str))
      throw IoError(path.string() + ":" + std::to_string(lineno) +
                    ": expected 'case_id,p,z' row, got '" + line + "'");
    try {
      c.p = std::stod(p_str);
      c.z = std::stoi(z_str);
    } catch (const std::exception&) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": non-numeric field in '" +
                    line + "'");
    }
    scores.push_back(std::move(c));
  }
  return scores;
}

void write_scores_csv(const std::filesystem::path& path, const std::vector<ScoredCase>& scores) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write score file " + path.string());
  out << "case_id,p,z\n";
  out.precision(17);
  for (const ScoredCase& c : scores) out << c.id << "," << c.p << "," << c.z << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

void write_roc_csv(const std::filesystem::path& path, const std::vector<RocPoint>& roc) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write ROC file " + path.string());
  out << "fpr,tpr\n";
  out.precision(17);
  for (const RocPoint& pt : roc) out << pt.fpr << "," << pt.tpr << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace fusegrid
