#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dcg/types.hpp"
#include "json.hpp"

namespace dcg {

inline constexpr double kMatchRadius = 6.0;
inline constexpr double kExtractThreshold = 0.5;

/// Binarizes at `threshold`, labels 8-connected components and returns each component's
/// intensity-weighted center of mass. `heatmap` is [H, W] (or [1, H, W] / [1, 1, H, W]).
LandmarkSet extract_points(const torch::Tensor& heatmap, double threshold = kExtractThreshold);
inline LandmarkSet extract_points(const HeatmapTensor& heatmap, double threshold = kExtractThreshold) {
  return extract_points(heatmap.values, threshold);
}

struct MatchedPair {
  std::size_t pred = 0;
  std::size_t gt = 0;
  double distance = 0.0;
};

struct MatchResult {
  int tp = 0;
  int fp = 0;
  int fn = 0;
  std::vector<MatchedPair> pairs;
  std::vector<std::size_t> unmatched_pred;
  std::vector<std::size_t> unmatched_gt;
};

/// One-to-one greedy matching: all (pred, gt) pairs closer than `radius` (strictly), taken in
/// ascending distance order (ties by pred index, then gt index).
MatchResult match_points(const std::vector<Point>& pred, const std::vector<Point>& gt, double radius = kMatchRadius);
inline MatchResult match_points(const LandmarkSet& pred, const LandmarkSet& gt, double radius = kMatchRadius) {
  return match_points(pred.positions(), gt.positions(), radius);
}

struct Counts {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  Counts& operator+=(const MatchResult& m) {
    tp += m.tp;
    fp += m.fp;
    fn += m.fn;
    return *this;
  }
  Counts& operator+=(const Counts& c) {
    tp += c.tp;
    fp += c.fp;
    fn += c.fn;
    return *this;
  }
};

struct Metrics {
  double ppv = 0.0;
  double tpr = 0.0;
  double f1 = 0.0;
};

/// PPV = TP/(TP+FP), TPR = TP/(TP+FN), F1 = 2 PPV TPR/(PPV+TPR); each is 0 when its denominator is 0.
Metrics compute_metrics(const Counts& c);
inline Metrics compute_metrics(const MatchResult& m) { return compute_metrics(Counts{m.tp, m.fp, m.fn}); }
/// F1 straight from PPV and TPR (any common scale, e.g. percent or fraction).
double f1_from(double ppv, double tpr);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  ///< population standard deviation
};
MeanStd mean_std(const std::vector<double>& values);

/// Metrics per fold plus mean and population std across folds.
struct MetricsReport {
  std::vector<Metrics> per_fold;
  MeanStd ppv;
  MeanStd tpr;
  MeanStd f1;
};

/// Throws ValidationError on an empty list.
MetricsReport aggregate_folds(const std::vector<Metrics>& per_fold);
/// Sums image-level counts within each fold first.
MetricsReport aggregate_folds(const std::vector<Counts>& per_fold_counts);

struct MaskSimilarity {
  double mse = 0.0;
  double dice = 0.0;
};

/// Masks are [H, W] binary (any dtype). dice = (2 sum(a b) + s) / (sum a + sum b + s).
MaskSimilarity mask_similarity(const torch::Tensor& mask_a, const torch::Tensor& mask_b, double smoothing = 1.0);

/// Draws polylines with the given stroke width into a [H, W] uint8 mask.
torch::Tensor rasterize_polylines(const std::vector<std::vector<Point>>& lines, int width, int height,
                                  double stroke_width = 3.0);

/// One evaluated image for reports.
struct ImageEvaluation {
  std::string id;
  int fold = 0;
  MatchResult match;
};

/// JSON report: per-image match results, per-fold counts and metrics, mean/std aggregate.
nlohmann::json make_report(const std::vector<ImageEvaluation>& images, double radius, double threshold);
/// CSV table with rows PPV/TPR/F1 and one column per fold plus mean +- std.
std::string report_csv(const MetricsReport& report, const std::vector<int>& folds, const std::string& label);

/// Overlay for inspection: TP predictions green, FP red, missed ground truth orange.
torch::Tensor draw_overlay(const torch::Tensor& image_chw, const std::vector<Point>& pred,
                           const std::vector<Point>& gt, const MatchResult& match);

}  // namespace dcg
