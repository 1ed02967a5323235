#include "dcg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <opencv2/imgproc.hpp>
#include <sstream>

#include "dcg/error.hpp"
#include "dcg/image_io.hpp"

namespace dcg {

LandmarkSet extract_points(const torch::Tensor& heatmap, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("extraction threshold must lie in (0, 1)");
  auto map = heatmap.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  while (map.dim() > 2 && map.size(0) == 1) map = map.squeeze(0);
  if (map.dim() != 2) throw ShapeError("extract_points expects a single [H, W] map");
  const int h = static_cast<int>(map.size(0));
  const int w = static_cast<int>(map.size(1));
  const double* v = map.data_ptr<double>();

  std::vector<int> label(static_cast<std::size_t>(h) * w, 0);
  std::vector<int> stack;
  LandmarkSet out;
  int next = 0;
  for (int start = 0; start < h * w; ++start) {
    if (label[start] != 0 || !(v[start] >= threshold)) continue;
    ++next;
    double mass = 0.0, sx = 0.0, sy = 0.0;
    stack.assign(1, start);
    label[start] = next;
    while (!stack.empty()) {
      const int idx = stack.back();
      stack.pop_back();
      const int y = idx / w;
      const int x = idx % w;
      mass += v[idx];
      sx += v[idx] * x;
      sy += v[idx] * y;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy;
          const int nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const int n = ny * w + nx;
          if (label[n] == 0 && v[n] >= threshold) {
            label[n] = next;
            stack.push_back(n);
          }
        }
      }
    }
    out.add(sx / mass, sy / mass);
  }
  return out;
}

MatchResult match_points(const std::vector<Point>& pred, const std::vector<Point>& gt, double radius) {
  if (!(radius > 0.0)) throw ValidationError("match radius must be positive");
  struct Candidate {
    double d;
    std::size_t p, g;
  };
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = 0; j < gt.size(); ++j) {
      const double d = std::hypot(pred[i].x - gt[j].x, pred[i].y - gt[j].y);
      if (d < radius) cands.push_back({d, i, j});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.d != b.d) return a.d < b.d;
    if (a.p != b.p) return a.p < b.p;
    return a.g < b.g;
  });

  std::vector<bool> pred_used(pred.size(), false), gt_used(gt.size(), false);
  MatchResult r;
  for (const auto& c : cands) {
    if (pred_used[c.p] || gt_used[c.g]) continue;
    pred_used[c.p] = gt_used[c.g] = true;
    r.pairs.push_back({c.p, c.g, c.d});
  }
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (!pred_used[i]) r.unmatched_pred.push_back(i);
  for (std::size_t j = 0; j < gt.size(); ++j)
    if (!gt_used[j]) r.unmatched_gt.push_back(j);
  r.tp = static_cast<int>(r.pairs.size());
  r.fp = static_cast<int>(r.unmatched_pred.size());
  r.fn = static_cast<int>(r.unmatched_gt.size());
  return r;
}

double f1_from(double ppv, double tpr) { return ppv + tpr > 0.0 ? 2.0 * ppv * tpr / (ppv + tpr) : 0.0; }

Metrics compute_metrics(const Counts& c) {
  if (c.tp < 0 || c.fp < 0 || c.fn < 0) throw ValidationError("match counts must be non-negative");
  Metrics m;
  m.ppv = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
  m.tpr = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0.0;
  m.f1 = f1_from(m.ppv, m.tpr);
  return m;
}

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) throw ValidationError("mean/std of an empty list");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= values.size();
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / values.size())};
}

MetricsReport aggregate_folds(const std::vector<Metrics>& per_fold) {
  if (per_fold.empty()) throw ValidationError("aggregate_folds needs at least one fold");
  MetricsReport r;
  r.per_fold = per_fold;
  std::vector<double> ppv, tpr, f1;
  for (const auto& m : per_fold) {
    ppv.push_back(m.ppv);
    tpr.push_back(m.tpr);
    f1.push_back(m.f1);
  }
  r.ppv = mean_std(ppv);
  r.tpr = mean_std(tpr);
  r.f1 = mean_std(f1);
  return r;
}

MetricsReport aggregate_folds(const std::vector<Counts>& per_fold_counts) {
  std::vector<Metrics> m;
  for (const auto& c : per_fold_counts) m.push_back(compute_metrics(c));
  return aggregate_folds(m);
}

MaskSimilarity mask_similarity(const torch::Tensor& mask_a, const torch::Tensor& mask_b, double smoothing) {
  if (mask_a.sizes() != mask_b.sizes()) throw ShapeError("mask_similarity: shapes differ");
  if (!(smoothing >= 0.0)) throw ValidationError("dice smoothing must be non-negative");
  const auto a = (mask_a.to(torch::kFloat64) > 0.5).to(torch::kFloat64);
  const auto b = (mask_b.to(torch::kFloat64) > 0.5).to(torch::kFloat64);
  MaskSimilarity s;
  s.mse = (a - b).square().mean().item<double>();
  const double denom = a.sum().item<double>() + b.sum().item<double>() + smoothing;
  s.dice = denom > 0.0 ? (2.0 * (a * b).sum().item<double>() + smoothing) / denom : 1.0;
  return s;
}

torch::Tensor rasterize_polylines(const std::vector<std::vector<Point>>& lines, int width, int height,
                                  double stroke_width) {
  cv::Mat m = cv::Mat::zeros(height, width, CV_8UC1);
  const int thickness = std::max(1, static_cast<int>(std::lround(stroke_width)));
  for (const auto& line : lines) {
    std::vector<cv::Point> pts;
    for (const auto& p : line) pts.emplace_back(static_cast<int>(std::lround(p.x)), static_cast<int>(std::lround(p.y)));
    if (pts.size() == 1) pts.push_back(pts.front());
    if (!pts.empty()) cv::polylines(m, pts, false, cv::Scalar(1), thickness, cv::LINE_8);
  }
  return torch::from_blob(m.data, {height, width}, torch::kUInt8).clone();
}

namespace {

nlohmann::json metrics_json(const Metrics& m) { return {{"ppv", m.ppv}, {"tpr", m.tpr}, {"f1", m.f1}}; }

}  // namespace

nlohmann::json make_report(const std::vector<ImageEvaluation>& images, double radius, double threshold) {
  using nlohmann::json;
  json per_image = json::array();
  std::map<int, Counts> fold_counts;
  Counts total;
  for (const auto& im : images) {
    json pairs = json::array();
    for (const auto& p : im.match.pairs) pairs.push_back({{"pred", p.pred}, {"gt", p.gt}, {"distance", p.distance}});
    per_image.push_back({{"id", im.id},
                         {"fold", im.fold},
                         {"tp", im.match.tp},
                         {"fp", im.match.fp},
                         {"fn", im.match.fn},
                         {"pairs", std::move(pairs)}});
    fold_counts[im.fold] += im.match;
    total += im.match;
  }
  json folds = json::array();
  std::vector<Counts> counts;
  for (const auto& [fold, c] : fold_counts) {
    folds.push_back({{"fold", fold}, {"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"metrics", metrics_json(compute_metrics(c))}});
    counts.push_back(c);
  }
  json doc = {{"radius", radius}, {"threshold", threshold}, {"images", std::move(per_image)}, {"folds", std::move(folds)}};
  doc["pooled"] = metrics_json(compute_metrics(total));
  if (!counts.empty()) {
    const auto agg = aggregate_folds(counts);
    doc["aggregate"] = {{"ppv", {{"mean", agg.ppv.mean}, {"std", agg.ppv.std}}},
                        {"tpr", {{"mean", agg.tpr.mean}, {"std", agg.tpr.std}}},
                        {"f1", {{"mean", agg.f1.mean}, {"std", agg.f1.std}}}};
  }
  return doc;
}

std::string report_csv(const MetricsReport& report, const std::vector<int>& folds, const std::string& label) {
  std::ostringstream os;
  os << "model,metric";
  for (int f : folds) os << ",f" << (f + 1);
  os << ",mean,std\n";
  char buf[64];
  const auto row = [&](const char* name, auto get, const MeanStd& ms, double scale, const char* fmt) {
    os << label << ',' << name;
    for (const auto& m : report.per_fold) {
      std::snprintf(buf, sizeof(buf), fmt, get(m) * scale);
      os << ',' << buf;
    }
    std::snprintf(buf, sizeof(buf), fmt, ms.mean * scale);
    os << ',' << buf;
    std::snprintf(buf, sizeof(buf), fmt, ms.std * scale);
    os << ',' << buf << '\n';
  };
  row("PPV", [](const Metrics& m) { return m.ppv; }, report.ppv, 100.0, "%.2f");
  row("TPR", [](const Metrics& m) { return m.tpr; }, report.tpr, 100.0, "%.2f");
  row("F1", [](const Metrics& m) { return m.f1; }, report.f1, 1.0, "%.4f");
  return os.str();
}

torch::Tensor draw_overlay(const torch::Tensor& image_chw, const std::vector<Point>& pred, const std::vector<Point>& gt,
                           const MatchResult& match) {
  cv::Mat rgb = to_mat(image_chw.clamp(0.0, 1.0));
  const int r = std::max(2, rgb.cols / 100);
  const auto circle = [&](const Point& p, cv::Scalar c) {
    cv::circle(rgb, cv::Point(static_cast<int>(std::lround(p.x)), static_cast<int>(std::lround(p.y))), r, c, 1,
               cv::LINE_AA);
  };
  for (const auto& pr : match.pairs) circle(pred[pr.pred], {0.0, 1.0, 0.0});
  for (auto i : match.unmatched_pred) circle(pred[i], {1.0, 0.0, 0.0});
  for (auto j : match.unmatched_gt) circle(gt[j], {1.0, 0.55, 0.0});
  return from_mat(rgb);
}

}  // namespace dcg
