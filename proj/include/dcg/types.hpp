#pragma once

#include <torch/types.h>

#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace dcg {

enum class Domain { kSim, kOr };

std::string_view to_string(Domain d);
Domain parse_domain(std::string_view s);
inline Domain other(Domain d) { return d == Domain::kSim ? Domain::kOr : Domain::kSim; }

enum class PointKind { kEntry, kExit };
enum class Difficulty { kEasy, kMedium, kHard };

std::string_view to_string(PointKind k);
std::string_view to_string(Difficulty d);
PointKind parse_point_kind(std::string_view s);
Difficulty parse_difficulty(std::string_view s);

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
  friend std::ostream& operator<<(std::ostream& os, const Point& p) { return os << '(' << p.x << ", " << p.y << ')'; }
};

struct Landmark {
  Point pos;
  std::optional<PointKind> kind;
  std::optional<Difficulty> difficulty;
  friend bool operator==(const Landmark&, const Landmark&) = default;
};

/// Suture entry/exit points of one frame, in pixel-index coordinates
/// (pixel (i, j) has its center at x = i, y = j).
struct LandmarkSet {
  std::vector<Landmark> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  void add(double x, double y) { points.push_back(Landmark{{x, y}, std::nullopt, std::nullopt}); }
  std::vector<Point> positions() const;
  /// Throws ValidationError listing every point outside [0,W)x[0,H).
  void check_inside(int width, int height) const;
  friend bool operator==(const LandmarkSet&, const LandmarkSet&) = default;
};

/// One RGB frame. `pixels` is a float32 tensor of shape [3, H, W] with values in [0, 1].
struct ImageSample {
  torch::Tensor pixels;
  Domain domain = Domain::kSim;
  int fold_id = 0;
  std::string source_id;
  std::optional<std::string> annotation_path;

  int width() const { return static_cast<int>(pixels.size(2)); }
  int height() const { return static_cast<int>(pixels.size(1)); }
};

/// Single-channel map with values in [0, 1]; `values` has shape [H, W].
struct HeatmapTensor {
  torch::Tensor values;
  double sigma = 0.0;

  int width() const { return static_cast<int>(values.size(1)); }
  int height() const { return static_cast<int>(values.size(0)); }
};

struct LabeledSample {
  ImageSample image;
  LandmarkSet landmarks;
};

using Dataset = std::vector<LabeledSample>;

/// Default working resolution of the detector and translation networks.
inline constexpr int kDefaultWidth = 512;
inline constexpr int kDefaultHeight = 288;

}  // namespace dcg
