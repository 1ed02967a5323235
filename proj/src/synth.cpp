#include "dcg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <opencv2/imgproc.hpp>

#include "dcg/annotations.hpp"
#include "dcg/error.hpp"
#include "dcg/folds.hpp"
#include "dcg/image_io.hpp"

namespace fs = std::filesystem;

namespace dcg {

namespace {

struct Rgb {
  float r, g, b;
};

struct Style {
  Rgb background;
  Rgb tissue;
  Rgb suture;
  Rgb instrument;
  double texture_contrast;
  bool lighting;
  double speckle;
  int highlights;
};

Style style_for(Domain d) {
  if (d == Domain::kSim) return {{0.35f, 0.12f, 0.12f}, {0.88f, 0.70f, 0.62f}, {0.97f, 0.97f, 1.0f},
                                 {0.60f, 0.60f, 0.66f}, 0.12, false, 0.0, 0};
  return {{0.22f, 0.05f, 0.04f}, {0.78f, 0.30f, 0.24f}, {0.10f, 0.42f, 0.22f},
          {0.32f, 0.33f, 0.36f}, 0.30, true, 0.03, 3};
}

double uni(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

cv::Mat smooth_noise(std::mt19937_64& rng, int w, int h, int cell) {
  const int gw = w / cell + 3;
  const int gh = h / cell + 3;
  cv::Mat grid(gh, gw, CV_32FC1);
  for (int y = 0; y < gh; ++y)
    for (int x = 0; x < gw; ++x) grid.at<float>(y, x) = static_cast<float>(uni(rng, 0.0, 1.0));
  cv::Mat big;
  cv::resize(grid, big, cv::Size(gw * cell, gh * cell), 0, 0, cv::INTER_CUBIC);
  cv::Mat out = big(cv::Rect(cell, cell, w, h)).clone();
  double lo = 0, hi = 1;
  cv::minMaxLoc(out, &lo, &hi);
  out = (out - lo) / std::max(hi - lo, 1e-6);
  return out;
}

Point bezier(const Point& a, const Point& b, const Point& c, double t) {
  const double u = 1.0 - t;
  return {u * u * a.x + 2 * u * t * b.x + t * t * c.x, u * u * a.y + 2 * u * t * b.y + t * t * c.y};
}

/// Marks every pixel within `radius` of a centerline sample, plus the sample's nearest pixel.
void stamp(cv::Mat& mask, const std::vector<Point>& line, double radius) {
  const int r = static_cast<int>(std::ceil(radius));
  for (const auto& p : line) {
    const int px = static_cast<int>(std::lround(p.x));
    const int py = static_cast<int>(std::lround(p.y));
    if (px >= 0 && px < mask.cols && py >= 0 && py < mask.rows) mask.at<std::uint8_t>(py, px) = 1;
    for (int y = py - r; y <= py + r; ++y) {
      if (y < 0 || y >= mask.rows) continue;
      for (int x = px - r; x <= px + r; ++x) {
        if (x < 0 || x >= mask.cols) continue;
        if ((x - p.x) * (x - p.x) + (y - p.y) * (y - p.y) <= radius * radius) mask.at<std::uint8_t>(y, x) = 1;
      }
    }
  }
}

struct Geometry {
  Point center;
  double radius = 0.0;
  std::vector<std::vector<Point>> sutures;
  LandmarkSet landmarks;
  std::vector<std::array<Point, 2>> instruments;  // bar segments
  double instrument_width = 0.0;
  std::vector<std::pair<Point, double>> highlights;
  Point light;
};

Geometry sample_geometry(std::mt19937_64& rng, const SceneParams& p) {
  const double w = p.width;
  const double h = p.height;
  const double m = std::min(w, h);
  Geometry g;
  g.center = {w / 2 + uni(rng, -0.08, 0.08) * w, h / 2 + uni(rng, -0.08, 0.08) * h};
  g.radius = m * uni(rng, 0.26, 0.34);
  const int n = std::uniform_int_distribution<int>(p.min_sutures, p.max_sutures)(rng);
  const double margin = 1.0;
  const double min_sep = std::max(5.0, 0.06 * m);
  const auto clamp_pt = [&](Point q) {
    return Point{std::clamp(q.x, margin, w - 1 - margin), std::clamp(q.y, margin, h - 1 - margin)};
  };
  const auto far_enough = [&](const Point& q) {
    for (const auto& lm : g.landmarks.points)
      if (std::hypot(lm.pos.x - q.x, lm.pos.y - q.y) < min_sep) return false;
    return true;
  };

  for (int k = 0; k < n; ++k) {
    for (int attempt = 0; attempt < 30; ++attempt) {
      const double theta = 2 * std::numbers::pi * (k + uni(rng, -0.35, 0.35)) / std::max(n, 1);
      const double rr = g.radius * uni(rng, 0.8, 1.0);
      const Point entry = clamp_pt({g.center.x + rr * std::cos(theta), g.center.y + rr * std::sin(theta)});
      const double dir = theta + uni(rng, -0.7, 0.7);
      const double len = uni(rng, p.min_length, p.max_length);
      const Point exit = clamp_pt({entry.x + len * std::cos(dir), entry.y + len * std::sin(dir)});
      const Point mid{(entry.x + exit.x) / 2 + uni(rng, -1, 1) * p.control_jitter,
                      (entry.y + exit.y) / 2 + uni(rng, -1, 1) * p.control_jitter};
      if (std::hypot(exit.x - entry.x, exit.y - entry.y) < min_sep) continue;
      if (!far_enough(entry) || !far_enough(exit)) continue;

      std::vector<Point> line;
      const double arc = std::hypot(mid.x - entry.x, mid.y - entry.y) + std::hypot(exit.x - mid.x, exit.y - mid.y);
      const int steps = std::max(8, static_cast<int>(std::ceil(arc * 4)));
      for (int s = 0; s <= steps; ++s) line.push_back(clamp_pt(bezier(entry, mid, exit, double(s) / steps)));
      g.sutures.push_back(std::move(line));
      g.landmarks.points.push_back({entry, PointKind::kEntry, Difficulty::kEasy});
      g.landmarks.points.push_back({exit, PointKind::kExit, Difficulty::kEasy});
      break;
    }
  }

  g.instrument_width = 0.05 * m;
  if (uni(rng, 0.0, 1.0) < p.occlusion_probability) {
    const double a = uni(rng, 0.0, 2 * std::numbers::pi);
    const Point tip{g.center.x + 1.4 * g.radius * std::cos(a), g.center.y + 1.4 * g.radius * std::sin(a)};
    const Point tail{tip.x + 2 * m * std::cos(a), tip.y + 2 * m * std::sin(a)};
    g.instruments.push_back({tip, tail});
  }
  for (int i = 0; i < 3; ++i) {
    const double a = uni(rng, 0.0, 2 * std::numbers::pi);
    const double rr = g.radius * uni(rng, 0.0, 0.7);
    g.highlights.push_back({{g.center.x + rr * std::cos(a), g.center.y + rr * std::sin(a)}, uni(rng, 1.0, 2.0) * m / 64});
  }
  g.light = {uni(rng, 0.0, w), uni(rng, 0.0, h)};
  return g;
}

double seg_dist(const Point& p, const Point& a, const Point& b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double t = std::clamp(((p.x - a.x) * vx + (p.y - a.y) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * vx), p.y - (a.y + t * vy));
}

torch::Tensor render(const Geometry& g, const cv::Mat& mask, const cv::Mat& texture, Domain d,
                     std::mt19937_64& rng) {
  const Style st = style_for(d);
  const int h = mask.rows;
  const int w = mask.cols;
  const double diag = std::hypot(w, h);
  cv::Mat img(h, w, CV_32FC3);
  std::normal_distribution<double> speckle(0.0, st.speckle > 0 ? st.speckle : 1.0);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Point p{double(x), double(y)};
      const double t = texture.at<float>(y, x);
      // Soft disk edge.
      const double r = std::hypot(x - g.center.x, y - g.center.y);
      const double inside = std::clamp(g.radius + 1.0 - r, 0.0, 1.0);
      const double shade = 1.0 - st.texture_contrast + st.texture_contrast * t;
      Rgb c{
          static_cast<float>((inside * st.tissue.r + (1 - inside) * st.background.r) * shade),
          static_cast<float>((inside * st.tissue.g + (1 - inside) * st.background.g) * shade),
          static_cast<float>((inside * st.tissue.b + (1 - inside) * st.background.b) * shade),
      };
      for (const auto& bar : g.instruments) {
        if (seg_dist(p, bar[0], bar[1]) <= g.instrument_width) c = st.instrument;
      }
      if (mask.at<std::uint8_t>(y, x)) c = st.suture;
      if (st.highlights > 0) {
        for (int i = 0; i < st.highlights && i < static_cast<int>(g.highlights.size()); ++i) {
          const auto& [hp, hr] = g.highlights[i];
          const double k = std::exp(-((x - hp.x) * (x - hp.x) + (y - hp.y) * (y - hp.y)) / (2 * hr * hr));
          c.r += static_cast<float>(k * (1.0 - c.r));
          c.g += static_cast<float>(k * (1.0 - c.g));
          c.b += static_cast<float>(k * (1.0 - c.b));
        }
      }
      double gain = 1.0;
      if (st.lighting) {
        const double dl = std::hypot(x - g.light.x, y - g.light.y) / diag;
        gain = 0.55 + 0.6 * std::exp(-dl * dl / (2 * 0.35 * 0.35));
      }
      auto& px = img.at<cv::Vec3f>(y, x);
      for (int ch = 0; ch < 3; ++ch) {
        const double base = (ch == 0 ? c.r : ch == 1 ? c.g : c.b) * gain;
        const double noise = st.speckle > 0 ? speckle(rng) : 0.0;
        px[ch] = static_cast<float>(std::clamp(base + noise, 0.0, 1.0));
      }
    }
  }
  return from_mat(img);
}

}  // namespace

void SceneParams::validate() const {
  if (width <= 0 || height <= 0) throw ValidationError("scene size must be positive");
  if (min_sutures < 0 || max_sutures < min_sutures) throw ValidationError("suture count range must satisfy 0 <= min <= max");
  if (!(stroke_width >= 1.0)) throw ValidationError("stroke width must be >= 1");
  if (!(min_length > 0.0 && max_length >= min_length)) throw ValidationError("suture length range is invalid");
  if (!(control_jitter >= 0.0)) throw ValidationError("control jitter must be non-negative");
  if (!(occlusion_probability >= 0.0 && occlusion_probability <= 1.0))
    throw ValidationError("occlusion probability must lie in [0, 1]");
}

SceneParams SceneParams::for_size(int width, int height) {
  SceneParams p;
  const double s = std::min(width, height) / 128.0;
  p.width = width;
  p.height = height;
  p.control_jitter *= s;
  p.min_length *= s;
  p.max_length *= s;
  p.stroke_width = std::max(1.0, p.stroke_width * s);
  return p;
}

Scene generate_scene(std::mt19937_64& rng, const SceneParams& params) {
  params.validate();
  // One draw per scene so that parallel generation can seed scenes independently.
  std::mt19937_64 local(rng());
  const Geometry g = sample_geometry(local, params);

  cv::Mat mask = cv::Mat::zeros(params.height, params.width, CV_8UC1);
  for (const auto& line : g.sutures) stamp(mask, line, params.stroke_width / 2.0);

  std::mt19937_64 tex_rng(params.texture_seed ^ local());
  const cv::Mat texture = smooth_noise(tex_rng, params.width, params.height, std::max(4, params.width / 16));

  Scene scene;
  std::mt19937_64 noise_rng(local());
  scene.sim_image.pixels = render(g, mask, texture, Domain::kSim, noise_rng);
  scene.sim_image.domain = Domain::kSim;
  scene.or_image.pixels = render(g, mask, texture, Domain::kOr, noise_rng);
  scene.or_image.domain = Domain::kOr;
  scene.landmarks = g.landmarks;
  scene.suture_mask = torch::from_blob(mask.data, {params.height, params.width}, torch::kUInt8).clone();
  scene.sutures = g.sutures;
  return scene;
}

Dataset generate_samples(std::mt19937_64& rng, const SceneParams& params, int n_images, int n_groups,
                         std::vector<Scene>* scenes) {
  if (n_images < 0) throw ValidationError("image count must be non-negative");
  if (n_groups < 1) throw ValidationError("group count must be >= 1");
  const std::string prefix = params.group_prefix + "-" + std::string(to_string(params.style)) + "-g";
  Dataset data;
  data.reserve(n_images);
  for (int i = 0; i < n_images; ++i) {
    Scene s = generate_scene(rng, params);
    LabeledSample ls;
    ls.image = params.style == Domain::kSim ? s.sim_image : s.or_image;
    ls.image.source_id = prefix + std::to_string(i % n_groups);
    ls.image.fold_id = i % n_groups;
    ls.landmarks = s.landmarks;
    data.push_back(std::move(ls));
    if (scenes) scenes->push_back(std::move(s));
  }
  return data;
}

std::vector<ManifestRecord> generate_dataset(std::mt19937_64& rng, const SceneParams& params, int n_images,
                                             int n_groups, const std::string& out_dir) {
  std::vector<Scene> scenes;
  Dataset data = generate_samples(rng, params, n_images, n_groups, &scenes);
  std::vector<std::string> ids;
  for (const auto& s : data) ids.push_back(s.image.source_id);
  const int k = std::min(4, n_groups);
  const FoldSplit split = make_folds(ids, k);
  for (auto& s : data) s.image.fold_id = split.assignments.at(s.image.source_id);

  const std::string stem(to_string(params.style));
  auto records = write_dataset(data, out_dir, stem);

  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "masks", ec);
  fs::create_directories(root / "paired", ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const fs::path img(records[i].path);
    const auto name = img.filename().string();
    write_gray((root / "masks" / name).string(), scenes[i].suture_mask.to(torch::kFloat32));
    const auto& other = params.style == Domain::kSim ? scenes[i].or_image : scenes[i].sim_image;
    write_image((root / "paired" / name).string(), other.pixels);
    // Centerlines go into the annotation as linestrip records.
    save_annotations((root / *records[i].annotation_path).string(), data[i].landmarks, params.width, params.height,
                     scenes[i].sutures);
  }
  write_manifest((root / "manifest.jsonl").string(), records);
  return records;
}

}  // namespace dcg
