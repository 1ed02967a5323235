#include "dcg/annotations.hpp"

#include <cmath>
#include <fstream>

#include "dcg/error.hpp"
#include "json.hpp"

namespace dcg {

using nlohmann::json;

namespace {

double finite_coord(const json& v, const std::string& where) {
  if (!v.is_number()) throw ParseError(where + ": coordinate is not a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ParseError(where + ": coordinate is not finite");
  return d;
}

Point parse_point(const json& p, const std::string& where) {
  if (!p.is_array() || p.size() != 2) throw ParseError(where + ": expected [x, y]");
  return {finite_coord(p[0], where), finite_coord(p[1], where)};
}

}  // namespace

AnnotationFile read_annotation_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotation file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }

  AnnotationFile out;
  try {
    out.image_width = doc.at("imageWidth").get<int>();
    out.image_height = doc.at("imageHeight").get<int>();
  } catch (const json::exception& e) {
    throw ParseError(path + ": missing or invalid imageWidth/imageHeight (" + e.what() + ")");
  }
  if (out.image_width <= 0 || out.image_height <= 0) throw ParseError(path + ": non-positive image size");

  const auto shapes = doc.value("shapes", json::array());
  if (!shapes.is_array()) throw ParseError(path + ": 'shapes' is not an array");
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const std::string where = path + ": shapes[" + std::to_string(i) + "]";
    const auto& rec = shapes[i];
    if (!rec.is_object()) throw ParseError(where + ": record is not an object");
    const std::string type = rec.value("shape_type", std::string("point"));
    if (!rec.contains("points") || !rec["points"].is_array()) throw ParseError(where + ": missing 'points'");
    const auto& pts = rec["points"];

    if (type == "point") {
      if (pts.size() != 1) throw ParseError(where + ": point record must hold exactly one [x, y]");
      Landmark lm;
      lm.pos = parse_point(pts[0], where);
      if (rec.contains("label") && rec["label"].is_string()) {
        try {
          lm.kind = parse_point_kind(rec["label"].get<std::string>());
        } catch (const ParseError& e) {
          throw ParseError(where + ": " + e.what());
        }
      }
      if (rec.contains("difficulty") && !rec["difficulty"].is_null()) {
        if (!rec["difficulty"].is_string()) throw ParseError(where + ": difficulty must be a string");
        try {
          lm.difficulty = parse_difficulty(rec["difficulty"].get<std::string>());
        } catch (const ParseError& e) {
          throw ParseError(where + ": " + e.what());
        }
      }
      out.landmarks.points.push_back(lm);
    } else if (type == "linestrip") {
      std::vector<Point> line;
      for (const auto& p : pts) line.push_back(parse_point(p, where));
      out.sutures.push_back(std::move(line));
    }
  }
  return out;
}

LandmarkSet load_annotations(const std::string& path, int width, int height) {
  if (width <= 0 || height <= 0) throw ValidationError("target image size must be positive");
  AnnotationFile file = read_annotation_file(path);
  try {
    file.landmarks.check_inside(file.image_width, file.image_height);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
  if (file.image_width == width && file.image_height == height) return file.landmarks;

  const double sx = static_cast<double>(width) / file.image_width;
  const double sy = static_cast<double>(height) / file.image_height;
  for (auto& lm : file.landmarks.points) {
    lm.pos.x *= sx;
    lm.pos.y *= sy;
  }
  return file.landmarks;
}

void save_annotations(const std::string& path, const LandmarkSet& landmarks, int image_width,
                      int image_height, const std::vector<std::vector<Point>>& sutures) {
  landmarks.check_inside(image_width, image_height);
  json shapes = json::array();
  for (const auto& lm : landmarks.points) {
    json rec;
    if (lm.kind) rec["label"] = std::string(to_string(*lm.kind));
    rec["points"] = json::array({json::array({lm.pos.x, lm.pos.y})});
    rec["shape_type"] = "point";
    if (lm.difficulty) rec["difficulty"] = std::string(to_string(*lm.difficulty));
    shapes.push_back(std::move(rec));
  }
  for (const auto& line : sutures) {
    json pts = json::array();
    for (const auto& p : line) pts.push_back(json::array({p.x, p.y}));
    shapes.push_back({{"label", "suture"}, {"points", std::move(pts)}, {"shape_type", "linestrip"}});
  }
  json doc = {{"imageWidth", image_width}, {"imageHeight", image_height}, {"shapes", std::move(shapes)}};

  std::ofstream out(path);
  if (!out) throw IoError("cannot write annotation file " + path);
  out << doc.dump(1) << '\n';
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace dcg
