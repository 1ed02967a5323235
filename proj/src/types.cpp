#include "dcg/types.hpp"

#include <sstream>

#include "dcg/error.hpp"

namespace dcg {

std::string_view to_string(Domain d) { return d == Domain::kSim ? "sim" : "or"; }

Domain parse_domain(std::string_view s) {
  if (s == "sim") return Domain::kSim;
  if (s == "or") return Domain::kOr;
  throw ValidationError("unknown domain '" + std::string(s) + "' (expected sim|or)");
}

std::string_view to_string(PointKind k) { return k == PointKind::kEntry ? "entry" : "exit"; }

std::string_view to_string(Difficulty d) {
  switch (d) {
    case Difficulty::kEasy: return "easy";
    case Difficulty::kMedium: return "medium";
    case Difficulty::kHard: return "hard";
  }
  return "easy";
}

PointKind parse_point_kind(std::string_view s) {
  if (s == "entry") return PointKind::kEntry;
  if (s == "exit") return PointKind::kExit;
  throw ParseError("unknown point label '" + std::string(s) + "' (expected entry|exit)");
}

Difficulty parse_difficulty(std::string_view s) {
  if (s == "easy") return Difficulty::kEasy;
  if (s == "medium") return Difficulty::kMedium;
  if (s == "hard") return Difficulty::kHard;
  throw ParseError("unknown difficulty '" + std::string(s) + "'");
}

std::vector<Point> LandmarkSet::positions() const {
  std::vector<Point> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(p.pos);
  return out;
}

void LandmarkSet::check_inside(int width, int height) const {
  std::ostringstream bad;
  int n_bad = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i].pos;
    if (!(p.x >= 0.0 && p.x < width && p.y >= 0.0 && p.y < height)) {
      bad << (n_bad++ ? ", " : "") << "#" << i << " (" << p.x << ", " << p.y << ")";
    }
  }
  if (n_bad > 0) {
    std::ostringstream msg;
    msg << n_bad << " landmark(s) outside the " << width << "x" << height << " frame: " << bad.str();
    throw ValidationError(msg.str());
  }
}

}  // namespace dcg
