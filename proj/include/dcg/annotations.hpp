#pragma once

#include <string>
#include <vector>

#include "dcg/types.hpp"

namespace dcg {

/// Landmarks exactly as stored on disk, at the annotation's native resolution.
struct AnnotationFile {
  int image_width = 0;
  int image_height = 0;
  LandmarkSet landmarks;
  /// Optional suture centerlines ("linestrip" records), native coordinates.
  std::vector<std::vector<Point>> sutures;
};

/// Reads a labelme-style annotation file. Point records become landmarks, linestrip records
/// become suture polylines, other shape types are ignored.
AnnotationFile read_annotation_file(const std::string& path);

/// Reads `path` and rescales every point from the native resolution to `width` x `height`.
LandmarkSet load_annotations(const std::string& path, int width, int height);

/// Writes landmarks (and optional polylines) in the labelme-compatible subset.
void save_annotations(const std::string& path, const LandmarkSet& landmarks, int image_width,
                      int image_height, const std::vector<std::vector<Point>>& sutures = {});

}  // namespace dcg
