#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dcg/types.hpp"

namespace dcg {

/// One frame of a dataset manifest. Relative paths resolve against the manifest's directory.
struct ManifestRecord {
  std::string path;
  Domain domain = Domain::kSim;
  std::string source_id;
  int fold = 0;
  std::optional<std::string> annotation_path;
  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
  friend std::ostream& operator<<(std::ostream& os, const ManifestRecord& r) {
    return os << r.path << " [" << r.source_id << ", fold " << r.fold << ']';
  }
};

/// Reads JSON lines (`.jsonl`) or CSV with header `path,domain,source_id,fold,annotation_path`.
std::vector<ManifestRecord> read_manifest(const std::string& path);
/// Writes JSON lines.
void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records);

/// Loads every frame at `width` x `height` with annotations rescaled to that size.
Dataset load_dataset(const std::string& manifest_path, int width, int height);

/// Writes images (PNG) and annotations under `out_dir` and returns the manifest records,
/// with paths relative to `out_dir`. `stem` prefixes file names.
std::vector<ManifestRecord> write_dataset(const Dataset& data, const std::string& out_dir,
                                          const std::string& stem);

}  // namespace dcg
