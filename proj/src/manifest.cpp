#include "dcg/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dcg/annotations.hpp"
#include "dcg/error.hpp"
#include "dcg/image_io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dcg {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

ManifestRecord record_from_json(const json& j, const std::string& where) {
  ManifestRecord r;
  try {
    r.path = j.at("path").get<std::string>();
    r.domain = parse_domain(j.at("domain").get<std::string>());
    r.source_id = j.at("source_id").get<std::string>();
    r.fold = j.value("fold", 0);
    if (j.contains("annotation_path") && !j["annotation_path"].is_null()) {
      r.annotation_path = j["annotation_path"].get<std::string>();
    }
  } catch (const json::exception& e) {
    throw ParseError(where + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ParseError(where + ": " + e.what());
  }
  return r;
}

std::string resolve(const fs::path& base, const std::string& p) {
  fs::path q(p);
  return q.is_absolute() ? q.string() : (base / q).string();
}

}  // namespace

std::vector<ManifestRecord> read_manifest(const std::string& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifactError("manifest not found: " + path);
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  std::vector<ManifestRecord> out;
  std::string line;
  const bool csv = fs::path(path).extension() == ".csv";
  std::size_t lineno = 0;
  if (csv) {
    std::getline(in, line);
    ++lineno;
    const auto header = split_csv(line);
    const std::vector<std::string> expected{"path", "domain", "source_id", "fold", "annotation_path"};
    if (header != expected) throw ParseError(path + ": unexpected CSV header '" + line + "'");
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    if (csv) {
      const auto cells = split_csv(line);
      if (cells.size() != 5) throw ParseError(where + ": expected 5 columns");
      json j = {{"path", cells[0]}, {"domain", cells[1]}, {"source_id", cells[2]}};
      try {
        j["fold"] = std::stoi(cells[3]);
      } catch (const std::exception&) {
        throw ParseError(where + ": fold is not an integer");
      }
      if (!cells[4].empty()) j["annotation_path"] = cells[4];
      out.push_back(record_from_json(j, where));
    } else {
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ParseError(where + ": " + e.what());
      }
      out.push_back(record_from_json(j, where));
    }
  }
  return out;
}

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path);
  for (const auto& r : records) {
    json j = {{"path", r.path},
              {"domain", std::string(to_string(r.domain))},
              {"source_id", r.source_id},
              {"fold", r.fold},
              {"annotation_path", r.annotation_path ? json(*r.annotation_path) : json(nullptr)}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

Dataset load_dataset(const std::string& manifest_path, int width, int height) {
  const auto base = fs::path(manifest_path).parent_path();
  Dataset data;
  for (const auto& r : read_manifest(manifest_path)) {
    LabeledSample s;
    s.image.pixels = read_image(resolve(base, r.path), width, height);
    s.image.domain = r.domain;
    s.image.fold_id = r.fold;
    s.image.source_id = r.source_id;
    if (r.annotation_path) {
      s.image.annotation_path = resolve(base, *r.annotation_path);
      s.landmarks = load_annotations(*s.image.annotation_path, width, height);
    }
    data.push_back(std::move(s));
  }
  return data;
}

std::vector<ManifestRecord> write_dataset(const Dataset& data, const std::string& out_dir,
                                          const std::string& stem) {
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  fs::create_directories(root / "annotations", ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

  std::vector<ManifestRecord> records;
  records.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%05zu", i);
    const std::string img_rel = "images/" + stem + "_" + name + ".png";
    const std::string ann_rel = "annotations/" + stem + "_" + name + ".json";
    const auto& s = data[i];
    write_image((root / img_rel).string(), s.image.pixels);
    save_annotations((root / ann_rel).string(), s.landmarks, s.image.width(), s.image.height());
    records.push_back({img_rel, s.image.domain, s.image.source_id, s.image.fold_id, ann_rel});
  }
  return records;
}

}  // namespace dcg
