#include "dcg/folds.hpp"

#include <algorithm>
#include <set>

#include "dcg/error.hpp"

namespace dcg {

FoldSplit make_folds(std::span<const std::string> source_ids, int k) {
  if (k < 1) throw ConfigError("fold count must be >= 1, got " + std::to_string(k));
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < source_ids.size(); ++i) {
    if (source_ids[i].empty()) throw ConfigError("sample " + std::to_string(i) + " has no source_id");
    groups[source_ids[i]].push_back(i);
  }
  if (static_cast<int>(groups.size()) < k) {
    throw ConfigError("cannot build " + std::to_string(k) + " folds from " + std::to_string(groups.size()) +
                      " source group(s)");
  }

  std::vector<const std::pair<const std::string, std::vector<std::size_t>>*> order;
  for (const auto& g : groups) order.push_back(&g);
  std::stable_sort(order.begin(), order.end(),
                   [](auto* a, auto* b) { return a->second.size() > b->second.size(); });

  FoldSplit split;
  split.k = k;
  split.val.resize(k);
  split.train.resize(k);
  std::vector<std::size_t> load(k, 0);
  std::vector<int> n_groups(k, 0);
  for (const auto* g : order) {
    // Empty folds first, then the lightest one; ties go to the lowest index.
    int best = 0;
    for (int f = 1; f < k; ++f) {
      const auto key = [&](int i) { return std::pair(n_groups[i] > 0, load[i]); };
      if (key(f) < key(best)) best = f;
    }
    split.assignments[g->first] = best;
    load[best] += g->second.size();
    ++n_groups[best];
  }

  for (std::size_t i = 0; i < source_ids.size(); ++i) {
    const int fold = split.assignments.at(source_ids[i]);
    for (int f = 0; f < k; ++f) {
      if (f == fold) {
        split.val[f].push_back(i);
      } else if (k > 1) {
        split.train[f].push_back(i);
      }
    }
  }
  // A single fold is the degenerate smoke-test split: everything is both train and validation.
  if (k == 1) split.train[0] = split.val[0];
  return split;
}

FoldSplit make_folds(std::span<const ImageSample> manifest, int k) {
  std::vector<std::string> ids;
  ids.reserve(manifest.size());
  for (const auto& s : manifest) ids.push_back(s.source_id);
  return make_folds(ids, k);
}

FoldSplit make_folds(const Dataset& dataset, int k) {
  std::vector<std::string> ids;
  ids.reserve(dataset.size());
  for (const auto& s : dataset) ids.push_back(s.image.source_id);
  return make_folds(ids, k);
}

void audit_split(const FoldSplit& split, std::span<const std::string> source_ids) {
  if (split.k == 1) return;
  for (int f = 0; f < split.k; ++f) {
    std::set<std::string> val_groups;
    std::set<std::size_t> val_idx(split.val[f].begin(), split.val[f].end());
    for (auto i : split.val[f]) val_groups.insert(source_ids[i]);
    for (auto i : split.train[f]) {
      if (val_idx.count(i) || val_groups.count(source_ids[i])) {
        throw LeakageError("fold " + std::to_string(f) + ": sample " + std::to_string(i) + " (source '" +
                           source_ids[i] + "') is in both training and validation");
      }
    }
  }
}

}  // namespace dcg
