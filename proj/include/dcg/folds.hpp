#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "dcg/types.hpp"

namespace dcg {

/// Group-disjoint k-fold split. Fold f validates on `val[f]` and trains on `train[f]`;
/// indices refer to the manifest the split was built from.
struct FoldSplit {
  int k = 0;
  std::map<std::string, int> assignments;  ///< source_id -> fold
  std::vector<std::vector<std::size_t>> train;
  std::vector<std::vector<std::size_t>> val;
};

/// Assigns whole source groups (recordings, surgeries) to folds, largest groups first, each to
/// the currently smallest fold. Throws ConfigError when there are fewer groups than k.
FoldSplit make_folds(std::span<const std::string> source_ids, int k);
FoldSplit make_folds(std::span<const ImageSample> manifest, int k);
FoldSplit make_folds(const Dataset& dataset, int k);

/// Throws LeakageError if any validation index of a fold also appears in its training list,
/// or if a source group straddles train and validation.
void audit_split(const FoldSplit& split, std::span<const std::string> source_ids);

}  // namespace dcg
