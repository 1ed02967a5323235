#include "dcg/detcyclegan.hpp"

namespace dcg {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kBaseline: return "baseline";
    case Variant::kVar1: return "var1";
    case Variant::kVar2: return "var2";
  }
  return "baseline";
}

Variant parse_variant(std::string_view s) {
  if (s == "baseline") return Variant::kBaseline;
  if (s == "var1") return Variant::kVar1;
  if (s == "var2") return Variant::kVar2;
  throw ConfigError("unknown variant '" + std::string(s) + "' (expected baseline|var1|var2)");
}

void DetLossWeights::validate() const {
  if (!(alpha1 >= 0.0) || !(alpha2 >= 0.0)) throw ValidationError("detection loss weights must be non-negative");
  switch (variant) {
    case Variant::kBaseline:
      if (alpha1 != 0.0 || alpha2 != 0.0) throw ValidationError("baseline requires alpha1 = alpha2 = 0");
      break;
    case Variant::kVar1:
      if (!(alpha1 > 0.0 && alpha2 > 0.0)) throw ValidationError("variant 1 requires alpha1 > 0 and alpha2 > 0");
      break;
    case Variant::kVar2:
      if (!(alpha1 > 0.0) || alpha2 != 0.0) throw ValidationError("variant 2 requires alpha1 > 0 and alpha2 = 0");
      break;
  }
}

std::vector<DetLossWeights> weight_grid() {
  return {DetLossWeights::baseline(), DetLossWeights::var1(1.0, 1.0), DetLossWeights::var1(1.0, 0.5),
          DetLossWeights::var1(0.5, 1.0), DetLossWeights::var2(1.0)};
}

}  // namespace dcg
