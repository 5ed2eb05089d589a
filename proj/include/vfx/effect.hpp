#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vfx {

/// Raised when a name or category has no matching entry.
class LookupError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Effect { kMelt = 0, kBloom = 1, kSwirl = 2, kShrink = 3 };

inline constexpr std::array<Effect, 4> kAllEffects{Effect::kMelt, Effect::kBloom, Effect::kSwirl, Effect::kShrink};

inline std::string_view effect_name(Effect e) {
  switch (e) {
    case Effect::kMelt: return "melt";
    case Effect::kBloom: return "bloom";
    case Effect::kSwirl: return "swirl";
    case Effect::kShrink: return "shrink";
  }
  return "unknown";
}

inline Effect parse_effect(std::string_view name) {
  for (Effect e : kAllEffects) {
    if (effect_name(e) == name) return e;
  }
  throw LookupError("unknown effect '" + std::string(name) + "' (expected melt, bloom, swirl or shrink)");
}

/// Broad effect plus fine-grained sub-type.
struct EffectCategory {
  Effect broad = Effect::kMelt;
  int fine = 0;
  bool operator==(const EffectCategory&) const = default;
};

}  // namespace vfx
