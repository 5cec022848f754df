#pragma once

#include <cstddef>
#include <string>

#include "cloudalloc/common.hpp"

namespace cloudalloc {

enum class ActionKind { noop, expand, contract, migrate };

inline constexpr std::size_t kActionCount = 16;
inline constexpr int kActionLevels = 5;

// id 0 is noop; ids 1..15 are kind-major: expand 1-5, contract 1-5, migrate 1-5.
struct Action {
  ActionKind kind = ActionKind::noop;
  int level = 0;

  static Action noop() { return {}; }
  static Action expand(int level) { return {ActionKind::expand, level}; }
  static Action contract(int level) { return {ActionKind::contract, level}; }
  static Action migrate(int level) { return {ActionKind::migrate, level}; }

  std::size_t id() const {
    if (kind == ActionKind::noop) return 0;
    return 1 + static_cast<std::size_t>(static_cast<int>(kind) - 1) * kActionLevels + static_cast<std::size_t>(level - 1);
  }

  static Action from_id(std::size_t id) {
    if (id >= kActionCount) throw ValidationError("action id " + std::to_string(id) + " out of range 0..15");
    if (id == 0) return noop();
    const auto k = (id - 1) / kActionLevels;
    return {static_cast<ActionKind>(k + 1), static_cast<int>((id - 1) % kActionLevels) + 1};
  }

  bool valid() const {
    if (kind == ActionKind::noop) return level == 0;
    return level >= 1 && level <= kActionLevels;
  }

  std::string name() const {
    switch (kind) {
      case ActionKind::noop: return "noop";
      case ActionKind::expand: return "expand" + std::to_string(level);
      case ActionKind::contract: return "contract" + std::to_string(level);
      case ActionKind::migrate: return "migrate" + std::to_string(level);
    }
    return "?";
  }

  bool operator==(const Action&) const = default;
};

}  // namespace cloudalloc
