// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string_view>

namespace vibrodiag {

enum class FaultType { kHealthy, kInnerRace, kOuterRace, kRoller };

std::string_view to_string(FaultType type);
/// Accepts the names produced by to_string ("healthy", "inner_race", ...).
FaultType fault_type_from_string(std::string_view name);

/// Bearing operating condition; the ground-truth label source.
struct FaultCondition {
  FaultType fault_type = FaultType::kHealthy;
  int severity_um = 0;  // one of 0, 150, 250, 450
  double speed_rpm = 6000.0;
  double load_n = 0.0;

  /// healthy <=> severity 0; speed in [1000, 30000] rpm; load in [0, 1800] N.
  void validate() const;
  bool operator==(const FaultCondition&) const = default;
};

}  // namespace vibrodiag
