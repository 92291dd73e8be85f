#pragma once

// Named scenarios: five data-distribution rows crossed with five strategy
// filters. Sizes are desk-scale (10 clients, 30 rounds, 10 classes, 32
// features).

#include <string>
#include <string_view>
#include <vector>

#include "p2pfl/simulator.hpp"

namespace p2pfl {

/// Rows: iid, pathological, nonpathological, quantity_skew, tiny_shards.
std::vector<std::string> preset_rows();
/// Strategy filters: s1 (raw), s2 (synthetic), s3 (model), s4 (partial
/// model), adaptive (everything).
std::vector<std::string> preset_strategies();
/// "<row>.<strategy>" for every combination, row-major.
std::vector<std::string> preset_names();

/// Accepts "<row>.<strategy>" or a bare row name (meaning the adaptive
/// variant). Throws NotFoundError listing the valid names otherwise.
ScenarioConfig make_preset(std::string_view name);

/// Action kinds a strategy filter allows.
std::set<ActionKind> strategy_kinds(std::string_view strategy);

} // namespace p2pfl
