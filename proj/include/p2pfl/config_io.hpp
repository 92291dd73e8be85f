#pragma once

// Scenario configuration as YAML: parsing with defaults, canonical
// serialization, content hash and environment overrides.

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "p2pfl/simulator.hpp"

namespace p2pfl {

struct ParseOptions {
    bool strict = false;  ///< unknown keys are errors instead of warnings
    /// Dotted-key overrides applied before conversion, e.g.
    /// {"decision.window", "5"}. Values are parsed as YAML scalars.
    std::vector<std::pair<std::string, std::string>> overrides;
};

struct ParseResult {
    ScenarioConfig config;
    std::vector<std::string> warnings;
};

/// Throws SchemaError (wrong type, unknown key in strict mode, bad enum
/// value) or ConfigError (value out of range). Both name the key path.
ParseResult parse_config_string(std::string_view text, const ParseOptions& options = {});

/// As parse_config_string; NotFoundError if the file is missing.
ParseResult parse_config_file(const std::filesystem::path& path, const ParseOptions& options = {});

/// Every key in a fixed order, doubles in shortest round-trip form.
std::string serialize_config(const ScenarioConfig& config);

/// Hex SHA-256 of serialize_config.
std::string config_hash(const ScenarioConfig& config);

/// Overrides from variables named P2PFL_<SECTION>__<KEY>; `__` separates
/// nesting levels and names are lower-cased, so P2PFL_DECISION__WINDOW=5
/// sets decision.window.
std::vector<std::pair<std::string, std::string>> env_overrides(char** environ_block);

/// Dotted key paths accepted in a config document.
std::vector<std::string> config_keys();

} // namespace p2pfl
