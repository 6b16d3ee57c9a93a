#pragma once

#include <string>
#include <vector>

namespace vlmlight {

// Scenario files and prompt templates compiled into the library, keyed by
// their path relative to the repository root ("scenarios/massy.json").
const std::string* find_embedded_asset(const std::string& key);
std::vector<std::string> embedded_asset_names();

}  // namespace vlmlight
