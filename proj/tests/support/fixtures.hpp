#pragma once

#include <string>

#include "lexinet/scenario.hpp"

namespace lexinet::testing {

inline std::string fixture_path(const std::string& name) { return std::string(LEXINET_FIXTURES) + "/" + name; }

inline Scenario fixture(const std::string& name) { return load_scenario(fixture_path(name)); }

}  // namespace lexinet::testing
