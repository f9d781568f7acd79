#pragma once

#include <map>
#include <string>
#include <vector>

#include "gridpipe/search.hpp"

namespace gridpipe {

/// Settings mirrored by the --config JSON file; every field is optional and
/// overrides the defaults shown in the corresponding structs.
struct ToolConfig {
    EnvironmentConfig environment;
    AgentConfig agent;
    SearchConfig search;
    std::map<std::string, std::string> targets;  // csv filename -> target column
};

ToolConfig tool_config_from_json(const std::string& text);
std::string tool_config_to_json(const ToolConfig& cfg);
ToolConfig load_tool_config(const std::string& path);  // empty path -> defaults

/// Entry point behind main(): `gridpipe <train|search|eval|inspect> ...`.
/// Exit codes: 0 success, 1 usage/configuration errors, 2 data errors.
int run_cli(const std::vector<std::string>& args);

}  // namespace gridpipe
