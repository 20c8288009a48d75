#pragma once

#include <stdexcept>
#include <string>

namespace onval {

/// Invalid configuration. `path` names the offending field, e.g. "trainer.momentum".
struct ConfigError : std::invalid_argument {
    ConfigError(std::string field_path, const std::string& message)
        : std::invalid_argument(field_path + ": " + message), path(std::move(field_path)) {}
    std::string path;
};

}  // namespace onval
