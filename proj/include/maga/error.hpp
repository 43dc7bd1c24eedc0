#pragma once

#include <stdexcept>
#include <string>

namespace maga {

// Filesystem and format failures. The CLI maps these to exit code 2;
// std::invalid_argument (bad config / bad shapes) maps to exit code 1.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace maga
