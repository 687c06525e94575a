#pragma once

#include <stdexcept>
#include <string>

namespace cocktail {

// Bad input data: malformed files, incompatible models, invalid recipes.
// Maps to exit code 2 in the CLI.
struct validation_error : std::runtime_error {
  explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / OS level failures. Maps to exit code 1 in the CLI.
struct io_error : std::runtime_error {
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cocktail
