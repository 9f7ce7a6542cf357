#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace advtext {

using TokenId = std::uint32_t;
using ClassIndex = std::size_t;

/// Error raised by any module; carries the name of the module that raised it.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& message)
      : std::runtime_error(message), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

}  // namespace advtext
