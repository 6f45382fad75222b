#pragma once

#include <string>
#include <string_view>

namespace lamb {

// Lowercase hex SHA-256 of the exact bytes of `data` (64 chars).
std::string sha256_hex(std::string_view data);

}  // namespace lamb
