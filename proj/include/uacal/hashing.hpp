// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "uacal/model.hpp"

namespace uacal {

/// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);

/// Hash of every base array (names, shapes and 64-bit values).
std::string hash_base(const BaseParams& base);

}  // namespace uacal
