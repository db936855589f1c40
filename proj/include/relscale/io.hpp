#pragma once

#include <filesystem>
#include <string>

namespace relscale {

std::string read_file(const std::filesystem::path& path);

/// Writes through a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

/// Lower-case hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);

} // namespace relscale
