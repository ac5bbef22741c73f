#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace bbyol {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t state = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text);
std::string hex64(std::uint64_t value);

/// Digest of a file's bytes, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

}  // namespace bbyol
