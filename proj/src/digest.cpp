#include "bbyol/digest.hpp"

#include <cstdio>

#include "binary_io.hpp"

namespace bbyol {

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t state) {
  for (std::uint8_t b : bytes) {
    state ^= b;
    state *= 0x100000001b3ULL;
  }
  return state;
}

std::uint64_t fnv1a64(std::string_view text) {
  return fnv1a64(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string file_digest(const std::filesystem::path& path) { return hex64(fnv1a64(detail::read_file_bytes(path))); }

}  // namespace bbyol
