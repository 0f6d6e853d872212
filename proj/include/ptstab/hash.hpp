#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace ptstab {

/// FNV-1a 64-bit over raw bytes.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes);
std::uint64_t fnv1a64(const std::string& s);
std::string fnv1a64_hex(const std::string& s);

/// FNV-1a over a file's contents; throws io_error if unreadable.
std::string fnv1a64_file_hex(const std::string& path);

} // namespace ptstab
