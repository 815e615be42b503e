#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace gcfn::util {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
/// 16 lowercase hex digits.
std::string hex64(std::uint64_t v);
/// fnv1a64 of a whole file; IoError when unreadable.
std::uint64_t hash_file(const std::filesystem::path& path);

}  // namespace gcfn::util
