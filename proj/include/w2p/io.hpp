#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "w2p/params.hpp"

// Versioned binary container for parameter arrays:
//
//   magic "W2PB" | u32 version | u32 kind length | kind
//   u64 header length | header (JSON text)
//   u64 array count | u64 checksum of the arrays
//   per array: u32 name length | name | u8 trainable | u64 rows | u64 cols
//              | rows*cols little-endian doubles, row-major
//
// Reading verifies magic, version, kind and checksum and throws
// IntegrityError on any mismatch or truncation.
namespace w2p::io {

inline constexpr std::uint32_t kFormatVersion = 1;

struct Container {
  std::string kind;    // "lm-fixture", "checkpoint", ...
  std::string header;  // JSON text
  diff::ParamSet arrays;
};

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path, const std::string& expected_kind);

// FNV-1a of a file's bytes, for reproducibility checks.
std::uint64_t file_digest(const std::filesystem::path& path);

std::string hex(std::uint64_t v);

}  // namespace w2p::io
