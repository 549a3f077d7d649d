#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace pianotree {

std::uint64_t fnv1a64(const void* data, std::size_t size);
std::uint64_t fnv1a64_file(const std::string& path);
std::string to_hex(std::uint64_t value);

/// Written next to every command's outputs; records enough to re-run it.
struct RunManifest {
  std::string command;
  std::string config_path;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;  // checksummed relative to their location
  std::uint64_t seed = 0;
  std::string timestamp;  // filled at write time, RFC 3339 UTC
};

/// Serializes the manifest as JSON at `path`, checksumming every output file.
/// The manifest itself is excluded from its own checksum list.
void write_manifest(const std::string& path, const RunManifest& manifest);

}  // namespace pianotree
