#include "pianotree/manifest.hpp"

#include <ctime>
#include <fstream>

#include "json.hpp"

#include "pianotree/types.hpp"

using nlohmann::json;

namespace pianotree {

std::uint64_t fnv1a64(const void* data, std::size_t size) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checksum: cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

void write_manifest(const std::string& path, const RunManifest& manifest) {
  json checksums = json::object();
  for (const std::string& out : manifest.outputs)
    checksums[out] = to_hex(fnv1a64_file(out));

  char stamp[32] = "";
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);

  json j{{"command", manifest.command},
         {"config", manifest.config_path},
         {"inputs", manifest.inputs},
         {"outputs", manifest.outputs},
         {"seed", manifest.seed},
         {"timestamp", manifest.timestamp.empty() ? stamp : manifest.timestamp},
         {"checksums", std::move(checksums)}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path);
  out << j.dump(2) << "\n";
}

}  // namespace pianotree
