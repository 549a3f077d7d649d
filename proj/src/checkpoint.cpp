#include "pianotree/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace pianotree {

namespace {

constexpr char kMagic[8] = {'P', 'T', 'R', 'E', 'E', 'V', 'A', 'E'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw DataError("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_params(std::ostream& os, const Params<float>& p, nlohmann::json& dir,
                  const std::string& prefix) {
  p.for_each([&](const std::string& name, const auto& t) {
    dir.push_back({{"name", prefix + name}, {"count", t.size()}});
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(float)));
  });
}

void read_params(std::istream& is, Params<float>& p, const nlohmann::json& dir,
                 std::size_t& cursor, const std::string& prefix) {
  p.for_each([&](const std::string& name, auto& t) {
    if (cursor >= dir.size()) throw DataError("checkpoint: tensor directory too short");
    const auto& entry = dir[cursor++];
    if (entry.at("name").get<std::string>() != prefix + name ||
        entry.at("count").get<Eigen::Index>() != t.size())
      throw DataError("checkpoint: tensor mismatch at " + prefix + name);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!is) throw DataError("checkpoint: truncated tensor data");
  });
}

}  // namespace

void Checkpoint::init(const ModelDims& d, std::uint64_t seed) {
  dims = d;
  params.init(d, seed);
  has_adam = false;
  adam_t = 0;
  step = 0;
  epoch = 0;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw PipelineError("checkpoint: cannot write " + path);

  // tensor data goes to a scratch buffer first so the header can carry the
  // directory up front
  std::ostringstream blob(std::ios::binary);
  nlohmann::json dir = nlohmann::json::array();
  write_params(blob, ckpt.params, dir, "p.");
  if (ckpt.has_adam) {
    write_params(blob, ckpt.adam_m, dir, "m.");
    write_params(blob, ckpt.adam_v, dir, "v.");
  }

  nlohmann::json header = {
      {"dims", ckpt.dims},        {"step", ckpt.step},
      {"epoch", ckpt.epoch},      {"has_adam", ckpt.has_adam},
      {"adam_t", ckpt.adam_t},    {"config", ckpt.config},
      {"tensors", std::move(dir)},
  };
  const std::string htext = header.dump();

  os.write(kMagic, sizeof(kMagic));
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(htext.size()));
  os.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  const std::string data = blob.str();
  os.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!os) throw PipelineError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open " + path);

  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("checkpoint: bad magic in " + path);
  if (get_u32(is) != kVersion) throw DataError("checkpoint: unsupported version");
  const std::uint32_t hlen = get_u32(is);
  std::string htext(hlen, '\0');
  is.read(htext.data(), hlen);
  if (!is) throw DataError("checkpoint: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(htext);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad header: ") + e.what());
  }

  Checkpoint ckpt;
  ckpt.dims = header.at("dims").get<ModelDims>();
  ckpt.dims.check();
  ckpt.step = header.at("step").get<long>();
  ckpt.epoch = header.at("epoch").get<int>();
  ckpt.has_adam = header.at("has_adam").get<bool>();
  ckpt.adam_t = header.value("adam_t", 0L);
  ckpt.config = header.value("config", nlohmann::json());

  ckpt.params.init(ckpt.dims, 0);
  const nlohmann::json& dir = header.at("tensors");
  std::size_t cursor = 0;
  read_params(is, ckpt.params, dir, cursor, "p.");
  if (ckpt.has_adam) {
    ckpt.adam_m.init(ckpt.dims, 0);
    ckpt.adam_v.init(ckpt.dims, 0);
    read_params(is, ckpt.adam_m, dir, cursor, "m.");
    read_params(is, ckpt.adam_v, dir, cursor, "v.");
  }
  if (cursor != dir.size()) throw DataError("checkpoint: unread tensors in directory");
  return ckpt;
}

}  // namespace pianotree
