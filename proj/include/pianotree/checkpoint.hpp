#pragma once

#include <string>

#include "json.hpp"

#include "pianotree/model.hpp"

namespace pianotree {

/// Everything needed to resume or evaluate a run: weights, optimizer moments
/// (empty unless saved mid-training), progress counters, and the config the
/// run was launched with. Stored as a small binary: magic, version, a JSON
/// header with the tensor directory, then raw little-endian float32 data, so
/// save/load round trips are bitwise exact.
struct Checkpoint {
  ModelDims dims;
  Params<float> params;
  bool has_adam = false;
  Params<float> adam_m, adam_v;
  long adam_t = 0;
  long step = 0;
  int epoch = 0;
  nlohmann::json config;  // opaque to this module

  void init(const ModelDims& d, std::uint64_t seed);
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pianotree
