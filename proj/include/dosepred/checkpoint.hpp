#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "dosepred/adam.hpp"
#include "dosepred/unet.hpp"

namespace dosepred {

// Checkpoint layout: one line of JSON, then binary32 little-endian payload
//   parameters (declared order) | batch-norm buffers | [adam m | adam v]
// The header carries "net" (NetConfig), "epoch", "seeds", the tensor
// directory and any caller-supplied keys.

struct Checkpoint {
  nlohmann::json header;
  NetConfig net;
  int epoch = 0;
  std::vector<float> params;
  std::vector<float> buffers;
  bool has_adam = false;
  std::int64_t adam_t = 0;
  std::vector<float> adam_m;
  std::vector<float> adam_v;
};

/// Writes atomically (temporary file + rename). `extra` keys are copied into
/// the header.
template <typename T>
void save_checkpoint(const std::filesystem::path& file, UNet3D<T>& net, int epoch,
                     const AdamState<T>* adam,
                     const nlohmann::ordered_json& extra = nlohmann::ordered_json::object());

Checkpoint load_checkpoint(const std::filesystem::path& file);

/// Copies parameters and buffers into `net`; the config must match.
template <typename T>
void restore_model(const Checkpoint& ckpt, UNet3D<T>& net);

/// Rebuilds optimizer state shaped like `net`'s parameters.
template <typename T>
AdamState<T> restore_adam(const Checkpoint& ckpt, UNet3D<T>& net);

}  // namespace dosepred
