#pragma once

// Checkpoint container:
//
//   bytes 0..7   magic "TLCKPT\0\1"
//   bytes 8..15  manifest length N, unsigned little-endian
//   next N bytes UTF-8 JSON manifest
//   remainder    float64 little-endian arrays, one per tensor, in manifest order
//
// The manifest carries {"format_version", "kind", "vocab_hash",
// "hyperparameters", "metadata", "tensors": [{"name", "shape", "offset",
// "count"}]} where offset/count are in elements from the start of the data
// section. Save followed by load is bit-exact.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "threatlens/tensor.hpp"

namespace threatlens {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  std::string kind;
  std::string vocab_hash;
  nlohmann::json hyperparameters = nlohmann::json::object();
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const Tensor& tensor(const std::string& name) const;
  // FNV-1a digest over tensor names, shapes and raw bytes.
  std::string content_hash() const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Reads only the manifest (cheap kind / hash inspection).
nlohmann::json read_checkpoint_manifest(const std::filesystem::path& path);

}  // namespace threatlens
