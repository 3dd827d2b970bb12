#include "threatlens/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "threatlens/errors.hpp"
#include "threatlens/digest.hpp"

namespace threatlens {

namespace {

constexpr std::array<char, 8> kMagic = {'T', 'L', 'C', 'K', 'P', 'T', '\0', '\1'};

void put_u64(std::string& out, std::uint64_t value) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const char* bytes) {
  std::uint64_t value = 0;
  for (int i = 0; i < 8; ++i) {
    value |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
  }
  return value;
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

nlohmann::json parse_manifest(const std::string& bytes, const std::filesystem::path& path,
                              std::size_t* data_start) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw CheckpointError(path.string() + ": not a checkpoint file");
  }
  const std::uint64_t length = get_u64(bytes.data() + 8);
  if (length > bytes.size() - 16) throw CheckpointError(path.string() + ": truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(16, length));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": bad manifest: " + e.what());
  }
  if (manifest.value("format_version", 0) != kCheckpointFormatVersion) {
    throw CheckpointError(path.string() + ": unsupported format version");
  }
  if (data_start) *data_start = 16 + length;
  return manifest;
}

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& entry : tensors) {
    if (entry.name == name) return entry.tensor;
  }
  throw CheckpointError("checkpoint has no tensor '" + name + "'");
}

std::string Checkpoint::content_hash() const {
  std::uint64_t h = fnv1a64(kind);
  for (const auto& entry : tensors) {
    h = fnv1a64(entry.name, h);
    h = fnv1a64(shape_string(entry.tensor.shape()), h);
    auto values = entry.tensor.values();
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(values.data()),
                                 values.size() * sizeof(double)),
                h);
  }
  return hex64(h);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["kind"] = checkpoint.kind;
  manifest["vocab_hash"] = checkpoint.vocab_hash;
  manifest["hyperparameters"] = checkpoint.hyperparameters;
  manifest["metadata"] = checkpoint.metadata;
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& entry : checkpoint.tensors) {
    entries.push_back({{"name", entry.name},
                       {"shape", entry.tensor.shape()},
                       {"offset", offset},
                       {"count", entry.tensor.size()}});
    offset += entry.tensor.size();
  }
  manifest["tensors"] = std::move(entries);

  const std::string text = manifest.dump();
  std::string bytes(kMagic.begin(), kMagic.end());
  put_u64(bytes, text.size());
  bytes += text;
  bytes.reserve(bytes.size() + offset * 8);
  for (const auto& entry : checkpoint.tensors) {
    for (double v : entry.tensor.values()) put_u64(bytes, std::bit_cast<std::uint64_t>(v));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

nlohmann::json read_checkpoint_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_all(path), path, nullptr);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_all(path);
  std::size_t data_start = 0;
  const nlohmann::json manifest = parse_manifest(bytes, path, &data_start);

  Checkpoint checkpoint;
  try {
    checkpoint.kind = manifest.at("kind").get<std::string>();
    checkpoint.vocab_hash = manifest.at("vocab_hash").get<std::string>();
    checkpoint.hyperparameters = manifest.at("hyperparameters");
    checkpoint.metadata = manifest.at("metadata");
    const std::size_t available = (bytes.size() - data_start) / 8;
    for (const auto& entry : manifest.at("tensors")) {
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto count = entry.at("count").get<std::size_t>();
      if (count != shape_size(shape) || offset + count > available) {
        throw CheckpointError(path.string() + ": tensor '" +
                              entry.at("name").get<std::string>() + "' out of bounds");
      }
      std::vector<double> values(count);
      const char* base = bytes.data() + data_start + offset * 8;
      for (std::size_t i = 0; i < count; ++i) {
        values[i] = std::bit_cast<double>(get_u64(base + i * 8));
      }
      Tensor tensor(shape, std::move(values));
      tensor.set_requires_grad(true);
      checkpoint.tensors.push_back({entry.at("name").get<std::string>(), std::move(tensor)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": malformed manifest: " + e.what());
  }
  return checkpoint;
}

}  // namespace threatlens
