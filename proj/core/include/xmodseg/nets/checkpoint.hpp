#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace xmodseg::nets {

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointManifest {
  /// "translation" or "segmentation".
  std::string family;
  nlohmann::json config;
  int format_version = kCheckpointFormatVersion;
  /// Free-form training metadata (epoch, validation score, lineage).
  nlohmann::json extra = nlohmann::json::object();
};

/// Archive layout (little-endian):
///   "XMCK" | u32 version | u32 manifest bytes | manifest JSON
///   | u32 tensor count | per tensor: u32 name bytes, name, u32 ndim,
///     i64 dims[ndim], f32 values (C order)
struct Checkpoint {
  CheckpointManifest manifest;
  std::map<std::string, torch::Tensor> tensors;
};

/// Parameters and buffers of `module` under their qualified names.
std::map<std::string, torch::Tensor> named_state(const torch::nn::Module& module);

std::string encode_checkpoint(const CheckpointManifest& manifest, const torch::nn::Module& module);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const CheckpointManifest& manifest,
                     const torch::nn::Module& module);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies tensors into `module`. Throws FormatError when the family differs
/// or a name is missing, unexpected or has the wrong shape.
void load_state(torch::nn::Module& module, const Checkpoint& ckpt, const std::string& family);

}  // namespace xmodseg::nets
