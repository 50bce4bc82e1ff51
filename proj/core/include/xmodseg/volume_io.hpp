#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "xmodseg/volume.hpp"

namespace xmodseg {

// MVL1 layout (all multi-byte fields little-endian):
//   0..3   magic "MVL1"
//   4      version (1)
//   5      modality code (0 = S, 1 = T)
//   6      presence code (0 = A, 1 = P, 2 = unknown)
//   7      payload flag (0 = data only, 1 = data + mask, 2 = mask only)
//   8..19  dims as 3 x u32 (D, H, W)
//   20..31 spacing as 3 x f32
//   then   f32 data in C order (absent for flag 2)
//   then   u8 mask in C order (flags 1 and 2)
inline constexpr std::uint8_t kVolumeFormatVersion = 1;

void save_volume(const Volume& v, const std::filesystem::path& path);
/// The returned volume's id is the file stem.
Volume load_volume(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_volume(const Volume& v);
Volume decode_volume(const std::vector<std::uint8_t>& bytes);

/// Mask-only payload (flag 2). `v.data` is ignored; `v.mask` must be set.
void save_mask(const Volume& v, const std::filesystem::path& path);
/// Loads a mask-only file; data is filled with zeros.
Volume load_mask(const std::filesystem::path& path);

/// Every `*.mvl` file in `dir`, sorted by file name.
std::vector<Volume> load_volume_dir(const std::filesystem::path& dir);
void save_volume_dir(const std::vector<Volume>& volumes, const std::filesystem::path& dir);

}  // namespace xmodseg
