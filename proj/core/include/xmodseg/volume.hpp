#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace xmodseg {

enum class Modality : std::uint8_t { kSource = 0, kTarget = 1 };

/// Image-level tumor label: presence (P), absence (A) or unknown.
enum class PresenceLabel : std::uint8_t { kAbsent = 0, kPresent = 1, kUnknown = 2 };

const char* to_string(Modality m);
const char* to_string(PresenceLabel p);

/// Extents of a 3D grid in (depth, height, width) order.
struct Dims {
  std::int64_t depth = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;

  std::int64_t operator[](int axis) const;
  std::int64_t voxel_count() const { return depth * height * width; }
  bool operator==(const Dims&) const = default;
};

using Mask = std::vector<std::uint8_t>;

/// A scalar 3D image stored in C order (depth slowest, width fastest).
struct Volume {
  std::string id;
  Dims dims;
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
  Modality modality = Modality::kSource;
  std::vector<float> data;
  std::optional<Mask> mask;
  PresenceLabel presence = PresenceLabel::kUnknown;

  std::size_t index(std::int64_t d, std::int64_t h, std::int64_t w) const {
    return static_cast<std::size_t>((d * dims.height + h) * dims.width + w);
  }
  float at(std::int64_t d, std::int64_t h, std::int64_t w) const { return data[index(d, h, w)]; }

  bool has_tumor() const;

  /// Throws ShapeError when data/mask sizes disagree with dims or the mask
  /// holds values other than 0 and 1.
  void validate() const;

  bool operator==(const Volume&) const = default;
};

/// Presence label implied by a mask: P iff any voxel is set.
PresenceLabel presence_from_mask(std::span<const std::uint8_t> mask);

/// Mean-centers the volume on its tissue statistics, divides by five standard
/// deviations and clips to [-1, 1]. Tissue is every voxel strictly above the
/// background value (the volume minimum) plus `tissue_epsilon`.
Volume normalize_volume(const Volume& v, float tissue_epsilon = 1e-6f);

/// Splits along the width axis into (left, right) halves. An odd width puts
/// the central plane in both halves. Each half's presence label comes from
/// its own mask region, or is unknown when no mask is attached.
std::pair<Volume, Volume> split_hemispheres(const Volume& v);

/// Inverse of split_hemispheres for even widths (used to stitch predictions).
std::vector<float> join_hemispheres(std::span<const float> left, std::span<const float> right,
                                    const Dims& full);

struct Slice2D {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<float> data;
  std::optional<Mask> mask;
  bool operator==(const Slice2D&) const = default;
};

/// Ordered 2D slices of one volume along `axis`, carrying enough header
/// information to rebuild the volume exactly.
struct SliceStack {
  std::vector<Slice2D> slices;
  std::string source_volume_id;
  int axis = 0;
  Dims source_dims;
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
  Modality modality = Modality::kSource;
  PresenceLabel presence = PresenceLabel::kUnknown;
};

SliceStack slice_volume(const Volume& v, int axis);
Volume reassemble_volume(const SliceStack& s);

}  // namespace xmodseg
