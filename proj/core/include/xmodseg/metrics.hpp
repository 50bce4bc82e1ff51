#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "xmodseg/volume.hpp"

namespace xmodseg {

/// 2|P ∩ G| / (|P| + |G|) on binary masks. Both empty gives 1.
double dice_score(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);

/// Foreground voxels with at least one 6-neighbour outside the mask (the
/// grid border counts as outside).
std::vector<std::uint8_t> surface_voxels(std::span<const std::uint8_t> mask, const Dims& dims);

/// Exact Euclidean distance (in spacing units) from every voxel to the
/// nearest set voxel of `features`. Voxels are +inf when `features` is empty.
std::vector<double> distance_transform(std::span<const std::uint8_t> features, const Dims& dims,
                                       const std::array<float, 3>& spacing);

/// Average symmetric surface distance. Both empty gives 0; exactly one empty
/// gives +inf.
double assd(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth, const Dims& dims,
            const std::array<float, 3>& spacing);

/// Mask = probability >= threshold.
Mask binarize(std::span<const float> prob, float threshold = 0.5f);

}  // namespace xmodseg
