#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "xmodseg/volume.hpp"

namespace xmodseg {

/// Monotone piecewise-linear map from tissue property (0..1) to intensity.
/// Knots are (property, intensity) pairs sorted by property; the map is
/// constant beyond the outer knots.
struct PiecewiseLinearMap {
  std::vector<std::pair<double, double>> knots;

  double operator()(double x) const;
  /// True when knots are sorted by property and intensities are monotone
  /// (either non-decreasing or non-increasing).
  bool is_monotone() const;
};

struct PhantomConfig {
  int volume_count = 200;
  Dims dims{16, 32, 32};
  double tumor_probability = 0.9;
  double tumor_radius_min = 2.0;
  double tumor_radius_max = 4.0;
  /// Source modality: tumor brighter than the surrounding tissue.
  PiecewiseLinearMap transfer_source{{{0.0, 0.2}, {0.4, 0.3}, {0.6, 0.5}, {1.0, 1.0}}};
  /// Target modality: decreasing map, so the tumor turns dark.
  PiecewiseLinearMap transfer_target{{{0.0, 1.0}, {0.4, 0.8}, {0.6, 0.6}, {1.0, 0.2}}};
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;

  /// Throws ValidationError naming the first offending field.
  void validate() const;
};

void to_json(nlohmann::json& j, const PhantomConfig& c);
void from_json(const nlohmann::json& j, PhantomConfig& c);

/// Generates `volume_count` raw (unnormalized) volumes. Even indices are
/// source modality, odd indices target modality; every volume carries its
/// ground-truth mask and derived presence label. Volume i depends only on
/// (seed, i).
std::vector<Volume> generate_phantom_dataset(const PhantomConfig& cfg);

/// Generates the single volume with index `index`.
Volume generate_phantom_volume(const PhantomConfig& cfg, int index);

}  // namespace xmodseg
