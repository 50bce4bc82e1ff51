#include "xmodseg/volume.hpp"

#include <algorithm>
#include <cmath>

#include "xmodseg/error.hpp"

namespace xmodseg {

const char* to_string(Modality m) { return m == Modality::kSource ? "S" : "T"; }

const char* to_string(PresenceLabel p) {
  switch (p) {
    case PresenceLabel::kAbsent:
      return "A";
    case PresenceLabel::kPresent:
      return "P";
    default:
      return "unknown";
  }
}

std::int64_t Dims::operator[](int axis) const {
  switch (axis) {
    case 0:
      return depth;
    case 1:
      return height;
    case 2:
      return width;
    default:
      throw ValidationError("axis", "must be 0, 1 or 2, got " + std::to_string(axis));
  }
}

bool Volume::has_tumor() const {
  return mask && std::any_of(mask->begin(), mask->end(), [](std::uint8_t m) { return m != 0; });
}

void Volume::validate() const {
  if (dims.depth <= 0 || dims.height <= 0 || dims.width <= 0) {
    throw ShapeError("volume '" + id + "' has non-positive dims");
  }
  const auto n = static_cast<std::size_t>(dims.voxel_count());
  if (data.size() != n) {
    throw ShapeError("volume '" + id + "' data size " + std::to_string(data.size()) +
                     " != " + std::to_string(n));
  }
  if (mask) {
    if (mask->size() != n) {
      throw ShapeError("volume '" + id + "' mask size " + std::to_string(mask->size()) +
                       " != " + std::to_string(n));
    }
    for (auto m : *mask) {
      if (m > 1) throw ShapeError("volume '" + id + "' mask holds a non-binary value");
    }
  }
}

PresenceLabel presence_from_mask(std::span<const std::uint8_t> mask) {
  return std::any_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })
             ? PresenceLabel::kPresent
             : PresenceLabel::kAbsent;
}

Volume normalize_volume(const Volume& v, float tissue_epsilon) {
  v.validate();
  for (float x : v.data) {
    if (!std::isfinite(x)) throw ValidationError("data", "volume '" + v.id + "' is not finite");
  }
  const float background = *std::min_element(v.data.begin(), v.data.end());
  double sum = 0.0;
  std::size_t count = 0;
  for (float x : v.data) {
    if (x > background + tissue_epsilon) {
      sum += x;
      ++count;
    }
  }
  if (count == 0) throw Error("empty tissue region in volume '" + v.id + "'");
  const double mean = sum / static_cast<double>(count);
  double sq = 0.0;
  for (float x : v.data) {
    if (x > background + tissue_epsilon) sq += (x - mean) * (x - mean);
  }
  const double stddev = std::sqrt(sq / static_cast<double>(count));

  Volume out = v;
  if (stddev == 0.0) {
    std::fill(out.data.begin(), out.data.end(), 0.0f);
    return out;
  }
  const double scale = 1.0 / (5.0 * stddev);
  for (auto& x : out.data) {
    x = static_cast<float>(std::clamp((x - mean) * scale, -1.0, 1.0));
  }
  return out;
}

namespace {

Volume width_range(const Volume& v, std::int64_t begin, std::int64_t end, const char* suffix) {
  Volume half;
  half.id = v.id + suffix;
  half.dims = {v.dims.depth, v.dims.height, end - begin};
  half.spacing = v.spacing;
  half.modality = v.modality;
  half.data.reserve(static_cast<std::size_t>(half.dims.voxel_count()));
  if (v.mask) half.mask.emplace().reserve(half.data.capacity());
  for (std::int64_t d = 0; d < v.dims.depth; ++d) {
    for (std::int64_t h = 0; h < v.dims.height; ++h) {
      for (std::int64_t w = begin; w < end; ++w) {
        half.data.push_back(v.at(d, h, w));
        if (v.mask) half.mask->push_back((*v.mask)[v.index(d, h, w)]);
      }
    }
  }
  half.presence = half.mask ? presence_from_mask(*half.mask) : PresenceLabel::kUnknown;
  return half;
}

}  // namespace

std::pair<Volume, Volume> split_hemispheres(const Volume& v) {
  v.validate();
  const std::int64_t w = v.dims.width;
  const std::int64_t left_end = (w + 1) / 2;
  const std::int64_t right_begin = w / 2;
  return {width_range(v, 0, left_end, "_L"), width_range(v, right_begin, w, "_R")};
}

std::vector<float> join_hemispheres(std::span<const float> left, std::span<const float> right,
                                    const Dims& full) {
  if (full.width % 2 != 0) throw ShapeError("join_hemispheres requires an even width");
  const std::int64_t half = full.width / 2;
  const auto n_half = static_cast<std::size_t>(full.depth * full.height * half);
  if (left.size() != n_half || right.size() != n_half) {
    throw ShapeError("hemisphere sizes do not match the full volume");
  }
  std::vector<float> out(static_cast<std::size_t>(full.voxel_count()));
  for (std::int64_t row = 0; row < full.depth * full.height; ++row) {
    std::copy_n(left.begin() + row * half, half, out.begin() + row * full.width);
    std::copy_n(right.begin() + row * half, half, out.begin() + row * full.width + half);
  }
  return out;
}

SliceStack slice_volume(const Volume& v, int axis) {
  if (axis < 0 || axis > 2) {
    throw ValidationError("axis", "must be 0, 1 or 2, got " + std::to_string(axis));
  }
  if (v.data.empty() || v.dims.voxel_count() == 0) throw ShapeError("cannot slice an empty volume");
  v.validate();

  SliceStack stack;
  stack.source_volume_id = v.id;
  stack.axis = axis;
  stack.source_dims = v.dims;
  stack.spacing = v.spacing;
  stack.modality = v.modality;
  stack.presence = v.presence;

  // In-plane axes keep their relative order.
  const int a = axis == 0 ? 1 : 0;
  const int b = axis == 2 ? 1 : 2;
  const std::int64_t n = v.dims[axis];
  stack.slices.resize(static_cast<std::size_t>(n));
  for (std::int64_t s = 0; s < n; ++s) {
    Slice2D& slice = stack.slices[static_cast<std::size_t>(s)];
    slice.height = v.dims[a];
    slice.width = v.dims[b];
    slice.data.resize(static_cast<std::size_t>(slice.height * slice.width));
    if (v.mask) slice.mask.emplace(slice.data.size());
    for (std::int64_t i = 0; i < slice.height; ++i) {
      for (std::int64_t j = 0; j < slice.width; ++j) {
        std::array<std::int64_t, 3> idx{};
        idx[axis] = s;
        idx[a] = i;
        idx[b] = j;
        const auto src = v.index(idx[0], idx[1], idx[2]);
        const auto dst = static_cast<std::size_t>(i * slice.width + j);
        slice.data[dst] = v.data[src];
        if (v.mask) (*slice.mask)[dst] = (*v.mask)[src];
      }
    }
  }
  return stack;
}

Volume reassemble_volume(const SliceStack& s) {
  if (s.axis < 0 || s.axis > 2) throw ValidationError("axis", "must be 0, 1 or 2");
  if (s.slices.empty()) throw ShapeError("cannot reassemble an empty slice stack");
  const int axis = s.axis;
  const int a = axis == 0 ? 1 : 0;
  const int b = axis == 2 ? 1 : 2;
  if (static_cast<std::int64_t>(s.slices.size()) != s.source_dims[axis]) {
    throw ShapeError("slice count does not match the source extent");
  }
  const bool with_mask = s.slices.front().mask.has_value();

  Volume v;
  v.id = s.source_volume_id;
  v.dims = s.source_dims;
  v.spacing = s.spacing;
  v.modality = s.modality;
  v.presence = s.presence;
  v.data.resize(static_cast<std::size_t>(v.dims.voxel_count()));
  if (with_mask) v.mask.emplace(v.data.size());
  for (std::size_t si = 0; si < s.slices.size(); ++si) {
    const Slice2D& slice = s.slices[si];
    if (slice.height != v.dims[a] || slice.width != v.dims[b] ||
        slice.data.size() != static_cast<std::size_t>(slice.height * slice.width)) {
      throw ShapeError("slice " + std::to_string(si) + " has inconsistent extents");
    }
    if (slice.mask.has_value() != with_mask) {
      throw ShapeError("slice " + std::to_string(si) + " disagrees on mask presence");
    }
    for (std::int64_t i = 0; i < slice.height; ++i) {
      for (std::int64_t j = 0; j < slice.width; ++j) {
        std::array<std::int64_t, 3> idx{};
        idx[axis] = static_cast<std::int64_t>(si);
        idx[a] = i;
        idx[b] = j;
        const auto dst = v.index(idx[0], idx[1], idx[2]);
        const auto src = static_cast<std::size_t>(i * slice.width + j);
        v.data[dst] = slice.data[src];
        if (with_mask) (*v.mask)[dst] = (*slice.mask)[src];
      }
    }
  }
  return v;
}

}  // namespace xmodseg
