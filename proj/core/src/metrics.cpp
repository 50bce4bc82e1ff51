#include "xmodseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xmodseg/error.hpp"

namespace xmodseg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_size(std::size_t n, const Dims& dims, const char* what) {
  if (static_cast<std::int64_t>(n) != dims.voxel_count()) {
    throw ShapeError(std::string(what) + " has " + std::to_string(n) + " voxels, dims give " +
                     std::to_string(dims.voxel_count()));
  }
}

// Squared distance lower envelope along one line (Felzenszwalb & Huttenlocher),
// sample positions i * step.
void edt_line(std::vector<double>& f, double step, std::vector<double>& out, std::vector<int>& v,
              std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  int k = -1;
  const double s2 = step * step;
  for (int q = 0; q < n; ++q) {
    if (std::isinf(f[static_cast<std::size_t>(q)])) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s = 0;
    while (true) {
      const int p = v[static_cast<std::size_t>(k)];
      s = ((f[static_cast<std::size_t>(q)] + s2 * q * q) - (f[static_cast<std::size_t>(p)] + s2 * p * p)) /
          (2.0 * s2 * (q - p));
      if (s <= z[static_cast<std::size_t>(k)]) {
        --k;
        if (k < 0) break;
      } else {
        break;
      }
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = k == 0 ? -kInf : s;
    z[static_cast<std::size_t>(k) + 1] = kInf;
  }
  if (k < 0) {
    std::fill(out.begin(), out.end(), kInf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(j) + 1] < q) ++j;
    const int p = v[static_cast<std::size_t>(j)];
    const double d = step * (q - p);
    out[static_cast<std::size_t>(q)] = d * d + f[static_cast<std::size_t>(p)];
  }
}

}  // namespace

double dice_score(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  if (pred.size() != truth.size()) throw ShapeError("dice_score: mask sizes differ");
  std::int64_t inter = 0, p = 0, g = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] != 0, b = truth[i] != 0;
    inter += a && b;
    p += a;
    g += b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

std::vector<std::uint8_t> surface_voxels(std::span<const std::uint8_t> mask, const Dims& dims) {
  check_size(mask.size(), dims, "mask");
  std::vector<std::uint8_t> out(mask.size(), 0);
  const std::int64_t D = dims.depth, H = dims.height, W = dims.width;
  auto on = [&](std::int64_t d, std::int64_t h, std::int64_t w) {
    if (d < 0 || h < 0 || w < 0 || d >= D || h >= H || w >= W) return false;
    return mask[static_cast<std::size_t>((d * H + h) * W + w)] != 0;
  };
  for (std::int64_t d = 0; d < D; ++d) {
    for (std::int64_t h = 0; h < H; ++h) {
      for (std::int64_t w = 0; w < W; ++w) {
        if (!on(d, h, w)) continue;
        const bool interior = on(d - 1, h, w) && on(d + 1, h, w) && on(d, h - 1, w) &&
                              on(d, h + 1, w) && on(d, h, w - 1) && on(d, h, w + 1);
        if (!interior) out[static_cast<std::size_t>((d * H + h) * W + w)] = 1;
      }
    }
  }
  return out;
}

std::vector<double> distance_transform(std::span<const std::uint8_t> features, const Dims& dims,
                                       const std::array<float, 3>& spacing) {
  check_size(features.size(), dims, "feature mask");
  const std::array<std::int64_t, 3> n{dims.depth, dims.height, dims.width};
  const std::array<std::int64_t, 3> stride{dims.height * dims.width, dims.width, 1};
  std::vector<double> g(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) g[i] = features[i] ? 0.0 : kInf;

  const auto longest = static_cast<std::size_t>(std::max({n[0], n[1], n[2]}));
  std::vector<double> f(longest), out(longest), z(longest + 1);
  std::vector<int> v(longest);
  for (int axis = 0; axis < 3; ++axis) {
    const auto len = static_cast<std::size_t>(n[static_cast<std::size_t>(axis)]);
    f.resize(len);
    out.resize(len);
    const auto s = stride[static_cast<std::size_t>(axis)];
    for (std::size_t base = 0; base < g.size(); ++base) {
      // visit each line once, from its first voxel
      const auto coord = (static_cast<std::int64_t>(base) / s) % static_cast<std::int64_t>(len);
      if (coord != 0) continue;
      for (std::size_t i = 0; i < len; ++i) f[i] = g[base + i * static_cast<std::size_t>(s)];
      edt_line(f, spacing[static_cast<std::size_t>(axis)], out, v, z);
      for (std::size_t i = 0; i < len; ++i) g[base + i * static_cast<std::size_t>(s)] = out[i];
    }
  }
  for (auto& x : g) x = std::sqrt(x);
  return g;
}

double assd(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth, const Dims& dims,
            const std::array<float, 3>& spacing) {
  check_size(pred.size(), dims, "prediction");
  check_size(truth.size(), dims, "ground truth");
  const auto sp = surface_voxels(pred, dims);
  const auto st = surface_voxels(truth, dims);
  const auto np = std::count(sp.begin(), sp.end(), 1);
  const auto nt = std::count(st.begin(), st.end(), 1);
  if (np == 0 && nt == 0) return 0.0;
  if (np == 0 || nt == 0) return kInf;
  const auto to_truth = distance_transform(st, dims, spacing);
  const auto to_pred = distance_transform(sp, dims, spacing);
  double total = 0.0;
  for (std::size_t i = 0; i < sp.size(); ++i) {
    if (sp[i]) total += to_truth[i];
    if (st[i]) total += to_pred[i];
  }
  return total / static_cast<double>(np + nt);
}

Mask binarize(std::span<const float> prob, float threshold) {
  Mask m(prob.size());
  for (std::size_t i = 0; i < prob.size(); ++i) m[i] = prob[i] >= threshold ? 1 : 0;
  return m;
}

}  // namespace xmodseg
