#include "xmodseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "xmodseg/error.hpp"

namespace xmodseg {

double PiecewiseLinearMap::operator()(double x) const {
  if (knots.empty()) return x;
  if (x <= knots.front().first) return knots.front().second;
  if (x >= knots.back().first) return knots.back().second;
  for (std::size_t i = 1; i < knots.size(); ++i) {
    const auto& [x1, y1] = knots[i];
    if (x <= x1) {
      const auto& [x0, y0] = knots[i - 1];
      const double t = (x - x0) / (x1 - x0);
      return y0 + t * (y1 - y0);
    }
  }
  return knots.back().second;
}

bool PiecewiseLinearMap::is_monotone() const {
  if (knots.size() < 2) return !knots.empty();
  bool increasing = true;
  bool decreasing = true;
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (!(knots[i].first > knots[i - 1].first)) return false;
    if (knots[i].second < knots[i - 1].second) increasing = false;
    if (knots[i].second > knots[i - 1].second) decreasing = false;
  }
  return increasing || decreasing;
}

void PhantomConfig::validate() const {
  if (volume_count < 1) throw ValidationError("phantom.volume_count", "must be >= 1");
  if (dims.depth < 8 || dims.height < 8 || dims.width < 8) {
    throw ValidationError("phantom.dims", "each extent must be >= 8");
  }
  if (!(tumor_probability >= 0.0 && tumor_probability <= 1.0)) {
    throw ValidationError("phantom.tumor_probability", "must lie in [0, 1]");
  }
  if (!(tumor_radius_min > 0.0)) {
    throw ValidationError("phantom.tumor_radius_min", "must be > 0");
  }
  if (tumor_radius_min > tumor_radius_max) {
    throw ValidationError("phantom.tumor_radius_range", "min must not exceed max");
  }
  if (!transfer_source.is_monotone()) {
    throw ValidationError("phantom.transfer_source", "must be a monotone piecewise-linear map");
  }
  if (!transfer_target.is_monotone()) {
    throw ValidationError("phantom.transfer_target", "must be a monotone piecewise-linear map");
  }
  if (!(noise_sigma >= 0.0)) throw ValidationError("phantom.noise_sigma", "must be >= 0");
}

void to_json(nlohmann::json& j, const PhantomConfig& c) {
  j = nlohmann::json{{"volume_count", c.volume_count},
                     {"dims", {c.dims.depth, c.dims.height, c.dims.width}},
                     {"tumor_probability", c.tumor_probability},
                     {"tumor_radius_range", {c.tumor_radius_min, c.tumor_radius_max}},
                     {"transfer_source", c.transfer_source.knots},
                     {"transfer_target", c.transfer_target.knots},
                     {"noise_sigma", c.noise_sigma},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PhantomConfig& c) {
  c = PhantomConfig{};
  for (const auto& [key, value] : j.items()) {
    if (key == "volume_count") {
      c.volume_count = value.get<int>();
    } else if (key == "dims") {
      const auto d = value.get<std::vector<std::int64_t>>();
      if (d.size() != 3) throw ValidationError("phantom.dims", "expects three extents");
      c.dims = {d[0], d[1], d[2]};
    } else if (key == "tumor_probability") {
      c.tumor_probability = value.get<double>();
    } else if (key == "tumor_radius_range") {
      const auto r = value.get<std::vector<double>>();
      if (r.size() != 2) throw ValidationError("phantom.tumor_radius_range", "expects [min, max]");
      c.tumor_radius_min = r[0];
      c.tumor_radius_max = r[1];
    } else if (key == "transfer_source") {
      c.transfer_source.knots = value.get<std::vector<std::pair<double, double>>>();
    } else if (key == "transfer_target") {
      c.transfer_target.knots = value.get<std::vector<std::pair<double, double>>>();
    } else if (key == "noise_sigma") {
      c.noise_sigma = value.get<double>();
    } else if (key == "seed") {
      c.seed = value.get<std::uint64_t>();
    } else {
      throw ValidationError("phantom." + key, "unknown key");
    }
  }
}

namespace {

struct Blob {
  double d, h, w, sigma;
};

}  // namespace

Volume generate_phantom_volume(const PhantomConfig& cfg, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(index), 0x9e3779b9u};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  const Dims dims = cfg.dims;
  const double cd = (dims.depth - 1) / 2.0 + (unit(rng) - 0.5);
  const double ch = (dims.height - 1) / 2.0 + (unit(rng) - 0.5) * 2.0;
  const double cw = (dims.width - 1) / 2.0 + (unit(rng) - 0.5) * 2.0;
  const double ad = 0.42 * dims.depth * (0.95 + 0.1 * unit(rng));
  const double ah = 0.42 * dims.height * (0.95 + 0.1 * unit(rng));
  const double aw = 0.42 * dims.width * (0.95 + 0.1 * unit(rng));
  auto brain_radius2 = [&](double d, double h, double w) {
    const double x = (d - cd) / ad, y = (h - ch) / ah, z = (w - cw) / aw;
    return x * x + y * y + z * z;
  };

  std::vector<Blob> blobs;
  if (unit(rng) < cfg.tumor_probability) {
    const int count = 1 + static_cast<int>(unit(rng) * 3.0) % 3;
    // Anchor voxel strictly inside the brain so the lesion is never empty.
    // Lesions sit off the midline so most volumes keep one healthy hemisphere.
    double d0 = 0, h0 = 0, w0 = 0;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
      d0 = std::round(cd + (2.0 * unit(rng) - 1.0) * ad * 0.35);
      h0 = std::round(ch + (2.0 * unit(rng) - 1.0) * ah * 0.35);
      w0 = std::round(cw + side * (0.25 + 0.25 * unit(rng)) * aw);
      if (brain_radius2(d0, h0, w0) < 0.3) break;
      d0 = std::round(cd), h0 = std::round(ch), w0 = std::round(cw);
    }
    const double half_max_to_sigma = 1.0 / std::sqrt(2.0 * std::log(2.0));
    for (int b = 0; b < count; ++b) {
      const double radius =
          cfg.tumor_radius_min + unit(rng) * (cfg.tumor_radius_max - cfg.tumor_radius_min);
      Blob blob{d0, h0, w0, radius * half_max_to_sigma};
      if (b > 0) {
        const double spread = cfg.tumor_radius_max;
        blob.d += (2.0 * unit(rng) - 1.0) * spread * 0.5;
        blob.h += (2.0 * unit(rng) - 1.0) * spread;
        blob.w += (2.0 * unit(rng) - 1.0) * spread;
      }
      blobs.push_back(blob);
    }
  }

  Volume v;
  char id[16];
  std::snprintf(id, sizeof id, "vol%04d", index);
  v.id = id;
  v.dims = dims;
  v.modality = index % 2 == 0 ? Modality::kSource : Modality::kTarget;
  const PiecewiseLinearMap& transfer =
      v.modality == Modality::kSource ? cfg.transfer_source : cfg.transfer_target;
  v.data.assign(static_cast<std::size_t>(dims.voxel_count()), 0.0f);
  v.mask.emplace(v.data.size(), 0);

  for (std::int64_t d = 0; d < dims.depth; ++d) {
    for (std::int64_t h = 0; h < dims.height; ++h) {
      for (std::int64_t w = 0; w < dims.width; ++w) {
        const double r2 = brain_radius2(static_cast<double>(d), static_cast<double>(h),
                                        static_cast<double>(w));
        if (r2 >= 1.0) continue;
        double property = 0.40 + 0.20 * (1.0 - r2);
        double field = 0.0;
        for (const Blob& blob : blobs) {
          const double dd = d - blob.d, dh = h - blob.h, dw = w - blob.w;
          field += std::exp(-(dd * dd + dh * dh + dw * dw) / (2.0 * blob.sigma * blob.sigma));
        }
        const auto idx = v.index(d, h, w);
        if (field >= 0.5) {
          (*v.mask)[idx] = 1;
          property = 0.9 + 0.1 * std::min(field, 1.0);
        }
        const double intensity = transfer(property) + cfg.noise_sigma * noise(rng);
        // Tissue never falls onto the zero background.
        v.data[idx] = static_cast<float>(std::max(intensity, 0.01));
      }
    }
  }
  v.presence = presence_from_mask(*v.mask);
  return v;
}

std::vector<Volume> generate_phantom_dataset(const PhantomConfig& cfg) {
  cfg.validate();
  std::vector<Volume> out;
  out.reserve(static_cast<std::size_t>(cfg.volume_count));
  for (int i = 0; i < cfg.volume_count; ++i) out.push_back(generate_phantom_volume(cfg, i));
  return out;
}

}  // namespace xmodseg
