#include "xmodseg/training.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "xmodseg/error.hpp"

namespace xmodseg {

namespace F = torch::nn::functional;

void OptimizerConfig::validate(const std::string& where) const {
  if (!(lr > 0.0)) throw ValidationError(where + ".lr", "must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ValidationError(where + ".beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ValidationError(where + ".beta2", "must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const OptimizerConfig& c) {
  j = nlohmann::json{{"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}};
}

void from_json(const nlohmann::json& j, OptimizerConfig& c) {
  c = OptimizerConfig{};
  for (const auto& [key, value] : j.items()) {
    if (key == "lr") c.lr = value.get<double>();
    else if (key == "beta1") c.beta1 = value.get<double>();
    else if (key == "beta2") c.beta2 = value.get<double>();
    else throw ValidationError("optimizer." + key, "unknown key");
  }
}

std::unique_ptr<torch::optim::Adam> make_optimizer(const std::vector<torch::Tensor>& params,
                                                   const OptimizerConfig& cfg) {
  auto opts = torch::optim::AdamOptions(cfg.lr).betas({cfg.beta1, cfg.beta2}).amsgrad(true);
  return std::make_unique<torch::optim::Adam>(params, opts);
}

void seed_everything(std::uint64_t seed) {
  torch::set_num_threads(1);
  torch::manual_seed(seed);
}

std::int64_t SampleSet::annotated_count() const {
  return annotated.defined() ? annotated.sum().item<std::int64_t>() : 0;
}

SampleSet make_slice_set(const std::vector<Volume>& volumes) {
  SampleSet s;
  if (volumes.empty()) return s;
  std::vector<torch::Tensor> imgs, masks;
  std::vector<bool> ann;
  for (const auto& v : volumes) {
    v.validate();
    const auto stack = slice_volume(v, 0);
    for (std::size_t i = 0; i < stack.slices.size(); ++i) {
      const auto& sl = stack.slices[i];
      auto img = torch::from_blob(const_cast<float*>(sl.data.data()), {1, 1, sl.height, sl.width},
                                  torch::kFloat32).clone();
      imgs.push_back(img);
      if (sl.mask) {
        auto m = torch::from_blob(const_cast<std::uint8_t*>(sl.mask->data()),
                                  {1, 1, sl.height, sl.width}, torch::kUInt8)
                     .to(torch::kFloat32);
        masks.push_back(m);
        ann.push_back(true);
      } else {
        masks.push_back(torch::zeros({1, 1, sl.height, sl.width}));
        ann.push_back(false);
      }
      s.ids.push_back(v.id + "#" + std::to_string(i));
    }
  }
  s.images = torch::cat(imgs, 0);
  s.masks = torch::cat(masks, 0);
  s.annotated = torch::zeros({static_cast<std::int64_t>(ann.size())}, torch::kBool);
  for (std::size_t i = 0; i < ann.size(); ++i) s.annotated[static_cast<std::int64_t>(i)] = static_cast<bool>(ann[i]);
  return s;
}

SampleSet make_volume_set(const std::vector<Volume>& volumes) {
  SampleSet s;
  if (volumes.empty()) return s;
  const auto dims = volumes.front().dims;
  std::vector<torch::Tensor> imgs, masks;
  s.annotated = torch::zeros({static_cast<std::int64_t>(volumes.size())}, torch::kBool);
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    const auto& v = volumes[i];
    v.validate();
    if (!(v.dims == dims)) throw ShapeError("volume '" + v.id + "' dims differ from the first volume");
    const std::vector<std::int64_t> shape{1, 1, dims.depth, dims.height, dims.width};
    imgs.push_back(torch::from_blob(const_cast<float*>(v.data.data()), shape, torch::kFloat32).clone());
    if (v.mask) {
      masks.push_back(
          torch::from_blob(const_cast<std::uint8_t*>(v.mask->data()), shape, torch::kUInt8).to(torch::kFloat32));
      s.annotated[static_cast<std::int64_t>(i)] = true;
    } else {
      masks.push_back(torch::zeros(shape));
    }
    s.ids.push_back(v.id);
  }
  s.images = torch::cat(imgs, 0);
  s.masks = torch::cat(masks, 0);
  return s;
}

std::vector<std::vector<std::int64_t>> shuffled_batches(std::int64_t n, std::int64_t batch,
                                                        std::mt19937_64& rng, std::int64_t limit) {
  if (batch < 1) throw ValidationError("batch_size", "must be >= 1");
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::shuffle(order.begin(), order.end(), rng);
  if (limit > 0 && limit < n) order.resize(static_cast<std::size_t>(limit));
  std::vector<std::vector<std::int64_t>> out;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch)) {
    const auto end = std::min(order.size(), i + static_cast<std::size_t>(batch));
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::vector<std::int64_t> random_indices(std::int64_t n, std::int64_t batch, std::mt19937_64& rng) {
  if (n < 1) throw ValidationError("dataset", "cannot sample from an empty set");
  std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
  std::vector<std::int64_t> out(static_cast<std::size_t>(batch));
  for (auto& i : out) i = pick(rng);
  return out;
}

torch::Tensor index_rows(const torch::Tensor& t, const std::vector<std::int64_t>& idx) {
  auto index = torch::tensor(idx, torch::kInt64);
  return t.index_select(0, index);
}

void augment_batch(torch::Tensor& images, torch::Tensor& masks, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto n = images.size(0);
  const bool is2d = images.dim() == 4;
  std::vector<torch::Tensor> out_img, out_mask;
  for (std::int64_t i = 0; i < n; ++i) {
    auto x = images[i].unsqueeze(0);
    auto m = masks[i].unsqueeze(0);
    if (unit(rng) < 0.5) {
      x = x.flip({-1});
      m = m.flip({-1});
    }
    if (is2d) {
      const double angle = (unit(rng) * 2.0 - 1.0) * 10.0 * std::numbers::pi / 180.0;
      const double c = std::cos(angle), s = std::sin(angle);
      auto theta = torch::tensor({{c, -s, 0.0}, {s, c, 0.0}}, torch::kFloat32).unsqueeze(0);
      auto grid = F::affine_grid(theta, x.sizes(), false);
      x = F::grid_sample(x, grid,
                         F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kBorder).align_corners(false));
      m = F::grid_sample(m, grid,
                         F::GridSampleFuncOptions().mode(torch::kNearest).padding_mode(torch::kZeros).align_corners(false));
    }
    const double scale = 0.9 + 0.2 * unit(rng);
    const double shift = (unit(rng) * 2.0 - 1.0) * 0.05;
    x = (x * scale + shift).clamp(-1.0, 1.0);
    out_img.push_back(x);
    out_mask.push_back(m);
  }
  images = torch::cat(out_img, 0);
  masks = torch::cat(out_mask, 0);
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header, bool append) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const bool fresh = !append || !std::filesystem::exists(path);
  out_.open(path, fresh ? std::ios::trunc : std::ios::app);
  if (!out_) throw Error("cannot write " + path.string());
  if (fresh) row(header);
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
  out_ << '\n';
  out_.flush();
}

std::string format_number(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

}  // namespace xmodseg
