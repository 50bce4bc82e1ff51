#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "xmodseg/volume.hpp"

namespace xmodseg {

/// Adam with the max-of-second-moment correction (AMSGrad).
struct OptimizerConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;

  void validate(const std::string& where) const;
};

void to_json(nlohmann::json& j, const OptimizerConfig& c);
void from_json(const nlohmann::json& j, OptimizerConfig& c);

std::unique_ptr<torch::optim::Adam> make_optimizer(const std::vector<torch::Tensor>& params,
                                                   const OptimizerConfig& cfg);

/// Seeds torch and pins intra-op threads to one so runs repeat exactly.
void seed_everything(std::uint64_t seed);

/// Images (N, 1, ...) with optional masks and a per-sample annotated flag.
struct SampleSet {
  torch::Tensor images;
  /// Float {0, 1}; zeros where not annotated.
  torch::Tensor masks;
  /// Bool (N).
  torch::Tensor annotated;
  std::vector<std::string> ids;

  std::int64_t size() const { return images.defined() ? images.size(0) : 0; }
  std::int64_t annotated_count() const;
};

/// Axial (depth-axis) slices of every volume, shape (N, 1, H, W).
SampleSet make_slice_set(const std::vector<Volume>& volumes);
/// Whole volumes as samples, shape (N, 1, D, H, W). All must share dims.
SampleSet make_volume_set(const std::vector<Volume>& volumes);

/// Random permutation of [0, n) in batches of `batch`, last partial batch
/// kept. With `limit` > 0 only the first `limit` indices are used.
std::vector<std::vector<std::int64_t>> shuffled_batches(std::int64_t n, std::int64_t batch,
                                                        std::mt19937_64& rng, std::int64_t limit = 0);
/// `batch` indices drawn uniformly with replacement.
std::vector<std::int64_t> random_indices(std::int64_t n, std::int64_t batch, std::mt19937_64& rng);

torch::Tensor index_rows(const torch::Tensor& t, const std::vector<std::int64_t>& idx);

/// Random flips, small rotations (2D only) and intensity jitter applied per
/// sample. Masks follow the geometric part with nearest sampling.
void augment_batch(torch::Tensor& images, torch::Tensor& masks, std::mt19937_64& rng);

/// Minimal CSV writer that flushes every row.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header, bool append = false);
  void row(const std::vector<std::string>& cells);

 private:
  std::ofstream out_;
};

std::string format_number(double v);

}  // namespace xmodseg
