#include <benchmark/benchmark.h>

#include <random>

#include "xmodseg/losses.hpp"
#include "xmodseg/metrics.hpp"
#include "xmodseg/nets/segmentation_net.hpp"
#include "xmodseg/nets/translation_net.hpp"

using namespace xmodseg;

namespace {

Mask sphere_mask(const Dims& dims, double cd, double ch, double cw, double r) {
  Mask m(static_cast<std::size_t>(dims.voxel_count()), 0);
  std::size_t i = 0;
  for (std::int64_t d = 0; d < dims.depth; ++d)
    for (std::int64_t h = 0; h < dims.height; ++h)
      for (std::int64_t w = 0; w < dims.width; ++w, ++i) {
        const double x = d - cd, y = h - ch, z = w - cw;
        m[i] = x * x + y * y + z * z <= r * r;
      }
  return m;
}

void BM_SoftDiceForwardBackward(benchmark::State& state) {
  torch::set_num_threads(1);
  const auto n = state.range(0);
  auto g = (torch::rand({n}) > 0.9).to(torch::kFloat32);
  auto p = torch::rand({n}).set_requires_grad(true);
  for (auto _ : state) {
    auto loss = soft_dice_loss(p, g);
    loss.backward();
    p.mutable_grad().zero_();
    benchmark::DoNotOptimize(loss);
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_SoftDiceForwardBackward)->Arg(16 * 32 * 16)->Arg(64 * 64 * 64);

void BM_HingeDiscriminator(benchmark::State& state) {
  auto r = torch::randn({state.range(0)});
  auto f = torch::randn({state.range(0)});
  for (auto _ : state) benchmark::DoNotOptimize(hinge_discriminator_loss(r, f));
}
BENCHMARK(BM_HingeDiscriminator)->Arg(1 << 12)->Arg(1 << 16);

void BM_DistanceTransform(benchmark::State& state) {
  const auto s = state.range(0);
  const Dims dims{s / 2, s, s};
  const auto m = sphere_mask(dims, s / 4.0, s / 2.0, s / 2.0, s / 6.0);
  const std::array<float, 3> spacing{1.5f, 1.0f, 1.0f};
  for (auto _ : state) benchmark::DoNotOptimize(distance_transform(m, dims, spacing));
  state.SetItemsProcessed(state.iterations() * dims.voxel_count());
}
BENCHMARK(BM_DistanceTransform)->Arg(32)->Arg(64);

void BM_Assd(benchmark::State& state) {
  const auto s = state.range(0);
  const Dims dims{s / 2, s, s};
  const auto a = sphere_mask(dims, s / 4.0, s / 2.0, s / 2.0, s / 6.0);
  const auto b = sphere_mask(dims, s / 4.0 + 1, s / 2.0 - 1, s / 2.0, s / 5.0);
  const std::array<float, 3> spacing{1.5f, 1.0f, 1.0f};
  for (auto _ : state) benchmark::DoNotOptimize(assd(a, b, dims, spacing));
  state.SetItemsProcessed(state.iterations() * dims.voxel_count());
}
BENCHMARK(BM_Assd)->Arg(32)->Arg(64);

void BM_DiceScore(benchmark::State& state) {
  const Dims dims{32, 64, 64};
  const auto a = sphere_mask(dims, 16, 32, 32, 10);
  const auto b = sphere_mask(dims, 17, 31, 32, 11);
  for (auto _ : state) benchmark::DoNotOptimize(dice_score(a, b));
}
BENCHMARK(BM_DiceScore);

/// Desk-preset sized generator on a batch of 32x32 slices.
void BM_GeneratorForward(benchmark::State& state) {
  torch::set_num_threads(1);
  torch::manual_seed(0);
  nets::GeneratorConfig cfg;
  cfg.base_channels = 8;
  cfg.depth = 3;
  cfg.attention_layers = 1;
  cfg.heads = 4;
  cfg.input_size = 32;
  nets::TranslationGenerator g(cfg);
  g->eval();
  torch::NoGradGuard no_grad;
  auto x = torch::rand({state.range(0), 1, 32, 32}) * 2 - 1;
  for (auto _ : state) benchmark::DoNotOptimize(g->forward(x).translation);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GeneratorForward)->Arg(1)->Arg(15);

/// Desk-preset sized segmentation model on one hemisphere pair.
void BM_SegmentationForward(benchmark::State& state) {
  torch::set_num_threads(1);
  torch::manual_seed(0);
  nets::SegmentationNetConfig cfg;
  cfg.variant = SegmentationVariant::kSemiSupervised;
  cfg.encoder = {{8, 1, 0, 0}, {16, 2, 0, 0}, {32, 0, 1, 2}, {64, 0, 1, 4}};
  cfg.decoder = {{32, 0, 1, 2}, {16, 2, 0, 0}, {8, 2, 0, 0}};
  cfg.input_dims = {16, 32, 16};
  cfg.discriminator.spatial_dims = 3;
  cfg.discriminator.width_scale = 0.25;
  cfg.discriminator.num_scales = 2;
  cfg.discriminator.num_downsamples = 2;
  cfg.discriminator.input_size = {16, 32, 16};
  nets::SegmentationNet m(cfg);
  m->eval();
  torch::NoGradGuard no_grad;
  auto x = torch::rand({2, 1, 16, 32, 16}) * 2 - 1;
  for (auto _ : state) benchmark::DoNotOptimize(m->segment(x));
}
BENCHMARK(BM_SegmentationForward);

}  // namespace
BENCHMARK_MAIN();
