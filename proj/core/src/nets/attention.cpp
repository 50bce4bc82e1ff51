#include "xmodseg/nets/attention.hpp"

#include "xmodseg/error.hpp"
#include "xmodseg/nets/layers.hpp"

namespace xmodseg::nets {

namespace {

std::vector<SelfAttentionImpl*> attention_layers(torch::nn::Module& model) {
  std::vector<SelfAttentionImpl*> out;
  for (const auto& m : model.modules(/*include_self=*/true)) {
    if (auto* a = dynamic_cast<SelfAttentionImpl*>(m.get())) out.push_back(a);
  }
  return out;
}

struct CaptureScope {
  explicit CaptureScope(std::vector<SelfAttentionImpl*> layers) : layers_(std::move(layers)) {
    for (auto* l : layers_) l->set_capture(true);
  }
  ~CaptureScope() {
    for (auto* l : layers_) l->set_capture(false);
  }
  CaptureScope(const CaptureScope&) = delete;
  CaptureScope& operator=(const CaptureScope&) = delete;

  std::vector<SelfAttentionImpl*> layers_;
};

}  // namespace

AttentionRecord capture_attention(torch::nn::Module& model, const std::function<void()>& forward) {
  auto layers = attention_layers(model);
  if (layers.empty()) throw ValidationError("model", "contains no attention layers");
  AttentionRecord rec;
  {
    CaptureScope scope(layers);
    torch::NoGradGuard no_grad;
    forward();
    for (auto* l : scope.layers_) {
      if (l->last_attention().defined()) rec.layers.push_back(l->last_attention());
    }
  }
  if (rec.layers.empty()) throw ValidationError("model", "forward pass reached no attention layer");
  return rec;
}

std::vector<std::vector<double>> head_confidence(const AttentionRecord& rec) {
  std::vector<std::vector<double>> out;
  for (const auto& w : rec.layers) {
    if (w.dim() != 4) throw ShapeError("attention weights must be (batch, heads, queries, keys)");
    // max over keys, then mean over batch and queries
    auto conf = std::get<0>(w.to(torch::kFloat64).max(3)).mean({0, 2});
    std::vector<double> heads(static_cast<std::size_t>(conf.size(0)));
    for (std::int64_t h = 0; h < conf.size(0); ++h) heads[static_cast<std::size_t>(h)] = conf[h].item<double>();
    out.push_back(std::move(heads));
  }
  return out;
}

double max_row_sum_error(const AttentionRecord& rec) {
  double worst = 0.0;
  for (const auto& w : rec.layers) {
    auto err = (w.to(torch::kFloat64).sum(3) - 1.0).abs().max().item<double>();
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace xmodseg::nets
