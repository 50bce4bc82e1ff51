#pragma once

#include <functional>
#include <vector>

#include <torch/torch.h>

namespace xmodseg::nets {

/// Attention weights of every self-attention layer reached by one forward
/// pass, in module registration order. Each tensor is (batch, heads,
/// queries, keys).
struct AttentionRecord {
  std::vector<torch::Tensor> layers;
};

/// Enables capture on all self-attention layers inside `model`, runs
/// `forward`, then disables capture again. Throws when the model has no
/// attention layers.
AttentionRecord capture_attention(torch::nn::Module& model, const std::function<void()>& forward);

/// Confidence of each head: mean over queries (and batch) of the maximum
/// attention weight over keys. One vector per layer.
std::vector<std::vector<double>> head_confidence(const AttentionRecord& rec);

/// Largest deviation of any attention row sum from 1.
double max_row_sum_error(const AttentionRecord& rec);

}  // namespace xmodseg::nets
