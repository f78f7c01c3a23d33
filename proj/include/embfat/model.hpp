#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "embfat/data.hpp"
#include "embfat/tensor.hpp"

namespace embfat {

struct ModelDims {
  std::size_t vocab = 0;
  std::size_t embed_dim = 16;
  std::size_t hidden = 32;
  std::size_t classes = 2;
  std::size_t max_len = 32;
};

// Embedding lookup -> additive perturbation -> masked mean pool -> relu MLP.
struct ModelParams {
  ModelDims dims;
  Tensor embedding;  // V×d
  Tensor w1;         // d×h
  Tensor b1;         // h
  Tensor w2;         // h×C
  Tensor b2;         // C
};

// Glorot-uniform weights, zero biases, embedding from a pretrained table or
// uniform [-0.1, 0.1] with the PAD row zeroed. Deterministic per seed.
ModelParams init_params(const ModelDims& dims, std::uint64_t seed,
                        const EmbeddingTable* pretrained = nullptr);

enum class GradTarget { kParams, kDelta, kBoth };

struct ParamGrads {
  Tensor embedding, w1, b1, w2, b2;
};

struct LossGrads {
  double loss = 0.0;
  std::optional<ParamGrads> params;
  std::optional<Tensor> delta;  // B×max_len×d, zero at masked positions
};

// delta, when given, has shape {B, max_len, d} and is ignored (must be zero)
// at masked positions.
Tensor forward(const ModelParams& params, const Batch& batch,
               const Tensor* delta = nullptr);

// Mean cross-entropy over the batch plus gradients for the requested leaves.
// Increments the module back-prop counter by exactly one per call.
LossGrads loss_and_grads(const ModelParams& params, const Batch& batch,
                         const Tensor* delta, GradTarget wrt);

struct Prediction {
  std::size_t label;
  Tensor probs;
};

// Argmax of softmax(logits), ties to the smaller class index.
Prediction predict(const ModelParams& params, const std::vector<TokenId>& ids);

std::uint64_t backprop_count();
void reset_backprop_count();

struct CheckpointMeta {
  std::uint64_t epochs_run = 0;
  std::uint32_t trainer_kind = 0;
  std::uint64_t seed = 0;
};

struct Checkpoint {
  ModelParams params;
  CheckpointMeta meta;
};

// Binary format: "EFAT" magic, u32 version 1, dims as five u64, the five
// parameter tensors as raw little-endian doubles, then the metadata fields.
void save_checkpoint(const ModelParams& params, const CheckpointMeta& meta,
                     const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace embfat
