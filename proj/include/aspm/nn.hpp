#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "aspm/signal.hpp"
#include "aspm/tensor.hpp"

namespace aspm {

// Minimal feed-forward engine: dense / conv1d(same) / maxpool / relu /
// dropout / flatten / 2-way softmax output, cross-entropy loss with
// per-sample weights, ADAM, validation-kappa model selection. Double
// precision throughout so gradient checks are tight.

enum class LayerKind : std::uint8_t {
  dense,
  conv1d,
  maxpool1d,
  relu,
  dropout,
  flatten,
  softmax_output,  // dense projection to class logits; softmax lives in the loss
};

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int units = 0;       // dense
  int filters = 0;     // conv1d
  int kernel = 5;      // conv1d, odd (same padding)
  int pool_width = 2;  // maxpool1d
  int pool_stride = 2;
  double rate = 0.5;  // dropout
  int classes = 2;    // softmax_output

  static LayerSpec Dense(int units);
  static LayerSpec Conv1d(int filters, int kernel = 5);
  static LayerSpec MaxPool1d(int width = 2, int stride = 2);
  static LayerSpec Relu();
  static LayerSpec Dropout(double rate = 0.5);
  static LayerSpec Flatten();
  static LayerSpec SoftmaxOutput(int classes = 2);
};

struct ModelSpec {
  std::size_t input_length = kPeriodSeconds;
  std::vector<LayerSpec> layers;
};

// Logical shape of the activation between layers; memory is always one
// contiguous row per batch sample (features = len * ch when not flat).
struct ActShape {
  std::size_t len = 0;
  std::size_t ch = 0;
  bool flat = false;
  std::size_t features() const { return flat ? len : len * ch; }
};

// Per-layer output shapes; throws on an inconsistent chain (e.g. conv after
// flatten, missing softmax_output tail, pooled length reaching zero).
std::vector<ActShape> chain_shapes(const ModelSpec& spec);

struct LayerParams {
  Tensor w;  // dense: [in,out]; conv1d: [kernel,in_ch,out_ch]
  Tensor b;  // [out]
};

struct ModelParams {
  std::vector<LayerParams> layers;  // aligned with spec.layers; empty for non-parametric
};

std::size_t param_count(const ModelSpec& spec);

// Uniform He-style fan-in init, seeded; biases zero.
ModelParams init_params(const ModelSpec& spec, std::uint64_t seed);

// Dropout is active only while training. Masks are a pure function of
// (seed, epoch, sample index, layer, unit), so a sample's mask does not
// depend on batch composition and trajectories are reproducible.
struct DropoutCtx {
  bool active = false;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t base_index = 0;  // index of the batch's first sample in its dataset
};

struct ForwardCache {
  std::vector<Tensor> inputs;                    // input to each layer
  std::vector<std::vector<std::int32_t>> pool_arg;  // argmax per maxpool layer slot
  std::vector<std::vector<double>> drop_mask;       // scale mask per dropout layer slot
};

// Returns class logits [n, classes].
Tensor forward(const ModelSpec& spec, const ModelParams& params, const Tensor& batch,
               const DropoutCtx& dropout = {}, ForwardCache* cache = nullptr);

Tensor softmax(const Tensor& logits);
std::vector<int> argmax_rows(const Tensor& t);

struct LossGrads {
  double loss = 0.0;
  double weight_total = 0.0;
  ModelParams grads;
};

// Weighted mean cross-entropy over the batch (weights empty = all ones) and
// exact gradients. weight_total == 0 means the batch contributes nothing.
LossGrads loss_and_grads(const ModelSpec& spec, const ModelParams& params, const Tensor& batch,
                         const std::vector<int>& labels, const std::vector<double>& weights = {},
                         const DropoutCtx& dropout = {});

struct TrainConfig {
  std::size_t batch_size = 1000;
  double learning_rate = 0.001;
  std::size_t epochs = 500;
  double validation_fraction = 0.30;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
};

struct AdamState {
  std::vector<LayerParams> m, v;
  std::size_t t = 0;
};

AdamState make_adam_state(const ModelParams& params);
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const TrainConfig& cfg);

// Flat dataset view used by the trainer: one row per sample.
struct LabeledData {
  Tensor x;                // [n, features]
  std::vector<int> y;      // 0 = normal, 1 = apneic
  std::vector<double> w;   // per-sample loss weights; empty = all ones

  std::size_t size() const { return y.size(); }
};

LabeledData to_labeled(const PeriodSet& periods, double weight = 1.0);
void append(LabeledData& dst, const LabeledData& src);
LabeledData slice_rows(const LabeledData& d, std::size_t from, std::size_t to);

struct TrainReport {
  std::vector<double> train_loss;  // per epoch (weighted mean CE)
  std::vector<double> val_kappa;   // per epoch
  std::size_t best_epoch = 0;      // index into the vectors above
  ModelParams best_params;
  ModelParams final_params;
};

// Core trainer with an explicit validation set (must contain both classes).
TrainReport train(const ModelSpec& spec, const LabeledData& train_data,
                  const LabeledData& val_data, const TrainConfig& cfg);

// Same, but starting from the given parameters (fresh optimizer state);
// used for sequential fine-tuning from a pretrained snapshot.
TrainReport train_from(const ModelSpec& spec, ModelParams init, const LabeledData& train_data,
                       const LabeledData& val_data, const TrainConfig& cfg);

// Convenience split: the last validation_fraction of the data (in order)
// becomes the validation set.
TrainReport train(const ModelSpec& spec, const LabeledData& data, const TrainConfig& cfg);

// Eval-mode class probabilities for every row of x, batched internally.
Tensor predict_proba(const ModelSpec& spec, const ModelParams& params, const Tensor& x,
                     std::size_t batch_size = 1000);

}  // namespace aspm
