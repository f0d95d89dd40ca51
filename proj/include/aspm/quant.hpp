#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "aspm/nn.hpp"

namespace aspm {

// "ASPM" model container: little-endian, versioned, one tensor section per
// parametric layer (weight then bias). int8 models additionally carry
// per-tensor weight scales/zero-points and per-layer activation
// quantization parameters.

inline constexpr std::array<char, 4> kModelMagic{'A', 'S', 'P', 'M'};
inline constexpr std::uint16_t kModelVersion = 1;

enum class StoredKind : std::uint8_t { float32 = 0, int8 = 1 };

class ModelFileError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, bad_version, corrupt };

  ModelFileError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct QuantParams {
  float scale = 1.0f;
  std::int8_t zero_point = 0;
};

struct QuantizedModel {
  ModelSpec spec;
  // Parallel to spec.layers; entries are empty for non-parametric layers.
  std::vector<std::vector<std::int8_t>> weights;
  std::vector<QuantParams> weight_params;
  std::vector<std::vector<float>> biases;
  // Input quantization of each parametric layer, in layer order.
  std::vector<QuantParams> activations;
};

struct LoadedModel {
  StoredKind kind = StoredKind::float32;
  ModelSpec spec;
  ModelParams params;    // valid when kind == float32 (f32 widened to f64)
  QuantizedModel quant;  // valid when kind == int8
};

void export_float(const ModelSpec& spec, const ModelParams& params,
                  const std::filesystem::path& path);
void export_quantized(const QuantizedModel& model, const std::filesystem::path& path);
LoadedModel load_model(const std::filesystem::path& path);

// Header + tensor inventory as text.
std::string describe_model(const std::filesystem::path& path);

// Post-training per-tensor affine int8 quantization. Weight ranges come from
// the tensors themselves, activation ranges from a calibration forward pass;
// all ranges are extended to include zero so that real 0 is exactly
// representable.
QuantizedModel quantize(const ModelSpec& spec, const ModelParams& params,
                        const Tensor& calibration);

// f32 single-period inference engine (weights and arithmetic in float).
// Holds scratch buffers: one instance per thread.
class FloatEngine {
 public:
  FloatEngine(const ModelSpec& spec, const ModelParams& params);

  std::array<double, 2> proba(std::span<const double> period);

 private:
  struct Layer {
    LayerSpec spec;
    std::vector<float> w;  // conv: [oc][k][ic]; dense: [o][i]
    std::vector<float> b;
    std::size_t in_len = 0, in_ch = 0, out_len = 0, out_ch = 0;
  };
  std::vector<Layer> layers_;
  std::size_t input_length_;
  std::vector<float> buf_a_, buf_b_;
};

// int8 engine: i16 weight/activation operands, i32 accumulators, one fixed
// rescale per layer. Deterministic integer arithmetic end to end.
class QuantEngine {
 public:
  explicit QuantEngine(const QuantizedModel& model);

  std::array<double, 2> proba(std::span<const double> period);

 private:
  struct Layer {
    LayerSpec spec;
    std::vector<std::int16_t> w16;  // centered weights, conv: [oc][k][ic]; dense: [o][i]
    std::vector<std::int32_t> bias_q;
    double multiplier = 1.0;   // s_w * s_x / s_out
    double dequant = 1.0;      // s_w * s_x (final layer)
    std::int32_t out_zp = 0;
    std::size_t in_len = 0, in_ch = 0, out_len = 0, out_ch = 0;
  };
  std::vector<Layer> layers_;
  std::size_t input_length_;
  QuantParams input_q_;
  std::vector<std::int16_t> ibuf_a_, ibuf_b_;
};

struct BenchResult {
  std::size_t periods = 0;
  double total_ms = 0.0;
  double mean_ms_per_period = 0.0;
};

// Sequential single-period inference timing; warm-up iterations excluded,
// median-of-`runs` totals reported.
BenchResult bench_inference(const std::function<void(std::span<const double>)>& infer,
                            const Tensor& periods, int warmup = 10, int runs = 3);

}  // namespace aspm
