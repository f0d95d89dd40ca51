#include "aspm/quant.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace aspm {

namespace {

using Kind = ModelFileError::Kind;

bool is_parametric(LayerKind k) {
  return k == LayerKind::dense || k == LayerKind::conv1d || k == LayerKind::softmax_output;
}

// --- little-endian byte IO ---------------------------------------------------

struct Writer {
  std::string out;

  void u8(std::uint8_t v) { out.push_back(static_cast<char>(v)); }
  void i8(std::int8_t v) { out.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
};

struct Reader {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > size) throw ModelFileError(Kind::corrupt, "model file truncated");
  }
  std::uint8_t u8() {
    need(1);
    return data[pos++];
  }
  std::int8_t i8() { return static_cast<std::int8_t>(u8()); }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(data[pos++]) << (8 * i);
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data[pos++]) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

void write_layer(Writer& w, const LayerSpec& l) {
  w.u8(static_cast<std::uint8_t>(l.kind));
  std::int32_t p0 = 0, p1 = 0;
  float p2 = 0.0f;
  switch (l.kind) {
    case LayerKind::dense: p0 = l.units; break;
    case LayerKind::conv1d: p0 = l.filters; p1 = l.kernel; break;
    case LayerKind::maxpool1d: p0 = l.pool_width; p1 = l.pool_stride; break;
    case LayerKind::dropout: p2 = static_cast<float>(l.rate); break;
    case LayerKind::softmax_output: p0 = l.classes; break;
    default: break;
  }
  w.i32(p0);
  w.i32(p1);
  w.f32(p2);
}

LayerSpec read_layer(Reader& r) {
  const std::uint8_t kind = r.u8();
  if (kind > static_cast<std::uint8_t>(LayerKind::softmax_output))
    throw ModelFileError(Kind::corrupt, "unknown layer kind byte");
  const std::int32_t p0 = r.i32();
  const std::int32_t p1 = r.i32();
  const float p2 = r.f32();
  LayerSpec l;
  l.kind = static_cast<LayerKind>(kind);
  switch (l.kind) {
    case LayerKind::dense: l.units = p0; break;
    case LayerKind::conv1d: l.filters = p0; l.kernel = p1; break;
    case LayerKind::maxpool1d: l.pool_width = p0; l.pool_stride = p1; break;
    case LayerKind::dropout: l.rate = p2; break;
    case LayerKind::softmax_output: l.classes = p0; break;
    default: break;
  }
  return l;
}

void write_shape(Writer& w, const std::vector<std::size_t>& shape) {
  w.u8(static_cast<std::uint8_t>(shape.size()));
  for (std::size_t d : shape) w.u32(static_cast<std::uint32_t>(d));
}

std::vector<std::size_t> read_shape(Reader& r) {
  const std::uint8_t nd = r.u8();
  if (nd > 4) throw ModelFileError(Kind::corrupt, "tensor rank out of range");
  std::vector<std::size_t> shape(nd);
  for (auto& d : shape) d = r.u32();
  return shape;
}

void write_header(Writer& w, StoredKind kind, const ModelSpec& spec) {
  for (char c : kModelMagic) w.out.push_back(c);
  w.u16(kModelVersion);
  w.u8(static_cast<std::uint8_t>(kind));
  w.u8(0);
  w.u32(static_cast<std::uint32_t>(spec.input_length));
  w.u32(static_cast<std::uint32_t>(spec.layers.size()));
  for (const LayerSpec& l : spec.layers) write_layer(w, l);
}

void save_bytes(const std::string& bytes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelFileError(Kind::io, "cannot write model file: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ModelFileError(Kind::io, "write failed: " + path.string());
}

QuantParams affine_range(double lo, double hi) {
  lo = std::min(lo, 0.0);
  hi = std::max(hi, 0.0);
  QuantParams qp;
  qp.scale = static_cast<float>(std::max((hi - lo) / 255.0, 1e-8));
  const double zp = -128.0 - std::round(lo / qp.scale);
  qp.zero_point = static_cast<std::int8_t>(std::clamp(zp, -128.0, 127.0));
  return qp;
}

std::int8_t quantize_value(double x, const QuantParams& qp) {
  const double q = std::round(x / qp.scale) + qp.zero_point;
  return static_cast<std::int8_t>(std::clamp(q, -128.0, 127.0));
}

}  // namespace

void export_float(const ModelSpec& spec, const ModelParams& params,
                  const std::filesystem::path& path) {
  chain_shapes(spec);
  if (params.layers.size() != spec.layers.size())
    throw std::invalid_argument("export_float: params/spec mismatch");

  Writer w;
  write_header(w, StoredKind::float32, spec);

  std::uint32_t n_tensors = 0;
  for (const LayerSpec& l : spec.layers)
    if (is_parametric(l.kind)) n_tensors += 2;
  w.u32(n_tensors);

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (!is_parametric(spec.layers[i].kind)) continue;
    for (const Tensor* t : {&params.layers[i].w, &params.layers[i].b}) {
      w.u8(0);  // f32
      write_shape(w, t->shape);
      for (double v : t->data) w.f32(static_cast<float>(v));
    }
  }
  save_bytes(w.out, path);
}

void export_quantized(const QuantizedModel& model, const std::filesystem::path& path) {
  chain_shapes(model.spec);
  Writer w;
  write_header(w, StoredKind::int8, model.spec);

  std::uint32_t n_tensors = 0;
  for (const LayerSpec& l : model.spec.layers)
    if (is_parametric(l.kind)) n_tensors += 2;
  w.u32(n_tensors);

  const auto shapes = chain_shapes(model.spec);
  ActShape in{model.spec.input_length, 1, false};
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    const LayerSpec& l = model.spec.layers[i];
    if (is_parametric(l.kind)) {
      std::vector<std::size_t> wshape;
      if (l.kind == LayerKind::conv1d)
        wshape = {static_cast<std::size_t>(l.kernel), in.ch, shapes[i].ch};
      else
        wshape = {in.features(), shapes[i].features()};

      w.u8(1);  // i8 weights
      write_shape(w, wshape);
      w.f32(model.weight_params[i].scale);
      w.i8(model.weight_params[i].zero_point);
      for (std::int8_t q : model.weights[i]) w.i8(q);

      w.u8(0);  // f32 bias
      write_shape(w, {model.biases[i].size()});
      for (float v : model.biases[i]) w.f32(v);
    }
    in = shapes[i];
  }

  w.u32(static_cast<std::uint32_t>(model.activations.size()));
  for (const QuantParams& qp : model.activations) {
    w.f32(qp.scale);
    w.i8(qp.zero_point);
  }
  save_bytes(w.out, path);
}

LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelFileError(Kind::io, "cannot open model file: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Reader r{reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()};
  r.need(4);
  for (char c : kModelMagic)
    if (static_cast<char>(r.u8()) != c)
      throw ModelFileError(Kind::bad_magic, "not an ASPM model file: " + path.string());
  const std::uint16_t version = r.u16();
  if (version != kModelVersion)
    throw ModelFileError(Kind::bad_version,
                         "unsupported model format version " + std::to_string(version));
  const std::uint8_t kind_byte = r.u8();
  if (kind_byte > 1) throw ModelFileError(Kind::corrupt, "unknown model kind");
  r.u8();  // reserved

  LoadedModel m;
  m.kind = static_cast<StoredKind>(kind_byte);
  m.spec.input_length = r.u32();
  const std::uint32_t n_layers = r.u32();
  if (n_layers > 1000) throw ModelFileError(Kind::corrupt, "layer count out of range");
  m.spec.layers.reserve(n_layers);
  for (std::uint32_t i = 0; i < n_layers; ++i) m.spec.layers.push_back(read_layer(r));

  std::vector<ActShape> shapes;
  try {
    shapes = chain_shapes(m.spec);
  } catch (const std::invalid_argument& e) {
    throw ModelFileError(Kind::corrupt, std::string("inconsistent layer chain: ") + e.what());
  }

  const std::uint32_t n_tensors = r.u32();
  std::uint32_t expected = 0;
  for (const LayerSpec& l : m.spec.layers)
    if (is_parametric(l.kind)) expected += 2;
  if (n_tensors != expected) throw ModelFileError(Kind::corrupt, "tensor count mismatch");

  if (m.kind == StoredKind::float32) m.params.layers.resize(m.spec.layers.size());
  if (m.kind == StoredKind::int8) {
    m.quant.spec = m.spec;
    m.quant.weights.resize(m.spec.layers.size());
    m.quant.weight_params.resize(m.spec.layers.size());
    m.quant.biases.resize(m.spec.layers.size());
  }

  ActShape in{m.spec.input_length, 1, false};
  for (std::size_t i = 0; i < m.spec.layers.size(); ++i) {
    const LayerSpec& l = m.spec.layers[i];
    if (is_parametric(l.kind)) {
      std::vector<std::size_t> want_w;
      if (l.kind == LayerKind::conv1d)
        want_w = {static_cast<std::size_t>(l.kernel), in.ch, shapes[i].ch};
      else
        want_w = {in.features(), shapes[i].features()};
      const std::vector<std::size_t> want_b = {l.kind == LayerKind::conv1d
                                                   ? shapes[i].ch
                                                   : shapes[i].features()};

      const std::uint8_t wdtype = r.u8();
      const auto wshape = read_shape(r);
      if (wshape != want_w) throw ModelFileError(Kind::corrupt, "weight tensor shape mismatch");
      const std::size_t wn = Tensor::numel(wshape);

      if (m.kind == StoredKind::float32) {
        if (wdtype != 0) throw ModelFileError(Kind::corrupt, "float model with non-f32 weights");
        Tensor wt = Tensor::zeros(wshape);
        for (double& v : wt.data) v = r.f32();
        m.params.layers[i].w = std::move(wt);
      } else {
        if (wdtype != 1) throw ModelFileError(Kind::corrupt, "int8 model with non-i8 weights");
        QuantParams qp;
        qp.scale = r.f32();
        qp.zero_point = r.i8();
        if (!(qp.scale > 0.0f) || !std::isfinite(qp.scale))
          throw ModelFileError(Kind::corrupt, "bad weight scale");
        std::vector<std::int8_t> q(wn);
        for (auto& v : q) v = r.i8();
        m.quant.weight_params[i] = qp;
        m.quant.weights[i] = std::move(q);
      }

      const std::uint8_t bdtype = r.u8();
      if (bdtype != 0) throw ModelFileError(Kind::corrupt, "bias must be f32");
      const auto bshape = read_shape(r);
      if (bshape != want_b) throw ModelFileError(Kind::corrupt, "bias tensor shape mismatch");
      if (m.kind == StoredKind::float32) {
        Tensor bt = Tensor::zeros(bshape);
        for (double& v : bt.data) v = r.f32();
        m.params.layers[i].b = std::move(bt);
      } else {
        std::vector<float> bv(Tensor::numel(bshape));
        for (auto& v : bv) v = r.f32();
        m.quant.biases[i] = std::move(bv);
      }
    }
    in = shapes[i];
  }

  if (m.kind == StoredKind::int8) {
    const std::uint32_t n_act = r.u32();
    std::uint32_t n_param_layers = 0;
    for (const LayerSpec& l : m.spec.layers)
      if (is_parametric(l.kind)) ++n_param_layers;
    if (n_act != n_param_layers)
      throw ModelFileError(Kind::corrupt, "activation parameter count mismatch");
    m.quant.activations.resize(n_act);
    for (auto& qp : m.quant.activations) {
      qp.scale = r.f32();
      qp.zero_point = r.i8();
      if (!(qp.scale > 0.0f) || !std::isfinite(qp.scale))
        throw ModelFileError(Kind::corrupt, "bad activation scale");
    }
  }

  if (r.pos != r.size) throw ModelFileError(Kind::corrupt, "trailing bytes in model file");
  return m;
}

std::string describe_model(const std::filesystem::path& path) {
  const LoadedModel m = load_model(path);
  std::ostringstream os;
  os << "ASPM model v" << kModelVersion << " kind="
     << (m.kind == StoredKind::float32 ? "float32" : "int8")
     << " input_length=" << m.spec.input_length << "\n";
  const auto shapes = chain_shapes(m.spec);
  for (std::size_t i = 0; i < m.spec.layers.size(); ++i) {
    const LayerSpec& l = m.spec.layers[i];
    os << "layer " << i << ": ";
    switch (l.kind) {
      case LayerKind::dense: os << "dense units=" << l.units; break;
      case LayerKind::conv1d: os << "conv1d filters=" << l.filters << " kernel=" << l.kernel; break;
      case LayerKind::maxpool1d:
        os << "maxpool1d width=" << l.pool_width << " stride=" << l.pool_stride;
        break;
      case LayerKind::relu: os << "relu"; break;
      case LayerKind::dropout: os << "dropout rate=" << l.rate; break;
      case LayerKind::flatten: os << "flatten"; break;
      case LayerKind::softmax_output: os << "softmax_output classes=" << l.classes; break;
    }
    os << " -> [" << shapes[i].len;
    if (!shapes[i].flat) os << "x" << shapes[i].ch;
    os << "]\n";
    if (is_parametric(l.kind)) {
      if (m.kind == StoredKind::float32) {
        os << "  w " << m.params.layers[i].w.size() << " f32, b " << m.params.layers[i].b.size()
           << " f32\n";
      } else {
        os << "  w " << m.quant.weights[i].size() << " i8 (scale=" << m.quant.weight_params[i].scale
           << " zp=" << static_cast<int>(m.quant.weight_params[i].zero_point) << "), b "
           << m.quant.biases[i].size() << " f32\n";
      }
    }
  }
  if (m.kind == StoredKind::int8) {
    os << "activations:";
    for (const QuantParams& qp : m.quant.activations)
      os << " (scale=" << qp.scale << " zp=" << static_cast<int>(qp.zero_point) << ")";
    os << "\n";
  }
  os << "parameters: " << param_count(m.spec) << "\n";
  return os.str();
}

QuantizedModel quantize(const ModelSpec& spec, const ModelParams& params,
                        const Tensor& calibration) {
  chain_shapes(spec);
  if (calibration.shape.size() != 2 || calibration.shape[0] == 0)
    throw std::invalid_argument("quantize: calibration set must be a non-empty [n,len] tensor");

  QuantizedModel qm;
  qm.spec = spec;
  qm.weights.resize(spec.layers.size());
  qm.weight_params.resize(spec.layers.size());
  qm.biases.resize(spec.layers.size());

  // Activation ranges from a calibration pass over the float model.
  std::vector<double> act_min, act_max;
  const std::size_t n = calibration.shape[0];
  const std::size_t f = calibration.shape[1];
  const std::size_t chunk = 256;
  for (std::size_t from = 0; from < n; from += chunk) {
    const std::size_t to = std::min(n, from + chunk);
    Tensor batch = Tensor::zeros({to - from, f});
    std::copy(calibration.data.begin() + static_cast<std::ptrdiff_t>(from * f),
              calibration.data.begin() + static_cast<std::ptrdiff_t>(to * f), batch.data.begin());
    ForwardCache cache;
    forward(spec, params, batch, {}, &cache);
    std::size_t slot = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      if (!is_parametric(spec.layers[i].kind)) continue;
      const Tensor& x = cache.inputs[i];
      if (slot >= act_min.size()) {
        act_min.push_back(x.data[0]);
        act_max.push_back(x.data[0]);
      }
      for (double v : x.data) {
        act_min[slot] = std::min(act_min[slot], v);
        act_max[slot] = std::max(act_max[slot], v);
      }
      ++slot;
    }
  }

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (!is_parametric(spec.layers[i].kind)) continue;
    const Tensor& w = params.layers[i].w;
    double lo = w.data[0], hi = w.data[0];
    for (double v : w.data) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const QuantParams qp = affine_range(lo, hi);
    qm.weight_params[i] = qp;
    qm.weights[i].resize(w.size());
    for (std::size_t j = 0; j < w.size(); ++j) qm.weights[i][j] = quantize_value(w.data[j], qp);
    qm.biases[i].resize(params.layers[i].b.size());
    for (std::size_t j = 0; j < qm.biases[i].size(); ++j)
      qm.biases[i][j] = static_cast<float>(params.layers[i].b.data[j]);
  }

  qm.activations.reserve(act_min.size());
  for (std::size_t s = 0; s < act_min.size(); ++s)
    qm.activations.push_back(affine_range(act_min[s], act_max[s]));
  return qm;
}

// --- engines ------------------------------------------------------------------

FloatEngine::FloatEngine(const ModelSpec& spec, const ModelParams& params)
    : input_length_(spec.input_length) {
  const auto shapes = chain_shapes(spec);
  if (params.layers.size() != spec.layers.size())
    throw std::invalid_argument("FloatEngine: params/spec mismatch");

  std::size_t max_features = spec.input_length;
  ActShape in{spec.input_length, 1, false};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    Layer layer;
    layer.spec = spec.layers[i];
    layer.in_len = in.flat ? in.features() : in.len;
    layer.in_ch = in.flat ? 1 : in.ch;
    layer.out_len = shapes[i].flat ? shapes[i].features() : shapes[i].len;
    layer.out_ch = shapes[i].flat ? 1 : shapes[i].ch;

    const LayerSpec& l = spec.layers[i];
    if (l.kind == LayerKind::conv1d) {
      // repack [k][ic][oc] -> [oc][k][ic] for a contiguous per-filter dot
      const auto k = static_cast<std::size_t>(l.kernel);
      const std::size_t ic = in.ch;
      const std::size_t oc = shapes[i].ch;
      layer.w.resize(k * ic * oc);
      for (std::size_t kk = 0; kk < k; ++kk)
        for (std::size_t c = 0; c < ic; ++c)
          for (std::size_t o = 0; o < oc; ++o)
            layer.w[(o * k + kk) * ic + c] =
                static_cast<float>(params.layers[i].w.data[(kk * ic + c) * oc + o]);
      layer.b.resize(oc);
      for (std::size_t o = 0; o < oc; ++o)
        layer.b[o] = static_cast<float>(params.layers[i].b.data[o]);
    } else if (l.kind == LayerKind::dense || l.kind == LayerKind::softmax_output) {
      const std::size_t fin = in.features();
      const std::size_t fout = shapes[i].features();
      layer.w.resize(fin * fout);
      for (std::size_t ii = 0; ii < fin; ++ii)
        for (std::size_t o = 0; o < fout; ++o)
          layer.w[o * fin + ii] = static_cast<float>(params.layers[i].w.data[ii * fout + o]);
      layer.b.resize(fout);
      for (std::size_t o = 0; o < fout; ++o)
        layer.b[o] = static_cast<float>(params.layers[i].b.data[o]);
    }
    max_features = std::max(max_features, shapes[i].features());
    layers_.push_back(std::move(layer));
    in = shapes[i];
  }
  buf_a_.resize(max_features);
  buf_b_.resize(max_features);
}

std::array<double, 2> FloatEngine::proba(std::span<const double> period) {
  if (period.size() != input_length_)
    throw std::invalid_argument("FloatEngine: period length mismatch");
  float* cur = buf_a_.data();
  float* nxt = buf_b_.data();
  for (std::size_t i = 0; i < period.size(); ++i) cur[i] = static_cast<float>(period[i]);

  for (const Layer& layer : layers_) {
    const LayerSpec& l = layer.spec;
    switch (l.kind) {
      case LayerKind::conv1d: {
        const auto k = static_cast<std::size_t>(l.kernel);
        const std::size_t pad = k / 2;
        const std::size_t len = layer.in_len, ic = layer.in_ch, oc = layer.out_ch;
        for (std::size_t p = 0; p < len; ++p) {
          const std::size_t k_lo = pad > p ? pad - p : 0;
          const std::size_t k_hi = std::min(k, len + pad - p);
          for (std::size_t o = 0; o < oc; ++o) {
            const float* wrow = layer.w.data() + o * k * ic;
            float acc = layer.b[o];
            for (std::size_t kk = k_lo; kk < k_hi; ++kk) {
              const float* xq = cur + (p + kk - pad) * ic;
              const float* wk = wrow + kk * ic;
              for (std::size_t c = 0; c < ic; ++c) acc += xq[c] * wk[c];
            }
            nxt[p * oc + o] = acc;
          }
        }
        std::swap(cur, nxt);
        break;
      }
      case LayerKind::dense:
      case LayerKind::softmax_output: {
        const std::size_t fin = layer.in_len * layer.in_ch;
        const std::size_t fout = layer.out_len * layer.out_ch;
        for (std::size_t o = 0; o < fout; ++o) {
          const float* wrow = layer.w.data() + o * fin;
          float acc = layer.b[o];
          for (std::size_t ii = 0; ii < fin; ++ii) acc += cur[ii] * wrow[ii];
          nxt[o] = acc;
        }
        std::swap(cur, nxt);
        break;
      }
      case LayerKind::maxpool1d: {
        const auto width = static_cast<std::size_t>(l.pool_width);
        const auto stride = static_cast<std::size_t>(l.pool_stride);
        const std::size_t ch = layer.in_ch;
        for (std::size_t p = 0; p < layer.out_len; ++p) {
          const std::size_t base = p * stride;
          for (std::size_t c = 0; c < ch; ++c) {
            float best = cur[base * ch + c];
            for (std::size_t kk = 1; kk < width; ++kk)
              best = std::max(best, cur[(base + kk) * ch + c]);
            nxt[p * ch + c] = best;
          }
        }
        std::swap(cur, nxt);
        break;
      }
      case LayerKind::relu: {
        const std::size_t f = layer.in_len * layer.in_ch;
        for (std::size_t j = 0; j < f; ++j) cur[j] = std::max(0.0f, cur[j]);
        break;
      }
      case LayerKind::dropout:
      case LayerKind::flatten:
        break;  // identity at inference
    }
  }

  const double l0 = cur[0], l1 = cur[1];
  const double m = std::max(l0, l1);
  const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

QuantEngine::QuantEngine(const QuantizedModel& model) : input_length_(model.spec.input_length) {
  const auto shapes = chain_shapes(model.spec);
  if (model.activations.empty())
    throw std::invalid_argument("QuantEngine: missing activation parameters");
  input_q_ = model.activations[0];

  std::size_t max_features = model.spec.input_length;
  std::size_t act_slot = 0;
  ActShape in{model.spec.input_length, 1, false};
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    Layer layer;
    layer.spec = model.spec.layers[i];
    layer.in_len = in.flat ? in.features() : in.len;
    layer.in_ch = in.flat ? 1 : in.ch;
    layer.out_len = shapes[i].flat ? shapes[i].features() : shapes[i].len;
    layer.out_ch = shapes[i].flat ? 1 : shapes[i].ch;

    const LayerSpec& l = model.spec.layers[i];
    if (is_parametric(l.kind)) {
      if (act_slot >= model.activations.size())
        throw std::invalid_argument("QuantEngine: activation parameter count mismatch");
      const QuantParams in_q = model.activations[act_slot];
      const bool final_layer = l.kind == LayerKind::softmax_output;
      const QuantParams out_q =
          final_layer ? QuantParams{1.0f, 0} : model.activations[act_slot + 1 < model.activations.size()
                                                                    ? act_slot + 1
                                                                    : act_slot];
      const QuantParams w_q = model.weight_params[i];
      const double s_prod = static_cast<double>(w_q.scale) * static_cast<double>(in_q.scale);

      const std::vector<std::int8_t>& q = model.weights[i];
      if (l.kind == LayerKind::conv1d) {
        const auto k = static_cast<std::size_t>(l.kernel);
        const std::size_t ic = in.ch, oc = shapes[i].ch;
        layer.w16.resize(k * ic * oc);
        for (std::size_t kk = 0; kk < k; ++kk)
          for (std::size_t c = 0; c < ic; ++c)
            for (std::size_t o = 0; o < oc; ++o)
              layer.w16[(o * k + kk) * ic + c] = static_cast<std::int16_t>(
                  static_cast<int>(q[(kk * ic + c) * oc + o]) - w_q.zero_point);
      } else {
        const std::size_t fin = in.features(), fout = shapes[i].features();
        layer.w16.resize(fin * fout);
        for (std::size_t ii = 0; ii < fin; ++ii)
          for (std::size_t o = 0; o < fout; ++o)
            layer.w16[o * fin + ii] =
                static_cast<std::int16_t>(static_cast<int>(q[ii * fout + o]) - w_q.zero_point);
      }
      layer.bias_q.resize(model.biases[i].size());
      for (std::size_t o = 0; o < layer.bias_q.size(); ++o)
        layer.bias_q[o] =
            static_cast<std::int32_t>(std::llround(static_cast<double>(model.biases[i][o]) / s_prod));
      layer.multiplier = final_layer ? 1.0 : s_prod / static_cast<double>(out_q.scale);
      layer.dequant = s_prod;
      layer.out_zp = out_q.zero_point;
      ++act_slot;
    }
    max_features = std::max(max_features, shapes[i].features());
    layers_.push_back(std::move(layer));
    in = shapes[i];
  }
  ibuf_a_.resize(max_features);
  ibuf_b_.resize(max_features);
}

std::array<double, 2> QuantEngine::proba(std::span<const double> period) {
  if (period.size() != input_length_)
    throw std::invalid_argument("QuantEngine: period length mismatch");
  std::int16_t* cur = ibuf_a_.data();
  std::int16_t* nxt = ibuf_b_.data();
  // Centered representation: stored value = q - zero_point.
  for (std::size_t i = 0; i < period.size(); ++i) {
    const double q = std::round(period[i] / input_q_.scale) + input_q_.zero_point;
    cur[i] = static_cast<std::int16_t>(
        std::clamp(q, -128.0, 127.0) - input_q_.zero_point);
  }

  double logit0 = 0.0, logit1 = 0.0;
  for (const Layer& layer : layers_) {
    const LayerSpec& l = layer.spec;
    switch (l.kind) {
      case LayerKind::conv1d: {
        const auto k = static_cast<std::size_t>(l.kernel);
        const std::size_t pad = k / 2;
        const std::size_t len = layer.in_len, ic = layer.in_ch, oc = layer.out_ch;
        const std::int32_t lo = -128 - layer.out_zp;
        const std::int32_t hi = 127 - layer.out_zp;
        for (std::size_t p = 0; p < len; ++p) {
          const std::size_t k_lo = pad > p ? pad - p : 0;
          const std::size_t k_hi = std::min(k, len + pad - p);
          for (std::size_t o = 0; o < oc; ++o) {
            const std::int16_t* wrow = layer.w16.data() + o * k * ic;
            std::int32_t acc = layer.bias_q[o];
            for (std::size_t kk = k_lo; kk < k_hi; ++kk) {
              const std::int16_t* xq = cur + (p + kk - pad) * ic;
              const std::int16_t* wk = wrow + kk * ic;
              for (std::size_t c = 0; c < ic; ++c)
                acc += static_cast<std::int32_t>(xq[c]) * wk[c];
            }
            const auto scaled =
                static_cast<std::int32_t>(std::lround(layer.multiplier * static_cast<double>(acc)));
            nxt[p * oc + o] = static_cast<std::int16_t>(std::clamp(scaled, lo, hi));
          }
        }
        std::swap(cur, nxt);
        break;
      }
      case LayerKind::dense:
      case LayerKind::softmax_output: {
        const std::size_t fin = layer.in_len * layer.in_ch;
        const std::size_t fout = layer.out_len * layer.out_ch;
        const bool final_layer = l.kind == LayerKind::softmax_output;
        const std::int32_t lo = -128 - layer.out_zp;
        const std::int32_t hi = 127 - layer.out_zp;
        for (std::size_t o = 0; o < fout; ++o) {
          const std::int16_t* wrow = layer.w16.data() + o * fin;
          std::int32_t acc = layer.bias_q[o];
          for (std::size_t ii = 0; ii < fin; ++ii)
            acc += static_cast<std::int32_t>(cur[ii]) * wrow[ii];
          if (final_layer) {
            const double logit = layer.dequant * static_cast<double>(acc);
            (o == 0 ? logit0 : logit1) = logit;
          } else {
            const auto scaled =
                static_cast<std::int32_t>(std::lround(layer.multiplier * static_cast<double>(acc)));
            nxt[o] = static_cast<std::int16_t>(std::clamp(scaled, lo, hi));
          }
        }
        if (!final_layer) std::swap(cur, nxt);
        break;
      }
      case LayerKind::maxpool1d: {
        const auto width = static_cast<std::size_t>(l.pool_width);
        const auto stride = static_cast<std::size_t>(l.pool_stride);
        const std::size_t ch = layer.in_ch;
        for (std::size_t p = 0; p < layer.out_len; ++p) {
          const std::size_t base = p * stride;
          for (std::size_t c = 0; c < ch; ++c) {
            std::int16_t best = cur[base * ch + c];
            for (std::size_t kk = 1; kk < width; ++kk)
              best = std::max(best, cur[(base + kk) * ch + c]);
            nxt[p * ch + c] = best;
          }
        }
        std::swap(cur, nxt);
        break;
      }
      case LayerKind::relu: {
        const std::size_t f = layer.in_len * layer.in_ch;
        for (std::size_t j = 0; j < f; ++j) cur[j] = std::max<std::int16_t>(0, cur[j]);
        break;
      }
      case LayerKind::dropout:
      case LayerKind::flatten:
        break;
    }
  }

  const double m = std::max(logit0, logit1);
  const double e0 = std::exp(logit0 - m), e1 = std::exp(logit1 - m);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

BenchResult bench_inference(const std::function<void(std::span<const double>)>& infer,
                            const Tensor& periods, int warmup, int runs) {
  if (periods.shape.size() != 2 || periods.shape[0] == 0)
    throw std::invalid_argument("bench_inference: need a non-empty [n,len] tensor");
  const std::size_t n = periods.shape[0];
  const std::size_t f = periods.shape[1];
  auto row = [&](std::size_t i) {
    return std::span<const double>(periods.data.data() + i * f, f);
  };

  std::vector<double> totals;
  totals.reserve(static_cast<std::size_t>(std::max(1, runs)));
  for (int r = 0; r < std::max(1, runs); ++r) {
    for (int w = 0; w < warmup; ++w) infer(row(static_cast<std::size_t>(w) % n));
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < n; ++i) infer(row(i));
    const auto t1 = std::chrono::steady_clock::now();
    totals.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(totals.begin(), totals.end());
  BenchResult res;
  res.periods = n;
  res.total_ms = totals[totals.size() / 2];
  res.mean_ms_per_period = res.total_ms / static_cast<double>(n);
  return res;
}

}  // namespace aspm
