#include "aspm/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

#include "aspm/metrics.hpp"
#include "aspm/rng.hpp"

namespace aspm {

LayerSpec LayerSpec::Dense(int units) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.units = units;
  return s;
}
LayerSpec LayerSpec::Conv1d(int filters, int kernel) {
  LayerSpec s;
  s.kind = LayerKind::conv1d;
  s.filters = filters;
  s.kernel = kernel;
  return s;
}
LayerSpec LayerSpec::MaxPool1d(int width, int stride) {
  LayerSpec s;
  s.kind = LayerKind::maxpool1d;
  s.pool_width = width;
  s.pool_stride = stride;
  return s;
}
LayerSpec LayerSpec::Relu() {
  LayerSpec s;
  s.kind = LayerKind::relu;
  return s;
}
LayerSpec LayerSpec::Dropout(double rate) {
  LayerSpec s;
  s.kind = LayerKind::dropout;
  s.rate = rate;
  return s;
}
LayerSpec LayerSpec::Flatten() {
  LayerSpec s;
  s.kind = LayerKind::flatten;
  return s;
}
LayerSpec LayerSpec::SoftmaxOutput(int classes) {
  LayerSpec s;
  s.kind = LayerKind::softmax_output;
  s.classes = classes;
  return s;
}

std::vector<ActShape> chain_shapes(const ModelSpec& spec) {
  if (spec.input_length == 0) throw std::invalid_argument("model: input length must be positive");
  if (spec.layers.empty()) throw std::invalid_argument("model: no layers");

  std::vector<ActShape> out;
  out.reserve(spec.layers.size());
  ActShape cur{spec.input_length, 1, false};

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const bool last = i + 1 == spec.layers.size();
    switch (l.kind) {
      case LayerKind::dense:
        if (l.units <= 0) throw std::invalid_argument("dense: units must be positive");
        cur = ActShape{static_cast<std::size_t>(l.units), 1, true};
        break;
      case LayerKind::softmax_output:
        if (l.classes < 2) throw std::invalid_argument("softmax_output: need >= 2 classes");
        if (!last) throw std::invalid_argument("softmax_output must be the final layer");
        cur = ActShape{static_cast<std::size_t>(l.classes), 1, true};
        break;
      case LayerKind::conv1d:
        if (cur.flat) throw std::invalid_argument("conv1d after flatten");
        if (l.filters <= 0) throw std::invalid_argument("conv1d: filters must be positive");
        if (l.kernel <= 0 || l.kernel % 2 == 0)
          throw std::invalid_argument("conv1d: kernel must be odd and positive");
        cur = ActShape{cur.len, static_cast<std::size_t>(l.filters), false};
        break;
      case LayerKind::maxpool1d: {
        if (cur.flat) throw std::invalid_argument("maxpool1d after flatten");
        if (l.pool_width <= 0 || l.pool_stride <= 0)
          throw std::invalid_argument("maxpool1d: bad width/stride");
        if (cur.len < static_cast<std::size_t>(l.pool_width))
          throw std::invalid_argument("maxpool1d: input shorter than pool width");
        const std::size_t n = (cur.len - static_cast<std::size_t>(l.pool_width)) /
                                  static_cast<std::size_t>(l.pool_stride) +
                              1;
        cur = ActShape{n, cur.ch, false};
        break;
      }
      case LayerKind::relu:
        break;
      case LayerKind::dropout:
        if (!(l.rate >= 0.0 && l.rate < 1.0))
          throw std::invalid_argument("dropout: rate must be in [0,1)");
        break;
      case LayerKind::flatten:
        if (cur.flat) throw std::invalid_argument("flatten of already-flat activation");
        cur = ActShape{cur.len * cur.ch, 1, true};
        break;
    }
    out.push_back(cur);
  }
  if (spec.layers.back().kind != LayerKind::softmax_output)
    throw std::invalid_argument("model must end in softmax_output");
  return out;
}

std::size_t param_count(const ModelSpec& spec) {
  const auto shapes = chain_shapes(spec);
  std::size_t total = 0;
  ActShape in{spec.input_length, 1, false};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (l.kind == LayerKind::dense || l.kind == LayerKind::softmax_output) {
      const std::size_t out = shapes[i].features();
      total += in.features() * out + out;
    } else if (l.kind == LayerKind::conv1d) {
      const std::size_t oc = static_cast<std::size_t>(l.filters);
      total += static_cast<std::size_t>(l.kernel) * in.ch * oc + oc;
    }
    in = shapes[i];
  }
  return total;
}

ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
  const auto shapes = chain_shapes(spec);
  Rng rng(mix_seed(seed, 0x1417));

  ModelParams params;
  params.layers.resize(spec.layers.size());
  ActShape in{spec.input_length, 1, false};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    LayerParams& lp = params.layers[i];
    if (l.kind == LayerKind::dense || l.kind == LayerKind::softmax_output) {
      const std::size_t fan_in = in.features();
      const std::size_t out = shapes[i].features();
      lp.w = Tensor::zeros({fan_in, out});
      lp.b = Tensor::zeros({out});
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (double& v : lp.w.data) v = rng.uniform(-limit, limit);
    } else if (l.kind == LayerKind::conv1d) {
      const auto k = static_cast<std::size_t>(l.kernel);
      const auto oc = static_cast<std::size_t>(l.filters);
      lp.w = Tensor::zeros({k, in.ch, oc});
      lp.b = Tensor::zeros({oc});
      const double limit = std::sqrt(6.0 / static_cast<double>(k * in.ch));
      for (double& v : lp.w.data) v = rng.uniform(-limit, limit);
    }
    in = shapes[i];
  }
  return params;
}

namespace {

std::size_t batch_rows(const Tensor& t) {
  if (t.shape.size() != 2) throw std::invalid_argument("expected a 2-D batch tensor");
  return t.shape[0];
}

void conv1d_forward(const double* x, std::size_t n, std::size_t len, std::size_t ic,
                    const double* w, const double* b, std::size_t kernel, std::size_t oc,
                    double* y) {
  const std::size_t pad = kernel / 2;
  for (std::size_t row = 0; row < n; ++row) {
    const double* xr = x + row * len * ic;
    double* yr = y + row * len * oc;
    for (std::size_t p = 0; p < len; ++p) std::memcpy(yr + p * oc, b, oc * sizeof(double));
    for (std::size_t p = 0; p < len; ++p) {
      double* yp = yr + p * oc;
      for (std::size_t k = 0; k < kernel; ++k) {
        const std::ptrdiff_t q = static_cast<std::ptrdiff_t>(p + k) - static_cast<std::ptrdiff_t>(pad);
        if (q < 0 || q >= static_cast<std::ptrdiff_t>(len)) continue;
        const double* xq = xr + static_cast<std::size_t>(q) * ic;
        const double* wk = w + k * ic * oc;
        for (std::size_t c = 0; c < ic; ++c) {
          const double xv = xq[c];
          const double* wrow = wk + c * oc;
          for (std::size_t o = 0; o < oc; ++o) yp[o] += xv * wrow[o];
        }
      }
    }
  }
}

void conv1d_backward(const double* x, const double* dy, std::size_t n, std::size_t len,
                     std::size_t ic, const double* w, std::size_t kernel, std::size_t oc,
                     double* dx, double* gw, double* gb) {
  const std::size_t pad = kernel / 2;
  for (std::size_t row = 0; row < n; ++row) {
    const double* xr = x + row * len * ic;
    const double* dyr = dy + row * len * oc;
    double* dxr = dx + row * len * ic;
    for (std::size_t p = 0; p < len; ++p) {
      const double* dyp = dyr + p * oc;
      for (std::size_t o = 0; o < oc; ++o) gb[o] += dyp[o];
      for (std::size_t k = 0; k < kernel; ++k) {
        const std::ptrdiff_t q = static_cast<std::ptrdiff_t>(p + k) - static_cast<std::ptrdiff_t>(pad);
        if (q < 0 || q >= static_cast<std::ptrdiff_t>(len)) continue;
        const double* xq = xr + static_cast<std::size_t>(q) * ic;
        double* dxq = dxr + static_cast<std::size_t>(q) * ic;
        const double* wk = w + k * ic * oc;
        double* gk = gw + k * ic * oc;
        for (std::size_t c = 0; c < ic; ++c) {
          const double xv = xq[c];
          const double* wrow = wk + c * oc;
          double* grow = gk + c * oc;
          double dot = 0.0;
          for (std::size_t o = 0; o < oc; ++o) {
            grow[o] += xv * dyp[o];
            dot += wrow[o] * dyp[o];
          }
          dxq[c] += dot;
        }
      }
    }
  }
}

void dense_forward(const double* x, std::size_t n, std::size_t in, const double* w,
                   const double* b, std::size_t out, double* y) {
  for (std::size_t row = 0; row < n; ++row) {
    const double* xr = x + row * in;
    double* yr = y + row * out;
    std::memcpy(yr, b, out * sizeof(double));
    for (std::size_t i = 0; i < in; ++i) {
      const double xv = xr[i];
      const double* wrow = w + i * out;
      for (std::size_t o = 0; o < out; ++o) yr[o] += xv * wrow[o];
    }
  }
}

void dense_backward(const double* x, const double* dy, std::size_t n, std::size_t in,
                    const double* w, std::size_t out, double* dx, double* gw, double* gb) {
  for (std::size_t row = 0; row < n; ++row) {
    const double* xr = x + row * in;
    const double* dyr = dy + row * out;
    double* dxr = dx + row * in;
    for (std::size_t o = 0; o < out; ++o) gb[o] += dyr[o];
    for (std::size_t i = 0; i < in; ++i) {
      const double xv = xr[i];
      const double* wrow = w + i * out;
      double* grow = gw + i * out;
      double dot = 0.0;
      for (std::size_t o = 0; o < out; ++o) {
        grow[o] += xv * dyr[o];
        dot += wrow[o] * dyr[o];
      }
      dxr[i] = dot;
    }
  }
}

// Mask scale for one (sample, unit); a pure function of the context so a
// sample keeps its mask regardless of batch composition.
struct DropoutMaskGen {
  std::uint64_t row_key;
  double rate;
  double inv_keep;

  DropoutMaskGen(const DropoutCtx& ctx, std::uint64_t sample, std::size_t layer, double r)
      : row_key(hash64(hash64(hash64(ctx.seed ^ 0xD80FULL) ^ ctx.epoch) ^ sample) ^
                hash64(0xBEEF0000ULL + layer)),
        rate(r),
        inv_keep(1.0 / (1.0 - r)) {}

  double operator()(std::size_t unit) const {
    const double u = u64_to_unit(hash64(row_key ^ (0x1000193ULL * (unit + 1))));
    return u < rate ? 0.0 : inv_keep;
  }
};

struct LayerIO {
  const ModelSpec& spec;
  std::vector<ActShape> shapes;

  explicit LayerIO(const ModelSpec& s) : spec(s), shapes(chain_shapes(s)) {}

  ActShape input_shape(std::size_t i) const {
    return i == 0 ? ActShape{spec.input_length, 1, false} : shapes[i - 1];
  }
};

}  // namespace

Tensor forward(const ModelSpec& spec, const ModelParams& params, const Tensor& batch,
               const DropoutCtx& dropout, ForwardCache* cache) {
  const LayerIO io(spec);
  const std::size_t n = batch_rows(batch);
  if (batch.shape[1] != spec.input_length)
    throw std::invalid_argument("forward: batch width does not match model input length");
  if (params.layers.size() != spec.layers.size())
    throw std::invalid_argument("forward: params/spec layer count mismatch");

  if (cache) {
    cache->inputs.clear();
    cache->pool_arg.clear();
    cache->drop_mask.clear();
  }

  Tensor cur = batch;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const ActShape in = io.input_shape(i);
    const ActShape out = io.shapes[i];
    if (cache) cache->inputs.push_back(cur);

    Tensor next = Tensor::zeros({n, out.features()});
    switch (l.kind) {
      case LayerKind::dense:
      case LayerKind::softmax_output:
        dense_forward(cur.data.data(), n, in.features(), params.layers[i].w.data.data(),
                      params.layers[i].b.data.data(), out.features(), next.data.data());
        break;
      case LayerKind::conv1d:
        conv1d_forward(cur.data.data(), n, in.len, in.ch, params.layers[i].w.data.data(),
                       params.layers[i].b.data.data(), static_cast<std::size_t>(l.kernel),
                       out.ch, next.data.data());
        break;
      case LayerKind::maxpool1d: {
        const auto width = static_cast<std::size_t>(l.pool_width);
        const auto stride = static_cast<std::size_t>(l.pool_stride);
        std::vector<std::int32_t> arg(n * out.len * in.ch);
        for (std::size_t row = 0; row < n; ++row) {
          const double* xr = cur.data.data() + row * in.len * in.ch;
          double* yr = next.data.data() + row * out.len * in.ch;
          std::int32_t* ar = arg.data() + row * out.len * in.ch;
          for (std::size_t p = 0; p < out.len; ++p) {
            const std::size_t base = p * stride;
            for (std::size_t c = 0; c < in.ch; ++c) {
              double best = xr[base * in.ch + c];
              std::int32_t besti = static_cast<std::int32_t>(base);
              for (std::size_t k = 1; k < width; ++k) {
                const double v = xr[(base + k) * in.ch + c];
                if (v > best) {
                  best = v;
                  besti = static_cast<std::int32_t>(base + k);
                }
              }
              yr[p * in.ch + c] = best;
              ar[p * in.ch + c] = besti;
            }
          }
        }
        if (cache) cache->pool_arg.push_back(std::move(arg));
        break;
      }
      case LayerKind::relu:
        for (std::size_t j = 0; j < cur.size(); ++j) next.data[j] = std::max(0.0, cur.data[j]);
        break;
      case LayerKind::dropout: {
        if (!dropout.active) {
          next.data = cur.data;
        } else {
          const std::size_t f = in.features();
          std::vector<double> mask(n * f);
          for (std::size_t row = 0; row < n; ++row) {
            const DropoutMaskGen gen(dropout, dropout.base_index + row, i, l.rate);
            double* mr = mask.data() + row * f;
            for (std::size_t u = 0; u < f; ++u) mr[u] = gen(u);
          }
          for (std::size_t j = 0; j < cur.size(); ++j) next.data[j] = cur.data[j] * mask[j];
          if (cache) cache->drop_mask.push_back(std::move(mask));
        }
        if (cache && !dropout.active) cache->drop_mask.emplace_back();
        break;
      }
      case LayerKind::flatten:
        next.data = cur.data;
        break;
    }
    cur = std::move(next);
  }
  return cur;
}

Tensor softmax(const Tensor& logits) {
  const std::size_t n = batch_rows(logits);
  const std::size_t c = logits.shape[1];
  Tensor out = Tensor::zeros({n, c});
  for (std::size_t row = 0; row < n; ++row) {
    const double* l = logits.data.data() + row * c;
    double* p = out.data.data() + row * c;
    double m = l[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, l[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      p[j] = std::exp(l[j] - m);
      s += p[j];
    }
    for (std::size_t j = 0; j < c; ++j) p[j] /= s;
  }
  return out;
}

std::vector<int> argmax_rows(const Tensor& t) {
  const std::size_t n = batch_rows(t);
  const std::size_t c = t.shape[1];
  std::vector<int> out(n);
  for (std::size_t row = 0; row < n; ++row) {
    const double* r = t.data.data() + row * c;
    int best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (r[j] > r[best]) best = static_cast<int>(j);
    out[row] = best;
  }
  return out;
}

LossGrads loss_and_grads(const ModelSpec& spec, const ModelParams& params, const Tensor& batch,
                         const std::vector<int>& labels, const std::vector<double>& weights,
                         const DropoutCtx& dropout) {
  const LayerIO io(spec);
  const std::size_t n = batch_rows(batch);
  if (labels.size() != n) throw std::invalid_argument("loss_and_grads: labels size mismatch");
  if (!weights.empty() && weights.size() != n)
    throw std::invalid_argument("loss_and_grads: weights size mismatch");

  ForwardCache cache;
  const Tensor logits = forward(spec, params, batch, dropout, &cache);
  const std::size_t classes = logits.shape[1];

  LossGrads lg;
  lg.grads.layers.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    lg.grads.layers[i].w = Tensor::zeros(params.layers[i].w.shape);
    lg.grads.layers[i].b = Tensor::zeros(params.layers[i].b.shape);
  }

  double wsum = 0.0;
  for (std::size_t row = 0; row < n; ++row) wsum += weights.empty() ? 1.0 : weights[row];
  lg.weight_total = wsum;
  if (wsum == 0.0) return lg;  // nothing to learn from

  // Softmax + cross-entropy fused on the logits.
  Tensor dlogits = Tensor::zeros(logits.shape);
  double loss = 0.0;
  for (std::size_t row = 0; row < n; ++row) {
    const int y = labels[row];
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw std::invalid_argument("loss_and_grads: label out of range");
    const double wr = (weights.empty() ? 1.0 : weights[row]) / wsum;
    const double* l = logits.data.data() + row * classes;
    double* dl = dlogits.data.data() + row * classes;
    double m = l[0];
    for (std::size_t j = 1; j < classes; ++j) m = std::max(m, l[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < classes; ++j) s += std::exp(l[j] - m);
    const double lse = m + std::log(s);
    loss += wr * (lse - l[static_cast<std::size_t>(y)]);
    for (std::size_t j = 0; j < classes; ++j) {
      const double p = std::exp(l[j] - lse);
      dl[j] = wr * (p - (static_cast<std::size_t>(y) == j ? 1.0 : 0.0));
    }
  }
  lg.loss = loss;

  // Backward walk.
  Tensor dcur = std::move(dlogits);
  std::size_t pool_slot = cache.pool_arg.size();
  std::size_t drop_slot = cache.drop_mask.size();
  for (std::size_t ii = spec.layers.size(); ii-- > 0;) {
    const LayerSpec& l = spec.layers[ii];
    const ActShape in = io.input_shape(ii);
    const ActShape out = io.shapes[ii];
    const Tensor& x = cache.inputs[ii];
    Tensor dprev = Tensor::zeros({n, in.features()});

    switch (l.kind) {
      case LayerKind::dense:
      case LayerKind::softmax_output:
        dense_backward(x.data.data(), dcur.data.data(), n, in.features(),
                       params.layers[ii].w.data.data(), out.features(), dprev.data.data(),
                       lg.grads.layers[ii].w.data.data(), lg.grads.layers[ii].b.data.data());
        break;
      case LayerKind::conv1d:
        conv1d_backward(x.data.data(), dcur.data.data(), n, in.len, in.ch,
                        params.layers[ii].w.data.data(), static_cast<std::size_t>(l.kernel),
                        out.ch, dprev.data.data(), lg.grads.layers[ii].w.data.data(),
                        lg.grads.layers[ii].b.data.data());
        break;
      case LayerKind::maxpool1d: {
        const std::vector<std::int32_t>& arg = cache.pool_arg[--pool_slot];
        for (std::size_t row = 0; row < n; ++row) {
          const double* dyr = dcur.data.data() + row * out.len * in.ch;
          const std::int32_t* ar = arg.data() + row * out.len * in.ch;
          double* dxr = dprev.data.data() + row * in.len * in.ch;
          for (std::size_t p = 0; p < out.len; ++p)
            for (std::size_t c = 0; c < in.ch; ++c)
              dxr[static_cast<std::size_t>(ar[p * in.ch + c]) * in.ch + c] += dyr[p * in.ch + c];
        }
        break;
      }
      case LayerKind::relu:
        for (std::size_t j = 0; j < dcur.size(); ++j)
          dprev.data[j] = x.data[j] > 0.0 ? dcur.data[j] : 0.0;
        break;
      case LayerKind::dropout: {
        const std::vector<double>& mask = cache.drop_mask[--drop_slot];
        if (mask.empty()) {
          dprev.data = dcur.data;
        } else {
          for (std::size_t j = 0; j < dcur.size(); ++j) dprev.data[j] = dcur.data[j] * mask[j];
        }
        break;
      }
      case LayerKind::flatten:
        dprev.data = dcur.data;
        break;
    }
    dcur = std::move(dprev);
  }
  return lg;
}

AdamState make_adam_state(const ModelParams& params) {
  AdamState st;
  st.m.resize(params.layers.size());
  st.v.resize(params.layers.size());
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    st.m[i].w = Tensor::zeros(params.layers[i].w.shape);
    st.m[i].b = Tensor::zeros(params.layers[i].b.shape);
    st.v[i].w = Tensor::zeros(params.layers[i].w.shape);
    st.v[i].b = Tensor::zeros(params.layers[i].b.shape);
  }
  return st;
}

namespace {
void adam_update(std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                 std::vector<double>& v, double lr, double b1, double b2, double eps,
                 double bc1, double bc2) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}
}  // namespace

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const TrainConfig& cfg) {
  if (params.layers.size() != grads.layers.size() || params.layers.size() != state.m.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    adam_update(params.layers[i].w.data, grads.layers[i].w.data, state.m[i].w.data,
                state.v[i].w.data, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                cfg.adam_eps, bc1, bc2);
    adam_update(params.layers[i].b.data, grads.layers[i].b.data, state.m[i].b.data,
                state.v[i].b.data, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                cfg.adam_eps, bc1, bc2);
  }
}

LabeledData to_labeled(const PeriodSet& periods, double weight) {
  LabeledData d;
  const std::size_t n = periods.size();
  d.x = Tensor::zeros({n, kPeriodSeconds});
  d.y.resize(n);
  d.w.assign(n, weight);
  for (std::size_t i = 0; i < n; ++i) {
    const Period& p = periods.periods[i];
    std::copy(p.values.begin(), p.values.end(), d.x.data.begin() + static_cast<std::ptrdiff_t>(i * kPeriodSeconds));
    d.y[i] = p.label == PeriodLabel::apneic ? 1 : 0;
  }
  return d;
}

void append(LabeledData& dst, const LabeledData& src) {
  if (dst.size() == 0) {
    dst = src;
    return;
  }
  if (dst.x.shape[1] != src.x.shape[1]) throw std::invalid_argument("append: feature mismatch");
  dst.x.data.insert(dst.x.data.end(), src.x.data.begin(), src.x.data.end());
  dst.x.shape[0] += src.x.shape[0];
  dst.y.insert(dst.y.end(), src.y.begin(), src.y.end());
  const std::vector<double>& sw = src.w;
  dst.w.insert(dst.w.end(), sw.begin(), sw.end());
}

LabeledData slice_rows(const LabeledData& d, std::size_t from, std::size_t to) {
  LabeledData out;
  const std::size_t f = d.x.shape[1];
  out.x = Tensor::zeros({to - from, f});
  std::copy(d.x.data.begin() + static_cast<std::ptrdiff_t>(from * f),
            d.x.data.begin() + static_cast<std::ptrdiff_t>(to * f), out.x.data.begin());
  out.y.assign(d.y.begin() + static_cast<std::ptrdiff_t>(from),
               d.y.begin() + static_cast<std::ptrdiff_t>(to));
  if (!d.w.empty())
    out.w.assign(d.w.begin() + static_cast<std::ptrdiff_t>(from),
                 d.w.begin() + static_cast<std::ptrdiff_t>(to));
  return out;
}

namespace {

bool has_both_classes(const std::vector<int>& y) {
  bool c0 = false, c1 = false;
  for (int v : y) (v == 0 ? c0 : c1) = true;
  return c0 && c1;
}

}  // namespace

Tensor predict_proba(const ModelSpec& spec, const ModelParams& params, const Tensor& x,
                     std::size_t batch_size) {
  const std::size_t n = batch_rows(x);
  const std::size_t f = x.shape[1];
  Tensor probs;
  for (std::size_t from = 0; from < n; from += batch_size) {
    const std::size_t to = std::min(n, from + batch_size);
    Tensor batch = Tensor::zeros({to - from, f});
    std::copy(x.data.begin() + static_cast<std::ptrdiff_t>(from * f),
              x.data.begin() + static_cast<std::ptrdiff_t>(to * f), batch.data.begin());
    Tensor p = softmax(forward(spec, params, batch));
    if (probs.empty()) {
      probs = Tensor::zeros({n, p.shape[1]});
    }
    std::copy(p.data.begin(), p.data.end(),
              probs.data.begin() + static_cast<std::ptrdiff_t>(from * p.shape[1]));
  }
  return probs;
}

TrainReport train_from(const ModelSpec& spec, ModelParams init, const LabeledData& train_data,
                       const LabeledData& val_data, const TrainConfig& cfg) {
  if (cfg.epochs == 0) throw std::invalid_argument("train: epochs must be >= 1");
  if (cfg.batch_size == 0) throw std::invalid_argument("train: batch size must be >= 1");
  if (train_data.size() == 0) throw std::invalid_argument("train: empty training set");
  if (val_data.size() == 0 || !has_both_classes(val_data.y))
    throw std::invalid_argument("train: validation split must contain both classes");

  const std::size_t n = train_data.size();
  ModelParams params = std::move(init);
  AdamState adam = make_adam_state(params);

  TrainReport report;
  report.train_loss.reserve(cfg.epochs);
  report.val_kappa.reserve(cfg.epochs);
  double best_kappa = -std::numeric_limits<double>::infinity();

  const std::size_t f = train_data.x.shape[1];
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    double weight_sum = 0.0;
    for (std::size_t from = 0; from < n; from += cfg.batch_size) {
      const std::size_t to = std::min(n, from + cfg.batch_size);
      Tensor batch = Tensor::zeros({to - from, f});
      std::copy(train_data.x.data.begin() + static_cast<std::ptrdiff_t>(from * f),
                train_data.x.data.begin() + static_cast<std::ptrdiff_t>(to * f),
                batch.data.begin());
      std::vector<int> labels(train_data.y.begin() + static_cast<std::ptrdiff_t>(from),
                              train_data.y.begin() + static_cast<std::ptrdiff_t>(to));
      std::vector<double> weights;
      if (!train_data.w.empty())
        weights.assign(train_data.w.begin() + static_cast<std::ptrdiff_t>(from),
                       train_data.w.begin() + static_cast<std::ptrdiff_t>(to));

      const DropoutCtx ctx{true, cfg.seed, epoch, from};
      LossGrads lg = loss_and_grads(spec, params, batch, labels, weights, ctx);
      if (lg.weight_total == 0.0) continue;  // all-zero-weight batch: no step
      adam_step(params, lg.grads, adam, cfg);
      loss_sum += lg.loss * lg.weight_total;
      weight_sum += lg.weight_total;
    }
    report.train_loss.push_back(weight_sum > 0.0 ? loss_sum / weight_sum : 0.0);

    const Tensor val_probs = predict_proba(spec, params, val_data.x, cfg.batch_size);
    const std::vector<int> preds = argmax_rows(val_probs);
    const double kappa = kappa_score(val_data.y, preds);
    report.val_kappa.push_back(kappa);
    if (kappa > best_kappa) {
      best_kappa = kappa;
      report.best_epoch = epoch - 1;
      report.best_params = params;
    }
  }
  report.final_params = std::move(params);
  return report;
}

TrainReport train(const ModelSpec& spec, const LabeledData& train_data,
                  const LabeledData& val_data, const TrainConfig& cfg) {
  return train_from(spec, init_params(spec, cfg.seed), train_data, val_data, cfg);
}

TrainReport train(const ModelSpec& spec, const LabeledData& data, const TrainConfig& cfg) {
  const std::size_t n = data.size();
  if (!(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0))
    throw std::invalid_argument("train: validation fraction must be in (0,1)");
  const auto n_val = static_cast<std::size_t>(static_cast<double>(n) * cfg.validation_fraction);
  if (n_val == 0 || n_val >= n)
    throw std::invalid_argument("train: data set too small for the validation split");
  const LabeledData train_part = slice_rows(data, 0, n - n_val);
  const LabeledData val_part = slice_rows(data, n - n_val, n);
  return train(spec, train_part, val_part, cfg);
}

}  // namespace aspm
