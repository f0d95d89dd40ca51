#include "aspm/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <stdexcept>

#include "aspm/rng.hpp"

namespace aspm {

const char* to_string(ModelFamily f) {
  switch (f) {
    case ModelFamily::mlp: return "mlp";
    case ModelFamily::cnn: return "cnn";
    case ModelFamily::rf: return "rf";
  }
  return "?";
}

const char* to_string(ModelSize s) {
  switch (s) {
    case ModelSize::S: return "S";
    case ModelSize::M: return "M";
    case ModelSize::L: return "L";
  }
  return "?";
}

ModelFamily family_from_string(const std::string& s) {
  if (s == "mlp") return ModelFamily::mlp;
  if (s == "cnn") return ModelFamily::cnn;
  if (s == "rf") return ModelFamily::rf;
  throw std::invalid_argument("unknown model family: " + s);
}

ModelSize size_from_string(const std::string& s) {
  if (s == "S" || s == "s" || s == "small") return ModelSize::S;
  if (s == "M" || s == "m" || s == "medium") return ModelSize::M;
  if (s == "L" || s == "l" || s == "large") return ModelSize::L;
  throw std::invalid_argument("unknown model size: " + s);
}

ModelSpec build_spec(ModelFamily family, ModelSize size) {
  ModelSpec spec;
  spec.input_length = kPeriodSeconds;

  if (family == ModelFamily::mlp) {
    const int hidden = size == ModelSize::S ? 50 : size == ModelSize::M ? 100 : 200;
    spec.layers = {LayerSpec::Dense(hidden), LayerSpec::Relu(), LayerSpec::Dropout(0.5),
                   LayerSpec::SoftmaxOutput(2)};
    return spec;
  }
  if (family == ModelFamily::cnn) {
    const int conv_layers = size == ModelSize::S ? 3 : size == ModelSize::M ? 4 : 5;
    int filters = 32;
    for (int i = 0; i < conv_layers; ++i) {
      spec.layers.push_back(LayerSpec::Conv1d(filters, 5));
      spec.layers.push_back(LayerSpec::Relu());
      spec.layers.push_back(LayerSpec::MaxPool1d(2, 2));
      filters *= 2;
    }
    spec.layers.push_back(LayerSpec::Flatten());
    const int dense_nodes = size == ModelSize::S ? 128 : 256;
    const int dense_layers = size == ModelSize::L ? 2 : 1;
    for (int i = 0; i < dense_layers; ++i) {
      spec.layers.push_back(LayerSpec::Dense(dense_nodes));
      spec.layers.push_back(LayerSpec::Relu());
      spec.layers.push_back(LayerSpec::Dropout(0.5));
    }
    spec.layers.push_back(LayerSpec::SoftmaxOutput(2));
    return spec;
  }
  throw std::invalid_argument("build_spec: random forest has no layer spec");
}

ForestSpec forest_spec(ModelSize size) {
  ForestSpec spec;
  spec.trees = size == ModelSize::S ? 50 : size == ModelSize::M ? 200 : 500;
  return spec;
}

namespace {

double gini_times_n(double c0, double c1) {
  const double m = c0 + c1;
  if (m == 0.0) return 0.0;
  return m - (c0 * c0 + c1 * c1) / m;
}

struct SplitCandidate {
  double decrease = -1.0;
  std::int32_t feature = -1;
  double threshold = 0.0;
};

// Best Gini split for one node over a sampled feature subset.
SplitCandidate best_split(const LabeledData& data, const std::vector<std::uint32_t>& idx,
                          Rng& rng, int features_per_split) {
  const std::size_t f_total = data.x.shape[1];
  const std::size_t m = idx.size();

  double c0 = 0.0, c1 = 0.0;
  for (std::uint32_t i : idx) (data.y[i] == 0 ? c0 : c1) += 1.0;
  const double parent = gini_times_n(c0, c1);
  SplitCandidate best;
  if (m < 2 || c0 == 0.0 || c1 == 0.0) return best;

  // Partial Fisher-Yates to pick the feature subset without replacement.
  std::vector<std::uint32_t> features(f_total);
  std::iota(features.begin(), features.end(), 0u);
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(features_per_split), f_total);
  for (std::size_t j = 0; j < k; ++j)
    std::swap(features[j], features[j + rng.below(f_total - j)]);

  std::vector<std::pair<double, int>> vals(m);
  for (std::size_t fi = 0; fi < k; ++fi) {
    const std::size_t feat = features[fi];
    for (std::size_t i = 0; i < m; ++i)
      vals[i] = {data.x.data[idx[i] * f_total + feat], data.y[idx[i]]};
    std::sort(vals.begin(), vals.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    double l0 = 0.0, l1 = 0.0;
    for (std::size_t i = 0; i + 1 < m; ++i) {
      (vals[i].second == 0 ? l0 : l1) += 1.0;
      if (vals[i].first == vals[i + 1].first) continue;  // can't split inside ties
      const double dec = parent - gini_times_n(l0, l1) - gini_times_n(c0 - l0, c1 - l1);
      if (dec > best.decrease) {
        best.decrease = dec;
        best.feature = static_cast<std::int32_t>(feat);
        best.threshold = vals[i].first + 0.5 * (vals[i + 1].first - vals[i].first);
      }
    }
  }
  return best;
}

struct GrowEntry {
  double decrease;
  std::size_t order;  // creation order, for deterministic tie-breaks
  std::int32_t node;
  SplitCandidate split;
  std::vector<std::uint32_t> idx;
};

struct GrowCmp {
  bool operator()(const GrowEntry& a, const GrowEntry& b) const {
    if (a.decrease != b.decrease) return a.decrease < b.decrease;
    return a.order > b.order;
  }
};

void set_leaf(TreeNode& node, const LabeledData& data, const std::vector<std::uint32_t>& idx) {
  double c0 = 0.0, c1 = 0.0;
  for (std::uint32_t i : idx) (data.y[i] == 0 ? c0 : c1) += 1.0;
  const double m = c0 + c1;
  node.class_frac = {c0 / m, c1 / m};
}

Tree grow_tree(const LabeledData& data, const std::vector<std::uint32_t>& bootstrap,
               const ForestSpec& spec, Rng& rng) {
  Tree tree;
  tree.nodes.emplace_back();
  set_leaf(tree.nodes[0], data, bootstrap);

  std::priority_queue<GrowEntry, std::vector<GrowEntry>, GrowCmp> frontier;
  std::size_t order = 0;
  auto consider = [&](std::int32_t node, std::vector<std::uint32_t> idx) {
    SplitCandidate cand = best_split(data, idx, rng, spec.features_per_split);
    if (cand.decrease > 0.0)
      frontier.push(GrowEntry{cand.decrease, order++, node, cand, std::move(idx)});
  };
  consider(0, bootstrap);

  while (!frontier.empty()) {
    if (static_cast<int>(tree.nodes.size()) + 2 > spec.max_nodes_per_tree) break;
    GrowEntry e = frontier.top();
    frontier.pop();

    const std::size_t f_total = data.x.shape[1];
    std::vector<std::uint32_t> left_idx, right_idx;
    for (std::uint32_t i : e.idx) {
      const double v = data.x.data[i * f_total + static_cast<std::size_t>(e.split.feature)];
      (v <= e.split.threshold ? left_idx : right_idx).push_back(i);
    }
    if (left_idx.empty() || right_idx.empty()) continue;  // degenerate; keep as leaf

    const auto li = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    set_leaf(tree.nodes.back(), data, left_idx);
    const auto ri = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    set_leaf(tree.nodes.back(), data, right_idx);

    TreeNode& parent = tree.nodes[static_cast<std::size_t>(e.node)];
    parent.feature = e.split.feature;
    parent.threshold = e.split.threshold;
    parent.left = li;
    parent.right = ri;

    consider(li, std::move(left_idx));
    consider(ri, std::move(right_idx));
  }
  return tree;
}

}  // namespace

Forest rf_fit(const LabeledData& data, const ForestSpec& spec, std::uint64_t seed) {
  const std::size_t n = data.size();
  if (n == 0) throw std::invalid_argument("rf_fit: empty data");
  bool c0 = false, c1 = false;
  for (int y : data.y) (y == 0 ? c0 : c1) = true;
  if (!c0 || !c1) throw std::invalid_argument("rf_fit: need both classes in the training data");
  if (spec.trees <= 0 || spec.max_nodes_per_tree < 1 || spec.features_per_split < 1)
    throw std::invalid_argument("rf_fit: bad forest spec");

  Forest forest;
  forest.spec = spec;
  forest.trees.reserve(static_cast<std::size_t>(spec.trees));

  std::vector<double> oob_sum(n, 0.0);
  std::vector<std::uint32_t> oob_votes(n, 0);
  std::vector<std::uint8_t> in_bag(n);

  for (int t = 0; t < spec.trees; ++t) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(t) + 0xF0123));
    std::vector<std::uint32_t> bootstrap(n);
    std::fill(in_bag.begin(), in_bag.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto j = static_cast<std::uint32_t>(rng.below(n));
      bootstrap[i] = j;
      in_bag[j] = 1;
    }
    forest.trees.push_back(grow_tree(data, bootstrap, spec, rng));

    const Tree& tree = forest.trees.back();
    const std::size_t f_total = data.x.shape[1];
    for (std::size_t i = 0; i < n; ++i) {
      if (in_bag[i]) continue;
      const TreeNode* node = &tree.nodes[0];
      while (node->feature >= 0) {
        const double v = data.x.data[i * f_total + static_cast<std::size_t>(node->feature)];
        node = &tree.nodes[static_cast<std::size_t>(v <= node->threshold ? node->left : node->right)];
      }
      oob_sum[i] += node->class_frac[1];
      oob_votes[i] += 1;
    }
  }

  std::size_t counted = 0, correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (oob_votes[i] == 0) continue;
    ++counted;
    const int pred = oob_sum[i] / static_cast<double>(oob_votes[i]) >= 0.5 ? 1 : 0;
    if (pred == data.y[i]) ++correct;
  }
  forest.oob_accuracy = counted == 0 ? std::numeric_limits<double>::quiet_NaN()
                                     : static_cast<double>(correct) / static_cast<double>(counted);
  return forest;
}

std::array<double, 2> rf_predict_proba(const Forest& forest, std::span<const double> x) {
  if (forest.trees.empty()) throw std::invalid_argument("rf_predict_proba: empty forest");
  double p1 = 0.0;
  for (const Tree& tree : forest.trees) {
    const TreeNode* node = &tree.nodes[0];
    while (node->feature >= 0) {
      const double v = x[static_cast<std::size_t>(node->feature)];
      node = &tree.nodes[static_cast<std::size_t>(v <= node->threshold ? node->left : node->right)];
    }
    p1 += node->class_frac[1];
  }
  p1 /= static_cast<double>(forest.trees.size());
  return {1.0 - p1, p1};
}

Tensor rf_predict_proba_batch(const Forest& forest, const Tensor& x) {
  const std::size_t n = x.shape[0];
  const std::size_t f = x.shape[1];
  Tensor out = Tensor::zeros({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = rf_predict_proba(forest, std::span<const double>(x.data.data() + i * f, f));
    out.data[i * 2] = p[0];
    out.data[i * 2 + 1] = p[1];
  }
  return out;
}

}  // namespace aspm
