#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "aspm/nn.hpp"

namespace aspm {

enum class ModelFamily : std::uint8_t { mlp, cnn, rf };
enum class ModelSize : std::uint8_t { S, M, L };

const char* to_string(ModelFamily f);
const char* to_string(ModelSize s);
ModelFamily family_from_string(const std::string& s);
ModelSize size_from_string(const std::string& s);

// MLP: one hidden dense layer (50/100/200), ReLU, dropout, 2-way output.
// CNN: 3/4/5 conv blocks (kernel 5, same padding, filters doubling from 32,
// each followed by ReLU and width-2 max pooling), then 1x128 / 1x256 / 2x256
// dense layers with dropout, 2-way output.
ModelSpec build_spec(ModelFamily family, ModelSize size);

// --- random forest -----------------------------------------------------------

struct ForestSpec {
  int trees = 500;               // 50 / 200 / 500 for S / M / L
  int max_nodes_per_tree = 100;  // total node budget, grown best-first
  int features_per_split = 8;    // ~sqrt(60)
};

ForestSpec forest_spec(ModelSize size);

struct TreeNode {
  std::int32_t feature = -1;  // -1 = leaf
  double threshold = 0.0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  std::array<double, 2> class_frac{0.0, 0.0};  // leaf class frequencies
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
};

struct Forest {
  ForestSpec spec;
  std::vector<Tree> trees;
  double oob_accuracy = 0.0;  // NaN when no out-of-bag votes exist
};

// CART with bootstrap sampling, Gini impurity and per-node feature
// subsampling; each tree grows best-first until the node budget or purity.
Forest rf_fit(const LabeledData& data, const ForestSpec& spec, std::uint64_t seed);

std::array<double, 2> rf_predict_proba(const Forest& forest, std::span<const double> x);

// [n,2] probabilities, one row per input row.
Tensor rf_predict_proba_batch(const Forest& forest, const Tensor& x);

}  // namespace aspm
