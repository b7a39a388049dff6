#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "dtr/error.hpp"
#include "dtr/io.hpp"
#include "dtr/quantile.hpp"
#include "dtr/random.hpp"
#include "dtr/table.hpp"

namespace dtr {

struct BoostingParams {
  double learning_rate = 0.026;
  int max_leaves = 19;
  double feature_fraction = 0.93;
  double bagging_fraction = 0.87;
  int n_rounds = 300;
  int early_stopping_rounds = 30;
  int min_data_in_leaf = 20;
  int max_bins = 63;
  double category_smoothing = 10.0;  // pseudo-count pulling category means towards the global mean

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (max_leaves < 2) throw ConfigError("max_leaves must be at least 2");
    if (!(feature_fraction > 0.0 && feature_fraction <= 1.0)) throw ConfigError("feature_fraction must lie in (0, 1]");
    if (!(bagging_fraction > 0.0 && bagging_fraction <= 1.0)) throw ConfigError("bagging_fraction must lie in (0, 1]");
    if (n_rounds < 1) throw ConfigError("n_rounds must be positive");
    if (min_data_in_leaf < 1) throw ConfigError("min_data_in_leaf must be positive");
    if (max_bins < 2 || max_bins > 256) throw ConfigError("max_bins must lie in [2, 256]");
  }
};

struct TreeNode {
  int feature = -1;  // < 0 marks a leaf
  double threshold = 0.0;  // x <= threshold goes left
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf output, learning rate already applied
  double gain = 0.0;   // split gain, for importance
};

struct RegressionTree {
  std::vector<TreeNode> nodes;

  [[nodiscard]] double predict(std::span<const double> x) const {
    int i = 0;
    while (nodes[i].feature >= 0) i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    return nodes[i].value;
  }
  [[nodiscard]] int n_leaves() const {
    return static_cast<int>(std::count_if(nodes.begin(), nodes.end(), [](const auto& n) { return n.feature < 0; }));
  }
};

/// Target-mean encoding of one categorical column.
struct CategoryEncoding {
  std::size_t column = 0;
  std::vector<std::pair<double, double>> values;  // (category code, encoded value), sorted by code
  double fallback = 0.0;

  [[nodiscard]] double encode(double code) const {
    const auto it = std::lower_bound(values.begin(), values.end(), std::make_pair(code, -std::numeric_limits<double>::infinity()));
    return it != values.end() && it->first == code ? it->second : fallback;
  }
};

/// Gradient-boosted regression trees minimising pinball loss at one quantile level.
struct QuantileEnsemble {
  double quantile = 0.5;
  double base_score = 0.0;
  std::vector<std::string> columns;
  std::vector<CategoryEncoding> encodings;
  std::vector<RegressionTree> trees;
  std::uint64_t seed = 0;

  [[nodiscard]] std::vector<double> encode(std::span<const double> raw) const {
    std::vector<double> x(raw.begin(), raw.end());
    for (const auto& e : encodings) x[e.column] = e.encode(raw[e.column]);
    return x;
  }

  [[nodiscard]] double predict_encoded(std::span<const double> x) const {
    double s = base_score;
    for (const auto& t : trees) s += t.predict(x);
    return s;
  }

  [[nodiscard]] double predict(std::span<const double> raw) const {
    if (raw.size() != columns.size()) {
      throw ParameterError(fmt::format("row has {} values, model expects {}", raw.size(), columns.size()));
    }
    return predict_encoded(encode(raw));
  }

  /// Total split gain attributed to each column.
  [[nodiscard]] std::vector<double> importance() const {
    std::vector<double> imp(columns.size(), 0.0);
    for (const auto& t : trees) {
      for (const auto& n : t.nodes) {
        if (n.feature >= 0) imp[n.feature] += n.gain;
      }
    }
    return imp;
  }
};

namespace detail {

inline std::vector<CategoryEncoding> fit_encodings(const TrainingTable& t, double smoothing) {
  std::vector<CategoryEncoding> out;
  if (t.n_rows() == 0) return out;
  const double prior = std::accumulate(t.target.begin(), t.target.end(), 0.0) / static_cast<double>(t.n_rows());
  for (std::size_t c = 0; c < t.n_cols(); ++c) {
    if (!t.categorical[c]) continue;
    std::vector<std::pair<double, double>> pairs;
    pairs.reserve(t.n_rows());
    for (std::size_t r = 0; r < t.n_rows(); ++r) pairs.emplace_back(t.at(r, c), t.target[r]);
    std::sort(pairs.begin(), pairs.end());
    CategoryEncoding enc{c, {}, prior};
    for (std::size_t i = 0; i < pairs.size();) {
      std::size_t j = i;
      double sum = 0.0;
      while (j < pairs.size() && pairs[j].first == pairs[i].first) sum += pairs[j++].second;
      const double n = static_cast<double>(j - i);
      enc.values.emplace_back(pairs[i].first, (sum + smoothing * prior) / (n + smoothing));
      i = j;
    }
    out.push_back(std::move(enc));
  }
  return out;
}

/// Cut points such that bin(x) = #cuts < x and "bin <= b" is equivalent to "x <= cuts[b]".
inline std::vector<double> fit_cuts(std::vector<double> v, int max_bins) {
  std::sort(v.begin(), v.end());
  std::vector<double> distinct;
  for (double x : v) {
    if (distinct.empty() || x != distinct.back()) distinct.push_back(x);
  }
  std::vector<double> cuts;
  if (distinct.size() <= 1) return cuts;
  auto midpoint = [](double a, double b) {
    const double m = a + 0.5 * (b - a);
    return m < b ? m : a;
  };
  if (static_cast<int>(distinct.size()) <= max_bins) {
    for (std::size_t i = 0; i + 1 < distinct.size(); ++i) cuts.push_back(midpoint(distinct[i], distinct[i + 1]));
    return cuts;
  }
  for (int b = 1; b < max_bins; ++b) {
    const auto pos = static_cast<std::size_t>(static_cast<double>(b) * static_cast<double>(v.size()) / max_bins);
    const double at = v[std::min(pos, v.size() - 1)];
    const auto next = std::upper_bound(distinct.begin(), distinct.end(), at);
    if (next == distinct.end()) break;
    const double cut = midpoint(at, *next);
    if (cuts.empty() || cut > cuts.back()) cuts.push_back(cut);
  }
  return cuts;
}

inline std::uint8_t bin_of(const std::vector<double>& cuts, double x) {
  return static_cast<std::uint8_t>(std::lower_bound(cuts.begin(), cuts.end(), x) - cuts.begin());
}

}  // namespace detail

/// Trainable booster: owns the model plus binned training rows and their current scores, so that
/// boosting can resume after rows are appended.
class QuantileBooster {
 public:
  QuantileBooster(double quantile, BoostingParams params, std::uint64_t seed) : params_(params) {
    if (!(quantile > 0.0 && quantile < 1.0)) throw ParameterError("quantile level must lie in (0, 1)");
    params_.validate();
    model_.quantile = quantile;
    model_.seed = seed;
  }

  /// Resumes from a stored model and the table it was trained on.
  QuantileBooster(QuantileEnsemble model, BoostingParams params, const TrainingTable& data) : params_(params) {
    params_.validate();
    model_ = std::move(model);
    if (data.columns != model_.columns) throw ParameterError("resume table does not match model schema");
    load(data, /*fit_encodings=*/false);
    for (std::size_t r = 0; r < n_rows(); ++r) scores_[r] = model_.predict_encoded(encoded_row(r));
  }

  /// Fits from scratch. With a validation table, stops once validation pinball loss has not
  /// improved for `early_stopping_rounds` and keeps the best prefix of trees.
  int fit(const TrainingTable& train, const TrainingTable* validation = nullptr) {
    if (train.n_rows() == 0) throw InsufficientDataError("cannot train on an empty table");
    model_.columns = train.columns;
    model_.trees.clear();
    load(train, /*fit_encodings=*/true);
    std::vector<double> y = y_;
    model_.base_score = sample_quantile(y, model_.quantile);
    std::fill(scores_.begin(), scores_.end(), model_.base_score);

    if (validation == nullptr || validation->n_rows() == 0) {
      boost(params_.n_rounds);
      return static_cast<int>(model_.trees.size());
    }
    if (validation->columns != train.columns) throw ParameterError("validation schema differs from training schema");
    std::vector<std::vector<double>> vx;
    for (std::size_t r = 0; r < validation->n_rows(); ++r) vx.push_back(model_.encode(validation->row(r)));
    std::vector<double> vscore(validation->n_rows(), model_.base_score);
    double best = mean_pinball_loss(validation->target, vscore, model_.quantile);
    std::size_t best_trees = 0;
    for (int round = 0; round < params_.n_rounds; ++round) {
      boost(1);
      const auto& tree = model_.trees.back();
      for (std::size_t r = 0; r < vx.size(); ++r) vscore[r] += tree.predict(vx[r]);
      const double loss = mean_pinball_loss(validation->target, vscore, model_.quantile);
      if (loss < best) {
        best = loss;
        best_trees = model_.trees.size();
      } else if (static_cast<int>(model_.trees.size() - best_trees) >= params_.early_stopping_rounds) {
        break;
      }
    }
    model_.trees.resize(best_trees);
    return static_cast<int>(best_trees);
  }

  /// Appends realised rows (binned with the existing cut points) and boosts `rounds` more trees.
  void append_and_boost(const TrainingTable& rows, int rounds) {
    if (rows.n_rows() == 0) return;
    if (rows.columns != model_.columns) throw ParameterError("appended rows do not match model schema");
    for (std::size_t r = 0; r < rows.n_rows(); ++r) {
      const auto x = model_.encode(rows.row(r));
      x_.insert(x_.end(), x.begin(), x.end());
      for (std::size_t c = 0; c < n_cols(); ++c) bins_.push_back(detail::bin_of(cuts_[c], x[c]));
      y_.push_back(rows.target[r]);
      keys_.push_back(rows.keys[r]);
      scores_.push_back(model_.predict_encoded(x));
    }
    sort_rows();
    boost(rounds);
  }

  void boost(int rounds) {
    for (int i = 0; i < rounds; ++i) grow_one_tree();
  }

  [[nodiscard]] const QuantileEnsemble& model() const { return model_; }
  [[nodiscard]] std::size_t n_rows() const { return y_.size(); }
  [[nodiscard]] std::size_t n_cols() const { return model_.columns.size(); }

  /// Mean pinball loss of the current model on its own training rows.
  [[nodiscard]] double training_loss() const { return mean_pinball_loss(y_, scores_, model_.quantile); }

 private:
  [[nodiscard]] std::span<const double> encoded_row(std::size_t r) const {
    return std::span<const double>(x_).subspan(r * n_cols(), n_cols());
  }

  void load(const TrainingTable& t, bool fit_encodings) {
    if (fit_encodings) model_.encodings = detail::fit_encodings(t, params_.category_smoothing);
    const std::size_t m = t.n_cols();
    x_.resize(t.n_rows() * m);
    for (std::size_t r = 0; r < t.n_rows(); ++r) {
      const auto x = model_.encode(t.row(r));
      std::copy(x.begin(), x.end(), x_.begin() + static_cast<std::ptrdiff_t>(r * m));
    }
    y_ = t.target;
    keys_ = t.keys;
    scores_.assign(t.n_rows(), 0.0);
    cuts_.assign(m, {});
    std::vector<double> col(t.n_rows());
    for (std::size_t c = 0; c < m; ++c) {
      for (std::size_t r = 0; r < t.n_rows(); ++r) col[r] = x_[r * m + c];
      cuts_[c] = detail::fit_cuts(col, params_.max_bins);
    }
    bins_.resize(x_.size());
    for (std::size_t i = 0; i < x_.size(); ++i) bins_[i] = detail::bin_of(cuts_[i % m], x_[i]);
    sort_rows();
  }

  /// Canonical row order (by key, then target, then values) so results do not depend on input order.
  void sort_rows() {
    const std::size_t n = n_rows(), m = n_cols();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
      if (keys_[a] != keys_[b]) return keys_[a] < keys_[b];
      if (y_[a] != y_[b]) return y_[a] < y_[b];
      return std::lexicographical_compare(x_.begin() + a * m, x_.begin() + (a + 1) * m, x_.begin() + b * m,
                                          x_.begin() + (b + 1) * m);
    });
    auto permute = [&](auto& vec, std::size_t width) {
      auto copy = vec;
      for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(copy.begin() + perm[i] * width, width, vec.begin() + i * width);
      }
    };
    permute(x_, m);
    permute(bins_, m);
    permute(y_, 1);
    permute(keys_, 1);
    permute(scores_, 1);
  }

  struct Split {
    int feature = -1;
    int bin = -1;
    double gain = 0.0;
  };

  struct Leaf {
    std::size_t begin = 0, end = 0;  // range in order_
    int node = 0;
    double sum_grad = 0.0;
    std::vector<double> hist_grad;
    std::vector<std::uint32_t> hist_count;
    Split best;
  };

  void build_histogram(Leaf& leaf, const std::vector<std::size_t>& offsets, const std::vector<int>& features) {
    leaf.hist_grad.assign(offsets.back(), 0.0);
    leaf.hist_count.assign(offsets.back(), 0);
    const std::size_t m = n_cols();
    for (std::size_t i = leaf.begin; i < leaf.end; ++i) {
      const auto r = order_[i];
      const std::uint8_t* b = &bins_[r * m];
      const double g = grad_[r];
      for (int f : features) {
        const auto slot = offsets[f] + b[f];
        leaf.hist_grad[slot] += g;
        ++leaf.hist_count[slot];
      }
    }
  }

  void find_best_split(Leaf& leaf, const std::vector<std::size_t>& offsets, const std::vector<int>& features) const {
    leaf.best = Split{};
    const double n = static_cast<double>(leaf.end - leaf.begin);
    const double parent = leaf.sum_grad * leaf.sum_grad / n;
    const auto min_leaf = static_cast<std::uint32_t>(params_.min_data_in_leaf);
    for (int f : features) {
      const std::size_t nb = cuts_[f].size() + 1;
      if (nb < 2) continue;
      double gl = 0.0;
      std::uint32_t cl = 0;
      for (std::size_t b = 0; b + 1 < nb; ++b) {
        gl += leaf.hist_grad[offsets[f] + b];
        cl += leaf.hist_count[offsets[f] + b];
        if (cl < min_leaf) continue;
        const auto cr = static_cast<std::uint32_t>(leaf.end - leaf.begin) - cl;
        if (cr < min_leaf) break;
        const double gr = leaf.sum_grad - gl;
        const double gain = gl * gl / cl + gr * gr / cr - parent;
        if (gain > leaf.best.gain + 1e-12) leaf.best = Split{f, static_cast<int>(b), gain};
      }
    }
  }

  void grow_one_tree() {
    const std::size_t n = n_rows(), m = n_cols();
    const double q = model_.quantile;
    Rng rng(mix_seed(model_.seed, model_.trees.size()));
    const auto n_bag = params_.bagging_fraction >= 1.0
                           ? n
                           : std::max<std::size_t>(1, static_cast<std::size_t>(params_.bagging_fraction * static_cast<double>(n)));
    const auto n_feat = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(params_.feature_fraction * static_cast<double>(m))));
    order_ = rng.sample_indices(n, n_bag);
    std::vector<int> features;
    for (auto f : rng.sample_indices(m, n_feat)) features.push_back(static_cast<int>(f));

    grad_.resize(n);
    for (std::size_t r = 0; r < n; ++r) grad_[r] = y_[r] > scores_[r] ? q : q - 1.0;

    std::vector<std::size_t> offsets(m + 1, 0);
    for (std::size_t c = 0; c < m; ++c) offsets[c + 1] = offsets[c] + cuts_[c].size() + 1;

    RegressionTree tree;
    tree.nodes.push_back(TreeNode{});
    std::vector<Leaf> leaves(1);
    leaves[0].begin = 0;
    leaves[0].end = order_.size();
    for (auto r : order_) leaves[0].sum_grad += grad_[r];
    build_histogram(leaves[0], offsets, features);
    find_best_split(leaves[0], offsets, features);

    while (static_cast<int>(leaves.size()) < params_.max_leaves) {
      std::size_t pick = leaves.size();
      double best_gain = 0.0;
      for (std::size_t i = 0; i < leaves.size(); ++i) {
        if (leaves[i].best.feature >= 0 && leaves[i].best.gain > best_gain) {
          best_gain = leaves[i].best.gain;
          pick = i;
        }
      }
      if (pick == leaves.size()) break;
      Leaf parent = std::move(leaves[pick]);
      const int f = parent.best.feature;
      const int bin = parent.best.bin;
      const auto mid = std::stable_partition(order_.begin() + static_cast<std::ptrdiff_t>(parent.begin),
                                             order_.begin() + static_cast<std::ptrdiff_t>(parent.end),
                                             [&](std::size_t r) { return bins_[r * m + f] <= bin; }) - order_.begin();
      Leaf left, right;
      left.begin = parent.begin;
      left.end = static_cast<std::size_t>(mid);
      right.begin = static_cast<std::size_t>(mid);
      right.end = parent.end;
      for (std::size_t i = left.begin; i < left.end; ++i) left.sum_grad += grad_[order_[i]];
      right.sum_grad = parent.sum_grad - left.sum_grad;

      Leaf& small = (left.end - left.begin) <= (right.end - right.begin) ? left : right;
      Leaf& large = &small == &left ? right : left;
      build_histogram(small, offsets, features);
      large.hist_grad = std::move(parent.hist_grad);
      large.hist_count = std::move(parent.hist_count);
      for (std::size_t s = 0; s < large.hist_grad.size(); ++s) {
        large.hist_grad[s] -= small.hist_grad[s];
        large.hist_count[s] -= small.hist_count[s];
      }

      auto& node = tree.nodes[parent.node];
      node.feature = f;
      node.threshold = cuts_[f][bin];
      node.gain = parent.best.gain;
      node.left = static_cast<int>(tree.nodes.size());
      node.right = node.left + 1;
      left.node = node.left;
      right.node = node.right;
      tree.nodes.push_back(TreeNode{});
      tree.nodes.push_back(TreeNode{});
      find_best_split(left, offsets, features);
      find_best_split(right, offsets, features);
      leaves[pick] = std::move(left);
      leaves.push_back(std::move(right));
    }

    // Leaf outputs: the q-quantile of the bagged residuals in each leaf, shrunk by the learning rate.
    std::vector<double> resid;
    for (const auto& leaf : leaves) {
      resid.clear();
      for (std::size_t i = leaf.begin; i < leaf.end; ++i) resid.push_back(y_[order_[i]] - scores_[order_[i]]);
      tree.nodes[leaf.node].value = params_.learning_rate * sample_quantile(std::span<double>(resid), q);
    }
    for (std::size_t r = 0; r < n; ++r) {
      int i = 0;
      while (tree.nodes[i].feature >= 0) {
        const auto& nd = tree.nodes[i];
        i = x_[r * m + nd.feature] <= nd.threshold ? nd.left : nd.right;
      }
      scores_[r] += tree.nodes[i].value;
    }
    model_.trees.push_back(std::move(tree));
  }

  BoostingParams params_;
  QuantileEnsemble model_;
  std::vector<double> x_;  // encoded, row-major
  std::vector<std::uint8_t> bins_;
  std::vector<double> y_;
  std::vector<std::uint64_t> keys_;
  std::vector<double> scores_;
  std::vector<std::vector<double>> cuts_;
  std::vector<std::size_t> order_;
  std::vector<double> grad_;
};

// ---------------------------------------------------------------------------------------------
// Text serialisation (doubles printed with 17 significant digits round-trip exactly)

inline void write_ensemble(std::ostream& out, const QuantileEnsemble& m) {
  out << "ensemble " << fmt_double(m.quantile) << ' ' << fmt_double(m.base_score) << ' ' << m.seed << '\n';
  out << "columns " << m.columns.size();
  for (const auto& c : m.columns) out << ' ' << c;
  out << '\n';
  out << "encodings " << m.encodings.size() << '\n';
  for (const auto& e : m.encodings) {
    out << e.column << ' ' << fmt_double(e.fallback) << ' ' << e.values.size();
    for (const auto& [k, v] : e.values) out << ' ' << fmt_double(k) << ' ' << fmt_double(v);
    out << '\n';
  }
  out << "trees " << m.trees.size() << '\n';
  for (const auto& t : m.trees) {
    out << t.nodes.size();
    for (const auto& n : t.nodes) {
      out << ' ' << n.feature << ' ' << fmt_double(n.threshold) << ' ' << n.left << ' ' << n.right << ' '
          << fmt_double(n.value) << ' ' << fmt_double(n.gain);
    }
    out << '\n';
  }
}

inline QuantileEnsemble read_ensemble(std::istream& in) {
  auto expect = [&](std::string_view word) {
    std::string w;
    if (!(in >> w) || w != word) throw DataValidationError(fmt::format("model store: expected '{}'", word));
  };
  auto num = [&] {
    std::string w;
    if (!(in >> w)) throw DataValidationError("model store: truncated");
    return parse_double(w);
  };
  QuantileEnsemble m;
  expect("ensemble");
  m.quantile = num();
  m.base_score = num();
  in >> m.seed;
  expect("columns");
  std::size_t nc = 0;
  in >> nc;
  m.columns.resize(nc);
  for (auto& c : m.columns) in >> c;
  expect("encodings");
  std::size_t ne = 0;
  in >> ne;
  for (std::size_t i = 0; i < ne; ++i) {
    CategoryEncoding e;
    std::size_t nv = 0;
    in >> e.column;
    e.fallback = num();
    in >> nv;
    for (std::size_t j = 0; j < nv; ++j) {
      const double k = num();
      e.values.emplace_back(k, num());
    }
    m.encodings.push_back(std::move(e));
  }
  expect("trees");
  std::size_t nt = 0;
  in >> nt;
  m.trees.resize(nt);
  for (auto& t : m.trees) {
    std::size_t nn = 0;
    in >> nn;
    t.nodes.resize(nn);
    for (auto& n : t.nodes) {
      in >> n.feature;
      n.threshold = num();
      in >> n.left >> n.right;
      n.value = num();
      n.gain = num();
    }
  }
  if (!in) throw DataValidationError("model store: malformed ensemble");
  return m;
}

}  // namespace dtr
