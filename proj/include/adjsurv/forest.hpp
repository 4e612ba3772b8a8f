#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "adjsurv/errors.hpp"
#include "adjsurv/rng.hpp"

namespace adjsurv {

struct ForestParams {
  int n_trees = 500;
  int max_depth = 5;
  int min_leaf = 5;
  int mtry = 0;  // 0 selects ceil(p / 3)
  bool bootstrap = true;
  std::uint64_t seed = 20240601;
  int workers = 1;

  int resolved_mtry(int p) const {
    const int m = mtry > 0 ? mtry : (p + 2) / 3;
    return std::clamp(m, 1, std::max(p, 1));
  }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

class RegressionTree {
 public:
  RegressionTree() = default;
  explicit RegressionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  double predict(std::span<const double> row) const {
    int k = 0;
    while (nodes_[static_cast<std::size_t>(k)].feature >= 0) {
      const TreeNode& nd = nodes_[static_cast<std::size_t>(k)];
      k = row[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
    }
    return nodes_[static_cast<std::size_t>(k)].value;
  }

  const std::vector<TreeNode>& nodes() const { return nodes_; }

 private:
  std::vector<TreeNode> nodes_;
};

namespace detail {

/// CART regression tree grown on a (possibly repeated) index sample; splits
/// minimize the children's summed squared error.
class TreeBuilder {
 public:
  TreeBuilder(const Eigen::MatrixXd& x, std::span<const double> y, const ForestParams& params,
              rng::Stream& stream)
      : x_(x), y_(y), params_(params), stream_(stream),
        p_(static_cast<int>(x.cols())), mtry_(params.resolved_mtry(static_cast<int>(x.cols()))) {}

  RegressionTree build(std::vector<std::size_t> sample) {
    nodes_.clear();
    grow(sample, 0);
    return RegressionTree(std::move(nodes_));
  }

 private:
  int grow(std::vector<std::size_t>& idx, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    double sum = 0.0;
    for (std::size_t i : idx) sum += y_[i];
    const double m = static_cast<double>(idx.size());
    nodes_[static_cast<std::size_t>(id)].value = sum / m;

    if (depth >= params_.max_depth || idx.size() < 2 * static_cast<std::size_t>(params_.min_leaf) ||
        p_ == 0)
      return id;

    double sq = 0.0;
    for (std::size_t i : idx) sq += y_[i] * y_[i];
    const double parent_score = sum * sum / m;
    if (sq - parent_score <= 1e-14 * std::max(1.0, sq)) return id;

    std::vector<int> features(static_cast<std::size_t>(p_));
    std::iota(features.begin(), features.end(), 0);
    for (int k = 0; k < mtry_; ++k) {
      const auto j = static_cast<std::size_t>(k) + stream_.below(static_cast<std::uint64_t>(p_ - k));
      std::swap(features[static_cast<std::size_t>(k)], features[j]);
    }

    int best_feature = -1;
    double best_threshold = 0.0, best_gain = 0.0;
    std::vector<std::size_t> order = idx;
    const std::size_t min_leaf = static_cast<std::size_t>(params_.min_leaf);
    for (int k = 0; k < mtry_; ++k) {
      const int f = features[static_cast<std::size_t>(k)];
      const auto fe = static_cast<Eigen::Index>(f);
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double xa = x_(static_cast<Eigen::Index>(a), fe), xb = x_(static_cast<Eigen::Index>(b), fe);
        return xa < xb || (xa == xb && a < b);
      });
      double left = 0.0;
      for (std::size_t pos = 0; pos + 1 < order.size(); ++pos) {
        left += y_[order[pos]];
        const std::size_t nl = pos + 1, nr = order.size() - nl;
        if (nl < min_leaf) continue;
        if (nr < min_leaf) break;
        const double xl = x_(static_cast<Eigen::Index>(order[pos]), fe);
        const double xr = x_(static_cast<Eigen::Index>(order[pos + 1]), fe);
        if (!(xl < xr)) continue;
        const double right = sum - left;
        const double gain = left * left / static_cast<double>(nl) + right * right / static_cast<double>(nr) -
                            parent_score;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = f;
          best_threshold = xl + 0.5 * (xr - xl);
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<std::size_t> li, ri;
    const auto bf = static_cast<Eigen::Index>(best_feature);
    for (std::size_t i : idx) (x_(static_cast<Eigen::Index>(i), bf) <= best_threshold ? li : ri).push_back(i);
    idx.clear();
    idx.shrink_to_fit();
    const int l = grow(li, depth + 1);
    const int r = grow(ri, depth + 1);
    TreeNode& nd = nodes_[static_cast<std::size_t>(id)];
    nd.feature = best_feature;
    nd.threshold = best_threshold;
    nd.left = l;
    nd.right = r;
    return id;
  }

  const Eigen::MatrixXd& x_;
  std::span<const double> y_;
  const ForestParams& params_;
  rng::Stream& stream_;
  int p_;
  int mtry_;
  std::vector<TreeNode> nodes_;
};

}  // namespace detail

/// Bagged CART regression forest with per-split feature subsampling.
class RandomForest {
 public:
  RandomForest() = default;
  RandomForest(ForestParams params, int n_features, std::vector<RegressionTree> trees, double oob_r2)
      : params_(params), n_features_(n_features), trees_(std::move(trees)), oob_r2_(oob_r2) {}

  /// Trains on the rows of x. Each tree draws from its own child stream of
  /// params.seed, so the result does not depend on params.workers.
  static RandomForest fit(const Eigen::MatrixXd& x, std::span<const double> y, const ForestParams& params) {
    const std::size_t n = static_cast<std::size_t>(x.rows());
    if (n == 0 || y.size() != n) throw Error(ErrorCode::InvalidInput, "forest training data is empty or ragged");
    if (params.n_trees < 1 || params.max_depth < 0 || params.min_leaf < 1)
      throw Error(ErrorCode::InvalidInput, "invalid forest hyperparameters");
    const auto n_trees = static_cast<std::size_t>(params.n_trees);
    std::vector<RegressionTree> trees(n_trees);
    std::vector<std::vector<char>> in_bag(n_trees);

    auto work = [&](std::size_t t) {
      rng::Stream stream(params.seed, {0x7265656ULL, t});
      std::vector<std::size_t> sample(n);
      in_bag[t].assign(n, 0);
      for (std::size_t i = 0; i < n; ++i) {
        sample[i] = params.bootstrap ? static_cast<std::size_t>(stream.below(n)) : i;
        in_bag[t][sample[i]] = 1;
      }
      detail::TreeBuilder builder(x, y, params, stream);
      trees[t] = builder.build(std::move(sample));
    };
    const int workers = std::max(1, params.workers);
    if (workers == 1) {
      for (std::size_t t = 0; t < n_trees; ++t) work(t);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::jthread> pool;
      for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
          for (std::size_t t = next++; t < n_trees; t = next++) work(t);
        });
    }

    RandomForest forest(params, static_cast<int>(x.cols()), std::move(trees),
                        std::numeric_limits<double>::quiet_NaN());
    if (params.bootstrap) forest.oob_r2_ = forest.out_of_bag_r2(x, y, in_bag);
    return forest;
  }

  double predict(std::span<const double> row) const {
    if (static_cast<int>(row.size()) != n_features_)
      throw Error(ErrorCode::FeatureMismatch, "row length does not match the forest's feature count");
    double s = 0.0;
    for (const auto& t : trees_) s += t.predict(row);
    return s / static_cast<double>(trees_.size());
  }

  std::vector<double> predict(const Eigen::MatrixXd& x) const {
    std::vector<double> out(static_cast<std::size_t>(x.rows()));
    std::vector<double> row(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index k = 0; k < x.cols(); ++k) row[static_cast<std::size_t>(k)] = x(i, k);
      out[static_cast<std::size_t>(i)] = predict(row);
    }
    return out;
  }

  const ForestParams& params() const { return params_; }
  int n_features() const { return n_features_; }
  const std::vector<RegressionTree>& trees() const { return trees_; }
  /// NaN when no bootstrap was used or no row was ever out of bag.
  double oob_r2() const { return oob_r2_; }

 private:
  double out_of_bag_r2(const Eigen::MatrixXd& x, std::span<const double> y,
                       const std::vector<std::vector<char>>& in_bag) const {
    const std::size_t n = y.size();
    std::vector<double> pred(n, 0.0), cnt(n, 0.0);
    std::vector<double> row(static_cast<std::size_t>(x.cols()));
    for (std::size_t i = 0; i < n; ++i) {
      for (Eigen::Index k = 0; k < x.cols(); ++k) row[static_cast<std::size_t>(k)] = x(static_cast<Eigen::Index>(i), k);
      for (std::size_t t = 0; t < trees_.size(); ++t) {
        if (in_bag[t][i]) continue;
        pred[i] += trees_[t].predict(row);
        cnt[i] += 1.0;
      }
    }
    double ybar = 0.0, m = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (cnt[i] > 0.0) {
        ybar += y[i];
        m += 1.0;
      }
    if (m < 2.0) return std::numeric_limits<double>::quiet_NaN();
    ybar /= m;
    double sse = 0.0, sst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (cnt[i] == 0.0) continue;
      const double r = y[i] - pred[i] / cnt[i];
      sse += r * r;
      sst += (y[i] - ybar) * (y[i] - ybar);
    }
    return sst > 0.0 ? 1.0 - sse / sst : std::numeric_limits<double>::quiet_NaN();
  }

  ForestParams params_;
  int n_features_ = 0;
  std::vector<RegressionTree> trees_;
  double oob_r2_ = std::numeric_limits<double>::quiet_NaN();
};

}  // namespace adjsurv
