#include <gtest/gtest.h>

#include <random>

#include "adjsurv/adjsurv.hpp"

using namespace adjsurv;

TEST(Forest, StepTargetIsLearned) {
  std::mt19937_64 g(51);
  std::normal_distribution<double> z;
  const int n = 200;
  Eigen::MatrixXd x(n, 1);
  std::vector<double> y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = z(g);
    y[static_cast<std::size_t>(i)] = x(i, 0) > 0 ? 1.0 : -1.0;
  }
  const RandomForest f = RandomForest::fit(x, y, ForestParams{});
  EXPECT_GT(f.oob_r2(), 0.8);
  EXPECT_EQ(f.trees().size(), 500u);
  EXPECT_NEAR(f.predict(std::vector<double>{2.0}), 1.0, 0.05);
  EXPECT_NEAR(f.predict(std::vector<double>{-2.0}), -1.0, 0.05);
}

TEST(Forest, DeterministicAcrossWorkers) {
  std::mt19937_64 g(52);
  std::normal_distribution<double> z;
  Eigen::MatrixXd x(150, 3);
  std::vector<double> y(150);
  for (int i = 0; i < 150; ++i) {
    for (int k = 0; k < 3; ++k) x(i, k) = z(g);
    y[static_cast<std::size_t>(i)] = x(i, 0) * x(i, 1) + z(g);
  }
  ForestParams p;
  p.n_trees = 60;
  p.workers = 1;
  const RandomForest a = RandomForest::fit(x, y, p);
  p.workers = 4;
  const RandomForest b = RandomForest::fit(x, y, p);
  ASSERT_EQ(a.trees().size(), b.trees().size());
  for (std::size_t t = 0; t < a.trees().size(); ++t) {
    const auto& na = a.trees()[t].nodes();
    const auto& nb = b.trees()[t].nodes();
    ASSERT_EQ(na.size(), nb.size());
    for (std::size_t k = 0; k < na.size(); ++k) {
      EXPECT_EQ(na[k].feature, nb[k].feature);
      EXPECT_EQ(na[k].threshold, nb[k].threshold);
      EXPECT_EQ(na[k].value, nb[k].value);
    }
  }
  EXPECT_EQ(a.oob_r2(), b.oob_r2());
}

TEST(Forest, RespectsDepthAndLeafSize) {
  std::mt19937_64 g(53);
  std::normal_distribution<double> z;
  Eigen::MatrixXd x(300, 2);
  std::vector<double> y(300);
  for (int i = 0; i < 300; ++i) {
    x(i, 0) = z(g);
    x(i, 1) = z(g);
    y[static_cast<std::size_t>(i)] = std::sin(3 * x(i, 0)) + z(g) * 0.1;
  }
  ForestParams p;
  p.n_trees = 20;
  p.max_depth = 3;
  p.min_leaf = 7;
  p.bootstrap = false;
  const RandomForest f = RandomForest::fit(x, y, p);
  EXPECT_TRUE(std::isnan(f.oob_r2()));
  for (const auto& t : f.trees()) {
    // Depth by walking from the root.
    std::vector<std::pair<int, int>> stack{{0, 0}};
    while (!stack.empty()) {
      auto [k, depth] = stack.back();
      stack.pop_back();
      const auto& nd = t.nodes()[static_cast<std::size_t>(k)];
      EXPECT_LE(depth, 3);
      if (nd.feature >= 0) {
        stack.push_back({nd.left, depth + 1});
        stack.push_back({nd.right, depth + 1});
      }
    }
  }
  // Each leaf must hold at least min_leaf rows when every row is in bag.
  for (const auto& t : f.trees()) {
    std::vector<int> count(t.nodes().size(), 0);
    for (int i = 0; i < 300; ++i) {
      int k = 0;
      while (t.nodes()[static_cast<std::size_t>(k)].feature >= 0) {
        const auto& nd = t.nodes()[static_cast<std::size_t>(k)];
        k = x(i, nd.feature) <= nd.threshold ? nd.left : nd.right;
      }
      ++count[static_cast<std::size_t>(k)];
    }
    for (std::size_t k = 0; k < count.size(); ++k) EXPECT_TRUE(t.nodes()[k].feature >= 0 || count[k] >= 7);
  }
}

TEST(Forest, RowLengthMismatch) {
  Eigen::MatrixXd x(20, 2);
  x.setRandom();
  std::vector<double> y(20, 0.0);
  for (int i = 0; i < 20; ++i) y[static_cast<std::size_t>(i)] = x(i, 0);
  ForestParams p;
  p.n_trees = 3;
  const RandomForest f = RandomForest::fit(x, y, p);
  try {
    f.predict(std::vector<double>{1.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FeatureMismatch);
  }
}

TEST(Rng, StreamsAreReproducibleAndDistinct) {
  rng::Stream a(1, {2, 3}), b(1, {2, 3}), c(1, {2, 4});
  for (int k = 0; k < 5; ++k) {
    const auto va = a(), vb = b(), vc = c();
    EXPECT_EQ(va, vb);
    EXPECT_NE(va, vc);
  }
  rng::Stream s(99);
  double m = 0.0, v = 0.0;
  const int n = 200000;
  for (int k = 0; k < n; ++k) {
    const double x = s.normal();
    m += x;
    v += x * x;
  }
  EXPECT_NEAR(m / n, 0.0, 0.01);
  EXPECT_NEAR(v / n, 1.0, 0.01);
  double e = 0.0;
  for (int k = 0; k < n; ++k) e += s.exponential(2.0);
  EXPECT_NEAR(e / n, 0.5, 0.005);
}

TEST(Parallel, RethrowsAndCoversAllIndices) {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) {
                 if (i == 7) throw std::runtime_error("boom");
               }),
               std::runtime_error);
}
