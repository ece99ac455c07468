#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "gman/graph.hpp"

using namespace gman;

namespace {

SquareMatrix matrix(std::size_t n, std::vector<double> values) {
  SquareMatrix m;
  m.n = n;
  m.values = std::move(values);
  return m;
}

double two_pass_std(const std::vector<double>& values) {
  double mean = 0.0;
  std::size_t n = 0;
  for (double v : values)
    if (std::isfinite(v)) mean += v, ++n;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : values)
    if (std::isfinite(v)) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(n));
}

}  // namespace

TEST(Adjacency, KernelSpotValues) {
  EXPECT_DOUBLE_EQ(kernel_weight(0.0, 10.0), 1.0);
  EXPECT_NEAR(kernel_weight(10.0, 10.0), 0.367879, 1e-6);
  EXPECT_EQ(kernel_weight(20.0, 10.0), 0.0);  // exp(-4) ≈ 0.018 is below 0.1
  EXPECT_NEAR(kernel_weight(20.0, 10.0, 0.01), 0.0183156, 1e-6);
  EXPECT_EQ(kernel_weight(kUnreachable, 10.0), 0.0);
}

TEST(Adjacency, SigmaIsPopulationStdIncludingDiagonal) {
  // Entries {0, 20, 20, 0}: mean 10, population std 10.
  const auto d = matrix(2, {0, 20, 20, 0});
  EXPECT_DOUBLE_EQ(distance_spread(d), 10.0);
  const auto a = build_adjacency(d);
  EXPECT_EQ(a(0, 0), 1.0);
  EXPECT_EQ(a(1, 1), 1.0);
  EXPECT_EQ(a(0, 1), 0.0);
}

TEST(Adjacency, MatchesIndependentKernelOnRandomDistances) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 500.0);
  const std::size_t n = 7;
  SquareMatrix d(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) d(i, j) = (i + 2 * j) % 5 == 0 ? kUnreachable : u(rng);
  const double sigma = two_pass_std(d.values);
  EXPECT_NEAR(distance_spread(d), sigma, 1e-9);
  const auto a = build_adjacency(d, 0.1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double dij = d(i, j);
      const double w = std::isfinite(dij) ? std::exp(-dij * dij / (sigma * sigma)) : 0.0;
      EXPECT_NEAR(a(i, j), w >= 0.1 ? w : 0.0, 1e-12);
    }
}

TEST(Adjacency, ThresholdLeavesNothingBetweenZeroAndEpsilon) {
  const auto g = make_synthetic_graph(30, 8);
  for (double w : g.adjacency.values) EXPECT_TRUE(w == 0.0 || (w >= kDefaultAdjacencyThreshold && w <= 1.0));
  for (std::size_t i = 0; i < g.vertex_count(); ++i) EXPECT_EQ(g.adjacency(i, i), 1.0);
}

TEST(Adjacency, MonotoneInDistance) {
  double previous = 1.0;
  for (double d = 0.0; d < 50.0; d += 0.5) {
    const double w = kernel_weight(d, 10.0);
    EXPECT_LE(w, previous);
    previous = w;
  }
}

TEST(Adjacency, AsymmetryIsPreserved) {
  const auto a = build_adjacency(matrix(3, {0, 1, 50, kUnreachable, 0, 50, 50, 50, 0}));
  EXPECT_GT(a(0, 1), 0.5);
  EXPECT_EQ(a(1, 0), 0.0);
}

TEST(Adjacency, Errors) {
  EXPECT_THROW(build_adjacency(matrix(2, {0, 0, 0, 0})), InputError);
  EXPECT_THROW(build_adjacency(matrix(2, {0, -1, 3, 0})), InputError);
  EXPECT_THROW(build_adjacency(matrix(2, {1, 2, 3, 0})), InputError);
  EXPECT_THROW(build_adjacency(matrix(2, {0, 2, 3, 0}), 0.0), ConfigError);
  EXPECT_THROW(build_adjacency(matrix(2, {0, 2, 3, 0}), 1.0), ConfigError);
}

TEST(LoadGraph, SingleEdgeFile) {
  std::istringstream in("from,to,distance\na,b,100\n");
  const auto g = load_graph(in);
  ASSERT_EQ(g.vertex_count(), 2u);
  EXPECT_EQ(g.vertex_ids[0], "a");
  EXPECT_EQ(g.distances(0, 1), 100.0);
  EXPECT_EQ(g.distances(1, 0), kUnreachable);
  EXPECT_EQ(g.adjacency(1, 0), 0.0);
}

TEST(LoadGraph, FirstAppearanceOrder) {
  std::istringstream in("from,to,distance\nz,y,10\ny,x,20\nx,z,5\n");
  const auto g = load_graph(in);
  EXPECT_EQ(g.vertex_ids, (std::vector<std::string>{"z", "y", "x"}));
  EXPECT_EQ(g.index_of("x"), 2u);
  EXPECT_THROW(g.index_of("w"), InputError);
}

TEST(LoadGraph, EmptyFileIsRejected) {
  std::istringstream empty("");
  EXPECT_THROW(load_graph(empty), InputError);
  std::istringstream header_only("from,to,distance\n");
  EXPECT_THROW(load_graph(header_only), InputError);
}

TEST(LoadGraph, MalformedRowNamesTheLine) {
  std::istringstream in("from,to,distance\na,b,1\na,c,abc\n");
  try {
    load_graph(in, "roads.csv");
    FAIL() << "expected an input error";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("roads.csv:3"), std::string::npos) << e.what();
  }
  std::istringstream negative("from,to,distance\na,b,-4\n");
  EXPECT_THROW(load_graph(negative), InputError);
  std::istringstream short_row("from,to,distance\na,b\n");
  EXPECT_THROW(load_graph(short_row), InputError);
}

TEST(LoadGraph, MissingFileNamesThePath) {
  try {
    load_graph_file("/nonexistent/roads.csv");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/roads.csv"), std::string::npos);
  }
}

TEST(LoadGraph, WriteThenReadRoundTrip) {
  const auto g = make_synthetic_graph(12, 3);
  std::stringstream buf;
  write_graph(buf, g);
  const auto back = load_graph(buf);
  ASSERT_EQ(back.vertex_count(), g.vertex_count());
  for (std::size_t i = 0; i < g.vertex_count(); ++i)
    for (std::size_t j = 0; j < g.vertex_count(); ++j) {
      const std::size_t bi = back.index_of(g.vertex_ids[i]), bj = back.index_of(g.vertex_ids[j]);
      if (std::isfinite(g.distances(i, j)))
        EXPECT_NEAR(back.distances(bi, bj), g.distances(i, j), 1e-9 * g.distances(i, j) + 1e-12);
      else
        EXPECT_EQ(back.distances(bi, bj), kUnreachable);
    }
}

TEST(SyntheticGraph, DeterministicAndConnectedToNeighbors) {
  const auto a = make_synthetic_graph(20, 7);
  const auto b = make_synthetic_graph(20, 7);
  EXPECT_EQ(a.distances.values, b.distances.values);
  for (std::size_t v = 0; v < a.vertex_count(); ++v) EXPECT_FALSE(a.neighbors(v).empty()) << "vertex " << v;
}
