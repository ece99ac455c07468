#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "gman/error.hpp"

namespace gman {

inline constexpr double kUnreachable = std::numeric_limits<double>::infinity();
inline constexpr double kDefaultAdjacencyThreshold = 0.1;

/// Row-major N×N matrix of doubles.
struct SquareMatrix {
  std::size_t n = 0;
  std::vector<double> values;

  SquareMatrix() = default;
  SquareMatrix(std::size_t size, double fill) : n(size), values(size * size, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return values[i * n + j]; }
  double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
};

/// Population standard deviation of the finite distance entries, zero
/// diagonal included.
inline double distance_spread(const SquareMatrix& distances) {
  double total = 0.0, total_sq = 0.0;
  std::size_t count = 0;
  for (double d : distances.values) {
    if (!std::isfinite(d)) continue;
    total += d;
    total_sq += d * d;
    ++count;
  }
  if (count == 0) return 0.0;
  const double mean = total / static_cast<double>(count);
  return std::sqrt(std::max(0.0, total_sq / static_cast<double>(count) - mean * mean));
}

/// exp(-d²/σ²), or 0 when below `epsilon` or when d is +inf.
inline double kernel_weight(double d, double sigma, double epsilon = kDefaultAdjacencyThreshold) {
  if (!std::isfinite(d)) return 0.0;
  const double w = std::exp(-(d * d) / (sigma * sigma));
  return w >= epsilon ? w : 0.0;
}

/// Thresholded Gaussian kernel: A[i][j] = exp(-d²/σ²) when that value is at
/// least `epsilon`, else 0. Unreachable (+inf) pairs get weight 0.
inline SquareMatrix build_adjacency(const SquareMatrix& distances, double epsilon = kDefaultAdjacencyThreshold) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("adjacency threshold must lie in (0, 1)");
  for (std::size_t i = 0; i < distances.n; ++i) {
    for (std::size_t j = 0; j < distances.n; ++j) {
      const double d = distances(i, j);
      if (std::isnan(d) || d < 0.0)
        throw InputError("negative or NaN distance at (" + std::to_string(i) + "," + std::to_string(j) + ")");
    }
    if (distances(i, i) != 0.0) throw InputError("nonzero self-distance at vertex " + std::to_string(i));
  }
  const double sigma = distance_spread(distances);
  if (!(sigma > 0.0)) throw InputError("degenerate graph: distance standard deviation is zero");
  SquareMatrix adjacency(distances.n, 0.0);
  for (std::size_t k = 0; k < distances.values.size(); ++k)
    adjacency.values[k] = kernel_weight(distances.values[k], sigma, epsilon);
  return adjacency;
}

struct RoadGraph {
  std::vector<std::string> vertex_ids;
  SquareMatrix distances;  // meters, +inf where no road connection is listed
  SquareMatrix adjacency;

  std::size_t vertex_count() const { return vertex_ids.size(); }

  std::size_t index_of(const std::string& id) const {
    auto it = std::find(vertex_ids.begin(), vertex_ids.end(), id);
    if (it == vertex_ids.end()) throw InputError("unknown vertex id '" + id + "'");
    return static_cast<std::size_t>(it - vertex_ids.begin());
  }

  /// Outgoing neighbors with positive adjacency, self-loops excluded.
  std::vector<std::pair<std::size_t, double>> neighbors(std::size_t v) const {
    std::vector<std::pair<std::size_t, double>> out;
    for (std::size_t j = 0; j < vertex_count(); ++j)
      if (j != v && adjacency(v, j) > 0.0) out.emplace_back(j, adjacency(v, j));
    return out;
  }

  std::size_t edge_count() const {
    std::size_t n = 0;
    for (std::size_t v = 0; v < vertex_count(); ++v) n += neighbors(v).size();
    return n;
  }
};

inline RoadGraph make_graph(std::vector<std::string> ids, SquareMatrix distances,
                            double epsilon = kDefaultAdjacencyThreshold) {
  if (ids.empty()) throw InputError("empty graph");
  if (distances.n != ids.size()) throw InputError("distance matrix size disagrees with vertex count");
  RoadGraph g;
  g.vertex_ids = std::move(ids);
  g.adjacency = build_adjacency(distances, epsilon);
  g.distances = std::move(distances);
  return g;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline double parse_number(const std::string& text, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw InputError(where + ": cannot parse number '" + text + "'");
  }
}

}  // namespace detail

/// Reads an edge list with header `from,to,distance`. Vertices are ordered by
/// first appearance; unlisted pairs are unreachable.
inline RoadGraph load_graph(std::istream& in, const std::string& source = "<graph>",
                            double epsilon = kDefaultAdjacencyThreshold) {
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  std::vector<std::string> ids;
  std::unordered_map<std::string, std::size_t> index;
  struct Edge {
    std::size_t from, to;
    double distance;
  };
  std::vector<Edge> edges;
  auto intern = [&](const std::string& id) {
    auto [it, inserted] = index.emplace(id, ids.size());
    if (inserted) ids.push_back(id);
    return it->second;
  };
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto cells = detail::split_csv(t);
    if (!header) {
      if (cells != std::vector<std::string>{"from", "to", "distance"})
        throw InputError(where + ": expected header 'from,to,distance'");
      header = true;
      continue;
    }
    if (cells.size() != 3 || cells[0].empty() || cells[1].empty())
      throw InputError(where + ": expected 3 fields 'from,to,distance'");
    const double d = detail::parse_number(cells[2], where);
    if (!(d >= 0.0) || !std::isfinite(d)) throw InputError(where + ": distance must be finite and non-negative");
    const std::size_t a = intern(cells[0]);
    const std::size_t b = intern(cells[1]);
    if (a == b && d != 0.0) throw InputError(where + ": self-edge with nonzero distance");
    edges.push_back({a, b, d});
  }
  if (ids.empty()) throw InputError(source + ": empty graph");
  SquareMatrix distances(ids.size(), kUnreachable);
  for (std::size_t i = 0; i < ids.size(); ++i) distances(i, i) = 0.0;
  for (const auto& e : edges) distances(e.from, e.to) = e.distance;
  return make_graph(std::move(ids), std::move(distances), epsilon);
}

inline RoadGraph load_graph_file(const std::string& path, double epsilon = kDefaultAdjacencyThreshold) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open graph file '" + path + "'");
  return load_graph(in, path, epsilon);
}

inline void write_graph(std::ostream& out, const RoadGraph& graph) {
  out << "from,to,distance\n";
  out.precision(17);
  const std::size_t n = graph.vertex_count();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && std::isfinite(graph.distances(i, j)))
        out << graph.vertex_ids[i] << ',' << graph.vertex_ids[j] << ',' << graph.distances(i, j) << '\n';
}

/// Random planar road network: sensors scattered uniformly over a square,
/// with a road distance for every ordered pair equal to the straight-line
/// distance times an independent detour factor in [1, 1.3].
inline RoadGraph make_synthetic_graph(std::size_t vertices, std::uint64_t seed, double extent_m = 10000.0) {
  if (vertices < 2) throw ConfigError("synthetic graph needs at least 2 vertices");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coord(0.0, extent_m);
  std::uniform_real_distribution<double> stretch(1.0, 1.3);
  std::vector<std::pair<double, double>> pos(vertices);
  for (auto& p : pos) p = {coord(rng), coord(rng)};
  SquareMatrix distances(vertices, 0.0);
  for (std::size_t i = 0; i < vertices; ++i)
    for (std::size_t j = 0; j < vertices; ++j)
      if (i != j)
        distances(i, j) = std::hypot(pos[i].first - pos[j].first, pos[i].second - pos[j].second) * stretch(rng);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < vertices; ++i) ids.push_back("s" + std::to_string(i));
  return make_graph(std::move(ids), std::move(distances));
}

}  // namespace gman
