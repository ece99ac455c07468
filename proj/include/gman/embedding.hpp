#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "gman/calendar.hpp"
#include "gman/graph.hpp"
#include "gman/nn.hpp"
#include "gman/tensor.hpp"

namespace gman {

struct Node2VecOptions {
  double p = 1.0;
  double q = 1.0;
  std::size_t walk_length = 80;
  std::size_t walks_per_vertex = 10;
  std::size_t window = 10;
  std::size_t dimensions = 64;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 0;
};

using Walk = std::vector<std::size_t>;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b);
}

inline std::size_t sample_weighted(const std::vector<double>& weights, std::mt19937_64& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  std::uniform_real_distribution<double> u(0.0, total);
  double r = u(rng);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (r < weights[i]) return i;
    r -= weights[i];
  }
  return weights.size() - 1;
}

}  // namespace detail

/// Unnormalized second-order transition weights over `next` (the neighbors of
/// the current vertex) given the previously visited vertex: the edge weight
/// times 1/p for returning, 1 for neighbors of `previous`, 1/q otherwise.
inline std::vector<double> node2vec_bias(const RoadGraph& graph, std::size_t previous,
                                         const std::vector<std::pair<std::size_t, double>>& next, double p, double q) {
  std::vector<double> w;
  w.reserve(next.size());
  for (const auto& [x, weight] : next) {
    if (x == previous)
      w.push_back(weight / p);
    else if (graph.adjacency(x, previous) > 0.0)
      w.push_back(weight);
    else
      w.push_back(weight / q);
  }
  return w;
}

/// Second-order biased random walks. Each walk has its own generator seeded
/// from (seed, start vertex, repetition), so results do not depend on the
/// order walks are produced in.
inline std::vector<Walk> node2vec_walks(const RoadGraph& graph, const Node2VecOptions& opt) {
  if (!(opt.p > 0.0) || !(opt.q > 0.0)) throw ConfigError("node2vec p and q must be positive");
  if (opt.walk_length == 0) throw ConfigError("walk length must be positive");
  const std::size_t n = graph.vertex_count();
  std::vector<std::vector<std::pair<std::size_t, double>>> adj(n);
  for (std::size_t v = 0; v < n; ++v) adj[v] = graph.neighbors(v);

  std::vector<Walk> walks;
  walks.reserve(n * opt.walks_per_vertex);
  for (std::size_t rep = 0; rep < opt.walks_per_vertex; ++rep) {
    for (std::size_t start = 0; start < n; ++start) {
      std::mt19937_64 rng(detail::mix_seed(opt.seed, start, rep));
      Walk walk{start};
      while (walk.size() < opt.walk_length) {
        const std::size_t cur = walk.back();
        const auto& next = adj[cur];
        if (next.empty()) break;
        std::vector<double> weights;
        if (walk.size() == 1) {
          for (const auto& e : next) weights.push_back(e.second);
        } else {
          weights = node2vec_bias(graph, walk[walk.size() - 2], next, opt.p, opt.q);
        }
        walk.push_back(next[detail::sample_weighted(weights, rng)].first);
      }
      walks.push_back(std::move(walk));
    }
  }
  return walks;
}

struct SkipGramResult {
  std::vector<double> vectors;  // vertex_count × dimensions, row-major
  std::size_t dimensions = 0;
  std::vector<std::size_t> unseen;  // vertices absent from every walk (zero rows)
  std::size_t positive_pairs = 0;
};

/// Skip-gram with negative sampling over vertex walks. Negatives are drawn
/// from the walk frequency distribution raised to 3/4; the learning rate
/// decays linearly to 1e-4 of its start.
inline SkipGramResult skipgram_train(const std::vector<Walk>& walks, std::size_t vertex_count,
                                     const Node2VecOptions& opt, std::ostream* warnings = nullptr) {
  if (walks.empty()) throw InputError("skip-gram: no walks");
  const std::size_t dim = opt.dimensions;
  if (dim == 0) throw ConfigError("embedding dimension must be positive");
  std::vector<double> counts(vertex_count, 0.0);
  for (const auto& w : walks)
    for (auto v : w) {
      if (v >= vertex_count) throw InputError("walk references vertex outside the graph");
      counts[v] += 1.0;
    }

  std::mt19937_64 rng(detail::mix_seed(opt.seed, 0x5167));
  SkipGramResult result;
  result.dimensions = dim;
  result.vectors.assign(vertex_count * dim, 0.0);
  std::vector<double> context(vertex_count * dim, 0.0);
  std::uniform_real_distribution<double> init(-0.5 / static_cast<double>(dim), 0.5 / static_cast<double>(dim));
  for (double& v : result.vectors) v = init(rng);

  std::vector<double> noise(vertex_count);
  for (std::size_t v = 0; v < vertex_count; ++v) noise[v] = std::pow(counts[v], 0.75);
  std::discrete_distribution<std::size_t> negative(noise.begin(), noise.end());

  std::size_t total_pairs = 0;
  for (const auto& w : walks)
    for (std::size_t i = 0; i < w.size(); ++i) {
      const std::size_t lo = i >= opt.window ? i - opt.window : 0;
      const std::size_t hi = std::min(w.size() - 1, i + opt.window);
      total_pairs += hi - lo;
    }
  result.positive_pairs = total_pairs;
  const double planned = static_cast<double>(std::max<std::size_t>(1, total_pairs * opt.epochs));

  std::vector<double> accum(dim);
  std::size_t done = 0;
  auto sigmoid_of = [](double x) { return 1.0 / (1.0 + std::exp(-std::clamp(x, -30.0, 30.0))); };
  for (std::size_t epoch = 0; epoch < opt.epochs && total_pairs > 0; ++epoch) {
    for (const auto& w : walks) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        const std::size_t lo = i >= opt.window ? i - opt.window : 0;
        const std::size_t hi = std::min(w.size() - 1, i + opt.window);
        for (std::size_t j = lo; j <= hi; ++j) {
          if (j == i) continue;
          const double lr = opt.learning_rate * std::max(1e-4, 1.0 - static_cast<double>(done++) / planned);
          double* center = result.vectors.data() + w[i] * dim;
          std::fill(accum.begin(), accum.end(), 0.0);
          for (std::size_t s = 0; s <= opt.negatives; ++s) {
            std::size_t target = w[j];
            double label = 1.0;
            if (s > 0) {
              target = negative(rng);
              if (target == w[j]) continue;
              label = 0.0;
            }
            double* ctx = context.data() + target * dim;
            double dot = 0.0;
            for (std::size_t k = 0; k < dim; ++k) dot += center[k] * ctx[k];
            const double g = lr * (label - sigmoid_of(dot));
            for (std::size_t k = 0; k < dim; ++k) {
              accum[k] += g * ctx[k];
              ctx[k] += g * center[k];
            }
          }
          for (std::size_t k = 0; k < dim; ++k) center[k] += accum[k];
        }
      }
    }
  }
  for (std::size_t v = 0; v < vertex_count; ++v)
    if (counts[v] == 0.0) {
      std::fill_n(result.vectors.begin() + static_cast<std::ptrdiff_t>(v * dim), dim, 0.0);
      result.unseen.push_back(v);
      if (warnings) *warnings << "warning: vertex " << v << " never appears in a walk; using a zero embedding\n";
    }
  return result;
}

/// Raw node2vec vectors for every vertex of `graph` as an N×dim tensor.
inline Tensor node2vec_embedding(const RoadGraph& graph, const Node2VecOptions& opt, std::ostream* warnings = nullptr) {
  const auto walks = node2vec_walks(graph, opt);
  auto trained = skipgram_train(walks, graph.vertex_count(), opt, warnings);
  return Tensor::from({graph.vertex_count(), opt.dimensions}, std::move(trained.vectors));
}

// ---------------------------------------------------------------------------
// Precomputed embedding file: header `vertex_id,v0,...,v{D-1}`.

inline Tensor load_embedding(std::istream& in, const std::vector<std::string>& vertex_ids,
                             const std::string& source = "<embedding>") {
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  std::unordered_map<std::string, std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto cells = detail::split_csv(t);
    if (dim == 0) {
      if (cells.size() < 2 || cells[0] != "vertex_id") throw InputError(where + ": expected header 'vertex_id,v0,...'");
      for (std::size_t k = 1; k < cells.size(); ++k)
        if (cells[k] != "v" + std::to_string(k - 1)) throw InputError(where + ": unexpected column '" + cells[k] + "'");
      dim = cells.size() - 1;
      continue;
    }
    if (cells.size() != dim + 1) throw InputError(where + ": expected " + std::to_string(dim + 1) + " fields");
    std::vector<double> v(dim);
    for (std::size_t k = 0; k < dim; ++k) v[k] = detail::parse_number(cells[k + 1], where);
    if (!rows.emplace(cells[0], std::move(v)).second) throw InputError(where + ": duplicate vertex '" + cells[0] + "'");
  }
  if (dim == 0) throw InputError(source + ": empty embedding file");
  std::vector<double> values;
  values.reserve(vertex_ids.size() * dim);
  for (const auto& id : vertex_ids) {
    auto it = rows.find(id);
    if (it == rows.end()) throw InputError(source + ": no embedding for vertex '" + id + "'");
    values.insert(values.end(), it->second.begin(), it->second.end());
  }
  return Tensor::from({vertex_ids.size(), dim}, std::move(values));
}

inline Tensor load_embedding_file(const std::string& path, const std::vector<std::string>& vertex_ids) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open embedding file '" + path + "'");
  return load_embedding(in, vertex_ids, path);
}

inline void write_embedding(std::ostream& out, const Tensor& vectors, const std::vector<std::string>& vertex_ids) {
  const std::size_t dim = vectors.extent(1);
  out << "vertex_id";
  for (std::size_t k = 0; k < dim; ++k) out << ",v" << k;
  out << '\n';
  out.precision(17);
  for (std::size_t v = 0; v < vertex_ids.size(); ++v) {
    out << vertex_ids[v];
    for (std::size_t k = 0; k < dim; ++k) out << ',' << vectors.data()[v * dim + k];
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Spatio-temporal embedding

/// Day-of-week and time-of-day one-hot features, shape (batch, steps, 7 + T).
/// The day-of-week block comes first.
inline Tensor time_features(const std::vector<std::vector<TimeSlot>>& windows, int steps_per_day) {
  if (windows.empty()) throw InputError("no time windows");
  const std::size_t steps = windows.front().size();
  const std::size_t width = 7 + static_cast<std::size_t>(steps_per_day);
  std::vector<double> values(windows.size() * steps * width, 0.0);
  for (std::size_t b = 0; b < windows.size(); ++b) {
    if (windows[b].size() != steps) throw DimensionError("time windows of unequal length");
    for (std::size_t s = 0; s < steps; ++s) {
      const TimeSlot& slot = windows[b][s];
      validate_slot(slot, steps_per_day);
      if (s > 0 && !(slot == next_slot(windows[b][s - 1], steps_per_day)))
        throw InputError("window timestamps are not consecutive steps");
      double* row = values.data() + (b * steps + s) * width;
      row[slot.day_of_week] = 1.0;
      row[7 + static_cast<std::size_t>(slot.time_of_day)] = 1.0;
    }
  }
  return Tensor::from({windows.size(), steps, width}, std::move(values));
}

/// E[b, j, i, :] = spatial[i, :] + temporal[b, j, :], shape (B, S, N, D).
inline Tensor build_ste(const Tensor& spatial, const Tensor& temporal) {
  if (spatial.rank() != 2 || temporal.rank() != 3 || spatial.extent(1) != temporal.extent(2))
    throw DimensionError("build_ste: spatial " + shape_string(spatial.shape()) + " vs temporal " +
                         shape_string(temporal.shape()));
  return add(expand(temporal, 2, spatial.extent(0)), spatial);
}

/// Frozen node2vec vectors and calendar one-hots, each passed through a
/// trainable two-layer network to width D, then summed per (step, vertex).
class SpatioTemporalEmbedding {
 public:
  SpatioTemporalEmbedding() = default;
  SpatioTemporalEmbedding(ParameterRegistry& registry, Tensor raw_vectors, int steps_per_day, std::size_t width)
      : raw_(std::move(raw_vectors)),
        steps_per_day_(steps_per_day),
        spatial_(registry, "ste.spatial", raw_.extent(1), width, width),
        temporal_(registry, "ste.temporal", 7 + static_cast<std::size_t>(steps_per_day), width, width) {
    if (raw_.requires_grad()) throw ConfigError("raw node2vec vectors must be frozen");
  }

  Tensor spatial() const { return spatial_(raw_); }
  Tensor temporal(const std::vector<std::vector<TimeSlot>>& windows) const {
    return temporal_(time_features(windows, steps_per_day_));
  }
  Tensor operator()(const std::vector<std::vector<TimeSlot>>& windows) const {
    return build_ste(spatial(), temporal(windows));
  }

  const Tensor& raw_vectors() const { return raw_; }
  int steps_per_day() const { return steps_per_day_; }
  const TwoLayer& spatial_projection() const { return spatial_; }
  const TwoLayer& temporal_projection() const { return temporal_; }

 private:
  Tensor raw_;
  int steps_per_day_ = kDefaultStepsPerDay;
  TwoLayer spatial_;
  TwoLayer temporal_;
};

}  // namespace gman
