#pragma once

// Spatial, group-spatial, temporal and transform attention plus gated fusion.
//
// Hidden states and embeddings are laid out as (batch, steps, vertices, D).
// Each attention role (query, key, value) is a single ReLU-affine projection
// to K·d columns; column block k is the projection of head k. Attention is
// evaluated per head as softmax(q·kᵀ/√d)·v and the heads are concatenated.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gman/nn.hpp"
#include "gman/tensor.hpp"

namespace gman {

struct MultiHeadConfig {
  std::size_t heads = 8;
  std::size_t head_dim = 8;

  std::size_t model_dim() const { return heads * head_dim; }
  void validate() const {
    if (heads == 0 || head_dim == 0) throw ConfigError("attention heads and head dimension must be positive");
  }
};

/// Attention weights and score count captured during a forward pass.
struct AttentionTrace {
  Tensor weights;                    // (..., K, queries, keys)
  std::size_t scores_per_step = 0;   // per head, per time step
};

/// Query/key/value projections for one attention mechanism.
struct AttentionProjections {
  Dense query;
  Dense key;
  Dense value;

  AttentionProjections() = default;
  AttentionProjections(ParameterRegistry& registry, const std::string& name, std::size_t query_in,
                       std::size_t key_in, std::size_t value_in, const MultiHeadConfig& cfg)
      : query(registry, name + ".query", query_in, cfg.model_dim(), true),
        key(registry, name + ".key", key_in, cfg.model_dim(), true),
        value(registry, name + ".value", value_in, cfg.model_dim(), true) {}
};

namespace detail {

// (..., L, K·d) -> (..., K, L, d)
inline Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t r = x.rank();
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  shape.push_back(heads);
  shape.push_back(x.extent(-1) / heads);
  std::vector<std::size_t> axes(r + 1);
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[r - 2], axes[r - 1]);
  return permute(reshape(x, shape), axes);
}

// (..., K, L, d) -> (..., L, K·d)
inline Tensor merge_heads(const Tensor& x) {
  const std::size_t r = x.rank();
  std::vector<std::size_t> axes(r);
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[r - 3], axes[r - 2]);
  Tensor y = permute(x, axes);
  Shape shape(y.shape().begin(), y.shape().end() - 2);
  shape.push_back(x.extent(-3) * x.extent(-1));
  return reshape(y, shape);
}

inline Tensor multihead(const Tensor& query_in, const Tensor& key_in, const Tensor& value_in,
                        const AttentionProjections& proj, const MultiHeadConfig& cfg, const Mask* mask,
                        AttentionTrace* trace) {
  const Tensor q = split_heads(proj.query(query_in), cfg.heads);
  const Tensor k = split_heads(proj.key(key_in), cfg.heads);
  const Tensor v = split_heads(proj.value(value_in), cfg.heads);
  const Tensor scores = affine(matmul_transposed(q, k), 1.0 / std::sqrt(static_cast<double>(cfg.head_dim)));
  const Tensor weights = softmax_lastdim(scores, mask);
  if (trace) trace->weights = weights;
  return merge_heads(matmul(weights, v));
}

inline void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(what) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

inline void require_layout(const Tensor& x, std::size_t width, const char* what) {
  if (x.rank() != 4 || x.extent(3) != width)
    throw DimensionError(std::string(what) + ": expected (batch, steps, vertices, " + std::to_string(width) + "), got " +
                         shape_string(x.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Spatial attention

/// Every vertex attends to every vertex at the same time step. Scores use
/// hidden state concatenated with the embedding; values use the hidden state.
class SpatialAttention {
 public:
  SpatialAttention() = default;
  SpatialAttention(ParameterRegistry& registry, const std::string& name, const MultiHeadConfig& cfg)
      : cfg_(cfg), proj_(registry, name, 2 * cfg.model_dim(), 2 * cfg.model_dim(), cfg.model_dim(), cfg) {
    cfg.validate();
  }

  Tensor operator()(const Tensor& hidden, const Tensor& ste, AttentionTrace* trace = nullptr) const {
    return attend(hidden, ste, proj_, cfg_, trace);
  }

  static Tensor attend(const Tensor& hidden, const Tensor& ste, const AttentionProjections& proj,
                       const MultiHeadConfig& cfg, AttentionTrace* trace = nullptr) {
    detail::require_layout(hidden, cfg.model_dim(), "spatial attention");
    detail::require_same(hidden, ste, "spatial attention");
    const Tensor x = concat_lastdim({hidden, ste});
    if (trace) trace->scores_per_step = hidden.extent(2) * hidden.extent(2);
    return detail::multihead(x, x, hidden, proj, cfg, nullptr, trace);
  }

  const AttentionProjections& projections() const { return proj_; }
  const MultiHeadConfig& config() const { return cfg_; }

 private:
  MultiHeadConfig cfg_;
  AttentionProjections proj_;
};

// ---------------------------------------------------------------------------
// Group spatial attention

/// Random assignment of vertices to G groups of M = ceil(N/G) slots. When G
/// does not divide N, the last G·M − N groups each carry one padded slot.
struct GroupPartition {
  std::size_t vertices = 0;
  std::size_t groups = 0;
  std::size_t group_size = 0;
  std::uint64_t seed = 0;
  std::vector<std::int64_t> slots;          // G·M entries, vertex index or -1 for padding
  std::vector<std::int64_t> pool_slots;     // padding redirected to a real slot of the same group
  std::vector<std::int64_t> slot_of_vertex;
  std::vector<std::int64_t> group_of_vertex;

  static GroupPartition random(std::size_t vertices, std::size_t groups, std::uint64_t seed, bool allow_padding = true) {
    if (vertices == 0 || groups == 0) throw ConfigError("group partition needs vertices and groups");
    if (groups > vertices) throw ConfigError("more groups than vertices");
    if (vertices % groups != 0 && !allow_padding)
      throw ConfigError("partition error: " + std::to_string(groups) + " groups do not divide " +
                        std::to_string(vertices) + " vertices and padding is disabled");
    GroupPartition p;
    p.vertices = vertices;
    p.groups = groups;
    p.group_size = (vertices + groups - 1) / groups;
    p.seed = seed;
    std::vector<std::int64_t> order(vertices);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t padded = groups * p.group_size - vertices;
    const std::size_t m = p.group_size;
    p.slots.assign(groups * m, -1);
    p.slot_of_vertex.assign(vertices, -1);
    p.group_of_vertex.assign(vertices, -1);
    std::size_t next = 0;
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t members = g >= groups - padded ? m - 1 : m;
      if (members == 0) throw ConfigError("group partition leaves an empty group");
      for (std::size_t s = 0; s < members; ++s) {
        const auto v = order[next++];
        p.slots[g * m + s] = v;
        p.slot_of_vertex[static_cast<std::size_t>(v)] = static_cast<std::int64_t>(g * m + s);
        p.group_of_vertex[static_cast<std::size_t>(v)] = static_cast<std::int64_t>(g);
      }
    }
    p.pool_slots.resize(groups * m);
    for (std::size_t i = 0; i < groups * m; ++i)
      p.pool_slots[i] = p.slots[i] >= 0 ? static_cast<std::int64_t>(i) : static_cast<std::int64_t>(i / m * m);
    return p;
  }

  bool padded() const { return groups * group_size != vertices; }
};

/// Attention scores computed per time step when N vertices are split into
/// groups of M: N·M intra-group plus (N/M)² inter-group.
inline double group_attention_cost(double vertices, double group_size) {
  return vertices * group_size + (vertices / group_size) * (vertices / group_size);
}

/// Group size in 1..N minimizing N·M + (N/M)²; ties resolve to the smaller M.
inline std::size_t optimal_group_size(std::size_t vertices) {
  if (vertices == 0) throw ConfigError("optimal group size needs at least one vertex");
  std::size_t best = 1;
  double best_cost = group_attention_cost(static_cast<double>(vertices), 1.0);
  for (std::size_t m = 2; m <= vertices; ++m) {
    const double c = group_attention_cost(static_cast<double>(vertices), static_cast<double>(m));
    if (c < best_cost) {
      best_cost = c;
      best = m;
    }
  }
  return best;
}

/// Intra-group attention, per-group max-pooling, inter-group attention among
/// the pooled group vectors, and output = local feature + its group's global
/// feature. Group keys for the inter-group stage pool member embeddings the
/// same way as member features.
class GroupSpatialAttention {
 public:
  GroupSpatialAttention() = default;
  GroupSpatialAttention(ParameterRegistry& registry, const std::string& name, const MultiHeadConfig& cfg,
                        GroupPartition partition)
      : cfg_(cfg),
        partition_(std::move(partition)),
        intra_(registry, name + ".intra", 2 * cfg.model_dim(), 2 * cfg.model_dim(), cfg.model_dim(), cfg),
        inter_(registry, name + ".inter", 2 * cfg.model_dim(), 2 * cfg.model_dim(), cfg.model_dim(), cfg) {
    cfg.validate();
    const std::size_t g = partition_.groups, m = partition_.group_size;
    mask_.shape = {g, cfg.heads, m, m};
    mask_.keep.resize(g * cfg.heads * m * m);
    for (std::size_t gi = 0; gi < g; ++gi)
      for (std::size_t k = 0; k < cfg.heads; ++k)
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < m; ++j)
            mask_.keep[((gi * cfg.heads + k) * m + i) * m + j] = partition_.slots[gi * m + j] >= 0;
  }

  struct Trace {
    AttentionTrace intra;
    AttentionTrace inter;
    std::size_t scores_per_step = 0;  // per head: G·M² + G²
  };

  Tensor operator()(const Tensor& hidden, const Tensor& ste, Trace* trace = nullptr) const {
    const auto stages = run(hidden, ste, trace);
    return add(gather(stages.local_slots, 2, partition_.slot_of_vertex),
               gather(stages.global, 2, partition_.group_of_vertex));
  }

  /// Output of the intra-group stage alone, in vertex order.
  Tensor local_features(const Tensor& hidden, const Tensor& ste) const {
    return gather(run(hidden, ste, nullptr).local_slots, 2, partition_.slot_of_vertex);
  }

  const GroupPartition& partition() const { return partition_; }
  const AttentionProjections& intra_projections() const { return intra_; }
  const AttentionProjections& inter_projections() const { return inter_; }

 private:
  struct Stages {
    Tensor local_slots;  // (B, S, G·M, D)
    Tensor global;       // (B, S, G, D)
  };

  Stages run(const Tensor& hidden, const Tensor& ste, Trace* trace) const {
    const std::size_t width = cfg_.model_dim();
    detail::require_layout(hidden, width, "group spatial attention");
    detail::require_same(hidden, ste, "group spatial attention");
    if (hidden.extent(2) != partition_.vertices)
      throw DimensionError("group spatial attention: partition covers " + std::to_string(partition_.vertices) +
                           " vertices, input has " + std::to_string(hidden.extent(2)));
    const std::size_t b = hidden.extent(0), s = hidden.extent(1);
    const std::size_t g = partition_.groups, m = partition_.group_size;
    const Shape grouped{b, s, g, m, width};
    const Tensor h = reshape(gather(hidden, 2, partition_.slots), grouped);
    const Tensor e = reshape(gather(ste, 2, partition_.slots), grouped);
    const Tensor x = concat_lastdim({h, e});
    Stages out;
    const Tensor local = detail::multihead(x, x, h, intra_, cfg_, &mask_, trace ? &trace->intra : nullptr);
    out.local_slots = reshape(local, {b, s, g * m, width});

    const Tensor pooled = max_axis(reshape(gather(out.local_slots, 2, partition_.pool_slots), grouped), 3);
    const Tensor pooled_ste = max_axis(reshape(gather(reshape(e, {b, s, g * m, width}), 2, partition_.pool_slots), grouped), 3);
    const Tensor xg = concat_lastdim({pooled, pooled_ste});
    out.global = detail::multihead(xg, xg, pooled, inter_, cfg_, nullptr, trace ? &trace->inter : nullptr);
    if (trace) {
      trace->intra.scores_per_step = g * m * m;
      trace->inter.scores_per_step = g * g;
      trace->scores_per_step = g * m * m + g * g;
    }
    return out;
  }

  MultiHeadConfig cfg_;
  GroupPartition partition_;
  AttentionProjections intra_;
  AttentionProjections inter_;
  Mask mask_;
};

// ---------------------------------------------------------------------------
// Temporal attention

/// Keep-mask for attending from step i to step j: j <= i, or j < i when
/// `exclude_self` is set and a predecessor exists.
inline Mask causal_mask(std::size_t steps, bool exclude_self = false) {
  Mask mask;
  mask.shape = {steps, steps};
  mask.keep.assign(steps * steps, 0);
  for (std::size_t i = 0; i < steps; ++i)
    for (std::size_t j = 0; j <= i; ++j)
      mask.keep[i * steps + j] = !(exclude_self && i > 0 && j == i);
  return mask;
}

/// Each vertex attends over the time steps of its own series.
class TemporalAttention {
 public:
  TemporalAttention() = default;
  TemporalAttention(ParameterRegistry& registry, const std::string& name, const MultiHeadConfig& cfg, bool causal,
                    bool exclude_self = false)
      : cfg_(cfg),
        causal_(causal),
        exclude_self_(exclude_self),
        proj_(registry, name, 2 * cfg.model_dim(), 2 * cfg.model_dim(), cfg.model_dim(), cfg) {
    cfg.validate();
  }

  Tensor operator()(const Tensor& hidden, const Tensor& ste, AttentionTrace* trace = nullptr) const {
    detail::require_layout(hidden, cfg_.model_dim(), "temporal attention");
    detail::require_same(hidden, ste, "temporal attention");
    const std::size_t steps = hidden.extent(1);
    const Tensor h = permute(hidden, {0, 2, 1, 3});  // (B, N, S, D)
    const Tensor x = concat_lastdim({h, permute(ste, {0, 2, 1, 3})});
    const Mask mask = causal_mask(steps, exclude_self_);
    if (trace) trace->scores_per_step = steps;
    const Tensor out = detail::multihead(x, x, h, proj_, cfg_, causal_ ? &mask : nullptr, trace);
    return permute(out, {0, 2, 1, 3});
  }

  bool causal() const { return causal_; }
  const AttentionProjections& projections() const { return proj_; }

 private:
  MultiHeadConfig cfg_;
  bool causal_ = true;
  bool exclude_self_ = false;
  AttentionProjections proj_;
};

// ---------------------------------------------------------------------------
// Gated fusion

/// z = σ(HS·W1 + HT·W2 + b); output = z ⊙ HS + (1 − z) ⊙ HT, evaluated as
/// HT + z ⊙ (HS − HT).
class GatedFusion {
 public:
  GatedFusion() = default;
  GatedFusion(ParameterRegistry& registry, const std::string& name, std::size_t width)
      : spatial_weight_(registry.weight(name + ".spatial_weight", width, width)),
        temporal_weight_(registry.weight(name + ".temporal_weight", width, width)),
        bias_(registry.bias(name + ".bias", width)) {}

  Tensor operator()(const Tensor& hs, const Tensor& ht, Tensor* gate = nullptr) const {
    detail::require_same(hs, ht, "gated fusion");
    const Tensor z = sigmoid(add(add(matmul(hs, spatial_weight_), matmul(ht, temporal_weight_)), bias_));
    if (gate) *gate = z;
    return add(ht, mul(z, sub(hs, ht)));
  }

  const Tensor& spatial_weight() const { return spatial_weight_; }
  const Tensor& temporal_weight() const { return temporal_weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor spatial_weight_;
  Tensor temporal_weight_;
  Tensor bias_;
};

// ---------------------------------------------------------------------------
// Transform attention

/// Each future step attends over all historical steps of the same vertex.
/// Scores depend on the embeddings only; values come from the encoder output.
class TransformAttention {
 public:
  TransformAttention() = default;
  TransformAttention(ParameterRegistry& registry, const std::string& name, const MultiHeadConfig& cfg)
      : cfg_(cfg), proj_(registry, name, cfg.model_dim(), cfg.model_dim(), cfg.model_dim(), cfg) {
    cfg.validate();
  }

  Tensor operator()(const Tensor& encoded, const Tensor& ste_history, const Tensor& ste_future,
                    AttentionTrace* trace = nullptr) const {
    if (encoded.rank() == 4 && encoded.extent(1) == 0) throw InputError("transform attention: empty history");
    detail::require_layout(encoded, cfg_.model_dim(), "transform attention");
    detail::require_same(encoded, ste_history, "transform attention");
    detail::require_layout(ste_future, cfg_.model_dim(), "transform attention");
    if (ste_future.extent(0) != encoded.extent(0) || ste_future.extent(2) != encoded.extent(2))
      throw DimensionError("transform attention: future embedding " + shape_string(ste_future.shape()) +
                           " does not match history " + shape_string(encoded.shape()));
    const std::vector<std::size_t> vertex_major{0, 2, 1, 3};
    if (trace) trace->scores_per_step = encoded.extent(1);
    const Tensor out = detail::multihead(permute(ste_future, vertex_major), permute(ste_history, vertex_major),
                                         permute(encoded, vertex_major), proj_, cfg_, nullptr, trace);
    return permute(out, vertex_major);
  }

  const AttentionProjections& projections() const { return proj_; }

 private:
  MultiHeadConfig cfg_;
  AttentionProjections proj_;
};

// ---------------------------------------------------------------------------
// ST-Attention block

enum class BlockVariant {
  full,
  no_spatial,   // output = H + HT
  no_temporal,  // output = H + HS
  no_gate,      // output = H + (HS + HT) / 2
};

struct BlockOptions {
  BlockVariant variant = BlockVariant::full;
  bool causal = true;
  bool exclude_self = false;
  std::optional<GroupPartition> partition;  // group spatial attention when set
};

/// Spatial and temporal attention fused by a learned gate, wrapped in a
/// residual connection.
class STAttentionBlock {
 public:
  STAttentionBlock() = default;
  STAttentionBlock(ParameterRegistry& registry, const std::string& name, const MultiHeadConfig& cfg,
                   const BlockOptions& options)
      : options_(options) {
    const bool spatial = options.variant != BlockVariant::no_spatial;
    const bool temporal = options.variant != BlockVariant::no_temporal;
    if (spatial) {
      if (options.partition)
        group_ = GroupSpatialAttention(registry, name + ".group_spatial", cfg, *options.partition);
      else
        spatial_ = SpatialAttention(registry, name + ".spatial", cfg);
    }
    if (temporal) temporal_ = TemporalAttention(registry, name + ".temporal", cfg, options.causal, options.exclude_self);
    if (options.variant == BlockVariant::full) fusion_ = GatedFusion(registry, name + ".fusion", cfg.model_dim());
  }

  Tensor operator()(const Tensor& hidden, const Tensor& ste) const {
    switch (options_.variant) {
      case BlockVariant::no_spatial: return add(hidden, temporal(hidden, ste));
      case BlockVariant::no_temporal: return add(hidden, spatial(hidden, ste));
      case BlockVariant::no_gate:
        return add(hidden, affine(add(spatial(hidden, ste), temporal(hidden, ste)), 0.5));
      case BlockVariant::full: break;
    }
    return add(hidden, fusion_(spatial(hidden, ste), temporal(hidden, ste)));
  }

  Tensor spatial(const Tensor& hidden, const Tensor& ste) const {
    return options_.partition ? group_(hidden, ste) : spatial_(hidden, ste);
  }
  Tensor temporal(const Tensor& hidden, const Tensor& ste) const { return temporal_(hidden, ste); }

  const BlockOptions& options() const { return options_; }
  const SpatialAttention& spatial_attention() const { return spatial_; }
  const GroupSpatialAttention& group_attention() const { return group_; }
  const TemporalAttention& temporal_attention() const { return temporal_; }
  const GatedFusion& fusion() const { return fusion_; }

 private:
  BlockOptions options_;
  SpatialAttention spatial_;
  GroupSpatialAttention group_;
  TemporalAttention temporal_;
  GatedFusion fusion_;
};

}  // namespace gman
