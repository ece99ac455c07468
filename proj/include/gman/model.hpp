#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gman/attention.hpp"
#include "gman/calendar.hpp"
#include "gman/embedding.hpp"
#include "gman/nn.hpp"
#include "gman/tensor.hpp"

namespace gman {

enum class ModelVariant { full, no_spatial, no_temporal, no_gate, no_transform };

inline std::string variant_tag(ModelVariant v) {
  switch (v) {
    case ModelVariant::full: return "full";
    case ModelVariant::no_spatial: return "NS";
    case ModelVariant::no_temporal: return "NT";
    case ModelVariant::no_gate: return "NG";
    case ModelVariant::no_transform: return "NTr";
  }
  return "full";
}

inline ModelVariant parse_variant(const std::string& tag) {
  if (tag == "full" || tag == "GMAN") return ModelVariant::full;
  if (tag == "NS" || tag == "GMAN-NS") return ModelVariant::no_spatial;
  if (tag == "NT" || tag == "GMAN-NT") return ModelVariant::no_temporal;
  if (tag == "NG" || tag == "GMAN-NG") return ModelVariant::no_gate;
  if (tag == "NTr" || tag == "GMAN-NTr") return ModelVariant::no_transform;
  throw ConfigError("unknown ablation variant '" + tag + "' (expected full, NS, NT, NG or NTr)");
}

enum class GroupMode { automatic, off, on };

inline constexpr std::size_t kGroupAttentionThreshold = 200;

struct GmanConfig {
  std::size_t blocks = 3;  // L, per side
  MultiHeadConfig attention{8, 8};
  std::size_t history = 12;  // P
  std::size_t horizon = 12;  // Q
  std::size_t channels = 1;  // C
  std::size_t vertices = 0;  // N
  int steps_per_day = kDefaultStepsPerDay;
  GroupMode group_mode = GroupMode::automatic;
  std::size_t groups = 0;  // 0 picks ceil(N / optimal_group_size(N))
  bool group_padding = true;
  std::uint64_t group_seed = 0;
  bool causal_encoder = true;
  bool causal_decoder = true;
  bool exclude_self = false;
  ModelVariant variant = ModelVariant::full;
  std::uint64_t seed = 0;

  std::size_t model_dim() const { return attention.model_dim(); }

  bool uses_groups() const {
    return group_mode == GroupMode::on || (group_mode == GroupMode::automatic && vertices > kGroupAttentionThreshold);
  }

  std::size_t resolved_groups() const {
    if (groups) return groups;
    const std::size_t m = optimal_group_size(vertices);
    return (vertices + m - 1) / m;
  }

  void validate() const {
    attention.validate();
    if (blocks == 0) throw ConfigError("L (blocks per side) must be at least 1");
    if (history == 0 || horizon == 0) throw ConfigError("P and Q must be at least 1");
    if (channels == 0) throw ConfigError("C (channels) must be at least 1");
    if (vertices == 0) throw ConfigError("N (vertices) must be at least 1");
    if (steps_per_day <= 0) throw ConfigError("steps per day must be positive");
  }
};

/// Encoder-decoder of ST-Attention blocks bridged by transform attention.
class GmanModel {
 public:
  GmanModel(const GmanConfig& config, Tensor raw_vectors) : config_(config), registry_(config.seed) {
    config_.validate();
    if (raw_vectors.rank() != 2 || raw_vectors.extent(0) != config_.vertices)
      throw DimensionError("spatial vectors " + shape_string(raw_vectors.shape()) + " do not cover " +
                           std::to_string(config_.vertices) + " vertices");
    const std::size_t width = config_.model_dim();
    const auto& cfg = config_.attention;
    embedding_ = SpatioTemporalEmbedding(registry_, raw_vectors.detach(), config_.steps_per_day, width);
    input_ = TwoLayer(registry_, "input", config_.channels, width, width);

    if (config_.uses_groups()) {
      // Model-level seed so encoder and decoder share one partition.
      partition_ = GroupPartition::random(config_.vertices, config_.resolved_groups(), config_.group_seed,
                                          config_.group_padding);
    }
    BlockVariant block_variant = BlockVariant::full;
    if (config_.variant == ModelVariant::no_spatial) block_variant = BlockVariant::no_spatial;
    if (config_.variant == ModelVariant::no_temporal) block_variant = BlockVariant::no_temporal;
    if (config_.variant == ModelVariant::no_gate) block_variant = BlockVariant::no_gate;

    for (std::size_t l = 0; l < config_.blocks; ++l) {
      BlockOptions opt{block_variant, config_.causal_encoder, config_.exclude_self, partition_};
      encoder_.emplace_back(registry_, "encoder." + std::to_string(l), cfg, opt);
    }
    if (config_.variant != ModelVariant::no_transform) transform_ = TransformAttention(registry_, "transform", cfg);
    for (std::size_t l = 0; l < config_.blocks; ++l) {
      BlockOptions opt{block_variant, config_.causal_decoder, config_.exclude_self, partition_};
      decoder_.emplace_back(registry_, "decoder." + std::to_string(l), cfg, opt);
    }
    output_ = TwoLayer(registry_, "output", width, width, config_.channels);
  }

  GmanModel(const GmanModel&) = delete;
  GmanModel& operator=(const GmanModel&) = delete;
  GmanModel(GmanModel&&) = default;
  GmanModel& operator=(GmanModel&&) = default;

  /// Spatio-temporal embedding for windows of P + Q calendar slots:
  /// (batch, P + Q, N, D).
  Tensor embed(const std::vector<std::vector<TimeSlot>>& windows) const {
    for (const auto& w : windows)
      if (w.size() != config_.history + config_.horizon)
        throw DimensionError("expected " + std::to_string(config_.history + config_.horizon) + " time slots per window");
    return embedding_(windows);
  }

  /// X: (batch, P, N, C), windows: P + Q slots each -> (batch, Q, N, C).
  Tensor forward(const Tensor& inputs, const std::vector<std::vector<TimeSlot>>& windows) const {
    return forward_with_ste(inputs, embed(windows));
  }

  Tensor forward_with_ste(const Tensor& inputs, const Tensor& ste) const {
    const std::size_t p = config_.history, q = config_.horizon, n = config_.vertices, d = config_.model_dim();
    if (inputs.rank() != 4 || inputs.extent(1) != p || inputs.extent(2) != n || inputs.extent(3) != config_.channels)
      throw DimensionError("model input " + shape_string(inputs.shape()) + " does not match (batch, " +
                           std::to_string(p) + ", " + std::to_string(n) + ", " + std::to_string(config_.channels) + ")");
    const std::size_t b = inputs.extent(0);
    if (ste.shape() != Shape{b, p + q, n, d})
      throw DimensionError("embedding " + shape_string(ste.shape()) + " does not match (batch, P+Q, N, D)");
    const Tensor ste_history = gather(ste, 1, step_range(0, p));
    const Tensor ste_future = gather(ste, 1, step_range(p, q));

    Tensor h = input_(inputs);
    for (const auto& block : encoder_) h = block(h, ste_history);
    h = bridge(h, ste_history, ste_future);
    for (const auto& block : decoder_) h = block(h, ste_future);
    return output_(h);
  }

  /// Encoder output H^(L) for inspection.
  Tensor encode(const Tensor& inputs, const Tensor& ste_history) const {
    Tensor h = input_(inputs);
    for (const auto& block : encoder_) h = block(h, ste_history);
    return h;
  }

  /// Decoder input: transform attention, or for the NTr variant the final
  /// encoder step (the only one that has seen the whole history) repeated
  /// for every future step.
  Tensor bridge(const Tensor& encoded, const Tensor& ste_history, const Tensor& ste_future) const {
    if (config_.variant != ModelVariant::no_transform) return transform_(encoded, ste_history, ste_future);
    const std::vector<std::int64_t> idx(config_.horizon, static_cast<std::int64_t>(config_.history) - 1);
    return gather(encoded, 1, idx);
  }

  const GmanConfig& config() const { return config_; }
  const ParameterRegistry& registry() const { return registry_; }
  ParameterRegistry& registry() { return registry_; }
  std::vector<Parameter>& parameters() { return registry_.parameters(); }
  const std::vector<Parameter>& parameters() const { return registry_.parameters(); }
  const SpatioTemporalEmbedding& embedding() const { return embedding_; }
  const std::vector<STAttentionBlock>& encoder() const { return encoder_; }
  const std::vector<STAttentionBlock>& decoder() const { return decoder_; }
  const TransformAttention& transform() const { return transform_; }
  const TwoLayer& input_projection() const { return input_; }
  const TwoLayer& output_projection() const { return output_; }
  const std::optional<GroupPartition>& partition() const { return partition_; }

  std::vector<std::vector<double>> snapshot() const {
    std::vector<std::vector<double>> values;
    for (const auto& p : registry_.parameters()) values.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    return values;
  }

  void restore(const std::vector<std::vector<double>>& values) {
    auto& params = registry_.parameters();
    if (values.size() != params.size()) throw ConfigError("parameter snapshot does not match model");
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto dst = params[i].tensor.mutable_data();
      if (dst.size() != values[i].size()) throw ConfigError("parameter snapshot shape mismatch for " + params[i].name);
      std::copy(values[i].begin(), values[i].end(), dst.begin());
    }
  }

 private:
  static std::vector<std::int64_t> step_range(std::size_t begin, std::size_t count) {
    std::vector<std::int64_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = static_cast<std::int64_t>(begin + i);
    return idx;
  }

  GmanConfig config_;
  ParameterRegistry registry_;
  SpatioTemporalEmbedding embedding_;
  TwoLayer input_;
  std::optional<GroupPartition> partition_;
  std::vector<STAttentionBlock> encoder_;
  TransformAttention transform_;
  std::vector<STAttentionBlock> decoder_;
  TwoLayer output_;
};

/// Fresh model of the requested ablation variant sharing `model`'s
/// configuration and spatial vectors.
inline GmanModel ablation_variant(const GmanModel& model, ModelVariant which) {
  GmanConfig cfg = model.config();
  cfg.variant = which;
  return GmanModel(cfg, model.embedding().raw_vectors());
}

/// Mean absolute error over every entry; subgradient 0 where prediction
/// equals target.
inline Tensor loss_mae(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape())
    throw DimensionError("loss: prediction " + shape_string(prediction.shape()) + " vs target " +
                         shape_string(target.shape()));
  for (double v : prediction.data())
    if (!std::isfinite(v)) throw NumericError("loss: non-finite prediction");
  for (double v : target.data())
    if (!std::isfinite(v)) throw NumericError("loss: non-finite target");
  return mean(abs(sub(prediction, target)));
}

}  // namespace gman
