#pragma once

// Binary artifacts (checkpoints, prepared datasets) and CSV reports.
//
// Container layout: the line "GMAN-ARTIFACT 1\n", an 8-byte little-endian
// header length, a JSON header, then every array listed in the header as
// consecutive little-endian float64 values.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gman/data.hpp"
#include "gman/graph.hpp"
#include "gman/metrics.hpp"
#include "gman/model.hpp"
#include "gman/trainer.hpp"

namespace gman {

using Json = nlohmann::json;

inline constexpr const char* kArtifactMagic = "GMAN-ARTIFACT 1\n";

/// Writes through a temporary sibling file and renames it into place, so a
/// failed write never leaves a partial artifact at `path`.
inline void atomic_write(const std::string& path, const std::function<void(std::ostream&)>& body,
                         bool binary = false) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  try {
    {
      std::ofstream out(tmp, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
      if (!out) throw InputError("cannot write '" + path + "'");
      body(out);
      out.flush();
      if (!out) throw InputError("write failed for '" + path + "'");
    }
    fs::rename(tmp, target);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

// ---------------------------------------------------------------------------
// Container

struct Artifact {
  Json header;
  std::map<std::string, std::vector<double>> arrays;
};

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& in, const std::string& source) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw InputError(source + ": truncated artifact");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void write_artifact(std::ostream& out, const std::string& kind, Json header,
                           const std::vector<std::pair<std::string, const std::vector<double>*>>& arrays) {
  header["kind"] = kind;
  Json listing = Json::array();
  for (const auto& [name, values] : arrays) listing.push_back({{"name", name}, {"count", values->size()}});
  header["arrays"] = listing;
  const std::string text = header.dump();
  out << kArtifactMagic;
  detail::put_u64(out, text.size());
  out << text;
  for (const auto& [name, values] : arrays)
    for (double v : *values) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
}

inline Artifact read_artifact(std::istream& in, const std::string& kind, const std::string& source) {
  std::string magic(std::char_traits<char>::length(kArtifactMagic), '\0');
  if (!in.read(magic.data(), static_cast<std::streamsize>(magic.size())) || magic != kArtifactMagic)
    throw InputError(source + ": not a gman artifact");
  const std::uint64_t length = detail::get_u64(in, source);
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) throw InputError(source + ": truncated header");
  Artifact a;
  try {
    a.header = Json::parse(text);
  } catch (const Json::exception& e) {
    throw InputError(source + ": malformed header: " + e.what());
  }
  if (a.header.value("kind", std::string()) != kind)
    throw InputError(source + ": expected a " + kind + " artifact, found '" + a.header.value("kind", std::string()) +
                     "'");
  for (const auto& entry : a.header.at("arrays")) {
    auto& values = a.arrays[entry.at("name").get<std::string>()];
    values.resize(entry.at("count").get<std::size_t>());
    for (double& v : values) v = std::bit_cast<double>(detail::get_u64(in, source));
  }
  return a;
}

inline Artifact read_artifact_file(const std::string& path, const std::string& kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  try {
    return read_artifact(in, kind, path);
  } catch (const Json::exception& e) {
    throw InputError(path + ": malformed header: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Configuration <-> JSON

inline Json config_to_json(const GmanConfig& c) {
  return {{"blocks", c.blocks},
          {"heads", c.attention.heads},
          {"head_dim", c.attention.head_dim},
          {"history", c.history},
          {"horizon", c.horizon},
          {"channels", c.channels},
          {"vertices", c.vertices},
          {"steps_per_day", c.steps_per_day},
          {"group_mode", c.group_mode == GroupMode::on ? "on" : c.group_mode == GroupMode::off ? "off" : "auto"},
          {"groups", c.groups},
          {"group_padding", c.group_padding},
          {"group_seed", c.group_seed},
          {"causal_encoder", c.causal_encoder},
          {"causal_decoder", c.causal_decoder},
          {"exclude_self", c.exclude_self},
          {"variant", variant_tag(c.variant)},
          {"seed", c.seed}};
}

inline GroupMode parse_group_mode(const std::string& s) {
  if (s == "auto") return GroupMode::automatic;
  if (s == "on") return GroupMode::on;
  if (s == "off") return GroupMode::off;
  throw ConfigError("group mode must be auto, on or off, got '" + s + "'");
}

inline GmanConfig config_from_json(const Json& j) {
  GmanConfig c;
  c.blocks = j.at("blocks").get<std::size_t>();
  c.attention.heads = j.at("heads").get<std::size_t>();
  c.attention.head_dim = j.at("head_dim").get<std::size_t>();
  c.history = j.at("history").get<std::size_t>();
  c.horizon = j.at("horizon").get<std::size_t>();
  c.channels = j.at("channels").get<std::size_t>();
  c.vertices = j.at("vertices").get<std::size_t>();
  c.steps_per_day = j.at("steps_per_day").get<int>();
  c.group_mode = parse_group_mode(j.at("group_mode").get<std::string>());
  c.groups = j.at("groups").get<std::size_t>();
  c.group_padding = j.at("group_padding").get<bool>();
  c.group_seed = j.at("group_seed").get<std::uint64_t>();
  c.causal_encoder = j.at("causal_encoder").get<bool>();
  c.causal_decoder = j.at("causal_decoder").get<bool>();
  c.exclude_self = j.at("exclude_self").get<bool>();
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline Json stats_to_json(const NormStats& s) { return {{"mean", s.mean}, {"std", s.std}}; }

inline NormStats stats_from_json(const Json& j) {
  NormStats s{j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
  if (s.mean.size() != s.std.size()) throw InputError("normalization statistics disagree in channel count");
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  GmanModel model;
  std::vector<std::string> vertex_ids;
  std::optional<NormStats> stats;
};

inline void write_checkpoint(std::ostream& out, const GmanModel& model, const std::vector<std::string>& vertex_ids,
                             const std::optional<NormStats>& stats) {
  Json header;
  header["config"] = config_to_json(model.config());
  header["vertex_ids"] = vertex_ids;
  if (stats) header["stats"] = stats_to_json(*stats);
  const Tensor& raw = model.embedding().raw_vectors();
  header["spatial_shape"] = raw.shape();
  Json shapes = Json::object();
  const auto snapshot = model.snapshot();
  std::vector<std::pair<std::string, const std::vector<double>*>> arrays;
  const std::vector<double> raw_values(raw.data().begin(), raw.data().end());
  arrays.emplace_back("spatial_vectors", &raw_values);
  Json order = Json::array();
  for (std::size_t i = 0; i < snapshot.size(); ++i) {
    const auto& p = model.parameters()[i];
    order.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
    arrays.emplace_back("param:" + p.name, &snapshot[i]);
  }
  header["parameters"] = order;
  write_artifact(out, "checkpoint", header, arrays);
}

inline void save_checkpoint(const std::string& path, const GmanModel& model, const std::vector<std::string>& vertex_ids,
                            const std::optional<NormStats>& stats = std::nullopt) {
  atomic_write(path, [&](std::ostream& out) { write_checkpoint(out, model, vertex_ids, stats); }, true);
}

inline Checkpoint checkpoint_from_artifact(const Artifact& a, const std::string& source) {
  try {
    const GmanConfig cfg = config_from_json(a.header.at("config"));
    const auto shape = a.header.at("spatial_shape").get<Shape>();
    Tensor raw = Tensor::from(shape, a.arrays.at("spatial_vectors"));
    Checkpoint ck{GmanModel(cfg, raw), a.header.at("vertex_ids").get<std::vector<std::string>>(), std::nullopt};
    if (a.header.contains("stats")) ck.stats = stats_from_json(a.header.at("stats"));
    const auto& listed = a.header.at("parameters");
    auto& params = ck.model.parameters();
    if (listed.size() != params.size())
      throw InputError(source + ": checkpoint has " + std::to_string(listed.size()) + " parameters, model expects " +
                       std::to_string(params.size()));
    std::vector<std::vector<double>> values;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto name = listed[i].at("name").get<std::string>();
      if (name != params[i].name || listed[i].at("shape").get<Shape>() != params[i].tensor.shape())
        throw InputError(source + ": parameter '" + name + "' does not match the model layout");
      values.push_back(a.arrays.at("param:" + name));
    }
    ck.model.restore(values);
    return ck;
  } catch (const Json::exception& e) {
    throw InputError(source + ": malformed checkpoint: " + e.what());
  } catch (const std::out_of_range&) {
    throw InputError(source + ": checkpoint is missing an array");
  }
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return checkpoint_from_artifact(read_artifact_file(path, "checkpoint"), path);
}

// ---------------------------------------------------------------------------
// Prepared datasets

/// Everything train/evaluate need from the raw inputs: the graph, the
/// normalized series, its statistics, and the chronological split.
struct PreparedDataset {
  RoadGraph graph;
  TrafficSeries normalized;
  NormStats stats;
  SplitRatios ratios;
  SplitPlan plan;
};

inline PreparedDataset prepare_dataset(RoadGraph graph, const TrafficSeries& raw, std::size_t history,
                                       std::size_t horizon, const SplitRatios& ratios = {}) {
  if (raw.vertex_ids != graph.vertex_ids) throw InputError("series vertices do not match the graph vertex order");
  PreparedDataset d;
  d.graph = std::move(graph);
  d.ratios = ratios;
  d.plan = split_windows(raw.steps(), history, horizon, ratios);
  auto [normalized, stats] = zscore_fit_apply(raw, 0, d.plan.train_end);
  d.normalized = std::move(normalized);
  d.stats = std::move(stats);
  return d;
}

inline void write_dataset(std::ostream& out, const PreparedDataset& d) {
  const auto& s = d.normalized;
  Json header;
  header["vertex_ids"] = s.vertex_ids;
  header["channels"] = s.channels;
  header["steps_per_day"] = s.steps_per_day;
  header["start_epoch"] = s.start_epoch;
  header["steps"] = s.steps();
  header["history"] = d.plan.history;
  header["horizon"] = d.plan.horizon;
  header["ratios"] = {d.ratios.train, d.ratios.validation, d.ratios.test};
  header["stats"] = stats_to_json(d.stats);
  std::vector<double> slots, missing(s.missing.begin(), s.missing.end());
  for (const auto& slot : s.slots) {
    slots.push_back(slot.day_of_week);
    slots.push_back(slot.time_of_day);
  }
  write_artifact(out, "dataset", header,
                 {{"distances", &d.graph.distances.values},
                  {"values", &s.values},
                  {"missing", &missing},
                  {"slots", &slots}});
}

inline void save_dataset(const std::string& path, const PreparedDataset& d) {
  atomic_write(path, [&](std::ostream& out) { write_dataset(out, d); }, true);
}

inline PreparedDataset dataset_from_artifact(const Artifact& a, const std::string& source, double epsilon) {
  try {
    const auto& h = a.header;
    PreparedDataset d;
    auto ids = h.at("vertex_ids").get<std::vector<std::string>>();
    const std::size_t n = ids.size();
    SquareMatrix dist;
    dist.n = n;
    dist.values = a.arrays.at("distances");
    if (dist.values.size() != n * n) throw InputError(source + ": distance matrix size mismatch");
    d.graph = make_graph(ids, std::move(dist), epsilon);
    auto& s = d.normalized;
    s.vertex_ids = std::move(ids);
    s.channels = h.at("channels").get<std::size_t>();
    s.steps_per_day = h.at("steps_per_day").get<int>();
    s.start_epoch = h.at("start_epoch").get<std::int64_t>();
    const auto steps = h.at("steps").get<std::size_t>();
    s.values = a.arrays.at("values");
    const auto& missing = a.arrays.at("missing");
    const auto& slots = a.arrays.at("slots");
    if (s.values.size() != steps * s.stride() || missing.size() != s.values.size() || slots.size() != 2 * steps)
      throw InputError(source + ": series arrays disagree with the header");
    s.missing.assign(missing.begin(), missing.end());
    for (std::size_t t = 0; t < steps; ++t)
      s.slots.push_back({static_cast<int>(slots[2 * t]), static_cast<int>(slots[2 * t + 1])});
    const auto ratios = h.at("ratios").get<std::vector<double>>();
    if (ratios.size() != 3) throw InputError(source + ": expected three split ratios");
    d.ratios = {ratios[0], ratios[1], ratios[2]};
    d.stats = stats_from_json(h.at("stats"));
    d.plan = split_windows(steps, h.at("history").get<std::size_t>(), h.at("horizon").get<std::size_t>(), d.ratios);
    return d;
  } catch (const Json::exception& e) {
    throw InputError(source + ": malformed dataset: " + e.what());
  } catch (const std::out_of_range&) {
    throw InputError(source + ": dataset is missing an array");
  }
}

inline PreparedDataset load_dataset(const std::string& path, double epsilon = kDefaultAdjacencyThreshold) {
  return dataset_from_artifact(read_artifact_file(path, "dataset"), path, epsilon);
}

// ---------------------------------------------------------------------------
// CSV reports, six significant digits

namespace detail {

inline std::ostream& csv_format(std::ostream& out) {
  out << std::setprecision(6);
  return out;
}

}  // namespace detail

inline void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
  detail::csv_format(out) << "epoch,train_mae,val_mae,val_rmse,val_mape\n";
  for (const auto& r : history)
    out << r.epoch << ',' << r.train_mae << ',' << r.val_mae << ',' << r.val_rmse << ',' << r.val_mape << '\n';
}

/// One row per horizon step followed by an "all" row.
inline void write_metrics_csv(std::ostream& out, const MetricReport& report) {
  detail::csv_format(out) << "step,mae,rmse,mape\n";
  for (std::size_t s = 0; s < report.per_step.size(); ++s) {
    const auto& m = report.per_step[s];
    out << s + 1 << ',' << m.mae << ',' << m.rmse << ',' << m.mape << '\n';
  }
  out << "all," << report.aggregate.mae << ',' << report.aggregate.rmse << ',' << report.aggregate.mape << '\n';
}

inline void write_fault_csv(std::ostream& out, const std::vector<FaultRow>& rows) {
  detail::csv_format(out) << "eta,mae,rmse,mape\n";
  for (const auto& r : rows)
    out << r.eta << ',' << r.report.aggregate.mae << ',' << r.report.aggregate.rmse << ',' << r.report.aggregate.mape
        << '\n';
}

inline void write_ablation_csv(std::ostream& out, const std::vector<ModelVariant>& variants,
                               const std::vector<std::vector<double>>& step_mae) {
  detail::csv_format(out) << "variant,step,mae\n";
  for (std::size_t v = 0; v < variants.size(); ++v)
    for (std::size_t s = 0; s < step_mae[v].size(); ++s)
      out << variant_tag(variants[v]) << ',' << s + 1 << ',' << step_mae[v][s] << '\n';
}

inline void write_stats_csv(std::ostream& out, const NormStats& stats) {
  detail::csv_format(out) << "channel,mean,std\n";
  for (std::size_t c = 0; c < stats.mean.size(); ++c) out << c << ',' << stats.mean[c] << ',' << stats.std[c] << '\n';
}

/// Long-format predictions of one window, in original units.
inline void write_predictions_csv(std::ostream& out, const Tensor& prediction, const std::vector<TimeSlot>& future,
                                  std::int64_t first_epoch, std::int64_t step_seconds,
                                  const std::vector<std::string>& vertex_ids, const NormStats& stats) {
  const std::size_t q = prediction.extent(1), n = prediction.extent(2), c = prediction.extent(3);
  detail::csv_format(out) << "step,timestamp,day_of_week,time_of_day,vertex_id,channel,value\n";
  const auto y = prediction.data();
  for (std::size_t s = 0; s < q; ++s)
    for (std::size_t v = 0; v < n; ++v)
      for (std::size_t ch = 0; ch < c; ++ch)
        out << s + 1 << ',' << format_iso8601(first_epoch + static_cast<std::int64_t>(s) * step_seconds) << ','
            << future[s].day_of_week << ',' << future[s].time_of_day << ',' << vertex_ids[v] << ',' << ch << ','
            << stats.denormalize(y[(s * n + v) * c + ch], ch) << '\n';
}

}  // namespace gman
