#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "gman/calendar.hpp"
#include "gman/embedding.hpp"
#include "gman/graph.hpp"
#include "gman/tensor.hpp"

namespace gman {

/// Observations at a fixed cadence: values[t][v][c] for steps × N × C.
struct TrafficSeries {
  std::vector<std::string> vertex_ids;
  std::size_t channels = 1;
  int steps_per_day = kDefaultStepsPerDay;
  std::int64_t start_epoch = 0;  // seconds, first step
  std::vector<TimeSlot> slots;
  std::vector<double> values;
  std::vector<std::uint8_t> missing;

  std::size_t steps() const { return slots.size(); }
  std::size_t vertices() const { return vertex_ids.size(); }
  std::size_t stride() const { return vertices() * channels; }
  double at(std::size_t t, std::size_t v, std::size_t c = 0) const { return values[(t * vertices() + v) * channels + c]; }
  double& at(std::size_t t, std::size_t v, std::size_t c = 0) { return values[(t * vertices() + v) * channels + c]; }
  std::int64_t step_seconds() const { return 86400 / steps_per_day; }
};

// ---------------------------------------------------------------------------
// Z-score normalization

struct NormStats {
  std::vector<double> mean;  // per channel
  std::vector<double> std;   // per channel, > 0

  double normalize(double v, std::size_t c) const { return (v - mean[c]) / std[c]; }
  double denormalize(double v, std::size_t c) const { return v * std[c] + mean[c]; }
};

/// Per-channel mean and population standard deviation over steps [begin, end).
inline NormStats zscore_fit(const TrafficSeries& series, std::size_t begin, std::size_t end) {
  if (begin >= end || end > series.steps()) throw InputError("z-score fit: empty or out-of-range step range");
  NormStats stats;
  for (std::size_t c = 0; c < series.channels; ++c) {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t t = begin; t < end; ++t)
      for (std::size_t v = 0; v < series.vertices(); ++v) {
        total += series.at(t, v, c);
        ++count;
      }
    const double mu = total / static_cast<double>(count);
    double sq = 0.0;
    for (std::size_t t = begin; t < end; ++t)
      for (std::size_t v = 0; v < series.vertices(); ++v) sq += (series.at(t, v, c) - mu) * (series.at(t, v, c) - mu);
    const double sd = std::sqrt(sq / static_cast<double>(count));
    if (!(sd > 0.0) || !std::isfinite(sd))
      throw InputError("degenerate data: channel " + std::to_string(c) + " has zero variance");
    stats.mean.push_back(mu);
    stats.std.push_back(sd);
  }
  return stats;
}

inline TrafficSeries zscore_apply(TrafficSeries series, const NormStats& stats) {
  if (stats.mean.size() != series.channels) throw DimensionError("normalization stats do not match channel count");
  for (std::size_t i = 0; i < series.values.size(); ++i) {
    const std::size_t c = i % series.channels;
    series.values[i] = stats.normalize(series.values[i], c);
  }
  return series;
}

inline TrafficSeries zscore_invert(TrafficSeries series, const NormStats& stats) {
  if (stats.mean.size() != series.channels) throw DimensionError("normalization stats do not match channel count");
  for (std::size_t i = 0; i < series.values.size(); ++i) {
    const std::size_t c = i % series.channels;
    series.values[i] = stats.denormalize(series.values[i], c);
  }
  return series;
}

/// Fits on [fit_begin, fit_end) and applies to the whole series.
inline std::pair<TrafficSeries, NormStats> zscore_fit_apply(const TrafficSeries& series, std::size_t fit_begin,
                                                            std::size_t fit_end) {
  NormStats stats = zscore_fit(series, fit_begin, fit_end);
  return {zscore_apply(series, stats), stats};
}

// ---------------------------------------------------------------------------
// Chronological split and sliding windows

struct SplitRatios {
  double train = 0.7;
  double validation = 0.1;
  double test = 0.2;
};

/// Step boundaries of the three splits and the start step of every window of
/// length P + Q lying entirely inside one split.
struct SplitPlan {
  std::size_t history = 0, horizon = 0;
  std::size_t train_end = 0, validation_end = 0, total = 0;
  std::vector<std::size_t> train, validation, test;
};

inline SplitPlan split_windows(std::size_t steps, std::size_t history, std::size_t horizon,
                               const SplitRatios& ratios = {}) {
  if (history == 0 || horizon == 0) throw ConfigError("P and Q must be positive");
  if (ratios.train < 0 || ratios.validation < 0 || ratios.test < 0 ||
      std::fabs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9)
    throw ConfigError("split ratios must be non-negative and sum to 1");
  const std::size_t span = history + horizon;
  if (steps < span) throw InputError("insufficient data: " + std::to_string(steps) + " steps < P+Q = " + std::to_string(span));
  SplitPlan plan;
  plan.history = history;
  plan.horizon = horizon;
  plan.total = steps;
  plan.train_end = static_cast<std::size_t>(std::llround(static_cast<double>(steps) * ratios.train));
  plan.validation_end =
      static_cast<std::size_t>(std::llround(static_cast<double>(steps) * (ratios.train + ratios.validation)));
  plan.validation_end = std::clamp(plan.validation_end, plan.train_end, steps);
  auto fill = [&](std::size_t begin, std::size_t end, double ratio, const char* name, std::vector<std::size_t>& out) {
    if (ratio == 0.0) return;
    if (end - begin < span)
      throw InputError(std::string("insufficient data: ") + name + " split has " + std::to_string(end - begin) +
                       " steps, needs at least P+Q = " + std::to_string(span));
    for (std::size_t s = begin; s + span <= end; ++s) out.push_back(s);
  };
  fill(0, plan.train_end, ratios.train, "train", plan.train);
  fill(plan.train_end, plan.validation_end, ratios.validation, "validation", plan.validation);
  fill(plan.validation_end, steps, ratios.test, "test", plan.test);
  return plan;
}

/// A mini-batch of windows: inputs (B, P, N, C), targets (B, Q, N, C), and
/// the P + Q calendar slots of each window.
struct Batch {
  Tensor inputs;
  Tensor targets;
  std::vector<std::vector<TimeSlot>> windows;
  std::vector<std::size_t> starts;
};

inline Batch make_batch(const TrafficSeries& series, const std::vector<std::size_t>& starts, std::size_t history,
                        std::size_t horizon) {
  if (starts.empty()) throw InputError("empty batch");
  const std::size_t n = series.vertices(), c = series.channels, stride = series.stride();
  std::vector<double> x, y;
  x.reserve(starts.size() * history * stride);
  y.reserve(starts.size() * horizon * stride);
  Batch batch;
  for (std::size_t s : starts) {
    if (s + history + horizon > series.steps()) throw InputError("window extends past the end of the series");
    const auto first = series.values.begin() + static_cast<std::ptrdiff_t>(s * stride);
    x.insert(x.end(), first, first + static_cast<std::ptrdiff_t>(history * stride));
    y.insert(y.end(), first + static_cast<std::ptrdiff_t>(history * stride),
             first + static_cast<std::ptrdiff_t>((history + horizon) * stride));
    batch.windows.emplace_back(series.slots.begin() + static_cast<std::ptrdiff_t>(s),
                               series.slots.begin() + static_cast<std::ptrdiff_t>(s + history + horizon));
  }
  batch.inputs = Tensor::from({starts.size(), history, n, c}, std::move(x));
  batch.targets = Tensor::from({starts.size(), horizon, n, c}, std::move(y));
  batch.starts = starts;
  return batch;
}

// ---------------------------------------------------------------------------
// Fault injection

/// Zeroes exactly round(eta · size) entries chosen uniformly without
/// replacement.
inline std::vector<double> inject_faults(std::span<const double> values, double eta, std::uint64_t seed) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("fault ratio must lie in [0, 1]");
  std::vector<double> out(values.begin(), values.end());
  const auto count = static_cast<std::size_t>(std::llround(eta * static_cast<double>(out.size())));
  std::vector<std::size_t> idx(out.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
    out[idx[i]] = 0.0;
  }
  return out;
}

/// Applies fault injection to each window of a (B, P, N, C) input tensor.
/// Window b uses a generator derived from (seed, sample_ids[b]).
inline Tensor inject_faults(const Tensor& inputs, double eta, std::uint64_t seed,
                            const std::vector<std::size_t>& sample_ids) {
  if (inputs.rank() != 4 || sample_ids.size() != inputs.extent(0))
    throw DimensionError("fault injection expects (batch, P, N, C) inputs with one id per window");
  const std::size_t per = inputs.numel() / inputs.extent(0);
  std::vector<double> out;
  out.reserve(inputs.numel());
  for (std::size_t b = 0; b < inputs.extent(0); ++b) {
    const auto part = inject_faults(inputs.data().subspan(b * per, per), eta, detail::mix_seed(seed, sample_ids[b]));
    out.insert(out.end(), part.begin(), part.end());
  }
  return Tensor::from(inputs.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// Synthetic traffic

struct SynthOptions {
  double noise = 0.5;            // innovation std of the latent deviation
  double observation_noise = 0.5;
  double persistence = 0.985;    // own one-step lag coefficient
  double coupling = 0.01;        // A-weighted neighbor one-step lag coefficient
  double weekend_scale = 0.45;   // peak amplitude multiplier on Saturday/Sunday
  double morning_peak_hour = 8.0;
  double evening_peak_hour = 17.5;
  double peak_width_hours = 1.2;
  std::optional<std::vector<double>> amplitudes;  // overrides the random draw
  std::optional<std::vector<double>> bases;
};

/// Generative parameters behind a synthetic series.
struct SynthTruth {
  std::vector<double> base;
  std::vector<double> amplitude;
  SynthOptions options;
  std::vector<double> deviation;  // steps × N latent deviation from the profile
};

struct SynthResult {
  TrafficSeries series;
  SynthTruth truth;
};

/// Daily double-peak shape in [0, ~1] at a calendar slot.
inline double synth_peak_shape(const TimeSlot& slot, int steps_per_day, const SynthOptions& opt) {
  const double hour = 24.0 * static_cast<double>(slot.time_of_day) / static_cast<double>(steps_per_day);
  const double w = opt.peak_width_hours;
  auto bump = [&](double centre) { return std::exp(-0.5 * (hour - centre) * (hour - centre) / (w * w)); };
  const double shape = bump(opt.morning_peak_hour) + 0.8 * bump(opt.evening_peak_hour);
  return slot.day_of_week >= 5 ? opt.weekend_scale * shape : shape;
}

inline double synth_profile(const SynthTruth& truth, std::size_t vertex, const TimeSlot& slot, int steps_per_day) {
  return truth.base[vertex] + truth.amplitude[vertex] * synth_peak_shape(slot, steps_per_day, truth.options);
}

/// Per-vertex daily double-peak profile plus a latent deviation that evolves
/// as d[t] = persistence·d[t−1] + coupling·Ā·d[t−1] + noise, where Ā is the
/// row-normalized adjacency without self-loops, plus observation noise.
/// Starts on a Monday at midnight.
inline SynthResult synth_generate(const RoadGraph& graph, std::size_t days, int steps_per_day, std::uint64_t seed,
                                  const SynthOptions& opt = {}) {
  if (days == 0) throw ConfigError("synthetic data needs at least one day");
  if (steps_per_day <= 0 || 86400 % steps_per_day != 0) throw ConfigError("steps per day must divide 86400");
  const std::size_t n = graph.vertex_count();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> base_draw(40.0, 60.0);
  std::uniform_real_distribution<double> amp_draw(15.0, 35.0);
  SynthResult result;
  SynthTruth& truth = result.truth;
  truth.options = opt;
  for (std::size_t v = 0; v < n; ++v) {
    truth.base.push_back(base_draw(rng));
    truth.amplitude.push_back(amp_draw(rng));
  }
  if (opt.bases) {
    if (opt.bases->size() != n) throw ConfigError("synthetic base override needs one value per vertex");
    truth.base = *opt.bases;
  }
  if (opt.amplitudes) {
    if (opt.amplitudes->size() != n) throw ConfigError("synthetic amplitude override needs one value per vertex");
    truth.amplitude = *opt.amplitudes;
  }

  std::vector<double> mixing(n * n, 0.0);
  for (std::size_t v = 0; v < n; ++v) {
    const auto nb = graph.neighbors(v);
    double total = 0.0;
    for (const auto& e : nb) total += e.second;
    for (const auto& e : nb) mixing[v * n + e.first] = e.second / total;
  }

  const std::size_t steps = days * static_cast<std::size_t>(steps_per_day);
  TrafficSeries& s = result.series;
  s.vertex_ids = graph.vertex_ids;
  s.channels = 1;
  s.steps_per_day = steps_per_day;
  s.start_epoch = days_from_civil(2024, 1, 1) * 86400;  // a Monday
  s.values.assign(steps * n, 0.0);
  s.missing.assign(steps * n, 0);
  truth.deviation.assign(steps * n, 0.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> prev(n, 0.0), cur(n, 0.0);
  TimeSlot slot{0, 0};
  for (std::size_t t = 0; t < steps; ++t) {
    s.slots.push_back(slot);
    for (std::size_t v = 0; v < n; ++v) {
      double neighbor = 0.0;
      for (std::size_t j = 0; j < n; ++j) neighbor += mixing[v * n + j] * prev[j];
      const double innovation = opt.noise > 0.0 ? opt.noise * gauss(rng) : 0.0;
      cur[v] = t == 0 ? innovation : opt.persistence * prev[v] + opt.coupling * neighbor + innovation;
    }
    for (std::size_t v = 0; v < n; ++v) {
      const double obs = opt.observation_noise > 0.0 ? opt.observation_noise * gauss(rng) : 0.0;
      truth.deviation[t * n + v] = cur[v];
      s.values[t * n + v] = synth_profile(truth, v, slot, steps_per_day) + cur[v] + obs;
    }
    std::swap(prev, cur);
    slot = next_slot(slot, steps_per_day);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Series files: header `timestamp,<id_1>,...,<id_N>`, one channel per file.

namespace detail {

struct SeriesTable {
  std::vector<std::string> ids;
  std::vector<std::int64_t> times;
  std::vector<double> values;  // steps × ids
  std::vector<std::uint8_t> missing;
};

inline SeriesTable read_series_table(std::istream& in, const std::string& source) {
  SeriesTable table;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    auto cells = split_csv(t);
    if (!header) {
      if (cells.size() < 2 || cells[0] != "timestamp") throw InputError(where + ": expected header 'timestamp,<ids>'");
      table.ids.assign(cells.begin() + 1, cells.end());
      header = true;
      continue;
    }
    if (cells.size() != table.ids.size() + 1)
      throw InputError(where + ": expected " + std::to_string(table.ids.size() + 1) + " fields, got " +
                       std::to_string(cells.size()));
    try {
      table.times.push_back(parse_iso8601(cells[0]));
    } catch (const InputError& e) {
      throw InputError(where + ": " + e.what());
    }
    for (std::size_t k = 1; k < cells.size(); ++k) {
      if (cells[k].empty()) {
        table.values.push_back(0.0);
        table.missing.push_back(1);
      } else {
        table.values.push_back(parse_number(cells[k], where));
        table.missing.push_back(0);
      }
    }
  }
  if (!header || table.times.empty()) throw InputError(source + ": series file has no observations");
  return table;
}

}  // namespace detail

/// Loads one or more single-channel series files (channel c from file c),
/// reorders columns to `vertex_order` when given, and forward-fills missing
/// values per sensor (leading gaps take the first observed value).
inline TrafficSeries load_series(std::vector<std::istream*> inputs, const std::vector<std::string>& sources,
                                 const std::vector<std::string>* vertex_order = nullptr,
                                 int steps_per_day = kDefaultStepsPerDay) {
  if (inputs.empty()) throw ConfigError("no series files given");
  if (steps_per_day <= 0 || 86400 % steps_per_day != 0) throw ConfigError("steps per day must divide 86400");
  std::vector<detail::SeriesTable> tables;
  for (std::size_t i = 0; i < inputs.size(); ++i) tables.push_back(detail::read_series_table(*inputs[i], sources[i]));
  const auto& first = tables.front();
  for (std::size_t i = 1; i < tables.size(); ++i)
    if (tables[i].times != first.times || tables[i].ids != first.ids)
      throw InputError(sources[i] + ": timestamps or sensor columns differ from " + sources[0]);

  TrafficSeries s;
  s.channels = tables.size();
  s.steps_per_day = steps_per_day;
  s.vertex_ids = vertex_order ? *vertex_order : first.ids;
  std::vector<std::size_t> column(s.vertex_ids.size());
  for (std::size_t v = 0; v < s.vertex_ids.size(); ++v) {
    auto it = std::find(first.ids.begin(), first.ids.end(), s.vertex_ids[v]);
    if (it == first.ids.end()) throw InputError(sources[0] + ": no column for graph vertex '" + s.vertex_ids[v] + "'");
    column[v] = static_cast<std::size_t>(it - first.ids.begin());
  }
  if (vertex_order)
    for (const auto& id : first.ids)
      if (std::find(vertex_order->begin(), vertex_order->end(), id) == vertex_order->end())
        throw InputError(sources[0] + ": unknown sensor id '" + id + "' not present in the graph");

  const std::int64_t cadence = 86400 / steps_per_day;
  for (std::size_t t = 1; t < first.times.size(); ++t)
    if (first.times[t] - first.times[t - 1] != cadence)
      throw InputError(sources[0] + ": timestamps are not at a fixed " + std::to_string(cadence / 60) +
                       "-minute cadence (row " + std::to_string(t + 1) + ")");
  if (first.times.front() % cadence != 0) throw InputError(sources[0] + ": first timestamp not aligned to the cadence");
  s.start_epoch = first.times.front();
  for (auto t : first.times) s.slots.push_back(slot_of(t, steps_per_day));

  const std::size_t steps = first.times.size(), width = first.ids.size(), n = s.vertex_ids.size();
  s.values.assign(steps * n * s.channels, 0.0);
  s.missing.assign(steps * n * s.channels, 0);
  for (std::size_t c = 0; c < s.channels; ++c)
    for (std::size_t v = 0; v < n; ++v) {
      std::optional<double> last;
      std::optional<double> first_seen;
      for (std::size_t t = 0; t < steps; ++t)
        if (!tables[c].missing[t * width + column[v]]) {
          first_seen = tables[c].values[t * width + column[v]];
          break;
        }
      if (!first_seen) throw InputError(sources[c] + ": sensor '" + s.vertex_ids[v] + "' has no observations");
      last = first_seen;
      for (std::size_t t = 0; t < steps; ++t) {
        const std::size_t src = t * width + column[v];
        const std::size_t dst = (t * n + v) * s.channels + c;
        if (tables[c].missing[src]) {
          s.values[dst] = *last;
          s.missing[dst] = 1;
        } else {
          s.values[dst] = tables[c].values[src];
          last = s.values[dst];
        }
      }
    }
  return s;
}

inline TrafficSeries load_series_files(const std::vector<std::string>& paths,
                                       const std::vector<std::string>* vertex_order = nullptr,
                                       int steps_per_day = kDefaultStepsPerDay) {
  std::vector<std::ifstream> files;
  files.reserve(paths.size());
  std::vector<std::istream*> streams;
  for (const auto& p : paths) {
    files.emplace_back(p);
    if (!files.back()) throw InputError("cannot open series file '" + p + "'");
  }
  for (auto& f : files) streams.push_back(&f);
  return load_series(streams, paths, vertex_order, steps_per_day);
}

/// Writes channel `channel` of the series; values with 6 significant digits.
inline void write_series(std::ostream& out, const TrafficSeries& series, std::size_t channel = 0) {
  out << "timestamp";
  for (const auto& id : series.vertex_ids) out << ',' << id;
  out << '\n';
  out.precision(6);
  for (std::size_t t = 0; t < series.steps(); ++t) {
    out << format_iso8601(series.start_epoch + static_cast<std::int64_t>(t) * series.step_seconds());
    for (std::size_t v = 0; v < series.vertices(); ++v) out << ',' << series.at(t, v, channel);
    out << '\n';
  }
}

}  // namespace gman
