#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "gman/data.hpp"
#include "gman/error.hpp"

namespace gman {

inline constexpr double kDefaultMapeFloor = 1e-3;

struct Metric {
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0;  // fraction, NaN when no target clears the floor
};

/// Errors in original units, per horizon step and over all steps.
struct MetricReport {
  std::vector<Metric> per_step;
  Metric aggregate;
  std::size_t samples = 0;
};

/// Streams (prediction, target) pairs and reduces them to a MetricReport.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::size_t horizon, double mape_floor = kDefaultMapeFloor)
      : floor_(mape_floor), steps_(horizon), total_(1) {}

  void add(std::size_t step, double prediction, double target) {
    const double e = prediction - target;
    steps_[step].push(e, target, floor_);
    total_[0].push(e, target, floor_);
  }

  void count_sample() { ++samples_; }

  MetricReport report() const {
    MetricReport r;
    for (const auto& s : steps_) r.per_step.push_back(s.metric());
    r.aggregate = total_[0].metric();
    r.samples = samples_;
    return r;
  }

 private:
  struct Sums {
    double abs = 0.0, sq = 0.0, pct = 0.0;
    std::size_t n = 0, n_pct = 0;
    void push(double e, double y, double floor) {
      abs += std::fabs(e);
      sq += e * e;
      ++n;
      if (std::fabs(y) > floor) {
        pct += std::fabs(e) / std::fabs(y);
        ++n_pct;
      }
    }
    Metric metric() const {
      if (n == 0) return {};
      return {abs / static_cast<double>(n), std::sqrt(sq / static_cast<double>(n)),
              n_pct ? pct / static_cast<double>(n_pct) : std::numeric_limits<double>::quiet_NaN()};
    }
  };

  double floor_;
  std::vector<Sums> steps_;
  std::vector<Sums> total_;
  std::size_t samples_ = 0;
};

// ---------------------------------------------------------------------------
// Reference forecasters, evaluated on a normalized series in original units.

/// Repeats the last observed value of each window for every horizon step.
inline MetricReport evaluate_last_value(const TrafficSeries& normalized, const std::vector<std::size_t>& starts,
                                        std::size_t history, std::size_t horizon, const NormStats& stats) {
  if (starts.empty()) throw InputError("evaluate: empty sample set");
  MetricAccumulator acc(horizon);
  for (std::size_t s : starts) {
    acc.count_sample();
    for (std::size_t q = 0; q < horizon; ++q)
      for (std::size_t v = 0; v < normalized.vertices(); ++v)
        for (std::size_t c = 0; c < normalized.channels; ++c)
          acc.add(q, stats.denormalize(normalized.at(s + history - 1, v, c), c),
                  stats.denormalize(normalized.at(s + history + q, v, c), c));
  }
  return acc.report();
}

/// Mean of the training steps that share the target's time of day and day
/// type (weekday or weekend), per vertex and channel. Falls back to the time
/// of day alone when the training range has no step of that day type.
class HistoricalAverage {
 public:
  HistoricalAverage(const TrafficSeries& normalized, std::size_t train_end, const NormStats& stats)
      : steps_per_day_(static_cast<std::size_t>(normalized.steps_per_day)),
        width_(normalized.stride()),
        sums_(2 * steps_per_day_ * width_, 0.0),
        counts_(2 * steps_per_day_, 0),
        any_sums_(steps_per_day_ * width_, 0.0),
        any_counts_(steps_per_day_, 0) {
    for (std::size_t t = 0; t < train_end; ++t) {
      const TimeSlot& slot = normalized.slots[t];
      const std::size_t key = day_type(slot) * steps_per_day_ + static_cast<std::size_t>(slot.time_of_day);
      ++counts_[key];
      ++any_counts_[static_cast<std::size_t>(slot.time_of_day)];
      for (std::size_t i = 0; i < width_; ++i) {
        const double y = stats.denormalize(normalized.values[t * width_ + i], i % normalized.channels);
        sums_[key * width_ + i] += y;
        any_sums_[static_cast<std::size_t>(slot.time_of_day) * width_ + i] += y;
      }
    }
  }

  double predict(const TimeSlot& slot, std::size_t entry) const {
    const std::size_t key = day_type(slot) * steps_per_day_ + static_cast<std::size_t>(slot.time_of_day);
    if (counts_[key]) return sums_[key * width_ + entry] / static_cast<double>(counts_[key]);
    const auto tod = static_cast<std::size_t>(slot.time_of_day);
    if (!any_counts_[tod]) throw InputError("historical average: time of day never observed in training data");
    return any_sums_[tod * width_ + entry] / static_cast<double>(any_counts_[tod]);
  }

 private:
  static std::size_t day_type(const TimeSlot& s) { return s.day_of_week >= 5 ? 1 : 0; }

  std::size_t steps_per_day_, width_;
  std::vector<double> sums_;
  std::vector<std::size_t> counts_;
  std::vector<double> any_sums_;
  std::vector<std::size_t> any_counts_;
};

inline MetricReport evaluate_historical_average(const TrafficSeries& normalized, std::size_t train_end,
                                                const std::vector<std::size_t>& starts, std::size_t history,
                                                std::size_t horizon, const NormStats& stats) {
  if (starts.empty()) throw InputError("evaluate: empty sample set");
  const HistoricalAverage ha(normalized, train_end, stats);
  MetricAccumulator acc(horizon);
  const std::size_t width = normalized.stride();
  for (std::size_t s : starts) {
    acc.count_sample();
    for (std::size_t q = 0; q < horizon; ++q) {
      const std::size_t t = s + history + q;
      for (std::size_t i = 0; i < width; ++i)
        acc.add(q, ha.predict(normalized.slots[t], i),
                stats.denormalize(normalized.values[t * width + i], i % normalized.channels));
    }
  }
  return acc.report();
}

}  // namespace gman
