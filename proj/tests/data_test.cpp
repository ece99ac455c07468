#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "gman/data.hpp"
#include "test_util.hpp"

using namespace gman;

namespace {

TrafficSeries series_of(std::size_t steps, std::size_t n, std::size_t channels, std::uint64_t seed) {
  TrafficSeries s;
  for (std::size_t v = 0; v < n; ++v) s.vertex_ids.push_back("v" + std::to_string(v));
  s.channels = channels;
  s.steps_per_day = 24;
  TimeSlot slot{};
  for (std::size_t t = 0; t < steps; ++t, slot = next_slot(slot, 24)) s.slots.push_back(slot);
  s.values = gman::testing::random_values(steps * n * channels, seed, 3.0);
  for (double& v : s.values) v += 50.0;
  s.missing.assign(s.values.size(), 0);
  return s;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += (a[i] - ma) * (b[i] - mb);
    aa += (a[i] - ma) * (a[i] - ma);
    bb += (b[i] - mb) * (b[i] - mb);
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST(Calendar, IsoRoundTripAndWeekday) {
  const auto t = parse_iso8601("2024-01-01T00:05:00");
  EXPECT_EQ(format_iso8601(t), "2024-01-01T00:05:00");
  EXPECT_EQ(parse_iso8601("2024-01-01 00:05"), t);
  EXPECT_EQ(parse_iso8601("2024-01-01T00:05:00Z"), t);
  EXPECT_EQ(slot_of(t, 288), (TimeSlot{0, 1}));                        // a Monday
  EXPECT_EQ(slot_of(parse_iso8601("2024-03-03T23:55:00"), 288), (TimeSlot{6, 287}));  // a Sunday
  EXPECT_EQ(next_slot({6, 287}, 288), (TimeSlot{0, 0}));
  EXPECT_THROW(parse_iso8601("2024-13-01T00:00:00"), InputError);
  EXPECT_THROW(parse_iso8601("yesterday"), InputError);
}

TEST(ZScore, SymmetricPair) {
  TrafficSeries s = series_of(2, 1, 1, 1);
  s.values = {0.0, 10.0};
  const auto [norm, stats] = zscore_fit_apply(s, 0, 2);
  EXPECT_DOUBLE_EQ(stats.mean[0], 5.0);
  EXPECT_DOUBLE_EQ(stats.std[0], 5.0);
  EXPECT_DOUBLE_EQ(norm.values[0], -1.0);
  EXPECT_DOUBLE_EQ(norm.values[1], 1.0);
}

TEST(ZScore, RoundTripWithinTolerance) {
  const TrafficSeries s = series_of(200, 4, 2, 2);
  const auto [norm, stats] = zscore_fit_apply(s, 0, 140);
  const TrafficSeries back = zscore_invert(norm, stats);
  EXPECT_LT(gman::testing::max_abs_diff(back.values, s.values), 1e-12);
}

TEST(ZScore, FitUsesOnlyTheGivenRangeAndChannelsSeparately) {
  TrafficSeries s = series_of(10, 2, 2, 3);
  for (std::size_t t = 5; t < 10; ++t) s.at(t, 0, 0) = 1e6;  // outside the fit range
  const auto stats = zscore_fit(s, 0, 5);
  double m0 = 0, m1 = 0;
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t v = 0; v < 2; ++v) m0 += s.at(t, v, 0), m1 += s.at(t, v, 1);
  EXPECT_NEAR(stats.mean[0], m0 / 10, 1e-12);
  EXPECT_NEAR(stats.mean[1], m1 / 10, 1e-12);
}

TEST(ZScore, ConstantSeriesIsDegenerate) {
  TrafficSeries s = series_of(5, 2, 1, 4);
  std::fill(s.values.begin(), s.values.end(), 7.0);
  EXPECT_THROW(zscore_fit(s, 0, 5), InputError);
  EXPECT_THROW(zscore_fit(s, 3, 3), InputError);
}

TEST(Split, WindowCountsMatchClosedForm) {
  const auto plan = split_windows(100, 4, 4);
  EXPECT_EQ(plan.train_end, 70u);
  EXPECT_EQ(plan.validation_end, 80u);
  EXPECT_EQ(plan.train.size(), 63u);
  EXPECT_EQ(plan.validation.size(), 3u);
  EXPECT_EQ(plan.test.size(), 13u);
  for (std::size_t steps : {300u, 288u * 30u, 1001u})
    for (std::size_t p : {3u, 12u}) {
      const auto sp = split_windows(steps, p, p);
      const auto tr = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(steps)));
      const auto va = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(steps)));
      EXPECT_EQ(sp.train.size(), tr - 2 * p + 1);
      EXPECT_EQ(sp.validation.size(), va - tr - 2 * p + 1);
      EXPECT_EQ(sp.test.size(), steps - va - 2 * p + 1);
    }
}

TEST(Split, NoWindowStraddlesABoundary) {
  const auto plan = split_windows(500, 6, 5);
  for (auto s : plan.train) EXPECT_LE(s + 11, plan.train_end);
  for (auto s : plan.validation) {
    EXPECT_GE(s, plan.train_end);
    EXPECT_LE(s + 11, plan.validation_end);
  }
  for (auto s : plan.test) EXPECT_GE(s, plan.validation_end);
  EXPECT_EQ(plan.test.back() + 11, 500u);
}

TEST(Split, DegenerateRatiosAndErrors) {
  const auto all_train = split_windows(50, 2, 3, {1.0, 0.0, 0.0});
  EXPECT_EQ(all_train.train.size(), 46u);
  EXPECT_TRUE(all_train.validation.empty());
  EXPECT_TRUE(all_train.test.empty());
  EXPECT_THROW(split_windows(7, 4, 4), InputError);
  EXPECT_THROW(split_windows(60, 4, 4), InputError);  // validation split holds 6 steps
  EXPECT_THROW(split_windows(100, 4, 4, {0.5, 0.1, 0.1}), ConfigError);
  EXPECT_THROW(split_windows(100, 0, 4), ConfigError);
}

TEST(Batch, WindowsAreContiguousAndAligned) {
  const TrafficSeries s = series_of(40, 3, 2, 5);
  const Batch b = make_batch(s, {0, 7}, 4, 3);
  EXPECT_EQ(b.inputs.shape(), (Shape{2, 4, 3, 2}));
  EXPECT_EQ(b.targets.shape(), (Shape{2, 3, 3, 2}));
  EXPECT_EQ(b.inputs.at({1, 3, 2, 1}), s.at(10, 2, 1));
  EXPECT_EQ(b.targets.at({1, 0, 0, 0}), s.at(11, 0, 0));
  EXPECT_EQ(b.targets.at({0, 2, 1, 1}), s.at(6, 1, 1));
  ASSERT_EQ(b.windows[1].size(), 7u);
  EXPECT_EQ(b.windows[1][0], s.slots[7]);
  EXPECT_THROW(make_batch(s, {34}, 4, 3), InputError);
  EXPECT_THROW(make_batch(s, {}, 4, 3), InputError);
}

TEST(Faults, ExactCountAndNothingElse) {
  std::vector<double> x(20);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i) + 1.0;
  const auto y = inject_faults(x, 0.5, 3);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (y[i] == 0.0) ++zeros;
    else EXPECT_EQ(y[i], x[i]);
  }
  EXPECT_EQ(zeros, 10u);
  EXPECT_EQ(inject_faults(x, 0.0, 3), x);
  for (double v : inject_faults(x, 1.0, 3)) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(inject_faults(x, 0.5, 3), y);
  EXPECT_NE(inject_faults(x, 0.5, 4), y);
  EXPECT_THROW(inject_faults(x, 1.5, 3), ConfigError);
  EXPECT_THROW(inject_faults(x, -0.1, 3), ConfigError);
}

TEST(Faults, TensorVariantIsPerWindow) {
  const Tensor x = gman::testing::random_tensor({3, 4, 5, 1}, 6);
  const Tensor y = inject_faults(x, 0.5, 9, {10, 11, 12});
  for (std::size_t b = 0; b < 3; ++b) {
    std::size_t zeros = 0;
    for (std::size_t k = 0; k < 20; ++k) zeros += y.data()[b * 20 + k] == 0.0;
    EXPECT_EQ(zeros, 10u);
  }
  // A window's faults depend on its id, not its batch position.
  const Tensor single = inject_faults(gather(x, 0, {1}), 0.5, 9, {11});
  for (std::size_t k = 0; k < 20; ++k) EXPECT_EQ(single.data()[k], y.data()[20 + k]);
  EXPECT_THROW(inject_faults(x, 0.5, 9, {1}), DimensionError);
}

TEST(Synthetic, ZeroNoiseWeekdaysRepeat) {
  const auto g = make_synthetic_graph(4, 1);
  SynthOptions opt;
  opt.noise = 0.0;
  opt.observation_noise = 0.0;
  opt.coupling = 0.0;
  const auto r = synth_generate(g, 7, 24, 2, opt);
  for (std::size_t day = 1; day < 5; ++day)
    for (std::size_t k = 0; k < 24; ++k)
      for (std::size_t v = 0; v < 4; ++v) EXPECT_EQ(r.series.at(day * 24 + k, v), r.series.at(k, v));
  // Weekend peaks are damped.
  const std::size_t morning_peak = 8;
  EXPECT_LT(r.series.at(5 * 24 + morning_peak, 0), r.series.at(morning_peak, 0));
}

TEST(Synthetic, IdenticalIsolatedVerticesMatch) {
  RoadGraph g;
  g.vertex_ids = {"a", "b"};
  g.distances = SquareMatrix(2, kUnreachable);
  g.adjacency = SquareMatrix(2, 0.0);
  for (std::size_t i = 0; i < 2; ++i) g.distances(i, i) = 0.0, g.adjacency(i, i) = 1.0;
  SynthOptions opt;
  opt.noise = 0.0;
  opt.observation_noise = 0.0;
  opt.amplitudes = std::vector<double>{20.0, 20.0};
  opt.bases = std::vector<double>{50.0, 50.0};
  const auto r = synth_generate(g, 2, 24, 3, opt);
  for (std::size_t t = 0; t < r.series.steps(); ++t) EXPECT_EQ(r.series.at(t, 0), r.series.at(t, 1));
}

TEST(Synthetic, ConnectedPairsCorrelateMoreThanUnconnected) {
  const auto g = make_synthetic_graph(20, 7);
  const auto r = synth_generate(g, 30, 288, 11);
  const std::size_t n = 20, steps = r.series.steps();
  auto lagged = [&](std::size_t a, std::size_t b) {
    std::vector<double> x, y;
    for (std::size_t t = 1; t < steps; ++t) {
      x.push_back(r.truth.deviation[(t - 1) * n + b]);
      y.push_back(r.truth.deviation[t * n + a]);
    }
    return correlation(x, y);
  };
  double connected = 0, unconnected = 0;
  std::size_t nc = 0, nu = 0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      if (a == b) continue;
      if (g.adjacency(a, b) > 0) connected += lagged(a, b), ++nc;
      else unconnected += lagged(a, b), ++nu;
    }
  ASSERT_GT(nc, 0u);
  ASSERT_GT(nu, 0u);
  EXPECT_GT(connected / static_cast<double>(nc), unconnected / static_cast<double>(nu));
}

TEST(Synthetic, DeterministicGivenSeed) {
  const auto g = make_synthetic_graph(5, 2);
  EXPECT_EQ(synth_generate(g, 2, 24, 9).series.values, synth_generate(g, 2, 24, 9).series.values);
  EXPECT_NE(synth_generate(g, 2, 24, 9).series.values, synth_generate(g, 2, 24, 10).series.values);
  EXPECT_THROW(synth_generate(g, 0, 24, 9), ConfigError);
  EXPECT_THROW(synth_generate(g, 1, 7, 9), ConfigError);
}

TEST(SeriesFile, LoadReorderAndForwardFill) {
  std::istringstream in(
      "timestamp,b,a\n"
      "2024-01-01T00:00:00,,1\n"
      "2024-01-01T00:05:00,5,\n"
      "2024-01-01T00:10:00,6,3\n");
  const std::vector<std::string> order{"a", "b"};
  const auto s = load_series({&in}, {"speed.csv"}, &order);
  ASSERT_EQ(s.steps(), 3u);
  EXPECT_EQ(s.vertex_ids, order);
  EXPECT_EQ(s.at(0, 0), 1.0);
  EXPECT_EQ(s.at(1, 0), 1.0);  // forward-filled
  EXPECT_EQ(s.at(0, 1), 5.0);  // leading gap takes the first observation
  EXPECT_EQ(s.missing[1 * 2 + 0], 1);
  EXPECT_EQ(s.missing[0 * 2 + 1], 1);
  EXPECT_EQ(s.missing[2 * 2 + 1], 0);
  EXPECT_EQ(s.slots[2], (TimeSlot{0, 2}));
}

TEST(SeriesFile, MultiChannelFromSeveralFiles) {
  std::istringstream speed("timestamp,a\n2024-01-01T00:00:00,50\n2024-01-01T00:05:00,51\n");
  std::istringstream flow("timestamp,a\n2024-01-01T00:00:00,300\n2024-01-01T00:05:00,310\n");
  const auto s = load_series({&speed, &flow}, {"speed.csv", "flow.csv"});
  EXPECT_EQ(s.channels, 2u);
  EXPECT_EQ(s.at(1, 0, 1), 310.0);
  std::istringstream shorter("timestamp,a\n2024-01-01T00:00:00,300\n");
  std::istringstream again("timestamp,a\n2024-01-01T00:00:00,50\n2024-01-01T00:05:00,51\n");
  EXPECT_THROW(load_series({&again, &shorter}, {"x", "y"}), InputError);
}

TEST(SeriesFile, Errors) {
  auto load = [](const std::string& text, const std::vector<std::string>* order = nullptr) {
    std::istringstream in(text);
    return load_series({&in}, {"s.csv"}, order);
  };
  EXPECT_THROW(load("time,a\n2024-01-01T00:00:00,1\n"), InputError);
  EXPECT_THROW(load("timestamp,a\n"), InputError);
  EXPECT_THROW(load("timestamp,a\n2024-01-01T00:00:00,1\n2024-01-01T00:10:00,1\n"), InputError);
  EXPECT_THROW(load("timestamp,a\n2024-01-01T00:00:00,x\n"), InputError);
  EXPECT_THROW(load("timestamp,a\n2024-01-01T00:00:00,1,2\n"), InputError);
  EXPECT_THROW(load("timestamp,a\n2024-01-01T00:00:00,\n"), InputError);
  const std::vector<std::string> order{"a"};
  EXPECT_THROW(load("timestamp,a,z\n2024-01-01T00:00:00,1,2\n", &order), InputError);
  const std::vector<std::string> wider{"a", "q"};
  EXPECT_THROW(load("timestamp,a\n2024-01-01T00:00:00,1\n", &wider), InputError);
  try {
    load("timestamp,a\n2024-01-01T00:00:00,1\nbad,2\n");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("s.csv:3"), std::string::npos) << e.what();
  }
}

TEST(SeriesFile, WriteThenLoad) {
  const auto g = make_synthetic_graph(3, 1);
  const auto r = synth_generate(g, 1, 288, 2);
  std::stringstream buf;
  write_series(buf, r.series);
  const auto back = load_series({&buf}, {"buf"});
  EXPECT_EQ(back.steps(), r.series.steps());
  EXPECT_EQ(back.start_epoch, r.series.start_epoch);
  EXPECT_EQ(back.slots, r.series.slots);
  for (std::size_t i = 0; i < back.values.size(); ++i)
    EXPECT_NEAR(back.values[i], r.series.values[i], 1e-5 * std::fabs(r.series.values[i]));
}
