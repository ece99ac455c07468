#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "gman/gman.hpp"

namespace fs = std::filesystem;
using namespace gman;

namespace {

constexpr std::uint64_t kDefaultSeed = 1;

struct Common {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = kDefaultSeed;
  bool quiet = false;

  std::string output(const std::string& name) const { return (fs::path(out_dir) / name).string(); }
  std::ostream* log() const { return quiet ? nullptr : &std::cerr; }
};

struct ModelFlags {
  std::size_t blocks = 3;
  std::size_t heads = 8;
  std::size_t head_dim = 8;
  std::size_t history = 0;  // 0 takes the dataset's value
  std::size_t horizon = 0;
  std::string variant = "full";
  std::string group_mode = "auto";
  std::size_t groups = 0;
  std::string embeddings;
  Node2VecOptions node2vec;
};

struct TrainFlags {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  std::size_t patience = 10;
  double lr = 0.001;
  double clip = 0.0;
  std::size_t max_batches = 0;
  std::size_t validation_stride = 1;
};

void add_model_flags(CLI::App* app, ModelFlags& m) {
  app->add_option("--L", m.blocks, "ST-attention blocks per side")->capture_default_str();
  app->add_option("--K", m.heads, "attention heads")->capture_default_str();
  app->add_option("--d", m.head_dim, "dimension per head")->capture_default_str();
  app->add_option("--P", m.history, "history steps (must match the dataset)");
  app->add_option("--Q", m.horizon, "horizon steps (must match the dataset)");
  app->add_option("--variant", m.variant, "full, NS, NT, NG or NTr")->capture_default_str();
  app->add_option("--group-mode", m.group_mode, "auto, on or off")->capture_default_str();
  app->add_option("--groups", m.groups, "group count G (0 picks the cost-optimal size)")->capture_default_str();
  app->add_option("--embeddings", m.embeddings, "vertex embedding CSV; node2vec runs when omitted");
  app->add_option("--n2v-p", m.node2vec.p, "node2vec return parameter")->capture_default_str();
  app->add_option("--n2v-q", m.node2vec.q, "node2vec in-out parameter")->capture_default_str();
  app->add_option("--walk-length", m.node2vec.walk_length)->capture_default_str();
  app->add_option("--walks-per-vertex", m.node2vec.walks_per_vertex)->capture_default_str();
  app->add_option("--window", m.node2vec.window)->capture_default_str();
  app->add_option("--n2v-dim", m.node2vec.dimensions)->capture_default_str();
  app->add_option("--n2v-epochs", m.node2vec.epochs)->capture_default_str();
}

void add_train_flags(CLI::App* app, TrainFlags& t) {
  app->add_option("--epochs", t.epochs, "maximum epochs (0 writes the untrained model)")->capture_default_str();
  app->add_option("--batch-size", t.batch_size)->capture_default_str();
  app->add_option("--patience", t.patience, "early-stopping patience in epochs")->capture_default_str();
  app->add_option("--lr", t.lr, "Adam learning rate")->capture_default_str();
  app->add_option("--clip", t.clip, "global gradient-norm clip (0 disables)")->capture_default_str();
  app->add_option("--max-batches", t.max_batches, "cap on batches per epoch (0 uses all)")->capture_default_str();
  app->add_option("--validation-stride", t.validation_stride, "score every k-th validation window")
      ->capture_default_str();
}

std::string normalize_key(std::string key) {
  for (char& c : key)
    if (c == '_') c = '-';
  while (!key.empty() && key.front() == '-') key.erase(key.begin());
  return key;
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file '" + path + "'");
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
    out[normalize_key(detail::trim(line.substr(0, eq)))] = detail::trim(line.substr(eq + 1));
  }
  return out;
}

std::string long_name(const CLI::Option* opt) {
  return opt->get_lnames().empty() ? std::string() : opt->get_lnames().front();
}

/// Fills options not given on the command line from the config file. Keys
/// that belong to a different subcommand are ignored; unknown keys are an
/// error.
void apply_config(CLI::App& app, CLI::App* sub, const std::map<std::string, std::string>& values,
                  const std::string& path) {
  std::map<std::string, CLI::Option*> targets;
  for (CLI::App* scope : {&app, sub})
    for (CLI::Option* opt : scope->get_options())
      if (!long_name(opt).empty()) targets[long_name(opt)] = opt;
  for (const auto& [key, value] : values) {
    auto it = targets.find(key);
    if (it == targets.end()) {
      bool known = false;
      for (CLI::App* other : app.get_subcommands({}))
        for (CLI::Option* opt : other->get_options())
          if (long_name(opt) == key) known = true;
      if (!known) throw ConfigError(path + ": unknown key '" + key + "'");
      continue;
    }
    CLI::Option* opt = it->second;
    if (key == "config" || opt->count() > 0) continue;
    if (opt->get_type_size() == 0) {
      if (value == "true" || value == "1") opt->add_result("true");
      else if (value != "false" && value != "0")
        throw ConfigError(path + ": '" + key + "' expects true or false");
      else continue;
    } else {
      opt->add_result(value);
    }
    try {
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw ConfigError(path + ": bad value for '" + key + "': " + e.what());
    }
  }
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError("missing --" + what);
  if (!fs::is_regular_file(path)) throw InputError("cannot open " + what + " file '" + path + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = detail::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("bad number '" + text + "' in --" + what);
}

/// "0.1,0.5" or "lo..hi" in steps of 0.1.
std::vector<double> parse_etas(const std::string& text) {
  std::vector<double> out;
  const auto dots = text.find("..");
  if (dots != std::string::npos) {
    const double lo = parse_double(text.substr(0, dots), "etas");
    const double hi = parse_double(text.substr(dots + 2), "etas");
    const long first = std::lround(lo * 10.0), last = std::lround(hi * 10.0);
    for (long k = first; k <= last; ++k) out.push_back(static_cast<double>(k) / 10.0);
  } else {
    for (const auto& item : split_list(text)) out.push_back(parse_double(item, "etas"));
  }
  if (out.empty()) throw ConfigError("--etas selects no fault ratios");
  for (double eta : out)
    if (eta < 0.0 || eta > 1.0) throw ConfigError("fault ratio outside [0, 1]");
  return out;
}

SplitRatios parse_ratios(const std::string& text) {
  const auto parts = split_list(text);
  if (parts.size() != 3) throw ConfigError("--ratios expects three comma-separated fractions");
  return {parse_double(parts[0], "ratios"), parse_double(parts[1], "ratios"), parse_double(parts[2], "ratios")};
}

GmanConfig model_config(const ModelFlags& m, const PreparedDataset& d, std::uint64_t seed) {
  if (m.history && m.history != d.plan.history)
    throw ConfigError("--P " + std::to_string(m.history) + " differs from the dataset's " +
                      std::to_string(d.plan.history) + "; re-run prepare");
  if (m.horizon && m.horizon != d.plan.horizon)
    throw ConfigError("--Q " + std::to_string(m.horizon) + " differs from the dataset's " +
                      std::to_string(d.plan.horizon) + "; re-run prepare");
  GmanConfig cfg;
  cfg.blocks = m.blocks;
  cfg.attention = {m.heads, m.head_dim};
  cfg.history = d.plan.history;
  cfg.horizon = d.plan.horizon;
  cfg.channels = d.normalized.channels;
  cfg.vertices = d.normalized.vertices();
  cfg.steps_per_day = d.normalized.steps_per_day;
  cfg.group_mode = parse_group_mode(m.group_mode);
  cfg.groups = m.groups;
  cfg.group_seed = seed;
  cfg.variant = parse_variant(m.variant);
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

Tensor vertex_vectors(const ModelFlags& m, const PreparedDataset& d, std::uint64_t seed, std::ostream* log) {
  if (!m.embeddings.empty()) {
    require_file(m.embeddings, "embeddings");
    return load_embedding_file(m.embeddings, d.graph.vertex_ids);
  }
  Node2VecOptions opt = m.node2vec;
  opt.seed = seed;
  if (log) *log << "node2vec: " << d.graph.vertex_count() << " vertices, " << opt.dimensions << " dimensions\n";
  return node2vec_embedding(d.graph, opt, &std::cerr);
}

TrainOptions train_options(const TrainFlags& t, std::uint64_t seed, std::ostream* log) {
  TrainOptions opt;
  opt.epochs = t.epochs;
  opt.batch_size = t.batch_size;
  opt.patience = t.patience;
  opt.adam.learning_rate = t.lr;
  opt.clip_norm = t.clip;
  opt.seed = seed;
  opt.max_batches_per_epoch = t.max_batches;
  opt.validation_stride = t.validation_stride;
  opt.log = log;
  return opt;
}

PreparedDataset open_dataset(const std::string& path) {
  require_file(path, "dataset");
  return load_dataset(path);
}

const std::vector<std::size_t>& split_starts(const PreparedDataset& d, const std::string& split) {
  if (split == "test") return d.plan.test;
  if (split == "validation") return d.plan.validation;
  if (split == "train") return d.plan.train;
  throw ConfigError("unknown split '" + split + "' (expected train, validation or test)");
}

void report(const std::string& what, const std::string& path) { std::cout << what << ' ' << path << '\n'; }

std::string one_line(std::string text) {
  for (char& c : text)
    if (c == '\n' || c == '\r') c = ' ';
  return text;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, static_cast<int>(std::min<long long>(4LL << 30, INT32_MAX)));
#endif
  CLI::App app{"GMAN traffic forecasting: data preparation, training, evaluation and experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  const char* env_dir = std::getenv("GMAN_OUTPUT_DIR");
  common.out_dir = env_dir && *env_dir ? env_dir : ".";
  app.add_option("--config", common.config_path, "key=value file; command-line flags take precedence");
  app.add_option("--out-dir", common.out_dir, "output directory (default $GMAN_OUTPUT_DIR or .)");
  app.add_option("--seed", common.seed, "seed for every stochastic component")->capture_default_str();
  app.add_flag("--quiet", common.quiet, "suppress progress output");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic road graph and traffic series");
  std::size_t synth_vertices = 20, synth_days = 30;
  int synth_steps_per_day = kDefaultStepsPerDay;
  SynthOptions synth_opt;
  synth->add_option("--vertices", synth_vertices)->capture_default_str();
  synth->add_option("--days", synth_days)->capture_default_str();
  synth->add_option("--steps-per-day", synth_steps_per_day)->capture_default_str();
  synth->add_option("--noise", synth_opt.noise, "innovation std of the latent deviation")->capture_default_str();
  synth->add_option("--observation-noise", synth_opt.observation_noise)->capture_default_str();
  synth->add_option("--persistence", synth_opt.persistence)->capture_default_str();
  synth->add_option("--coupling", synth_opt.coupling)->capture_default_str();

  // prepare
  auto* prepare = app.add_subcommand("prepare", "build the normalized, split dataset artifact");
  std::string graph_path, output_path, ratios_text = "0.7,0.1,0.2";
  std::vector<std::string> series_paths;
  std::size_t prep_history = 12, prep_horizon = 12;
  int prep_steps_per_day = kDefaultStepsPerDay;
  double epsilon = kDefaultAdjacencyThreshold;
  prepare->add_option("--graph", graph_path, "edge list CSV: from,to,distance");
  prepare->add_option("--series", series_paths, "series CSV, one per channel")->delimiter(',');
  prepare->add_option("--P", prep_history)->capture_default_str();
  prepare->add_option("--Q", prep_horizon)->capture_default_str();
  prepare->add_option("--ratios", ratios_text, "train,validation,test fractions")->capture_default_str();
  prepare->add_option("--steps-per-day", prep_steps_per_day)->capture_default_str();
  prepare->add_option("--epsilon", epsilon, "adjacency threshold")->capture_default_str();
  prepare->add_option("--output", output_path, "dataset path (default <out-dir>/dataset.gman)");

  ModelFlags model_flags;
  TrainFlags train_flags;
  std::string dataset_path, checkpoint_path, split = "test";
  std::size_t stride = 1;

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint and history CSV");
  train_cmd->add_option("--dataset", dataset_path, "default <out-dir>/dataset.gman");
  train_cmd->add_option("--checkpoint", checkpoint_path, "default <out-dir>/model.ckpt");
  add_model_flags(train_cmd, model_flags);
  add_train_flags(train_cmd, train_flags);

  // evaluate
  auto* evaluate_cmd = app.add_subcommand("evaluate", "score a checkpoint and write a metrics CSV");
  evaluate_cmd->add_option("--dataset", dataset_path);
  evaluate_cmd->add_option("--checkpoint", checkpoint_path);
  evaluate_cmd->add_option("--split", split, "train, validation or test")->capture_default_str();
  evaluate_cmd->add_option("--stride", stride, "score every k-th window")->capture_default_str();
  evaluate_cmd->add_option("--output", output_path, "default <out-dir>/metrics.csv");

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "forecast Q steps and write them in original units");
  long long predict_at = -1;
  predict_cmd->add_option("--dataset", dataset_path);
  predict_cmd->add_option("--checkpoint", checkpoint_path);
  predict_cmd->add_option("--at", predict_at, "first forecast step index (default: just past the series end)");
  predict_cmd->add_option("--output", output_path, "default <out-dir>/predictions.csv");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "train and score ablation variants");
  std::string variants_text = "full,NS,NT,NG,NTr", seeds_text;
  ablate_cmd->add_option("--dataset", dataset_path);
  ablate_cmd->add_option("--variants", variants_text)->capture_default_str();
  ablate_cmd->add_option("--seeds", seeds_text, "comma-separated seeds (default: --seed)");
  ablate_cmd->add_option("--stride", stride, "score every k-th test window")->capture_default_str();
  ablate_cmd->add_option("--output", output_path, "default <out-dir>/ablation.csv");
  add_model_flags(ablate_cmd, model_flags);
  add_train_flags(ablate_cmd, train_flags);

  // fault
  auto* fault_cmd = app.add_subcommand("fault", "evaluate with a fraction of inputs zeroed");
  std::string etas_text = "0.1..0.9";
  fault_cmd->add_option("--dataset", dataset_path);
  fault_cmd->add_option("--checkpoint", checkpoint_path);
  fault_cmd->add_option("--etas", etas_text, "comma list or lo..hi in steps of 0.1")->capture_default_str();
  fault_cmd->add_option("--split", split)->capture_default_str();
  fault_cmd->add_option("--stride", stride)->capture_default_str();
  fault_cmd->add_option("--output", output_path, "default <out-dir>/fault.csv");

  // gradcheck
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference check of the full model");
  std::size_t gc_vertices = 6, gc_history = 4, gc_horizon = 4, gc_blocks = 1, gc_heads = 2, gc_dim = 4,
              gc_coordinates = 200;
  double gc_step = 1e-5, gc_tolerance = 1e-4, gc_floor = 1e-7;
  gradcheck_cmd->add_option("--N", gc_vertices)->capture_default_str();
  gradcheck_cmd->add_option("--P", gc_history)->capture_default_str();
  gradcheck_cmd->add_option("--Q", gc_horizon)->capture_default_str();
  gradcheck_cmd->add_option("--L", gc_blocks)->capture_default_str();
  gradcheck_cmd->add_option("--K", gc_heads)->capture_default_str();
  gradcheck_cmd->add_option("--d", gc_dim)->capture_default_str();
  gradcheck_cmd->add_option("--coordinates", gc_coordinates)->capture_default_str();
  gradcheck_cmd->add_option("--step", gc_step)->capture_default_str();
  gradcheck_cmd->add_option("--tolerance", gc_tolerance, "maximum relative error")->capture_default_str();
  gradcheck_cmd->add_option("--floor", gc_floor, "gradient magnitude below which coordinates are skipped")
      ->capture_default_str();

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      std::cerr << "gman: usage error: " << one_line(e.what()) << '\n';
      return 1;
    }
    CLI::App* sub = app.get_subcommands().front();
    if (!common.config_path.empty()) {
      require_file(common.config_path, "config");
      apply_config(app, sub, read_config_file(common.config_path), common.config_path);
    }
    auto in_out = [&](const std::string& given, const std::string& name) {
      return given.empty() ? common.output(name) : given;
    };
    const std::string dataset_file = in_out(dataset_path, "dataset.gman");
    const std::string checkpoint_file = in_out(checkpoint_path, "model.ckpt");
    std::ostream* log = common.log();

    if (sub == synth) {
      const RoadGraph graph = make_synthetic_graph(synth_vertices, common.seed);
      const auto result = synth_generate(graph, synth_days, synth_steps_per_day, common.seed, synth_opt);
      const std::string g = common.output("graph.csv"), s = common.output("series.csv");
      atomic_write(g, [&](std::ostream& out) { write_graph(out, graph); });
      atomic_write(s, [&](std::ostream& out) { write_series(out, result.series); });
      report("graph", g);
      report("series", s);
    } else if (sub == prepare) {
      require_file(graph_path, "graph");
      if (series_paths.empty()) throw ConfigError("missing --series");
      for (const auto& p : series_paths) require_file(p, "series");
      const SplitRatios ratios = parse_ratios(ratios_text);
      RoadGraph graph = load_graph_file(graph_path, epsilon);
      const TrafficSeries raw = load_series_files(series_paths, &graph.vertex_ids, prep_steps_per_day);
      const PreparedDataset d = prepare_dataset(std::move(graph), raw, prep_history, prep_horizon, ratios);
      const std::string out = in_out(output_path, "dataset.gman"), stats = common.output("stats.csv");
      save_dataset(out, d);
      atomic_write(stats, [&](std::ostream& o) { write_stats_csv(o, d.stats); });
      if (log)
        *log << "windows: train " << d.plan.train.size() << ", validation " << d.plan.validation.size() << ", test "
             << d.plan.test.size() << " (ratios " << d.ratios.train << '/' << d.ratios.validation << '/'
             << d.ratios.test << ")\n";
      report("dataset", out);
      report("stats", stats);
    } else if (sub == train_cmd) {
      const PreparedDataset d = open_dataset(dataset_file);
      const GmanConfig cfg = model_config(model_flags, d, common.seed);
      GmanModel model(cfg, vertex_vectors(model_flags, d, common.seed, log));
      std::vector<EpochRecord> history;
      if (train_flags.epochs > 0) {
        const TrainResult r = train(model, d.normalized, d.plan, d.stats, train_options(train_flags, common.seed, log));
        history = r.history;
        if (log) *log << "best epoch " << r.best_epoch << ", validation MAE " << r.best_val_mae << '\n';
      }
      save_checkpoint(checkpoint_file, model, d.normalized.vertex_ids, d.stats);
      const std::string h = common.output("history.csv");
      atomic_write(h, [&](std::ostream& out) { write_history_csv(out, history); });
      report("checkpoint", checkpoint_file);
      report("history", h);
    } else if (sub == evaluate_cmd || sub == fault_cmd) {
      const PreparedDataset d = open_dataset(dataset_file);
      require_file(checkpoint_file, "checkpoint");
      const Checkpoint ck = load_checkpoint(checkpoint_file);
      if (ck.vertex_ids != d.normalized.vertex_ids)
        throw InputError(checkpoint_file + ": vertex order differs from dataset '" + dataset_file + "'");
      const auto starts = thin(split_starts(d, split), stride);
      if (sub == evaluate_cmd) {
        const MetricReport m = evaluate(ck.model, d.normalized, starts, d.stats);
        const std::string out = in_out(output_path, "metrics.csv");
        atomic_write(out, [&](std::ostream& o) { write_metrics_csv(o, m); });
        report("metrics", out);
      } else {
        const auto rows = run_fault_experiment(ck.model, d.normalized, starts, d.stats, parse_etas(etas_text),
                                               common.seed);
        const std::string out = in_out(output_path, "fault.csv");
        atomic_write(out, [&](std::ostream& o) { write_fault_csv(o, rows); });
        report("fault", out);
      }
    } else if (sub == predict_cmd) {
      const PreparedDataset d = open_dataset(dataset_file);
      require_file(checkpoint_file, "checkpoint");
      const Checkpoint ck = load_checkpoint(checkpoint_file);
      const auto& s = d.normalized;
      if (ck.vertex_ids != s.vertex_ids)
        throw InputError(checkpoint_file + ": vertex order differs from dataset '" + dataset_file + "'");
      const std::size_t p = ck.model.config().history, q = ck.model.config().horizon;
      const long long at = predict_at < 0 ? static_cast<long long>(s.steps()) : predict_at;
      if (at < static_cast<long long>(p) || at > static_cast<long long>(s.steps()))
        throw ConfigError("--at must lie in [" + std::to_string(p) + ", " + std::to_string(s.steps()) + "]");
      const std::size_t first = static_cast<std::size_t>(at) - p;
      std::vector<double> inputs(s.values.begin() + static_cast<std::ptrdiff_t>(first * s.stride()),
                                 s.values.begin() + static_cast<std::ptrdiff_t>((first + p) * s.stride()));
      std::vector<TimeSlot> window(s.slots.begin() + static_cast<std::ptrdiff_t>(first),
                                   s.slots.begin() + static_cast<std::ptrdiff_t>(first + p));
      while (window.size() < p + q) window.push_back(next_slot(window.back(), s.steps_per_day));
      NoGradGuard no_grad;
      const Tensor y = ck.model.forward(Tensor::from({1, p, s.vertices(), s.channels}, inputs), {window});
      for (double v : y.data())
        if (!std::isfinite(v)) throw NumericError("predict: non-finite prediction");
      const std::vector<TimeSlot> future(window.begin() + static_cast<std::ptrdiff_t>(p), window.end());
      const std::string out = in_out(output_path, "predictions.csv");
      atomic_write(out, [&](std::ostream& o) {
        write_predictions_csv(o, y, future, s.start_epoch + at * s.step_seconds(), s.step_seconds(), s.vertex_ids,
                              d.stats);
      });
      report("predictions", out);
    } else if (sub == ablate_cmd) {
      const PreparedDataset d = open_dataset(dataset_file);
      std::vector<ModelVariant> variants;
      for (const auto& v : split_list(variants_text)) variants.push_back(parse_variant(v));
      if (variants.empty()) throw ConfigError("--variants selects nothing");
      std::vector<std::uint64_t> seeds;
      for (const auto& v : split_list(seeds_text)) {
        try {
          seeds.push_back(std::stoull(v));
        } catch (const std::exception&) {
          throw ConfigError("bad seed '" + v + "' in --seeds");
        }
      }
      if (seeds.empty()) seeds.push_back(common.seed);
      ModelFlags base_flags = model_flags;
      base_flags.variant = "full";
      const GmanConfig base = model_config(base_flags, d, common.seed);
      const Tensor vectors = vertex_vectors(model_flags, d, common.seed, log);
      const auto runs = run_ablation(base, vectors, d.normalized, d.plan, d.stats,
                                     train_options(train_flags, common.seed, log), seeds, variants, stride);
      const std::string out = in_out(output_path, "ablation.csv");
      atomic_write(out, [&](std::ostream& o) { write_ablation_csv(o, variants, mean_step_mae(runs, variants)); });
      report("ablation", out);
    } else if (sub == gradcheck_cmd) {
      GmanConfig cfg;
      cfg.blocks = gc_blocks;
      cfg.attention = {gc_heads, gc_dim};
      cfg.history = gc_history;
      cfg.horizon = gc_horizon;
      cfg.vertices = gc_vertices;
      cfg.steps_per_day = 24;
      cfg.seed = common.seed;
      cfg.validate();
      std::mt19937_64 rng(common.seed);
      std::normal_distribution<double> gauss(0.0, 1.0);
      auto draw = [&](Shape shape) {
        Tensor t = Tensor::zeros(shape);
        for (double& v : t.mutable_data()) v = gauss(rng);
        return t;
      };
      GmanModel model(cfg, draw({gc_vertices, 5}));
      const Tensor x = draw({2, gc_history, gc_vertices, 1}), y = draw({2, gc_horizon, gc_vertices, 1});
      std::vector<std::vector<TimeSlot>> windows;
      for (int b = 0; b < 2; ++b) {
        std::vector<TimeSlot> w{{b, 7 * b}};
        while (w.size() < gc_history + gc_horizon) w.push_back(next_slot(w.back(), cfg.steps_per_day));
        windows.push_back(w);
      }
      auto loss = [&] { return loss_mae(model.forward(x, windows), y); };
      const auto r = finite_difference_check(loss, model.parameters(), gc_step, gc_coordinates, common.seed, gc_floor);
      std::cout.precision(6);
      std::cout << "coordinates " << r.coordinates << " max_relative_error " << r.max_relative_error << " worst "
                << r.worst_parameter << '[' << r.worst_index << "] skipped " << r.skipped << '\n';
      if (!(r.max_relative_error < gc_tolerance))
        throw NumericError("gradient check failed: max relative error " + std::to_string(r.max_relative_error) +
                           " at " + r.worst_parameter);
    }
    return 0;
  } catch (const Error& e) {
    const char* kind = e.category() == Error::Category::usage  ? "usage"
                       : e.category() == Error::Category::data ? "data"
                                                               : "numeric";
    std::cerr << "gman: " << kind << " error: " << one_line(e.what()) << '\n';
    switch (e.category()) {
      case Error::Category::usage: return 1;
      case Error::Category::data: return 2;
      case Error::Category::numeric: return 3;
    }
  } catch (const std::exception& e) {
    std::cerr << "gman: data error: " << one_line(e.what()) << '\n';
    return 2;
  }
  return 2;
}
