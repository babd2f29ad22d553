#pragma once

// The command implementations behind the `adml` tool. Each command returns a
// process exit code: 0 ok, 1 runtime failure, 2 bad configuration, 3 bad data
// or checkpoint. Everything written under the output directory is a pure
// function of (config, seed); wall-clock time only appears on the log stream.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include <json.hpp>

#include "adml/cli/config.hpp"
#include "adml/eval.hpp"
#include "adml/gradcheck.hpp"

namespace adml::cli {

namespace fs = std::filesystem;

/// Command-line values that override config keys.
using Overrides = std::vector<std::pair<std::string, std::string>>;

inline void apply_overrides(RunConfig& cfg, const Overrides& overrides) {
  for (const auto& [key, value] : overrides) set_key(cfg, key, value);
}

// Independent RNG streams derived from the run seed.
inline constexpr std::uint64_t kTrainStream = 0x7452'4149'4e00'0001ULL;
inline constexpr std::uint64_t kEvalStream = 0x4556'414c'0000'0002ULL;
inline constexpr std::uint64_t kAdvStream = 0x4144'5600'0000'0003ULL;

inline Rng stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

// ---------------------------------------------------------------------------
// Setup shared by the commands

template <std::floating_point T>
TaskSource<T> load_source(const RunConfig& cfg) {
  if (*cfg.data == DataKind::synth) {
    const auto& s = cfg.synth;
    try {
      return synth_blob_source<T>(s.dim, s.classes, s.samples, s.spread, s.seed, s.separation);
    } catch (const ContractError& e) {
      throw ConfigError(e.what());
    }
  }
  return load_image_source<T>(cfg.images.root, cfg.images.manifest, cfg.images.lo, cfg.images.hi);
}

template <std::floating_point T>
SourceSplits<T> load_splits(const RunConfig& cfg) {
  const auto src = load_source<T>(cfg);
  try {
    return split_classes(src, cfg.split);
  } catch (const ContractError& e) {
    throw ConfigError(std::string("split: ") + e.what());
  }
}

inline ModelSpec model_spec(const RunConfig& cfg, const Shape& geometry) {
  ModelSpec spec;
  if (cfg.model == ModelKind::conv4) {
    if (geometry.size() != 3) throw ConfigError("conv4 needs [channels, height, width] samples");
    spec = ModelSpec::conv4(cfg.meta.ways, geometry[0], geometry[1], geometry[2], cfg.filters);
  } else {
    if (geometry.size() != 1) throw ConfigError("mlp needs flat samples");
    spec = ModelSpec::mlp(cfg.meta.ways, geometry[0], cfg.hidden);
  }
  try {
    spec.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  return spec;
}

/// The MetaConfig with the attack range taken from the data.
template <std::floating_point T>
MetaConfig meta_for(const RunConfig& cfg, const TaskSource<T>& source) {
  MetaConfig m = cfg.meta;
  m.attack.lo = source.lo;
  m.attack.hi = source.hi;
  m.attack.clip = cfg.clip == ClipMode::automatic ? *cfg.data == DataKind::images : cfg.clip == ClipMode::on;
  return m;
}

template <std::floating_point T>
const TaskSource<T>& eval_source(const RunConfig& cfg, const SourceSplits<T>& s) {
  const auto& src = cfg.eval_split == EvalSplit::test ? s.test : cfg.eval_split == EvalSplit::val ? s.val : s.train;
  if (src.num_classes() < cfg.meta.ways) {
    throw ConfigError("the evaluation split has " + std::to_string(src.num_classes()) + " classes, fewer than ways");
  }
  return src;
}

/// Checkpoint parameters, checked against the model they will be used with.
template <std::floating_point T>
ParamSet<T> checkpoint_params(const Checkpoint& ckpt, const ModelSpec& spec) {
  const auto params = ckpt.params<T>();
  const auto schema = param_schema(spec);
  if (params.size() != schema.size()) throw FormatError("checkpoint does not match the configured model");
  std::size_t i = 0;
  for (const auto& e : params) {
    if (e.name != schema[i].name || e.value.shape() != schema[i].shape) {
      throw FormatError("checkpoint tensor '" + e.name + "' does not match the configured model");
    }
    ++i;
  }
  return params;
}

/// The run config for a command that starts from a checkpoint: the given
/// config file if any, otherwise the echo stored in the checkpoint.
inline RunConfig config_for_checkpoint(const std::optional<fs::path>& config_path, const Checkpoint& ckpt,
                                       const Overrides& overrides) {
  RunConfig cfg = config_path ? load_config(*config_path) : parse_config_text(ckpt.config, "checkpoint config");
  apply_overrides(cfg, overrides);
  validate(cfg);
  return cfg;
}

template <class F>
decltype(auto) with_precision(Precision p, F&& f) {
  if (p == Precision::f64) return f(double{});
  return f(float{});
}

inline std::string checkpoint_name(std::size_t episode) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "checkpoint_%06zu.bin", episode);
  return buf;
}

inline void write_text_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, [&](std::ostream& os) { os << text; });
}

// ---------------------------------------------------------------------------
// meta-train

/// Trains from `cfg`, writing `checkpoint_NNNNNN.bin` every checkpoint_every
/// episodes and `final.bin` at the end, and one JSON log line per episode.
inline void meta_train_run(const RunConfig& cfg, std::ostream& log) {
  validate(cfg);
  with_precision(cfg.precision, [&]<class T>(T) {
    const auto splits = load_splits<T>(cfg);
    if (splits.train.num_classes() < cfg.meta.ways) {
      throw ConfigError("the training split has " + std::to_string(splits.train.num_classes()) +
                        " classes, fewer than ways");
    }
    const auto spec = model_spec(cfg, splits.train.geometry);
    const auto meta = meta_for(cfg, splits.train);
    const ClassifierLearner<T> learner{spec};
    const auto echo = to_text(cfg);
    const fs::path out = cfg.out;
    fs::create_directories(out);

    auto rng = stream_rng(cfg.seed, kTrainStream);
    const auto start = std::chrono::steady_clock::now();
    TrainHooks<T> hooks;
    hooks.on_episode = [&](std::size_t e, double loss) {
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log << nlohmann::json{{"episode", e}, {"loss", loss}, {"wall_s", wall}}.dump() << '\n';
      log.flush();
    };
    hooks.on_checkpoint = [&](std::size_t e, const ParamSet<T>& p) {
      save_checkpoint(out / checkpoint_name(e), Checkpoint::from(p, static_cast<std::uint32_t>(e), echo));
    };
    const auto theta =
        meta_train(cfg.trainer, learner, init_params<T>(spec, cfg.seed), splits.train, meta, rng, hooks);
    save_checkpoint(out / "final.bin",
                    Checkpoint::from(theta, static_cast<std::uint32_t>(cfg.meta.episodes), echo));
    return 0;
  });
}

// ---------------------------------------------------------------------------
// meta-test results and their two renderings

struct GridRow {
  std::string support, query;
  double eps = 0, mean = 0, ci = 0;
};

struct CurveRow {
  std::string support, query;
  double eps = 0;
  std::size_t step = 0;
  double loss = 0, top1 = 0;
};

struct Results {
  std::vector<GridRow> grid;
  std::vector<CurveRow> curves;
};

namespace detail {

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Values are stored exactly as printed so every rendering carries the same numbers.
inline double rounded(double v, int digits) { return std::stod(fixed(v, digits)); }

}  // namespace detail

inline constexpr int kGridDigits = 4;
inline constexpr int kCurveDigits = 6;

inline Results collect_results(const std::vector<GridCell>& cells) {
  Results r;
  for (const auto& c : cells) {
    const std::string s = to_string(c.scenario.support), q = to_string(c.scenario.query);
    r.grid.push_back({s, q, c.scenario.epsilon, detail::rounded(c.report.mean_accuracy, kGridDigits),
                      detail::rounded(c.report.ci_halfwidth, kGridDigits)});
    for (std::size_t k = 0; k < c.report.loss_curve.size(); ++k) {
      r.curves.push_back({s, q, c.scenario.epsilon, k, detail::rounded(c.report.loss_curve[k], kCurveDigits),
                          detail::rounded(c.report.top1_curve[k], kCurveDigits)});
    }
  }
  return r;
}

inline std::string grid_csv(const Results& r) {
  std::string out = "support,query,eps,mean,ci\n";
  for (const auto& g : r.grid) {
    out += g.support + "," + g.query + "," + detail::fmt_double(g.eps) + "," + detail::fixed(g.mean, kGridDigits) +
           "," + detail::fixed(g.ci, kGridDigits) + "\n";
  }
  return out;
}

inline std::string curves_csv(const Results& r) {
  std::string out = "support,query,eps,step,loss,top1\n";
  for (const auto& c : r.curves) {
    out += c.support + "," + c.query + "," + detail::fmt_double(c.eps) + "," + std::to_string(c.step) + "," +
           detail::fixed(c.loss, kCurveDigits) + "," + detail::fixed(c.top1, kCurveDigits) + "\n";
  }
  return out;
}

inline nlohmann::json to_json(const Results& r) {
  nlohmann::json grid = nlohmann::json::array(), curves = nlohmann::json::array();
  for (const auto& g : r.grid) {
    grid.push_back({{"support", g.support}, {"query", g.query}, {"eps", g.eps}, {"mean", g.mean}, {"ci", g.ci}});
  }
  for (const auto& c : r.curves) {
    curves.push_back({{"support", c.support},
                      {"query", c.query},
                      {"eps", c.eps},
                      {"step", c.step},
                      {"loss", c.loss},
                      {"top1", c.top1}});
  }
  return {{"grid", grid}, {"curves", curves}};
}

inline Results results_from_json(const nlohmann::json& j) {
  Results r;
  try {
    for (const auto& g : j.at("grid")) {
      r.grid.push_back({g.at("support").get<std::string>(), g.at("query").get<std::string>(), g.at("eps").get<double>(),
                        g.at("mean").get<double>(), g.at("ci").get<double>()});
    }
    for (const auto& c : j.at("curves")) {
      r.curves.push_back({c.at("support").get<std::string>(), c.at("query").get<std::string>(),
                          c.at("eps").get<double>(), c.at("step").get<std::size_t>(), c.at("loss").get<double>(),
                          c.at("top1").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
  return r;
}

inline void write_results(const fs::path& out, const Results& r, const nlohmann::json& extra) {
  fs::create_directories(out);
  auto j = to_json(r);
  j.update(extra);
  write_text_atomic(out / "grid.csv", grid_csv(r));
  write_text_atomic(out / "curves.csv", curves_csv(r));
  write_text_atomic(out / "report.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// meta-test

inline Results meta_test_run(const fs::path& checkpoint, const std::optional<fs::path>& config_path,
                             const Overrides& overrides) {
  const auto ckpt = load_checkpoint(checkpoint);
  const auto cfg = config_for_checkpoint(config_path, ckpt, overrides);
  return with_precision(cfg.precision, [&]<class T>(T) {
    const auto splits = load_splits<T>(cfg);
    const auto& source = eval_source(cfg, splits);
    const auto spec = model_spec(cfg, source.geometry);
    const auto theta = checkpoint_params<T>(ckpt, spec);
    const auto meta = meta_for(cfg, source);
    try {
      meta.validate();
    } catch (const ContractError& e) {
      throw ConfigError(e.what());
    }
    auto rng = stream_rng(cfg.seed, kEvalStream);
    const auto cells = scenario_grid(ClassifierLearner<T>{spec}, theta, source, std::span<const double>(cfg.eval_eps),
                                     meta, cfg.eval_tasks, rng);
    auto results = collect_results(cells);
    write_results(cfg.out, results,
                  {{"checkpoint_episode", ckpt.episode}, {"tasks", cfg.eval_tasks}, {"config", to_text(cfg)}});
    return results;
  });
}

// ---------------------------------------------------------------------------
// report: json -> csv

inline Results report_run(const fs::path& report, const fs::path& out) {
  std::ifstream is(report);
  if (!is) throw FormatError("cannot open report " + report.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
  auto r = results_from_json(j);
  fs::create_directories(out);
  write_text_atomic(out / "grid.csv", grid_csv(r));
  write_text_atomic(out / "curves.csv", curves_csv(r));
  return r;
}

// ---------------------------------------------------------------------------
// gen-adv: FGSM export in the dataset format

/// Samples eval.tasks episodes from the evaluation split, attacks support and
/// query against the checkpoint parameters with the first eval epsilon, and
/// writes one sample file per example plus a manifest that load_image_source
/// reads back. Returns the number of samples written.
inline std::size_t gen_adv_run(const fs::path& checkpoint, const std::optional<fs::path>& config_path,
                               const Overrides& overrides) {
  const auto ckpt = load_checkpoint(checkpoint);
  const auto cfg = config_for_checkpoint(config_path, ckpt, overrides);
  return with_precision(cfg.precision, [&]<class T>(T) {
    const auto splits = load_splits<T>(cfg);
    const auto& source = eval_source(cfg, splits);
    const auto spec = model_spec(cfg, source.geometry);
    const auto theta = checkpoint_params<T>(ckpt, spec);
    auto attack = meta_for(cfg, source).attack;
    attack.epsilon = cfg.eval_eps.front();
    const ClassifierLearner<T> learner{spec};
    const fs::path out = cfg.out;
    fs::create_directories(out / "samples");
    auto rng = stream_rng(cfg.seed, kAdvStream);
    std::string manifest;
    std::size_t written = 0;
    for (std::size_t t = 0; t < cfg.eval_tasks; ++t) {
      const auto ep = sample_episode(source, cfg.meta.ways, cfg.meta.shots, cfg.meta.query_per_class, rng);
      const std::pair<const char*, const Batch<T>*> parts[] = {{"s", &ep.support}, {"q", &ep.query}};
      for (const auto& [tag, batch] : parts) {
        const auto adv = learner.perturb(theta, *batch, attack);
        const std::size_t row = adv.x.numel() / adv.size();
        for (std::size_t r = 0; r < adv.size(); ++r) {
          Tensor<T> x(source.geometry);
          std::copy_n(adv.x.data().begin() + r * row, row, x.data().begin());
          char rel[64];
          std::snprintf(rel, sizeof rel, "samples/t%05zu_%s%03zu.bin", t, tag, r);
          write_file_atomic(out / rel, [&](std::ostream& os) { write_record(os, "x", x); });
          manifest += source.classes[ep.classes[adv.y[r]]].name + "\t" + rel + "\n";
          ++written;
        }
      }
    }
    write_text_atomic(out / "manifest.tsv", manifest);
    return written;
  });
}

// ---------------------------------------------------------------------------
// gradcheck

/// Runs the oracle suite; returns the name of the first failing check, if any.
inline std::optional<std::string> gradcheck_run(std::ostream& log,
                                                const std::vector<gradcheck::Check>& checks = gradcheck::default_checks()) {
  for (const auto& r : gradcheck::run_checks(checks, log)) {
    if (!r.passed) return r.name;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Error mapping

/// Runs `body`, translating exceptions into exit codes with a message on `err`.
template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const FormatError& e) {
    err << "data error: " << e.what() << '\n';
    return 3;
  } catch (const IngestionError& e) {
    err << "data error: " << e.what() << '\n';
    return 3;
  } catch (const GeometryError& e) {
    err << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace adml::cli
