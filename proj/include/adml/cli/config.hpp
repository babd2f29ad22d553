#pragma once

// Run configuration: flat `key = value` lines, `#` starts a comment. Every key
// has a default except the dataset source (`data`). Unknown or repeated keys
// are rejected before any work starts.
//
// to_text() renders every key in a fixed order with round-trip number
// formatting; that canonical echo is what checkpoints store.

#include <charconv>
#include <cmath>
#include <fstream>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>

#include "adml/metalearn.hpp"

namespace adml::cli {

enum class Precision { f32, f64 };
enum class DataKind { synth, images };
enum class ClipMode { automatic, on, off };
enum class EvalSplit { test, val, train };

struct SynthSource {
  std::size_t dim = kBlobDim;
  std::size_t classes = 100;
  std::size_t samples = 40;
  double spread = kBlobSpread;
  double separation = kBlobSeparation;
  std::uint64_t seed = 1;
};

struct ImageSource {
  std::string root;
  std::string manifest;
  double lo = 0.0;
  double hi = 255.0;
};

struct RunConfig {
  TrainerKind trainer = TrainerKind::adml;
  ModelKind model = ModelKind::conv4;
  std::size_t filters = 32;
  std::vector<std::size_t> hidden;
  Precision precision = Precision::f32;

  std::optional<DataKind> data;  // required
  SynthSource synth;
  ImageSource images;
  SplitSpec split{64, 16, 20, 0};

  MetaConfig meta;
  ClipMode clip = ClipMode::automatic;

  std::size_t eval_tasks = 600;
  std::vector<double> eval_eps{2.0, 0.2};
  EvalSplit eval_split = EvalSplit::test;

  std::uint64_t seed = 0;
  std::string out = "out";
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer the shortest form that round-trips.
  for (int prec = 1; prec <= 17; ++prec) {
    char shorter[32];
    std::snprintf(shorter, sizeof shorter, "%.*g", prec, v);
    if (std::strtod(shorter, nullptr) == v) return shorter;
  }
  return buf;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end) throw ConfigError("bad value for '" + key + "': '" + v + "'");
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  const double d = parse_number<double>(key, v);
  if (!std::isfinite(d)) throw ConfigError("non-finite value for '" + key + "'");
  return d;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("'" + key + "' must be true or false, got '" + v + "'");
}

template <class T, class F>
std::vector<T> parse_list(const std::string& v, F&& one) {
  std::vector<T> out;
  std::size_t p = 0;
  while (p <= v.size()) {
    auto q = v.find(',', p);
    if (q == std::string::npos) q = v.size();
    const auto item = trim(std::string_view(v).substr(p, q - p));
    if (!item.empty()) out.push_back(one(item));
    p = q + 1;
  }
  return out;
}

template <class E>
E parse_enum(const std::string& key, const std::string& v, std::initializer_list<std::pair<const char*, E>> names) {
  for (const auto& [n, e] : names)
    if (v == n) return e;
  std::string allowed;
  for (const auto& [n, e] : names) allowed += std::string(allowed.empty() ? "" : "|") + n;
  throw ConfigError("'" + key + "' must be one of " + allowed + ", got '" + v + "'");
}

template <class E>
std::string enum_name(E v, std::initializer_list<std::pair<const char*, E>> names) {
  for (const auto& [n, e] : names)
    if (e == v) return n;
  return "?";
}

inline const std::initializer_list<std::pair<const char*, TrainerKind>> kTrainers{
    {"maml", TrainerKind::maml}, {"maml-ad", TrainerKind::maml_ad}, {"adml", TrainerKind::adml}};
inline const std::initializer_list<std::pair<const char*, ModelKind>> kModels{{"conv4", ModelKind::conv4},
                                                                               {"mlp", ModelKind::mlp}};
inline const std::initializer_list<std::pair<const char*, Precision>> kPrecisions{{"f32", Precision::f32},
                                                                                   {"f64", Precision::f64}};
inline const std::initializer_list<std::pair<const char*, DataKind>> kDataKinds{{"synth", DataKind::synth},
                                                                                 {"images", DataKind::images}};
inline const std::initializer_list<std::pair<const char*, MetaOrder>> kOrders{{"full", MetaOrder::full},
                                                                               {"first", MetaOrder::first}};
inline const std::initializer_list<std::pair<const char*, SecondGradAt>> kSecondGrad{
    {"episode-start", SecondGradAt::episode_start}, {"after-first", SecondGradAt::after_first}};
inline const std::initializer_list<std::pair<const char*, QueryAttackAt>> kQueryAttack{
    {"adapted", QueryAttackAt::adapted}, {"episode-start", QueryAttackAt::episode_start}};
inline const std::initializer_list<std::pair<const char*, ClipMode>> kClipModes{
    {"auto", ClipMode::automatic}, {"true", ClipMode::on}, {"false", ClipMode::off}};
inline const std::initializer_list<std::pair<const char*, EvalSplit>> kEvalSplits{
    {"test", EvalSplit::test}, {"val", EvalSplit::val}, {"train", EvalSplit::train}};

/// One entry per key: how to read it and how to print it.
struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class M>
Field size_field(const char* key, M member) {
  return {key, [=](RunConfig& c, const std::string& v) { std::invoke(member, c) = parse_number<std::size_t>(key, v); },
          [=](const RunConfig& c) { return std::to_string(std::invoke(member, c)); }};
}

template <class M>
Field u64_field(const char* key, M member) {
  return {key,
          [=](RunConfig& c, const std::string& v) { std::invoke(member, c) = parse_number<std::uint64_t>(key, v); },
          [=](const RunConfig& c) { return std::to_string(std::invoke(member, c)); }};
}

template <class M>
Field double_field(const char* key, M member) {
  return {key, [=](RunConfig& c, const std::string& v) { std::invoke(member, c) = parse_double(key, v); },
          [=](const RunConfig& c) { return fmt_double(std::invoke(member, c)); }};
}

template <class E, class M>
Field enum_field(const char* key, M member, const std::initializer_list<std::pair<const char*, E>>& names) {
  return {key, [=, &names](RunConfig& c, const std::string& v) { std::invoke(member, c) = parse_enum(key, v, names); },
          [=, &names](const RunConfig& c) { return enum_name(std::invoke(member, c), names); }};
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back(enum_field("trainer", &RunConfig::trainer, kTrainers));
    f.push_back(enum_field("model", &RunConfig::model, kModels));
    f.push_back(size_field("model.filters", &RunConfig::filters));
    f.push_back({"model.hidden",
                 [](RunConfig& c, const std::string& v) {
                   c.hidden = parse_list<std::size_t>(v, [](const std::string& s) {
                     return parse_number<std::size_t>("model.hidden", s);
                   });
                 },
                 [](const RunConfig& c) {
                   std::string s;
                   for (auto h : c.hidden) s += (s.empty() ? "" : ",") + std::to_string(h);
                   return s;
                 }});
    f.push_back(enum_field("precision", &RunConfig::precision, kPrecisions));
    f.push_back({"data",
                 [](RunConfig& c, const std::string& v) { c.data = parse_enum("data", v, kDataKinds); },
                 [](const RunConfig& c) { return c.data ? enum_name(*c.data, kDataKinds) : std::string(); }});
    f.push_back(size_field("synth.dim", [](auto& c) -> auto& { return c.synth.dim; }));
    f.push_back(size_field("synth.classes", [](auto& c) -> auto& { return c.synth.classes; }));
    f.push_back(size_field("synth.samples", [](auto& c) -> auto& { return c.synth.samples; }));
    f.push_back(double_field("synth.spread", [](auto& c) -> auto& { return c.synth.spread; }));
    f.push_back(double_field("synth.separation", [](auto& c) -> auto& { return c.synth.separation; }));
    f.push_back(u64_field("synth.seed", [](auto& c) -> auto& { return c.synth.seed; }));
    f.push_back({"images.root", [](RunConfig& c, const std::string& v) { c.images.root = v; },
                 [](const RunConfig& c) { return c.images.root; }});
    f.push_back({"images.manifest", [](RunConfig& c, const std::string& v) { c.images.manifest = v; },
                 [](const RunConfig& c) { return c.images.manifest; }});
    f.push_back(double_field("images.lo", [](auto& c) -> auto& { return c.images.lo; }));
    f.push_back(double_field("images.hi", [](auto& c) -> auto& { return c.images.hi; }));
    f.push_back(size_field("split.train", [](auto& c) -> auto& { return c.split.train; }));
    f.push_back(size_field("split.val", [](auto& c) -> auto& { return c.split.val; }));
    f.push_back(size_field("split.test", [](auto& c) -> auto& { return c.split.test; }));
    f.push_back(u64_field("split.seed", [](auto& c) -> auto& { return c.split.seed; }));
    f.push_back(double_field("alpha1", [](auto& c) -> auto& { return c.meta.alpha1; }));
    f.push_back(double_field("alpha2", [](auto& c) -> auto& { return c.meta.alpha2; }));
    f.push_back(double_field("beta1", [](auto& c) -> auto& { return c.meta.beta1; }));
    f.push_back(double_field("beta2", [](auto& c) -> auto& { return c.meta.beta2; }));
    f.push_back(size_field("inner_steps_train", [](auto& c) -> auto& { return c.meta.inner_steps_train; }));
    f.push_back(size_field("inner_steps_test", [](auto& c) -> auto& { return c.meta.inner_steps_test; }));
    f.push_back(size_field("meta_batch", [](auto& c) -> auto& { return c.meta.meta_batch; }));
    f.push_back(enum_field("order", [](auto& c) -> auto& { return c.meta.order; }, kOrders));
    f.push_back(enum_field("second_grad_at", [](auto& c) -> auto& { return c.meta.second_grad_at; }, kSecondGrad));
    f.push_back(enum_field("query_attack_at", [](auto& c) -> auto& { return c.meta.query_attack_at; }, kQueryAttack));
    f.push_back(size_field("episodes", [](auto& c) -> auto& { return c.meta.episodes; }));
    f.push_back(size_field("ways", [](auto& c) -> auto& { return c.meta.ways; }));
    f.push_back(size_field("shots", [](auto& c) -> auto& { return c.meta.shots; }));
    f.push_back(size_field("query_per_class", [](auto& c) -> auto& { return c.meta.query_per_class; }));
    f.push_back(size_field("checkpoint_every", [](auto& c) -> auto& { return c.meta.checkpoint_every; }));
    f.push_back(double_field("attack.epsilon", [](auto& c) -> auto& { return c.meta.attack.epsilon; }));
    f.push_back(enum_field("attack.clip", &RunConfig::clip, kClipModes));
    f.push_back({"attack.normalized",
                 [](RunConfig& c, const std::string& v) { c.meta.attack.normalized = parse_bool("attack.normalized", v); },
                 [](const RunConfig& c) { return std::string(c.meta.attack.normalized ? "true" : "false"); }});
    f.push_back(size_field("eval.tasks", &RunConfig::eval_tasks));
    f.push_back({"eval.eps",
                 [](RunConfig& c, const std::string& v) {
                   c.eval_eps = parse_list<double>(v, [](const std::string& s) { return parse_double("eval.eps", s); });
                 },
                 [](const RunConfig& c) {
                   std::string s;
                   for (double e : c.eval_eps) s += (s.empty() ? "" : ",") + fmt_double(e);
                   return s;
                 }});
    f.push_back(enum_field("eval.split", &RunConfig::eval_split, kEvalSplits));
    f.push_back(u64_field("seed", &RunConfig::seed));
    f.push_back({"out", [](RunConfig& c, const std::string& v) { c.out = v; },
                 [](const RunConfig& c) { return c.out; }});
    return f;
  }();
  return all;
}

}  // namespace detail

/// Sets one key; unknown keys and malformed values raise ConfigError.
inline void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : detail::fields()) {
    if (key == f.key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

/// Cross-field checks; throws ConfigError.
inline void validate(const RunConfig& cfg) {
  if (!cfg.data) throw ConfigError("config must set 'data' (synth or images)");
  if (*cfg.data == DataKind::images && (cfg.images.root.empty() || cfg.images.manifest.empty())) {
    throw ConfigError("image data needs 'images.root' and 'images.manifest'");
  }
  if (cfg.eval_eps.empty()) throw ConfigError("'eval.eps' must list at least one epsilon");
  if (cfg.eval_tasks == 0) throw ConfigError("'eval.tasks' must be positive");
  try {
    cfg.meta.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
}

inline RunConfig parse_config(std::istream& is, const std::string& origin = "config") {
  RunConfig cfg;
  std::map<std::string, std::size_t> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const auto key = detail::trim(std::string_view(body).substr(0, eq));
    const auto value = detail::trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "missing key");
    if (auto [it, fresh] = seen.emplace(key, lineno); !fresh) {
      throw ConfigError(where + "'" + key + "' already set on line " + std::to_string(it->second));
    }
    try {
      set_key(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return cfg;
}

inline RunConfig parse_config_text(const std::string& text, const std::string& origin = "config") {
  std::istringstream is(text);
  return parse_config(is, origin);
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  return parse_config(is, path.string());
}

/// Canonical echo: every key, fixed order, round-trip numbers. The output
/// directory is left out: it says where artifacts go, not what they contain,
/// so runs that differ only in `out` produce identical bytes.
inline std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : detail::fields()) {
    if (std::string_view(f.key) == "out") continue;
    const auto v = f.get(cfg);
    if (v.empty()) continue;
    out += std::string(f.key) + " = " + v + "\n";
  }
  return out;
}

}  // namespace adml::cli
