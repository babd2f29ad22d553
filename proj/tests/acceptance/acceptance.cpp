// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//
// Criteria 6-8 share one desk-scale experiment: for seeds 1-3, MAML and ADML
// meta-train an MLP on synthetic Gaussian-blob classes and are evaluated on
// held-out classes, clean and under FGSM at the training budget.

#include <chrono>
#include <cstdio>
#include <functional>
#include <set>

#include <unistd.h>

#include "adml/cli/commands.hpp"

using namespace adml;
using D = double;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// --- 1: autodiff oracle suite ------------------------------------------------

Outcome autodiff_oracles() {
  std::ostringstream log;
  const auto results = gradcheck::run_checks(gradcheck::default_checks(), log);
  double worst = 0;
  std::string first_failure;
  bool second_order_seen = false;
  for (const auto& r : results) {
    if (r.tolerance == gradcheck::kTolerance) worst = std::max(worst, r.error);
    if (r.name.starts_with("d2(x^3)/dx2")) second_order_seen = r.tolerance <= 1e-10;
    if (!r.passed && first_failure.empty()) first_failure = r.name;
  }
  if (!first_failure.empty()) return {false, "first failing check: " + first_failure};
  if (!second_order_seen) return {false, "second-order x^3 oracle missing"};
  return {true, fmt("%zu checks, worst FD relative error %.2e", results.size(), worst)};
}

// --- 2: meta-gradient oracle -------------------------------------------------

Outcome meta_gradient_oracle() {
  const gradcheck::QuadraticLearner q{2.0};
  const auto theta = gradcheck::scalar_theta(1.0);
  const auto data = gradcheck::scalar_batch({0.0});
  const double adapted = inner_adapt(q, theta, data, 0.1, 1).at("theta").item();
  const double full = meta_gradient(q, theta, data, data, 0.1, 1, MetaOrder::full).grad.at("theta").item();
  const double first = meta_gradient(q, theta, data, data, 0.1, 1, MetaOrder::first).grad.at("theta").item();
  const double err = std::max({std::abs(adapted - 0.8), std::abs(full - 1.28), std::abs(first - 1.6)});
  return {err <= 1e-10, fmt("theta'=%.12g full=%.12g first=%.12g max err %.1e", adapted, full, first, err)};
}

// --- 3: epsilon = 0 collapse ------------------------------------------------

struct TinyMlp {
  ModelSpec spec = ModelSpec::mlp(3, 4, {6});
  ClassifierLearner<D> learner{spec};
  ParamSet<D> theta;
  TaskSource<D> source = synth_blob_source<D>(4, 6, 10, 0.2, 3);
  std::vector<Episode<D>> tasks;
  MetaConfig cfg;

  TinyMlp() {
    std::vector<NamedTensor<D>> big;
    for (const auto& e : init_params<D>(spec, 2)) {
      Tensor<D> v = e.value;
      for (auto& x : v.data()) x *= 20;  // leave the near-linear regime
      big.push_back({e.name, v});
    }
    theta = ParamSet<D>(big);
    Rng rng(4);
    for (int i = 0; i < 2; ++i) tasks.push_back(sample_episode(source, 3, 2, 3, rng));
    cfg.alpha1 = cfg.alpha2 = 0.3;
    cfg.beta1 = cfg.beta2 = 0.2;
    cfg.inner_steps_train = 2;
    cfg.attack.epsilon = 0;
    cfg.attack.clip = false;
    cfg.ways = 3;
    cfg.shots = 2;
    cfg.query_per_class = 3;
    cfg.meta_batch = 2;
    cfg.episodes = 3;
  }
};

Outcome epsilon_zero_collapse() {
  TinyMlp m;
  const auto span = std::span<const Episode<D>>(m.tasks);
  const auto [g1, g2] = adml_meta_gradients(m.learner, m.theta, span, m.cfg);
  const double adml_gap = max_abs_diff(g1, g2);
  const double step_gap = max_abs_diff(mamlad_episode_update(m.learner, m.theta, span, m.cfg).params,
                                       maml_episode_update(m.learner, m.theta, span, m.cfg).params);
  Rng a(11), b(11);
  const double run_gap = max_abs_diff(meta_train(TrainerKind::maml_ad, m.learner, m.theta, m.source, m.cfg, a),
                                      meta_train(TrainerKind::maml, m.learner, m.theta, m.source, m.cfg, b));
  const bool pass = adml_gap <= 1e-12 && step_gap <= 1e-12 && run_gap <= 1e-12;
  return {pass, fmt("|g1-g2|=%.1e, |MAML-AD - MAML| step %.1e, 3-episode run %.1e", adml_gap, step_gap, run_gap)};
}

// --- 4: FGSM properties ------------------------------------------------------

Outcome fgsm_properties() {
  const auto spec = ModelSpec::mlp(3, 6, {8});
  std::vector<NamedTensor<D>> big;
  for (const auto& e : init_params<D>(spec, 5)) {
    Tensor<D> v = e.value;
    for (auto& x : v.data()) x *= 25;
    big.push_back({e.name, v});
  }
  const ParamSet<D> params(big);
  Rng rng(6);
  const Batch<D> b{gradcheck::random_tensor({5, 6}, rng), {0, 1, 2, 1, 0}};
  AttackConfig atk;
  atk.clip = false;
  auto attack = [&](double eps) {
    atk.epsilon = eps;
    return fgsm(spec, params, b, atk);
  };
  const auto g = input_gradient(spec, params, b);
  const auto a1 = attack(0.1), a3 = attack(0.3);
  double bound = 0, equality = 0, homog = 0, dd = 0;
  for (std::size_t i = 0; i < g.numel(); ++i) {
    const double d = std::abs(a3.x[i] - b.x[i]);
    bound = std::max(bound, d - 0.3);
    if (g[i] != 0) equality = std::max(equality, std::abs(d - 0.3));
    homog = std::max(homog, std::abs((a3.x[i] - b.x[i]) - 3 * (a1.x[i] - b.x[i])));
    dd += g[i] * (a1.x[i] - b.x[i]);
  }

  // Two-way linear softmax is logistic regression: dL/dx_n = (p_n - onehot_n) W^T / N.
  const auto lspec = ModelSpec::mlp(2, 4, {});
  const ParamSet<D> lp({{"head.w", Tensor<D>({4, 2}, std::vector<D>{0.5, -0.3, 1.2, 0.1, -0.7, 0.4, 0.2, 0.9})},
                        {"head.b", Tensor<D>({2}, std::vector<D>{0.1, -0.2})}});
  const Batch<D> lb{gradcheck::random_tensor({3, 4}, rng), {0, 1, 1}};
  atk.epsilon = 0.25;
  const auto ladv = fgsm(lspec, lp, lb, atk);
  double logistic = 0;
  const auto& w = lp.at("head.w");
  const auto& bias = lp.at("head.b");
  for (std::size_t n = 0; n < 3; ++n) {
    double z[2];
    for (std::size_t k = 0; k < 2; ++k) {
      z[k] = bias[k];
      for (std::size_t d = 0; d < 4; ++d) z[k] += lb.x[n * 4 + d] * w[d * 2 + k];
    }
    const double p1 = 1.0 / (1.0 + std::exp(z[0] - z[1]));
    const double r[2] = {(1 - p1) - (lb.y[n] == 0), p1 - (lb.y[n] == 1)};
    for (std::size_t d = 0; d < 4; ++d) {
      const double gd = (r[0] * w[d * 2] + r[1] * w[d * 2 + 1]) / 3.0;
      const double expect = lb.x[n * 4 + d] + 0.25 * ((gd > 0) - (gd < 0));
      logistic = std::max(logistic, std::abs(ladv.x[n * 4 + d] - expect));
    }
  }
  const bool pass = bound <= 1e-15 && equality <= 1e-15 && homog <= 1e-12 && dd >= 0 && logistic <= 1e-10;
  return {pass, fmt("bound excess %.1e, equality err %.1e, homogeneity err %.1e, directional %.3e, logistic err %.1e",
                    bound, equality, homog, dd, logistic)};
}

// --- 5: sampler invariants ---------------------------------------------------

Outcome sampler_invariants() {
  TaskSource<D> src;
  src.geometry = {2};
  for (std::size_t c = 0; c < 12; ++c) {
    ClassSamples<D> cls{"c" + std::to_string(c), {}};
    for (std::size_t i = 0; i < 25; ++i) cls.samples.push_back(Tensor<D>({2}, std::vector<D>{D(c), D(i)}));
    src.classes.push_back(std::move(cls));
  }
  Rng rng(3);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t ways = 2 + trial % 4, shots = 1 + trial % 5, q = 1 + trial % 7;
    const auto ep = sample_episode(src, ways, shots, q, rng);
    auto fail = [&](const char* what) { return Outcome{false, fmt("trial %d: %s", trial, what)}; };
    if (ep.support.size() != ways * shots || ep.query.size() != ways * q) return fail("batch size");
    std::vector<std::set<int>> support_idx(ways);
    std::vector<std::size_t> s_count(ways), q_count(ways);
    for (const auto* part : {&ep.support, &ep.query}) {
      for (std::size_t r = 0; r < part->size(); ++r) {
        const int y = part->y[r];
        if (y < 0 || std::size_t(y) >= ways) return fail("label out of range");
        if (std::size_t(part->x[2 * r]) != ep.classes[y]) return fail("label is not a bijection onto classes");
        const int idx = int(part->x[2 * r + 1]);
        if (part == &ep.support) {
          ++s_count[y];
          support_idx[y].insert(idx);
        } else {
          ++q_count[y];
          if (support_idx[y].count(idx)) return fail("support/query overlap");
        }
      }
    }
    for (std::size_t c = 0; c < ways; ++c) {
      if (s_count[c] != shots || q_count[c] != q) return fail("per-class count");
      if (support_idx[c].size() != shots) return fail("repeated support sample");
    }
    if (std::set<std::size_t>(ep.classes.begin(), ep.classes.end()).size() != ways) return fail("repeated class");
  }
  return {true, "10000 episodes"};
}

// --- 6-8: desk-scale experiment ---------------------------------------------

// Calibrated desk-scale hyperparameters (see README).
constexpr std::size_t kHidden = 32;
constexpr double kAlpha = 0.025;
constexpr double kBeta = 0.06;
constexpr double kEpsilon = 0.05;
constexpr std::size_t kEpisodes = 2000;
constexpr std::size_t kTestTasks = 200;

struct SeedResult {
  double control = 0;
  double cc[2] = {0, 0};  // maml, adml
  double ca[2] = {0, 0};
  double train_seconds[2] = {0, 0};
  std::vector<GridCell> adml_grid;
};

SeedResult run_seed(std::uint64_t seed) {
  const auto src = synth_blob_source<D>(kBlobDim, 25, 40, kBlobSpread, seed);
  const auto split = split_classes(src, {20, 0, 5, seed});
  const auto spec = ModelSpec::mlp(5, kBlobDim, {kHidden});
  const ClassifierLearner<D> learner{spec};
  MetaConfig cfg;
  cfg.alpha1 = cfg.alpha2 = kAlpha;
  cfg.beta1 = cfg.beta2 = kBeta;
  cfg.episodes = kEpisodes;
  cfg.meta_batch = 4;
  cfg.shots = 1;
  cfg.attack.epsilon = kEpsilon;
  cfg.attack.clip = false;
  cfg.attack.lo = split.train.lo;
  cfg.attack.hi = split.train.hi;
  const std::vector<double> eps{kEpsilon};
  const auto theta0 = init_params<D>(spec, seed);

  SeedResult out;
  {
    Rng r(100 + seed);
    out.control = scenario_grid(learner, theta0, split.test, std::span<const double>(eps), cfg, kTestTasks, r)[0]
                      .report.mean_accuracy;
  }
  for (int k = 0; k < 2; ++k) {
    Rng rng(seed);
    const auto t0 = std::chrono::steady_clock::now();
    const auto theta =
        meta_train(k == 0 ? TrainerKind::maml : TrainerKind::adml, learner, theta0, split.train, cfg, rng);
    out.train_seconds[k] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    Rng r(100 + seed);
    auto grid = scenario_grid(learner, theta, split.test, std::span<const double>(eps), cfg, kTestTasks, r);
    out.cc[k] = grid[0].report.mean_accuracy;
    out.ca[k] = grid[1].report.mean_accuracy;
    if (k == 1) out.adml_grid = std::move(grid);
  }
  return out;
}

double ls_slope(const std::vector<double>& y) {
  const double n = static_cast<double>(y.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double x = static_cast<double>(i);
    sx += x, sy += y[i], sxx += x * x, sxy += x * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::vector<SeedResult> g_runs;

Outcome desk_learning() {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    g_runs.push_back(run_seed(seed));
    const auto& r = g_runs.back();
    std::printf("     seed %llu: control %.3f | MAML cc %.3f ca %.3f (%.0fs) | ADML cc %.3f ca %.3f (%.0fs)\n",
                static_cast<unsigned long long>(seed), r.control, r.cc[0], r.ca[0], r.train_seconds[0], r.cc[1],
                r.ca[1], r.train_seconds[1]);
    std::fflush(stdout);
  }
  bool pass = true;
  double min_cc = 1, max_ctl = 0, max_secs = 0;
  for (const auto& r : g_runs) {
    min_cc = std::min({min_cc, r.cc[0], r.cc[1]});
    max_ctl = std::max(max_ctl, r.control);
    max_secs = std::max({max_secs, r.train_seconds[0], r.train_seconds[1]});
  }
  pass = min_cc >= 0.80 && max_ctl <= 0.35 && max_secs < 600;
  return {pass, fmt("min Clean-Clean %.3f (>= 0.80), max control %.3f (<= 0.35), slowest run %.0fs (< 600)", min_cc,
                    max_ctl, max_secs)};
}

Outcome robustness_ordering() {
  if (g_runs.empty()) return {false, "desk experiment did not run"};
  double drop[2] = {0, 0};
  for (const auto& r : g_runs)
    for (int k = 0; k < 2; ++k) drop[k] += (r.cc[k] - r.ca[k]) / static_cast<double>(g_runs.size());
  const bool pass = drop[1] <= 0.5 * drop[0] && drop[1] <= 0.10;
  return {pass, fmt("mean drop MAML %.3f, ADML %.3f (need ADML <= %.3f and <= 0.100)", drop[0], drop[1],
                    0.5 * drop[0])};
}

Outcome curve_shape() {
  if (g_runs.empty()) return {false, "desk experiment did not run"};
  double worst_gap = -1e300, worst_slope = -1e300;
  std::string where;
  bool pass = true;
  for (std::size_t s = 0; s < g_runs.size(); ++s) {
    for (const auto& cell : g_runs[s].adml_grid) {
      const auto& c = cell.report.loss_curve;
      const std::vector<double> head(c.begin(), c.begin() + std::min<std::size_t>(11, c.size()));
      const double gap = c[3] - c[0], slope = ls_slope(head);
      worst_gap = std::max(worst_gap, gap);
      worst_slope = std::max(worst_slope, slope);
      if (!(gap < 0 && slope <= 0)) {
        pass = false;
        where = fmt(" (seed %zu %s-%s)", s + 1, to_string(cell.scenario.support), to_string(cell.scenario.query));
      }
    }
  }
  return {pass, fmt("max loss[3]-loss[0] %.4f (< 0), max slope %.5f (<= 0)%s", worst_gap, worst_slope,
                    where.c_str())};
}

// --- 9: determinism and persistence -----------------------------------------

const char* const kDeterminismConfig = R"(trainer = adml
model = mlp
model.hidden = 16
precision = f64
data = synth
synth.classes = 11
synth.samples = 12
split.train = 6
split.val = 0
split.test = 5
alpha1 = 0.05
alpha2 = 0.05
beta1 = 0.05
beta2 = 0.05
inner_steps_train = 2
inner_steps_test = 4
episodes = 10
query_per_class = 4
checkpoint_every = 5
attack.epsilon = 0.05
eval.tasks = 20
eval.eps = 0.05
seed = 3
)";

Outcome determinism() {
  const auto root = fs::temp_directory_path() / ("adml_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  std::ostringstream sink;
  for (const char* name : {"a", "b"}) {
    auto cfg = cli::parse_config_text(kDeterminismConfig);
    cfg.out = (root / name).string();
    cli::meta_train_run(cfg, sink);
    cli::meta_test_run(root / name / "final.bin", std::nullopt, {{"out", (root / name / "eval").string()}});
  }
  std::size_t compared = 0;
  std::string mismatch;
  for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), root / "a");
    ++compared;
    if (!fs::exists(root / "b" / rel) || read_file(entry.path()) != read_file(root / "b" / rel)) {
      mismatch = rel.string();
    }
  }

  // Round trip of full-size conv4 parameters in both precisions.
  bool round_trip = true;
  const auto spec = ModelSpec::conv4(5, 3, 84, 84);
  auto check = [&]<class T>(T) {
    const auto params = init_params<T>(spec, 9);
    const auto path = root / "roundtrip.bin";
    save_checkpoint(path, Checkpoint::from(params, 42, "seed = 9\n"));
    const auto loaded = load_checkpoint(path);
    round_trip &= bitwise_equal(loaded.params<T>(), params) && loaded.episode == 42 && loaded.config == "seed = 9\n";
    const auto bytes = read_file(path);
    save_checkpoint(path, loaded);
    round_trip &= read_file(path) == bytes;
  };
  check(float{});
  check(double{});
  fs::remove_all(root);
  const bool pass = compared >= 6 && mismatch.empty() && round_trip;
  return {pass, fmt("%zu artifacts byte-identical across two runs%s; conv4 f32/f64 round-trip %s", compared,
                    mismatch.empty() ? "" : (", mismatch: " + mismatch).c_str(), round_trip ? "bit-exact" : "DIFFERS")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"autodiff oracle suite", autodiff_oracles},
      {"meta-gradient oracle", meta_gradient_oracle},
      {"epsilon=0 collapse", epsilon_zero_collapse},
      {"FGSM properties", fgsm_properties},
      {"sampler invariants", sampler_invariants},
      {"desk-scale learning", desk_learning},
      {"robustness ordering", robustness_ordering},
      {"curve shape", curve_shape},
      {"determinism and persistence", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %zu: %s -- %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
