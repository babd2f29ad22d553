#pragma once

// Meta-testing: adapt a copy of theta on each sampled task's (possibly
// attacked) support set and track query loss / top-1 after every inner step.

#include <cmath>
#include <optional>

#include "adml/metalearn.hpp"

namespace adml {

template <class L, class T>
concept EvaluableLearner = TaskLearner<L, T> && requires(const L& l, const ParamSet<T>& p, const Batch<T>& b) {
  { l.evaluate(p, b) } -> std::same_as<EvalPoint>;
};

enum class SupportMode { clean, adversarial, mixed40 };
enum class QueryMode { clean, adversarial };

inline const char* to_string(SupportMode m) {
  switch (m) {
    case SupportMode::clean:
      return "clean";
    case SupportMode::adversarial:
      return "adversarial";
    case SupportMode::mixed40:
      return "mixed40";
  }
  return "?";
}

inline const char* to_string(QueryMode m) { return m == QueryMode::clean ? "clean" : "adversarial"; }

struct Scenario {
  SupportMode support = SupportMode::clean;
  QueryMode query = QueryMode::clean;
  double epsilon = 0;

  bool operator==(const Scenario&) const = default;
};

/// Applicable scenarios in table order; mixed40 needs at least two shots.
inline std::vector<Scenario> scenarios_for(std::size_t shots, double epsilon) {
  std::vector<Scenario> out;
  std::vector<SupportMode> rows{SupportMode::clean, SupportMode::adversarial};
  if (shots >= 2) rows.push_back(SupportMode::mixed40);
  for (auto s : rows)
    for (auto q : {QueryMode::clean, QueryMode::adversarial}) out.push_back({s, q, epsilon});
  return out;
}

/// Number of support samples per class replaced in the mixed40 mode.
inline std::size_t mixed40_count(std::size_t shots) { return (shots * 2) / 5; }

struct EvalReport {
  double mean_accuracy = 0;
  double ci_halfwidth = 0;
  std::vector<double> loss_curve;  // index 0 is before any adaptation
  std::vector<double> top1_curve;
  std::vector<double> accuracies;  // final accuracy per task
  std::size_t num_tasks = 0;

  bool operator==(const EvalReport&) const = default;
};

inline double sample_mean(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// 1.96 * sample standard deviation / sqrt(n); zero for n < 2.
inline double ci95_halfwidth(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = sample_mean(v);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return 1.96 * sd / std::sqrt(static_cast<double>(v.size()));
}

/// Replace the episode's support according to the scenario. Attacks are
/// generated against `params` with the scenario's epsilon; labels are kept.
template <std::floating_point T, TaskLearner<T> L>
Batch<T> build_scenario_support(const Episode<T>& ep, const Scenario& scenario, const L& learner,
                                const ParamSet<T>& params, AttackConfig attack, Rng& rng) {
  attack.epsilon = scenario.epsilon;
  switch (scenario.support) {
    case SupportMode::clean:
      return ep.support;
    case SupportMode::adversarial:
      return learner.perturb(params, ep.support, attack);
    case SupportMode::mixed40: {
      if (ep.shots < 2) throw ContractError("mixed40 support needs at least 2 shots");
      const auto adv = learner.perturb(params, ep.support, attack);
      Batch<T> out = ep.support;
      const std::size_t row = ep.support.x.numel() / ep.support.size();
      for (std::size_t c = 0; c < ep.ways; ++c) {
        for (auto j : sample_without_replacement(ep.shots, mixed40_count(ep.shots), rng)) {
          const std::size_t r = c * ep.shots + j;
          std::copy_n(adv.x.data().begin() + r * row, row, out.x.data().begin() + r * row);
        }
      }
      return out;
    }
  }
  return ep.support;
}

/// Support and query both prepared against the same `params`.
template <std::floating_point T, TaskLearner<T> L>
Episode<T> build_scenario_episode(const Episode<T>& ep, const Scenario& scenario, const L& learner,
                                  const ParamSet<T>& params, AttackConfig attack, Rng& rng) {
  Episode<T> out = ep;
  out.support = build_scenario_support(ep, scenario, learner, params, attack, rng);
  if (scenario.query == QueryMode::adversarial) {
    attack.epsilon = scenario.epsilon;
    out.query = learner.perturb(params, ep.query, attack);
  }
  return out;
}

/// Loss/top-1 on the query after 0..steps inner updates on the support. With
/// an adversarial query, the query is attacked against the current parameters
/// at every step, so each point measures the model actually being evaluated.
template <std::floating_point T, EvaluableLearner<T> L>
std::vector<EvalPoint> adaptation_curve(const L& learner, const ParamSet<T>& theta, const Episode<T>& ep,
                                        T alpha, std::size_t steps,
                                        const std::optional<AttackConfig>& query_attack = std::nullopt) {
  std::vector<EvalPoint> curve;
  curve.reserve(steps + 1);
  auto score = [&](const ParamSet<T>& p) {
    return learner.evaluate(p, query_attack ? learner.perturb(p, ep.query, *query_attack) : ep.query);
  };
  ParamSet<T> p = theta;
  curve.push_back(score(p));
  for (std::size_t s = 0; s < steps; ++s) {
    p = inner_adapt(learner, p, ep.support, alpha, 1);
    curve.push_back(score(p));
  }
  return curve;
}

template <std::floating_point T, EvaluableLearner<T> L>
EvalReport meta_test(const L& learner, const ParamSet<T>& theta, const TaskSource<T>& source,
                     const Scenario& scenario, const MetaConfig& cfg, std::size_t num_tasks,
                     Rng& rng) {
  if (num_tasks == 0) throw ContractError("meta_test needs at least one task");
  if (scenario.support == SupportMode::mixed40 && cfg.shots < 2) {
    throw ContractError("mixed40 support needs at least 2 shots");
  }
  std::vector<std::uint64_t> seeds(num_tasks);
  for (auto& s : seeds) s = rng();
  const auto curves = parallel_map(num_tasks, [&](std::size_t i) {
    Rng task_rng(seeds[i]);
    const auto ep = sample_episode(source, cfg.ways, cfg.shots, cfg.query_per_class, task_rng);
    Episode<T> task = ep;
    task.support = build_scenario_support(ep, scenario, learner, theta, cfg.attack, task_rng);
    std::optional<AttackConfig> query_attack;
    if (scenario.query == QueryMode::adversarial) {
      query_attack = cfg.attack;
      query_attack->epsilon = scenario.epsilon;
    }
    return adaptation_curve(learner, theta, task, static_cast<T>(cfg.alpha1), cfg.inner_steps_test,
                            query_attack);
  });
  EvalReport r;
  r.num_tasks = num_tasks;
  const std::size_t len = cfg.inner_steps_test + 1;
  r.loss_curve.assign(len, 0.0);
  r.top1_curve.assign(len, 0.0);
  for (const auto& c : curves) {
    for (std::size_t s = 0; s < len; ++s) {
      r.loss_curve[s] += c[s].loss;
      r.top1_curve[s] += c[s].accuracy;
    }
    r.accuracies.push_back(c.back().accuracy);
  }
  for (std::size_t s = 0; s < len; ++s) {
    r.loss_curve[s] /= static_cast<double>(num_tasks);
    r.top1_curve[s] /= static_cast<double>(num_tasks);
  }
  r.mean_accuracy = sample_mean(r.accuracies);
  r.ci_halfwidth = ci95_halfwidth(r.accuracies);
  return r;
}

struct GridCell {
  Scenario scenario;
  EvalReport report;
};

/// Every applicable scenario for every epsilon. All cells evaluate the same
/// sampled tasks, so cells without an attack agree across epsilons.
template <std::floating_point T, EvaluableLearner<T> L>
std::vector<GridCell> scenario_grid(const L& learner, const ParamSet<T>& theta,
                                    const TaskSource<T>& source, std::span<const double> eps_list,
                                    const MetaConfig& cfg, std::size_t num_tasks, Rng& rng) {
  const std::uint64_t base = rng();
  std::vector<GridCell> out;
  for (double eps : eps_list) {
    for (const auto& sc : scenarios_for(cfg.shots, eps)) {
      Rng cell_rng(base);
      out.push_back({sc, meta_test(learner, theta, source, sc, cfg, num_tasks, cell_rng)});
    }
  }
  return out;
}

}  // namespace adml
