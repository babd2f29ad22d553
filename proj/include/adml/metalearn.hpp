#pragma once

// Meta-trainers: MAML, MAML-AD (MAML over clean+adversarial mixtures) and
// ADML (cross meta-update between adversarially and cleanly adapted
// parameters).
//
// The trainers are generic over a learner that supplies the task loss and
// the adversarial perturbation, so the same code paths run on the image
// classifier, the desk-scale MLP and closed-form test problems.

#include <functional>

#include "adml/adversarial.hpp"
#include "adml/parallel.hpp"
#include "adml/tasks.hpp"

namespace adml {

template <class L, class T>
concept TaskLearner = requires(const L& l, const VarParams<T>& p, const ParamSet<T>& theta,
                               const Batch<T>& b, const AttackConfig& a) {
  { l.loss(p, b) } -> std::same_as<Var<T>>;
  { l.perturb(theta, b, a) } -> std::same_as<Batch<T>>;
};

struct EvalPoint {
  double loss = 0;
  double accuracy = 0;
};

/// Cross-entropy classifier over a ModelSpec, attacked with FGSM.
template <std::floating_point T>
struct ClassifierLearner {
  ModelSpec spec;

  Var<T> loss(const VarParams<T>& p, const Batch<T>& b) const {
    return cross_entropy(forward(spec, p, Var<T>::constant(b.x)), std::span<const int>(b.y));
  }

  Batch<T> perturb(const ParamSet<T>& theta, const Batch<T>& b, const AttackConfig& cfg) const {
    return fgsm(spec, theta, b, cfg);
  }

  /// Mean loss and top-1 accuracy (ties go to the lowest class index).
  EvalPoint evaluate(const ParamSet<T>& theta, const Batch<T>& b) const {
    const auto logits = forward(spec, VarParams<T>::leaves(theta, false), Var<T>::constant(b.x));
    const auto loss = cross_entropy(logits, std::span<const int>(b.y));
    const auto& z = logits.value();
    const std::size_t n = z.dim(1);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < b.size(); ++i) {
      const auto row = z.data().subspan(i * n, n);
      const auto best = std::max_element(row.begin(), row.end()) - row.begin();
      if (best == b.y[i]) ++correct;
    }
    return {static_cast<double>(loss.item()), static_cast<double>(correct) / b.size()};
  }
};

enum class TrainerKind { maml, maml_ad, adml };
enum class MetaOrder { full, first };

/// Where ADML's second meta-gradient is evaluated.
enum class SecondGradAt {
  episode_start,  // both gradients at the episode-start parameters
  after_first,    // re-adapt from the parameters after the first update
};

/// Which parameters the adversarial query samples of meta-training target.
enum class QueryAttackAt {
  adapted,        // the task-adapted parameters that score the query
  episode_start,  // the episode-start parameters
};

struct MetaConfig {
  double alpha1 = 0.01;
  double alpha2 = 0.01;
  double beta1 = 0.001;
  double beta2 = 0.001;
  std::size_t inner_steps_train = 5;
  std::size_t inner_steps_test = 10;
  std::size_t meta_batch = 4;
  MetaOrder order = MetaOrder::full;
  SecondGradAt second_grad_at = SecondGradAt::episode_start;
  QueryAttackAt query_attack_at = QueryAttackAt::adapted;
  AttackConfig attack;
  std::size_t episodes = 60000;
  std::size_t ways = 5;
  std::size_t shots = 1;
  std::size_t query_per_class = 15;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only

  void validate() const {
    for (double s : {alpha1, alpha2, beta1, beta2}) {
      if (!(s >= 0) || !std::isfinite(s)) throw ContractError("step sizes must be finite and >= 0");
    }
    if (inner_steps_train < 1 || inner_steps_test < 1) throw ContractError("inner steps must be >= 1");
    if (meta_batch < 1) throw ContractError("meta batch must be >= 1");
    if (ways < 2 || shots < 1 || query_per_class < 1) throw ContractError("bad episode shape");
    attack.validate();
  }
};

/// `steps` full-batch gradient-descent steps on `data`. With create_graph the
/// result stays differentiable w.r.t. `params`; otherwise it is constant.
template <std::floating_point T, TaskLearner<T> L>
VarParams<T> inner_adapt(const L& learner, const VarParams<T>& params, const Batch<T>& data,
                         T alpha, std::size_t steps, bool create_graph) {
  if (data.size() == 0) throw ContractError("inner adaptation on an empty batch");
  VarParams<T> cur = params;
  for (std::size_t s = 0; s < steps; ++s) {
    const auto g = grad(learner.loss(cur, data), cur, create_graph);
    VarParams<T> next;
    for (std::size_t i = 0; i < cur.size(); ++i) {
      auto w = sub(create_graph ? cur.var(i) : cur.var(i).detach(), scale(g[i], alpha));
      next.push(cur.name(i), create_graph ? std::move(w) : Var<T>::leaf(w.value()));
    }
    cur = std::move(next);
  }
  return cur;
}

template <std::floating_point T, TaskLearner<T> L>
ParamSet<T> inner_adapt(const L& learner, const ParamSet<T>& params, const Batch<T>& data, T alpha,
                        std::size_t steps) {
  return inner_adapt(learner, VarParams<T>::leaves(params), data, alpha, steps, false).values();
}

template <std::floating_point T>
struct MetaGradient {
  GradMap<T> grad;
  double query_loss = 0;
};

/// Gradient w.r.t. theta of the query loss after adapting theta on `support`.
/// First-order mode treats the adapted parameters as constants in theta.
template <std::floating_point T, TaskLearner<T> L>
MetaGradient<T> meta_gradient(const L& learner, const ParamSet<T>& theta, const Batch<T>& support,
                              const Batch<T>& query, T alpha, std::size_t steps, MetaOrder order) {
  const auto leaves = VarParams<T>::leaves(theta);
  if (order == MetaOrder::full) {
    const auto adapted = inner_adapt(learner, leaves, support, alpha, steps, true);
    const auto loss = learner.loss(adapted, query);
    return {grad_map(loss, leaves), static_cast<double>(loss.item())};
  }
  const auto adapted = inner_adapt(learner, leaves, support, alpha, steps, false);
  const auto fresh = VarParams<T>::leaves(adapted.values());
  const auto loss = learner.loss(fresh, query);
  return {grad_map(loss, fresh), static_cast<double>(loss.item())};
}

template <std::floating_point T>
struct EpisodeOutcome {
  ParamSet<T> params;
  double query_loss = 0;  // mean post-adaptation query loss over tasks
};

namespace detail {

template <std::floating_point T>
GradMap<T> sum_grads(const std::vector<MetaGradient<T>>& parts) {
  GradMap<T> total = parts.front().grad;
  for (std::size_t i = 1; i < parts.size(); ++i) total = accumulate(total, parts[i].grad);
  return total;
}

template <std::floating_point T>
double mean_loss(const std::vector<MetaGradient<T>>& parts) {
  double s = 0;
  for (const auto& p : parts) s += p.query_loss;
  return s / static_cast<double>(parts.size());
}

template <std::floating_point T>
void require_tasks(std::span<const Episode<T>> tasks) {
  if (tasks.empty()) throw ContractError("episode update needs at least one task");
}

}  // namespace detail

/// theta - beta1 * grad sum_i L(theta'_i, query_i), theta'_i adapted on support_i.
template <std::floating_point T, TaskLearner<T> L>
EpisodeOutcome<T> maml_episode_update(const L& learner, const ParamSet<T>& theta,
                                      std::span<const Episode<T>> tasks, const MetaConfig& cfg) {
  detail::require_tasks(tasks);
  const auto parts = parallel_map(tasks.size(), [&](std::size_t i) {
    return meta_gradient(learner, theta, tasks[i].support, tasks[i].query,
                         static_cast<T>(cfg.alpha1), cfg.inner_steps_train, cfg.order);
  });
  return {sgd_step(theta, detail::sum_grads(parts), static_cast<T>(cfg.beta1)),
          detail::mean_loss(parts)};
}

/// Support and query each become clean samples followed by their FGSM
/// counterparts (a 50/50 mixture). Support samples target theta; query samples
/// target `query_target`.
template <std::floating_point T, TaskLearner<T> L>
Episode<T> mixed_episode(const L& learner, const ParamSet<T>& theta, const Episode<T>& ep,
                         const AttackConfig& attack, const ParamSet<T>& query_target) {
  Episode<T> out = ep;
  out.support = concat(ep.support, learner.perturb(theta, ep.support, attack));
  out.query = concat(ep.query, learner.perturb(query_target, ep.query, attack));
  return out;
}

template <std::floating_point T, TaskLearner<T> L>
Episode<T> mixed_episode(const L& learner, const ParamSet<T>& theta, const Episode<T>& ep,
                         const AttackConfig& attack) {
  return mixed_episode(learner, theta, ep, attack, theta);
}

/// MAML over clean+adversarial mixtures for both adaptation and meta-update.
template <std::floating_point T, TaskLearner<T> L>
EpisodeOutcome<T> mamlad_episode_update(const L& learner, const ParamSet<T>& theta,
                                        std::span<const Episode<T>> tasks, const MetaConfig& cfg) {
  detail::require_tasks(tasks);
  const auto mixed = parallel_map(tasks.size(), [&](std::size_t i) {
    if (cfg.query_attack_at == QueryAttackAt::episode_start) {
      return mixed_episode(learner, theta, tasks[i], cfg.attack);
    }
    const auto support = concat(tasks[i].support, learner.perturb(theta, tasks[i].support, cfg.attack));
    const auto adapted = inner_adapt(learner, theta, support, static_cast<T>(cfg.alpha1), cfg.inner_steps_train);
    return mixed_episode(learner, theta, tasks[i], cfg.attack, adapted);
  });
  return maml_episode_update(learner, theta, std::span<const Episode<T>>(mixed), cfg);
}

/// The adversarial inputs of one ADML task. The support attack targets the
/// episode-start theta; the query attack targets the parameters that score it.
template <std::floating_point T>
struct AdversarialPair {
  Batch<T> support;
  Batch<T> query;
};

template <std::floating_point T>
struct AdmlGradients {
  MetaGradient<T> adv_to_clean;  // adapted on adversarial support, scored on clean query
  MetaGradient<T> clean_to_adv;  // adapted on clean support, scored on adversarial query
};

template <std::floating_point T, TaskLearner<T> L>
std::vector<AdversarialPair<T>> adversarial_pairs(const L& learner, const ParamSet<T>& theta,
                                                  std::span<const Episode<T>> tasks,
                                                  const MetaConfig& cfg) {
  return parallel_map(tasks.size(), [&](std::size_t i) {
    const auto& target = cfg.query_attack_at == QueryAttackAt::adapted
                             ? inner_adapt(learner, theta, tasks[i].support, static_cast<T>(cfg.alpha2),
                                           cfg.inner_steps_train)
                             : theta;
    return AdversarialPair<T>{learner.perturb(theta, tasks[i].support, cfg.attack),
                              learner.perturb(target, tasks[i].query, cfg.attack)};
  });
}

/// Per-task cross meta-gradients at theta.
template <std::floating_point T, TaskLearner<T> L>
std::vector<AdmlGradients<T>> adml_task_gradients(const L& learner, const ParamSet<T>& theta,
                                                  std::span<const Episode<T>> tasks,
                                                  std::span<const AdversarialPair<T>> adv,
                                                  const MetaConfig& cfg) {
  return parallel_map(tasks.size(), [&](std::size_t i) {
    const auto steps = cfg.inner_steps_train;
    return AdmlGradients<T>{
        meta_gradient(learner, theta, adv[i].support, tasks[i].query, static_cast<T>(cfg.alpha1),
                      steps, cfg.order),
        meta_gradient(learner, theta, tasks[i].support, adv[i].query, static_cast<T>(cfg.alpha2),
                      steps, cfg.order)};
  });
}

/// Summed (adv->clean, clean->adv) meta-gradients of one episode batch at theta.
template <std::floating_point T, TaskLearner<T> L>
std::pair<GradMap<T>, GradMap<T>> adml_meta_gradients(const L& learner, const ParamSet<T>& theta,
                                                      std::span<const Episode<T>> tasks,
                                                      const MetaConfig& cfg) {
  detail::require_tasks(tasks);
  const auto adv = adversarial_pairs(learner, theta, tasks, cfg);
  const auto per_task = adml_task_gradients(learner, theta, tasks, std::span<const AdversarialPair<T>>(adv), cfg);
  std::vector<MetaGradient<T>> g1, g2;
  for (const auto& p : per_task) {
    g1.push_back(p.adv_to_clean);
    g2.push_back(p.clean_to_adv);
  }
  return {detail::sum_grads(g1), detail::sum_grads(g2)};
}

/// One ADML episode: adversarial support/query (see adversarial_pairs), two
/// adapted parameter sets per task, then theta -= beta1*g1 and theta -= beta2*g2.
template <std::floating_point T, TaskLearner<T> L>
EpisodeOutcome<T> adml_episode_update(const L& learner, const ParamSet<T>& theta,
                                      std::span<const Episode<T>> tasks, const MetaConfig& cfg) {
  detail::require_tasks(tasks);
  const auto adv = adversarial_pairs(learner, theta, tasks, cfg);
  const std::span<const AdversarialPair<T>> adv_span(adv);
  const auto per_task = adml_task_gradients(learner, theta, tasks, adv_span, cfg);
  std::vector<MetaGradient<T>> g1, g2;
  for (const auto& p : per_task) {
    g1.push_back(p.adv_to_clean);
    g2.push_back(p.clean_to_adv);
  }
  auto updated = sgd_step(theta, detail::sum_grads(g1), static_cast<T>(cfg.beta1));
  if (cfg.second_grad_at == SecondGradAt::after_first) {
    g2 = parallel_map(tasks.size(), [&](std::size_t i) {
      return meta_gradient(learner, updated, tasks[i].support, adv[i].query,
                           static_cast<T>(cfg.alpha2), cfg.inner_steps_train, cfg.order);
    });
  }
  updated = sgd_step(updated, detail::sum_grads(g2), static_cast<T>(cfg.beta2));
  return {std::move(updated), 0.5 * (detail::mean_loss(g1) + detail::mean_loss(g2))};
}

template <std::floating_point T, TaskLearner<T> L>
EpisodeOutcome<T> episode_update(TrainerKind kind, const L& learner, const ParamSet<T>& theta,
                                 std::span<const Episode<T>> tasks, const MetaConfig& cfg) {
  switch (kind) {
    case TrainerKind::maml:
      return maml_episode_update(learner, theta, tasks, cfg);
    case TrainerKind::maml_ad:
      return mamlad_episode_update(learner, theta, tasks, cfg);
    case TrainerKind::adml:
      return adml_episode_update(learner, theta, tasks, cfg);
  }
  throw ContractError("unknown trainer kind");
}

template <std::floating_point T>
struct TrainHooks {
  std::function<void(std::size_t episode, double query_loss)> on_episode;
  std::function<void(std::size_t episode, const ParamSet<T>&)> on_checkpoint;
};

/// cfg.episodes rounds of {sample cfg.meta_batch tasks, episode update}.
/// on_checkpoint fires every cfg.checkpoint_every episodes when that is set.
template <std::floating_point T, TaskLearner<T> L>
ParamSet<T> meta_train(TrainerKind kind, const L& learner, ParamSet<T> theta,
                       const TaskSource<T>& source, const MetaConfig& cfg, Rng& rng,
                       const TrainHooks<T>& hooks = {}) {
  cfg.validate();
  for (std::size_t e = 1; e <= cfg.episodes; ++e) {
    std::vector<Episode<T>> tasks;
    tasks.reserve(cfg.meta_batch);
    for (std::size_t t = 0; t < cfg.meta_batch; ++t) {
      tasks.push_back(sample_episode(source, cfg.ways, cfg.shots, cfg.query_per_class, rng));
    }
    auto outcome = episode_update(kind, learner, theta, std::span<const Episode<T>>(tasks), cfg);
    theta = std::move(outcome.params);
    if (hooks.on_episode) hooks.on_episode(e, outcome.query_loss);
    if (hooks.on_checkpoint && cfg.checkpoint_every && e % cfg.checkpoint_every == 0) {
      hooks.on_checkpoint(e, theta);
    }
  }
  return theta;
}

inline const char* trainer_name(TrainerKind k) {
  switch (k) {
    case TrainerKind::maml:
      return "maml";
    case TrainerKind::maml_ad:
      return "maml-ad";
    case TrainerKind::adml:
      return "adml";
  }
  return "?";
}

}  // namespace adml
