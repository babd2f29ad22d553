#pragma once

// Finite-difference and closed-form checks for every differentiable op and
// for the meta-gradient. Used by the `gradcheck` command and the test suites.

#include <cstdio>
#include <ostream>

#include "adml/metalearn.hpp"

namespace adml::gradcheck {

using D = double;
using Fn = std::function<Var<D>(const std::vector<Var<D>>&)>;

inline constexpr double kStep = 1e-5;
inline constexpr double kTolerance = 1e-4;

/// Relative error metric: |analytic - reference| / (1 + |analytic|).
inline double rel_error(double analytic, double reference) {
  return std::abs(analytic - reference) / (1.0 + std::abs(analytic));
}

inline Tensor<D> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<D> t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

inline std::vector<Var<D>> constants(const std::vector<Tensor<D>>& xs) {
  std::vector<Var<D>> out;
  for (const auto& x : xs) out.push_back(Var<D>::constant(x));
  return out;
}

/// Turns a tensor-valued op into a scalar by a fixed random projection.
inline Fn project(Fn op, const std::vector<Tensor<D>>& sample_inputs, std::uint64_t seed = 99) {
  Rng rng(seed);
  const auto weights = std::make_shared<const Tensor<D>>(
      random_tensor(op(constants(sample_inputs)).shape(), rng));
  return [op = std::move(op), weights](const std::vector<Var<D>>& xs) {
    return sum(mul(op(xs), Var<D>::constant(*weights)));
  };
}

/// Largest relative error between reverse-mode gradients of scalar f and
/// central differences, over every element of every input.
inline double first_order_error(const Fn& f, const std::vector<Tensor<D>>& inputs, double h = kStep) {
  std::vector<Var<D>> leaves;
  for (const auto& x : inputs) leaves.push_back(Var<D>::leaf(x));
  const auto g = grad(f(leaves), std::span<const Var<D>>(leaves));
  double worst = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].numel(); ++j) {
      auto plus = inputs, minus = inputs;
      plus[i][j] += h;
      minus[i][j] -= h;
      const double fd = (f(constants(plus)).item() - f(constants(minus)).item()) / (2 * h);
      worst = std::max(worst, rel_error(g[i].value()[j], fd));
    }
  }
  return worst;
}

/// Checks double-backward rules: s(x) = sum_i <grad_i f(x), v_i> is built
/// with create_graph, and its gradient is compared to central differences of s.
inline double second_order_error(const Fn& f, const std::vector<Tensor<D>>& inputs, double h = kStep,
                                 std::uint64_t seed = 7) {
  Rng rng(seed);
  std::vector<Tensor<D>> dirs;
  for (const auto& x : inputs) dirs.push_back(random_tensor(x.shape(), rng));
  const Fn s = [&](const std::vector<Var<D>>& xs) {
    const bool build = std::any_of(xs.begin(), xs.end(), [](const auto& v) { return v.requires_grad(); });
    std::vector<Var<D>> at = xs;
    if (!build) {
      at.clear();
      for (const auto& v : xs) at.push_back(Var<D>::leaf(v.value()));
    }
    const auto g = grad(f(at), std::span<const Var<D>>(at), build);
    Var<D> acc = Var<D>::constant(Tensor<D>::scalar(0));
    for (std::size_t i = 0; i < g.size(); ++i) acc = add(acc, sum(mul(g[i], Var<D>::constant(dirs[i]))));
    return acc;
  };
  return first_order_error(s, inputs, h);
}

struct Check {
  std::string name;
  std::function<double()> run;  // returns the measured error
  double tolerance = kTolerance;
};

struct Result {
  std::string name;
  double error = 0;
  double tolerance = 0;
  bool passed = false;
};

/// First- and second-order finite-difference checks of one op.
inline void add_op_checks(std::vector<Check>& out, const std::string& name, Fn op,
                          std::vector<Tensor<D>> inputs, bool scalar_output = false) {
  auto f = std::make_shared<Fn>(scalar_output ? op : project(op, inputs));
  auto xs = std::make_shared<std::vector<Tensor<D>>>(std::move(inputs));
  out.push_back({name, [f, xs] { return first_order_error(*f, *xs); }});
  out.push_back({name + " (2nd order)", [f, xs] { return second_order_error(*f, *xs); }});
}

/// Scalar quadratic used by the closed-form meta-gradient checks:
/// loss = mean_j a/2 (theta - x_j)^2 over the batch rows, attack shifts x by +epsilon.
struct QuadraticLearner {
  double a = 2.0;

  Var<D> loss(const VarParams<D>& p, const Batch<D>& b) const {
    const auto& theta = p.at("theta");
    const std::size_t n = b.size();
    auto diff = sub(expand_axis(reshape(theta, Shape{1}), Shape{n, 1}, 1), Var<D>::constant(b.x));
    return scale(mean(mul(diff, diff)), a / 2);
  }

  Batch<D> perturb(const ParamSet<D>&, const Batch<D>& b, const AttackConfig& cfg) const {
    Batch<D> out = b;
    for (auto& v : out.x.data()) v += cfg.epsilon;
    return out;
  }
};

inline ParamSet<D> scalar_theta(double v) { return ParamSet<D>({{"theta", Tensor<D>::scalar(v)}}); }

inline Batch<D> scalar_batch(std::vector<double> xs) {
  const std::size_t n = xs.size();
  return Batch<D>{Tensor<D>({n, 1}, std::move(xs)), std::vector<int>(n, 0)};
}

/// The full suite.
inline std::vector<Check> default_checks() {
  std::vector<Check> out;
  Rng rng(20240601);
  auto r = [&](Shape s) { return random_tensor(std::move(s), rng); };
  auto pos = [&](Shape s) { return random_tensor(std::move(s), rng, 0.5, 2.0); };
  using V = std::vector<Var<D>>;

  add_op_checks(out, "add", [](const V& v) { return add(v[0], v[1]); }, {r({3, 4}), r({3, 4})});
  add_op_checks(out, "sub", [](const V& v) { return sub(v[0], v[1]); }, {r({3, 4}), r({3, 4})});
  add_op_checks(out, "mul", [](const V& v) { return mul(v[0], v[1]); }, {r({3, 4}), r({3, 4})});
  add_op_checks(out, "scale", [](const V& v) { return scale(v[0], 1.7); }, {r({5})});
  add_op_checks(out, "neg", [](const V& v) { return neg(v[0]); }, {r({5})});
  add_op_checks(out, "add_scalar", [](const V& v) { return add_scalar(v[0], 0.3); }, {r({5})});
  add_op_checks(out, "exp", [](const V& v) { return exp(v[0]); }, {r({6})});
  add_op_checks(out, "log", [](const V& v) { return log(v[0]); }, {pos({6})});
  add_op_checks(out, "pow", [](const V& v) { return pow(v[0], -0.5); }, {pos({6})});
  add_op_checks(out, "relu", [](const V& v) { return relu(v[0]); }, {r({4, 5})});
  add_op_checks(out, "matmul", [](const V& v) { return matmul(v[0], v[1]); }, {r({4, 5}), r({5, 6})});
  add_op_checks(out, "linear", [](const V& v) { return linear(v[0], v[1], v[2]); },
                {r({3, 4}), r({4, 2}), r({2})});
  add_op_checks(out, "transpose", [](const V& v) { return transpose(v[0]); }, {r({3, 5})});
  add_op_checks(out, "expand_axis", [](const V& v) { return expand_axis(v[0], Shape{2, 3, 4}, 1); }, {r({3})});
  add_op_checks(out, "reduce_to_axis", [](const V& v) { return reduce_to_axis(v[0], 1); }, {r({2, 3, 4})});
  add_op_checks(out, "sum", [](const V& v) { return sum(v[0]); }, {r({3, 3})}, true);
  add_op_checks(out, "mean", [](const V& v) { return mean(mul(v[0], v[0])); }, {r({3, 3})}, true);
  add_op_checks(out, "broadcast_scalar", [](const V& v) { return broadcast_scalar(v[0], Shape{2, 3}); },
                {r({})});
  {
    const auto idx = std::make_shared<const kernel::Index>(kernel::Index{4, 0, 4, 2});
    add_op_checks(out, "gather", [idx](const V& v) { return gather(v[0], idx, Shape{2, 2}); }, {r({6})});
    add_op_checks(out, "scatter_add", [idx](const V& v) { return scatter_add(v[0], idx, Shape{6}); },
                  {r({2, 2})});
  }
  add_op_checks(out, "flatten", [](const V& v) { return flatten(v[0]); }, {r({2, 3, 2, 2})});
  add_op_checks(out, "conv2d", [](const V& v) { return conv2d(v[0], v[1], v[2]); },
                {r({2, 3, 5, 5}), r({4, 3, 3, 3}), r({4})});
  add_op_checks(out, "batch_norm", [](const V& v) { return batch_norm(v[0], v[1], v[2]); },
                {r({3, 2, 3, 3}), r({2}), r({2})});
  add_op_checks(out, "max_pool2x2", [](const V& v) { return max_pool2x2(v[0]); }, {r({2, 2, 5, 4})});
  add_op_checks(out, "logsumexp_rows", [](const V& v) { return logsumexp_rows(v[0]); }, {r({4, 5})});
  {
    const std::vector<int> labels{0, 3, 1, 4};
    add_op_checks(
        out, "cross_entropy",
        [labels](const V& v) { return cross_entropy(v[0], std::span<const int>(labels)); },
        {r({4, 5})}, true);
  }
  {
    const auto spec = ModelSpec::mlp(3, 4, {5});
    const auto params = init_params<D>(spec, 3);
    const std::vector<int> labels{0, 2, 1};
    std::vector<Tensor<D>> inputs{r({3, 4})};
    std::vector<std::string> names;
    for (const auto& e : params) {
      names.push_back(e.name);
      inputs.push_back(random_tensor(e.value.shape(), rng, -0.5, 0.5));
    }
    add_op_checks(
        out, "mlp forward",
        [spec, names, labels](const V& v) {
          VarParams<D> p;
          for (std::size_t i = 0; i < names.size(); ++i) p.push(names[i], v[i + 1]);
          return cross_entropy(forward(spec, p, v[0]), std::span<const int>(labels));
        },
        inputs, true);
  }
  {
    const auto spec = ModelSpec::conv4(2, 1, 16, 16, 2);
    const auto params = init_params<D>(spec, 5);
    const std::vector<int> labels{1, 0, 1};
    auto x = r({3, 1, 16, 16});
    const Fn f = [spec, params, labels](const V& v) {
      return cross_entropy(forward(spec, VarParams<D>::leaves(params, false), v[0]),
                           std::span<const int>(labels));
    };
    out.push_back({"conv4 input gradient", [f, x] { return first_order_error(f, {x}); }});
  }
  out.push_back({"d2(x^3)/dx2 at x=2", [] {
                   auto x = Var<D>::leaf(Tensor<D>::scalar(2.0));
                   auto g = grad(mul(mul(x, x), x), {x}, true)[0];
                   return std::abs(grad(g, {x})[0].item() - 12.0);
                 },
                 1e-10});
  out.push_back({"quadratic inner step", [] {
                   QuadraticLearner q;
                   auto p = inner_adapt(q, scalar_theta(1.0), scalar_batch({0.0}), 0.1, 1);
                   return std::abs(p.at("theta").item() - 0.8);
                 },
                 1e-10});
  out.push_back({"quadratic meta-gradient (full)", [] {
                   QuadraticLearner q;
                   auto b = scalar_batch({0.0});
                   auto g = meta_gradient(q, scalar_theta(1.0), b, b, 0.1, 1, MetaOrder::full);
                   return std::abs(g.grad.at("theta").item() - 1.28);
                 },
                 1e-10});
  out.push_back({"quadratic meta-gradient (first order)", [] {
                   QuadraticLearner q;
                   auto b = scalar_batch({0.0});
                   auto g = meta_gradient(q, scalar_theta(1.0), b, b, 0.1, 1, MetaOrder::first);
                   return std::abs(g.grad.at("theta").item() - 1.6);
                 },
                 1e-10});
  {
    const auto spec = ModelSpec::mlp(2, 2, {});
    ClassifierLearner<D> learner{spec};
    auto theta = init_params<D>(spec, 11);
    Rng data_rng(5);
    Batch<D> support{random_tensor({4, 2}, data_rng), {0, 1, 1, 0}};
    Batch<D> query{random_tensor({6, 2}, data_rng), {1, 0, 1, 0, 0, 1}};
    out.push_back({"meta-gradient vs finite differences", [=] {
                     std::vector<Tensor<D>> inputs;
                     std::vector<std::string> names;
                     for (const auto& e : theta) {
                       names.push_back(e.name);
                       inputs.push_back(e.value);
                     }
                     const Fn f = [&](const V& v) {
                       VarParams<D> p;
                       for (std::size_t i = 0; i < names.size(); ++i) p.push(names[i], v[i]);
                       if (v[0].requires_grad()) {
                         return learner.loss(inner_adapt(learner, p, support, 0.5, 2, true), query);
                       }
                       const auto adapted = inner_adapt(learner, p.values(), support, 0.5, 2);
                       return learner.loss(VarParams<D>::leaves(adapted, false), query);
                     };
                     return first_order_error(f, inputs);
                   }});
  }
  return out;
}

inline Result run_one(const Check& c) {
  const double e = c.run();
  return {c.name, e, c.tolerance, std::isfinite(e) && e <= c.tolerance};
}

/// Runs every check, printing one line each. Returns all results.
inline std::vector<Result> run_checks(const std::vector<Check>& checks, std::ostream& log) {
  std::vector<Result> out;
  for (const auto& c : checks) {
    out.push_back(run_one(c));
    const auto& r = out.back();
    char line[256];
    std::snprintf(line, sizeof line, "%-4s %-40s max_rel_err=%.3e tol=%.0e\n", r.passed ? "ok" : "FAIL",
                  r.name.c_str(), r.error, r.tolerance);
    log << line;
  }
  return out;
}

}  // namespace adml::gradcheck
