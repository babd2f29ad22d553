#pragma once

#include <random>

#include "adml/params.hpp"

namespace adml {

enum class ModelKind { conv4, mlp };

/// Architecture description. conv4 is four (conv3x3 -> batch norm -> relu ->
/// 2x2 max pool) blocks plus a linear head; mlp is linear+relu layers plus a head.
struct ModelSpec {
  ModelKind kind = ModelKind::conv4;
  std::size_t ways = 5;
  // conv4 input geometry
  std::size_t channels = 3;
  std::size_t height = 84;
  std::size_t width = 84;
  std::size_t filters = 32;
  // mlp input width and hidden layer widths
  std::size_t features = 16;
  std::vector<std::size_t> hidden;

  static constexpr std::size_t kConvBlocks = 4;

  static ModelSpec conv4(std::size_t ways, std::size_t channels, std::size_t height,
                         std::size_t width, std::size_t filters = 32) {
    ModelSpec s;
    s.kind = ModelKind::conv4;
    s.ways = ways;
    s.channels = channels;
    s.height = height;
    s.width = width;
    s.filters = filters;
    return s;
  }

  static ModelSpec mlp(std::size_t ways, std::size_t features, std::vector<std::size_t> hidden) {
    ModelSpec s;
    s.kind = ModelKind::mlp;
    s.ways = ways;
    s.features = features;
    s.hidden = std::move(hidden);
    return s;
  }

  /// Shape of one input sample.
  Shape sample_shape() const {
    return kind == ModelKind::conv4 ? Shape{channels, height, width} : Shape{features};
  }

  /// Spatial extent after the conv blocks; zero when the input is too small.
  std::pair<std::size_t, std::size_t> pooled_extent() const {
    std::size_t h = height, w = width;
    for (std::size_t i = 0; i < kConvBlocks; ++i) {
      if (h < 2 || w < 2) return {0, 0};
      h /= 2;
      w /= 2;
    }
    return {h, w};
  }

  /// Width of the linear head's input.
  std::size_t head_inputs() const {
    if (kind == ModelKind::mlp) return hidden.empty() ? features : hidden.back();
    const auto [h, w] = pooled_extent();
    return filters * h * w;
  }

  void validate() const {
    if (ways < 2) throw ContractError("model needs at least 2 ways");
    if (kind == ModelKind::conv4) {
      if (channels == 0 || filters == 0) throw ContractError("conv4 needs channels and filters");
      if (head_inputs() == 0) {
        throw GeometryError("input " + std::to_string(height) + "x" + std::to_string(width) +
                            " pools to nothing after four blocks");
      }
    } else {
      if (features == 0) throw ContractError("mlp needs a positive feature width");
      for (auto h : hidden)
        if (h == 0) throw ContractError("mlp hidden width must be positive");
    }
  }

  bool operator==(const ModelSpec&) const = default;
};

struct ParamSlot {
  std::string name;
  Shape shape;
  enum class Init { weight, zero, one } init;
};

/// Names, shapes and initializers of every parameter, in canonical order.
inline std::vector<ParamSlot> param_schema(const ModelSpec& spec) {
  spec.validate();
  std::vector<ParamSlot> out;
  using I = ParamSlot::Init;
  if (spec.kind == ModelKind::conv4) {
    std::size_t in = spec.channels;
    for (std::size_t i = 0; i < ModelSpec::kConvBlocks; ++i) {
      const std::string p = "block" + std::to_string(i) + ".";
      out.push_back({p + "conv.w", {spec.filters, in, 3, 3}, I::weight});
      out.push_back({p + "conv.b", {spec.filters}, I::zero});
      out.push_back({p + "bn.gamma", {spec.filters}, I::one});
      out.push_back({p + "bn.beta", {spec.filters}, I::zero});
      in = spec.filters;
    }
  } else {
    std::size_t in = spec.features;
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
      const std::string p = "fc" + std::to_string(i) + ".";
      out.push_back({p + "w", {in, spec.hidden[i]}, I::weight});
      out.push_back({p + "b", {spec.hidden[i]}, I::zero});
      in = spec.hidden[i];
    }
  }
  out.push_back({"head.w", {spec.head_inputs(), spec.ways}, I::weight});
  out.push_back({"head.b", {spec.ways}, I::zero});
  return out;
}

inline constexpr double kInitStddev = 0.02;

/// Weights from a normal(0, 0.02) truncated at two standard deviations
/// (resampled); biases and betas zero, gammas one.
template <std::floating_point T>
ParamSet<T> init_params(const ModelSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, kInitStddev);
  std::vector<NamedTensor<T>> out;
  for (const auto& slot : param_schema(spec)) {
    Tensor<T> t(slot.shape);
    if (slot.init == ParamSlot::Init::one) {
      for (auto& v : t.data()) v = T{1};
    } else if (slot.init == ParamSlot::Init::weight) {
      for (auto& v : t.data()) {
        double s;
        do {
          s = normal(rng);
        } while (std::abs(s) > 2 * kInitStddev);
        v = static_cast<T>(s);
      }
    }
    out.push_back({slot.name, std::move(t)});
  }
  return ParamSet<T>(std::move(out));
}

template <std::floating_point T>
void check_schema(const ModelSpec& spec, const VarParams<T>& params) {
  for (const auto& slot : param_schema(spec)) {
    if (!params.contains(slot.name)) {
      throw ParameterError("missing parameter '" + slot.name + "'");
    }
    if (params.at(slot.name).shape() != slot.shape) {
      throw ParameterError("parameter '" + slot.name + "' has shape " +
                           shape_str(params.at(slot.name).shape()) + ", expected " +
                           shape_str(slot.shape));
    }
  }
}

/// Logits [B, ways] for a batch x [B, sample_shape...], differentiable w.r.t.
/// both the parameters and x.
template <std::floating_point T>
Var<T> forward(const ModelSpec& spec, const VarParams<T>& params, const Var<T>& x) {
  check_schema(spec, params);
  const Shape& xs = x.shape();
  const Shape sample = spec.sample_shape();
  if (xs.size() != sample.size() + 1 || !std::equal(sample.begin(), sample.end(), xs.begin() + 1)) {
    throw DimensionError("model expects batches of " + shape_str(sample) + ", got " + shape_str(xs));
  }
  Var<T> h = x;
  if (spec.kind == ModelKind::conv4) {
    for (std::size_t i = 0; i < ModelSpec::kConvBlocks; ++i) {
      const std::string p = "block" + std::to_string(i) + ".";
      h = conv2d(h, params.at(p + "conv.w"), params.at(p + "conv.b"));
      h = batch_norm(h, params.at(p + "bn.gamma"), params.at(p + "bn.beta"));
      h = max_pool2x2(relu(h));
    }
    h = flatten(h);
  } else {
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
      const std::string p = "fc" + std::to_string(i) + ".";
      h = relu(linear(h, params.at(p + "w"), params.at(p + "b")));
    }
  }
  return linear(h, params.at("head.w"), params.at("head.b"));
}

template <std::floating_point T>
Tensor<T> forward(const ModelSpec& spec, const ParamSet<T>& params, const Tensor<T>& x) {
  return forward(spec, VarParams<T>::leaves(params, false), Var<T>::constant(x)).value();
}

}  // namespace adml
