#pragma once

#include <cmath>
#include <filesystem>
#include <random>

#include "adml/batch.hpp"
#include "adml/serialize.hpp"

namespace adml {

using Rng = std::mt19937_64;

template <std::floating_point T>
struct ClassSamples {
  std::string name;
  std::vector<Tensor<T>> samples;

  bool operator==(const ClassSamples&) const = default;
};

/// A labeled pool of classes, e.g. one split of an image dataset.
template <std::floating_point T>
struct TaskSource {
  std::vector<ClassSamples<T>> classes;
  Shape geometry;
  double lo = 0.0;
  double hi = 255.0;

  std::size_t num_classes() const noexcept { return classes.size(); }

  std::size_t min_class_size() const {
    std::size_t m = classes.empty() ? 0 : classes.front().samples.size();
    for (const auto& c : classes) m = std::min(m, c.samples.size());
    return m;
  }

  bool operator==(const TaskSource&) const = default;
};

/// One few-shot task. Support and query rows are class-major: all samples of
/// label 0 first, then label 1, and so on.
template <std::floating_point T>
struct Episode {
  Batch<T> support;
  Batch<T> query;
  std::size_t ways = 0;
  std::size_t shots = 0;
  std::size_t query_per_class = 0;
  std::vector<std::size_t> classes;  // source class index per label

  bool operator==(const Episode&) const = default;
};

struct SplitSpec {
  std::size_t train = 64;
  std::size_t val = 16;
  std::size_t test = 20;
  std::uint64_t seed = 0;
};

template <std::floating_point T>
struct SourceSplits {
  TaskSource<T> train, val, test;
};

/// First `k` entries of a uniformly random permutation of 0..n-1.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  if (k > n) throw ContractError("cannot draw " + std::to_string(k) + " of " + std::to_string(n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

/// Disjoint class partition, deterministic in spec.seed.
template <std::floating_point T>
SourceSplits<T> split_classes(const TaskSource<T>& source, const SplitSpec& spec) {
  if (spec.train + spec.val + spec.test != source.num_classes()) {
    throw ContractError("split " + std::to_string(spec.train) + "/" + std::to_string(spec.val) +
                        "/" + std::to_string(spec.test) + " does not cover " +
                        std::to_string(source.num_classes()) + " classes");
  }
  Rng rng(spec.seed);
  const auto order = sample_without_replacement(source.num_classes(), source.num_classes(), rng);
  SourceSplits<T> out;
  for (auto* part : {&out.train, &out.val, &out.test}) {
    part->geometry = source.geometry;
    part->lo = source.lo;
    part->hi = source.hi;
  }
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& part = i < spec.train ? out.train : (i < spec.train + spec.val ? out.val : out.test);
    part.classes.push_back(source.classes[order[i]]);
  }
  return out;
}

/// Uniform classes without replacement, then uniform samples without
/// replacement per class; the first `shots` go to support, the rest to query.
template <std::floating_point T>
Episode<T> sample_episode(const TaskSource<T>& source, std::size_t ways, std::size_t shots,
                          std::size_t query_per_class, Rng& rng) {
  if (ways < 1 || shots < 1) throw ContractError("episode needs ways >= 1 and shots >= 1");
  if (source.num_classes() < ways) {
    throw ContractError("source has " + std::to_string(source.num_classes()) +
                        " classes, episode needs " + std::to_string(ways));
  }
  Episode<T> ep;
  ep.ways = ways;
  ep.shots = shots;
  ep.query_per_class = query_per_class;
  ep.classes = sample_without_replacement(source.num_classes(), ways, rng);
  std::vector<Tensor<T>> sx, qx;
  for (std::size_t label = 0; label < ways; ++label) {
    const auto& cls = source.classes[ep.classes[label]];
    if (cls.samples.size() < shots + query_per_class) {
      throw ContractError("class '" + cls.name + "' has " + std::to_string(cls.samples.size()) +
                          " samples, episode needs " + std::to_string(shots + query_per_class));
    }
    const auto picks = sample_without_replacement(cls.samples.size(), shots + query_per_class, rng);
    for (std::size_t j = 0; j < picks.size(); ++j) {
      if (j < shots) {
        sx.push_back(cls.samples[picks[j]]);
        ep.support.y.push_back(static_cast<int>(label));
      } else {
        qx.push_back(cls.samples[picks[j]]);
        ep.query.y.push_back(static_cast<int>(label));
      }
    }
  }
  ep.support.x = stack(std::span<const Tensor<T>>(sx));
  if (!qx.empty()) ep.query.x = stack(std::span<const Tensor<T>>(qx));
  return ep;
}

inline constexpr double kBlobSeparation = 1.0;
inline constexpr double kBlobSpread = 0.1;
inline constexpr std::size_t kBlobDim = 16;

/// Isotropic Gaussian clusters around random unit-norm centers scaled by
/// `separation`. value range is the observed min/max.
template <std::floating_point T>
TaskSource<T> synth_blob_source(std::size_t dim, std::size_t classes, std::size_t samples_per_class,
                                double spread, std::uint64_t seed,
                                double separation = kBlobSeparation) {
  if (dim < 2) throw ContractError("synthetic source needs dim >= 2");
  if (classes < 5) throw ContractError("synthetic source needs at least 5 classes");
  if (samples_per_class < 1) throw ContractError("synthetic source needs samples");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  TaskSource<T> src;
  src.geometry = {dim};
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> center(dim);
    double norm = 0;
    do {
      norm = 0;
      for (auto& v : center) {
        v = normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
    } while (norm == 0);
    for (auto& v : center) v *= separation / norm;
    ClassSamples<T> cls{"blob" + std::to_string(c), {}};
    for (std::size_t s = 0; s < samples_per_class; ++s) {
      Tensor<T> x({dim});
      for (std::size_t d = 0; d < dim; ++d) {
        x[d] = static_cast<T>(center[d] + spread * normal(rng));
        lo = std::min(lo, static_cast<double>(x[d]));
        hi = std::max(hi, static_cast<double>(x[d]));
      }
      cls.samples.push_back(std::move(x));
    }
    src.classes.push_back(std::move(cls));
  }
  src.lo = lo;
  src.hi = hi > lo ? hi : lo + 1.0;
  return src;
}

/// Reads `class_name<TAB>relative_path` lines; each path is a raw-tensor sample
/// file. Classes appear in first-seen order.
template <std::floating_point T>
TaskSource<T> load_image_source(const std::filesystem::path& root, const std::filesystem::path& manifest,
                                double lo = 0.0, double hi = 255.0) {
  std::ifstream is(manifest);
  if (!is) throw IngestionError("cannot open manifest " + manifest.string());
  TaskSource<T> src;
  src.lo = lo;
  src.hi = hi;
  std::string line;
  std::size_t lineno = 0, samples = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
      throw IngestionError(manifest.string() + ":" + std::to_string(lineno) +
                           ": expected class_name<TAB>relative_path");
    }
    const std::string cls = line.substr(0, tab);
    const auto rec = read_sample_file(root / line.substr(tab + 1));
    Tensor<T> x = std::visit([](const auto& t) { return cast<T>(t); }, rec.tensor);
    if (samples == 0) {
      src.geometry = x.shape();
    } else if (x.shape() != src.geometry) {
      throw GeometryError(line.substr(tab + 1) + " has shape " + shape_str(x.shape()) +
                          ", expected " + shape_str(src.geometry));
    }
    auto it = std::find_if(src.classes.begin(), src.classes.end(),
                           [&](const auto& c) { return c.name == cls; });
    if (it == src.classes.end()) {
      src.classes.push_back({cls, {}});
      it = std::prev(src.classes.end());
    }
    it->samples.push_back(std::move(x));
    ++samples;
  }
  if (samples == 0) throw IngestionError("manifest " + manifest.string() + " lists no samples");
  return src;
}

}  // namespace adml
