#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

#include "adml/gradcheck.hpp"

using namespace adml;
using D = double;
namespace fs = std::filesystem;

namespace {

/// Classes whose samples encode (class, index) so episodes can be traced back.
TaskSource<D> tagged_source(std::size_t classes, std::size_t per_class) {
  TaskSource<D> src;
  src.geometry = {2};
  for (std::size_t c = 0; c < classes; ++c) {
    ClassSamples<D> cls{"c" + std::to_string(c), {}};
    for (std::size_t i = 0; i < per_class; ++i) {
      cls.samples.push_back(Tensor<D>({2}, std::vector<D>{D(c), D(i)}));
    }
    src.classes.push_back(std::move(cls));
  }
  return src;
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("adml_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Sampler, EpisodeSizes) {
  const auto src = tagged_source(10, 30);
  Rng rng(1);
  const auto five = sample_episode(src, 5, 5, 15, rng);
  EXPECT_EQ(five.support.size(), 25u);
  EXPECT_EQ(five.query.size(), 75u);
  const auto one = sample_episode(src, 5, 1, 15, rng);
  EXPECT_EQ(one.support.size(), 5u);
  EXPECT_EQ(one.support.x.shape(), (Shape{5, 2}));
}

TEST(Sampler, ExhaustiveEpisodeUsesEverySampleOnce) {
  const auto src = tagged_source(5, 4);
  Rng rng(2);
  const auto ep = sample_episode(src, 5, 1, 3, rng);
  std::set<std::pair<int, int>> seen;
  for (const auto* b : {&ep.support, &ep.query})
    for (std::size_t r = 0; r < b->size(); ++r) seen.insert({int(b->x[2 * r]), int(b->x[2 * r + 1])});
  EXPECT_EQ(seen.size(), 20u);
}

TEST(Sampler, InvariantsHoldOverManyEpisodes) {
  const auto src = tagged_source(12, 25);
  Rng rng(3);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t ways = 2 + trial % 4, shots = 1 + trial % 5, q = 1 + trial % 7;
    const auto ep = sample_episode(src, ways, shots, q, rng);
    ASSERT_EQ(ep.support.size(), ways * shots);
    ASSERT_EQ(ep.query.size(), ways * q);
    std::vector<std::size_t> s_count(ways), q_count(ways);
    std::vector<std::set<int>> s_idx(ways);
    std::vector<int> label_class(ways, -1);
    auto check_label = [&](int label, int cls) {
      ASSERT_GE(label, 0);
      ASSERT_LT(label, int(ways));
      if (label_class[label] < 0) label_class[label] = cls;
      ASSERT_EQ(label_class[label], cls);
      ASSERT_EQ(std::size_t(cls), ep.classes[label]);
    };
    for (std::size_t r = 0; r < ep.support.size(); ++r) {
      const int y = ep.support.y[r];
      check_label(y, int(ep.support.x[2 * r]));
      ++s_count[y];
      s_idx[y].insert(int(ep.support.x[2 * r + 1]));
    }
    for (std::size_t r = 0; r < ep.query.size(); ++r) {
      const int y = ep.query.y[r];
      check_label(y, int(ep.query.x[2 * r]));
      ++q_count[y];
      ASSERT_EQ(s_idx[y].count(int(ep.query.x[2 * r + 1])), 0u);
    }
    for (std::size_t c = 0; c < ways; ++c) {
      ASSERT_EQ(s_count[c], shots);
      ASSERT_EQ(q_count[c], q);
      ASSERT_EQ(s_idx[c].size(), shots);
    }
    ASSERT_EQ(std::set<std::size_t>(ep.classes.begin(), ep.classes.end()).size(), ways);
  }
}

TEST(Sampler, InsufficientDataIsAContractError) {
  const auto src = tagged_source(5, 4);
  Rng rng(4);
  EXPECT_THROW(sample_episode(src, 6, 1, 1, rng), ContractError);
  EXPECT_THROW(sample_episode(src, 5, 2, 3, rng), ContractError);
}

TEST(Sampler, SameSeedSameEpisode) {
  const auto src = tagged_source(10, 30);
  Rng a(5), b(5);
  EXPECT_EQ(sample_episode(src, 5, 2, 4, a), sample_episode(src, 5, 2, 4, b));
}

TEST(Split, StandardSizesAreDisjoint) {
  const auto src = tagged_source(100, 1);
  const auto s = split_classes(src, {64, 16, 20, 7});
  EXPECT_EQ(s.train.num_classes(), 64u);
  EXPECT_EQ(s.val.num_classes(), 16u);
  EXPECT_EQ(s.test.num_classes(), 20u);
  std::set<std::string> names;
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (const auto& c : part->classes) names.insert(c.name);
  EXPECT_EQ(names.size(), 100u);
}

TEST(Split, DegenerateAllTrain) {
  const auto s = split_classes(tagged_source(100, 1), {100, 0, 0, 1});
  EXPECT_EQ(s.train.num_classes(), 100u);
  EXPECT_EQ(s.val.num_classes(), 0u);
}

TEST(Split, DeterministicUnderSeed) {
  const auto src = tagged_source(30, 1);
  EXPECT_EQ(split_classes(src, {10, 10, 10, 3}).train, split_classes(src, {10, 10, 10, 3}).train);
}

TEST(Split, BadCountsAreAContractError) {
  EXPECT_THROW(split_classes(tagged_source(10, 1), {5, 5, 1, 0}), ContractError);
}

TEST(Synth, ZeroSpreadRepeatsCenter) {
  const auto src = synth_blob_source<D>(8, 5, 4, 0.0, 1);
  for (const auto& c : src.classes) {
    for (const auto& s : c.samples) EXPECT_TRUE(bitwise_equal(s, c.samples.front()));
    double n = 0;
    for (D v : c.samples.front().data()) n += v * v;
    EXPECT_NEAR(std::sqrt(n), kBlobSeparation, 1e-12);
  }
}

TEST(Synth, SameSeedBitIdentical) {
  EXPECT_EQ(synth_blob_source<D>(16, 6, 10, 0.1, 3), synth_blob_source<D>(16, 6, 10, 0.1, 3));
}

TEST(Synth, ValueRangeIsObservedExtent) {
  const auto src = synth_blob_source<D>(4, 5, 10, 0.1, 4);
  double lo = 1e9, hi = -1e9;
  for (const auto& c : src.classes)
    for (const auto& s : c.samples)
      for (D v : s.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  EXPECT_EQ(src.lo, lo);
  EXPECT_EQ(src.hi, hi);
}

TEST(Synth, NearestCentroidSeparatesHeldOutSamples) {
  const auto src = synth_blob_source<D>(kBlobDim, 20, 60, kBlobSpread, 5);
  std::size_t correct = 0, total = 0;
  std::vector<std::vector<D>> centroid(20, std::vector<D>(kBlobDim, 0));
  for (std::size_t c = 0; c < 20; ++c) {
    for (std::size_t i = 0; i < 30; ++i)
      for (std::size_t d = 0; d < kBlobDim; ++d) centroid[c][d] += src.classes[c].samples[i][d] / 30;
  }
  for (std::size_t c = 0; c < 20; ++c)
    for (std::size_t i = 30; i < 60; ++i) {
      const auto& x = src.classes[c].samples[i];
      std::size_t best = 0;
      double best_d = 1e300;
      for (std::size_t k = 0; k < 20; ++k) {
        double dist = 0;
        for (std::size_t d = 0; d < kBlobDim; ++d) dist += std::pow(x[d] - centroid[k][d], 2);
        if (dist < best_d) best_d = dist, best = k;
      }
      correct += best == c;
      ++total;
    }
  EXPECT_GE(double(correct) / double(total), 0.99);
}

TEST(Synth, RejectsTooFewClassesOrDims) {
  EXPECT_THROW(synth_blob_source<D>(1, 5, 2, 0.1, 1), ContractError);
  EXPECT_THROW(synth_blob_source<D>(4, 4, 2, 0.1, 1), ContractError);
}

TEST(Ingest, TinyImagesRoundTripBitExactly) {
  const auto dir = scratch_dir("tiny");
  Rng rng(6);
  std::ofstream manifest(dir / "manifest.tsv");
  std::vector<Tensor<float>> written;
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 3; ++i) {
      Tensor<float> t({1, 2, 2});
      std::uniform_real_distribution<float> u(0, 255);
      for (auto& v : t.data()) v = u(rng);
      const std::string rel = "c" + std::to_string(c) + "_" + std::to_string(i) + ".bin";
      write_sample_file(dir / rel, t);
      manifest << "class" << c << '\t' << rel << '\n';
      written.push_back(t);
    }
  manifest.close();
  const auto src = load_image_source<float>(dir, dir / "manifest.tsv");
  ASSERT_EQ(src.num_classes(), 2u);
  EXPECT_EQ(src.geometry, (Shape{1, 2, 2}));
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 3; ++i) EXPECT_TRUE(bitwise_equal(src.classes[c].samples[i], written[c * 3 + i]));
  fs::remove_all(dir);
}

TEST(Ingest, HundredClassesOfSixHundred) {
  const auto dir = scratch_dir("mini");
  std::ofstream manifest(dir / "manifest.tsv");
  const Tensor<float> t({1, 2, 2}, 1.0f);
  for (int c = 0; c < 100; ++c) {
    fs::create_directories(dir / ("n" + std::to_string(c)));
    for (int i = 0; i < 600; ++i) {
      const std::string rel = "n" + std::to_string(c) + "/" + std::to_string(i) + ".bin";
      std::ofstream os(dir / rel, std::ios::binary);
      write_record(os, "x", t);
      manifest << "n" << c << '\t' << rel << '\n';
    }
  }
  manifest.close();
  const auto src = load_image_source<float>(dir, dir / "manifest.tsv");
  EXPECT_EQ(src.num_classes(), 100u);
  for (const auto& c : src.classes) EXPECT_EQ(c.samples.size(), 600u);
  fs::remove_all(dir);
}

TEST(Ingest, EmptyManifestIsAnIngestionError) {
  const auto dir = scratch_dir("empty");
  std::ofstream(dir / "manifest.tsv").close();
  EXPECT_THROW(load_image_source<float>(dir, dir / "manifest.tsv"), IngestionError);
  fs::remove_all(dir);
}

TEST(Ingest, MissingFileIsAnIngestionError) {
  const auto dir = scratch_dir("missing");
  std::ofstream(dir / "manifest.tsv") << "a\tnope.bin\n";
  EXPECT_THROW(load_image_source<float>(dir, dir / "manifest.tsv"), IngestionError);
  fs::remove_all(dir);
}

TEST(Ingest, MixedGeometryIsAGeometryError) {
  const auto dir = scratch_dir("geom");
  write_sample_file(dir / "a.bin", Tensor<float>({1, 2, 2}, 0.f));
  write_sample_file(dir / "b.bin", Tensor<float>({1, 3, 2}, 0.f));
  std::ofstream(dir / "manifest.tsv") << "a\ta.bin\nb\tb.bin\n";
  EXPECT_THROW(load_image_source<float>(dir, dir / "manifest.tsv"), GeometryError);
  fs::remove_all(dir);
}
