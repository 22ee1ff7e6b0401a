#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "support.hpp"
#include "trlhpo/evaluator/cache.hpp"
#include "trlhpo/evaluator/mnist.hpp"
#include "trlhpo/evaluator/surrogate.hpp"
#include "trlhpo/evaluator/training.hpp"

using namespace trlhpo;
using namespace trlhpo::evaluator;
namespace fs = std::filesystem;
namespace tk = trlhpo::testkit;

namespace {

const FeatureShape kMnist = FeatureShape::grid(1, 28, 28);

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("trlhpo_eval_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>((v >> s) & 0xFF));
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

/// IDX pair with `n_img` 2x2 images whose first pixel is 255 and `n_lab` labels.
void write_idx(const fs::path& dir, std::uint32_t n_img, std::uint32_t n_lab, std::uint32_t img_magic = 2051,
               std::uint32_t lab_magic = 2049, std::size_t drop_bytes = 0) {
  std::vector<unsigned char> img, lab;
  put_be32(img, img_magic);
  put_be32(img, n_img);
  put_be32(img, 2);
  put_be32(img, 2);
  for (std::uint32_t i = 0; i < n_img; ++i) img.insert(img.end(), {255, 0, 51, 102});
  img.resize(img.size() - drop_bytes);
  put_be32(lab, lab_magic);
  put_be32(lab, n_lab);
  for (std::uint32_t i = 0; i < n_lab; ++i) lab.push_back(static_cast<unsigned char>(i % 10));
  write_bytes(dir / "img", img);
  write_bytes(dir / "lab", lab);
}

MnistErrorKind error_kind(const fs::path& dir) {
  try {
    load_mnist(dir / "img", dir / "lab");
  } catch (const MnistError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error";
  return MnistErrorKind::Io;
}

const Dataset& desk_data() {
  static const Dataset d = load_dataset(DataConfig{});
  return d;
}

ArchSpec arch_of(std::initializer_list<LayerSpec> layers) {
  ArchSpec a(kMnist);
  for (const auto& l : layers) a.append(l);
  return a;
}

/// Softmax regression on standardized pixels with a hand-written Adam,
/// started from the given weights and trained on the same minibatch order.
double logistic_oracle(const Dataset& d, const TrainBudget& b, std::vector<double> W, std::vector<double> c) {
  const std::size_t P = d.train.image_size(), K = 10;
  std::vector<double> mW(W.size(), 0.0), vW(W.size(), 0.0), mc(K, 0.0), vc(K, 0.0);
  auto px = [](double v) { return (v - kPixelMean) / kPixelStd; };
  auto logits = [&](const ImageSet& s, std::size_t i) {
    std::vector<double> z(c);
    const double* x = s.image(i);
    for (std::size_t p = 0; p < P; ++p) {
      const double xv = px(x[p]);
      for (std::size_t k = 0; k < K; ++k) z[k] += xv * W[p * K + k];
    }
    return z;
  };
  std::size_t t = 0;
  for (std::size_t epoch = 0; epoch < b.epochs; ++epoch) {
    const auto order = shuffled_indices(d.train.size(), core::derive_seed({b.seed, 0xE90C, epoch}));
    for (std::size_t start = 0; start < order.size(); start += b.batch_size) {
      const std::size_t end = std::min(order.size(), start + b.batch_size);
      std::vector<double> gW(W.size(), 0.0), gc(K, 0.0);
      for (std::size_t j = start; j < end; ++j) {
        const auto i = order[j];
        auto z = logits(d.train, i);
        const double m = *std::max_element(z.begin(), z.end());
        double s = 0.0;
        for (auto& v : z) s += (v = std::exp(v - m));
        for (std::size_t k = 0; k < K; ++k) {
          const double g = (z[k] / s - (static_cast<int>(k) == d.train.labels[i] ? 1.0 : 0.0)) / static_cast<double>(end - start);
          gc[k] += g;
          const double* x = d.train.image(i);
          for (std::size_t p = 0; p < P; ++p) gW[p * K + k] += g * px(x[p]);
        }
      }
      ++t;
      auto adam = [&](std::vector<double>& w, std::vector<double>& g, std::vector<double>& m1, std::vector<double>& m2) {
        for (std::size_t q = 0; q < w.size(); ++q) {
          m1[q] = 0.9 * m1[q] + 0.1 * g[q];
          m2[q] = 0.999 * m2[q] + 0.001 * g[q] * g[q];
          const double mh = m1[q] / (1 - std::pow(0.9, t)), vh = m2[q] / (1 - std::pow(0.999, t));
          w[q] -= b.lr * mh / (std::sqrt(vh) + 1e-8);
        }
      };
      adam(W, gW, mW, vW);
      adam(c, gc, mc, vc);
    }
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < d.validation.size(); ++i) {
    const auto z = logits(d.validation, i);
    hits += static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin()) == d.validation.labels[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(d.validation.size());
}

class CountingEvaluator : public Evaluator {
 public:
  EvalOutcome evaluate(const ArchSpec& arch) override {
    count_evaluation();
    return surrogate_eval(arch, 5);
  }
  std::string fingerprint() const override { return "counting"; }
};

class FailingEvaluator : public Evaluator {
 public:
  EvalOutcome evaluate(const ArchSpec&) override { throw std::runtime_error("boom"); }
  std::string fingerprint() const override { return "failing"; }
};

}  // namespace

TEST(Idx, ParsesHeaderAndScalesPixels) {
  TempDir tmp;
  write_idx(tmp.path, 3, 3);
  const auto set = load_mnist(tmp.path / "img", tmp.path / "lab");
  EXPECT_EQ(set.size(), 3u);
  EXPECT_EQ(set.rows, 2u);
  EXPECT_EQ(set.image_size(), 4u);
  EXPECT_DOUBLE_EQ(set.image(2)[0], 1.0);
  EXPECT_DOUBLE_EQ(set.image(2)[2], 0.2);
  EXPECT_EQ(set.labels[2], 2);
}

TEST(Idx, DistinctErrors) {
  TempDir tmp;
  write_idx(tmp.path, 10, 9);
  EXPECT_EQ(error_kind(tmp.path), MnistErrorKind::CountMismatch);
  write_idx(tmp.path, 4, 4, 2049);
  EXPECT_EQ(error_kind(tmp.path), MnistErrorKind::BadMagic);
  write_idx(tmp.path, 4, 4, 2051, 2051);
  EXPECT_EQ(error_kind(tmp.path), MnistErrorKind::BadMagic);
  write_idx(tmp.path, 4, 4, 2051, 2049, 3);
  EXPECT_EQ(error_kind(tmp.path), MnistErrorKind::Truncated);
  fs::remove(tmp.path / "lab");
  EXPECT_EQ(error_kind(tmp.path), MnistErrorKind::Io);
}

TEST(Idx, BundledSubsetIsBalanced) {
  const auto& d = desk_data();
  EXPECT_EQ(d.train.size(), 2000u);
  EXPECT_EQ(d.validation.size(), 512u);
  std::vector<int> counts(10, 0);
  for (int l : d.train.labels) {
    ASSERT_GE(l, 0);
    ASSERT_LE(l, 9);
    ++counts[static_cast<std::size_t>(l)];
  }
  for (int c : counts) EXPECT_GT(c, 120);
}

TEST(Split, DisjointAndSized) {
  ImageSet pool;
  pool.rows = pool.cols = 1;
  for (int i = 0; i < 100; ++i) {
    pool.pixels.push_back(i);
    pool.labels.push_back(i % 10);
  }
  const auto d = split_dataset(pool, 60, 32, 3);
  std::set<double> train(d.train.pixels.begin(), d.train.pixels.end());
  std::set<double> val(d.validation.pixels.begin(), d.validation.pixels.end());
  EXPECT_EQ(train.size(), 60u);
  EXPECT_EQ(val.size(), 32u);
  for (double v : val) EXPECT_FALSE(train.contains(v));
  EXPECT_THROW(split_dataset(pool, 80, 32, 3), std::invalid_argument);
}

TEST(ValidateBatches, Examples) {
  std::vector<int> labels(512);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 10);
  std::vector<std::size_t> order(512);
  std::iota(order.begin(), order.end(), std::size_t{0});

  const auto perfect = validate_batches(labels, labels, order);
  EXPECT_EQ(perfect, std::vector<double>(32, 1.0));

  const std::vector<int> constant(512, 3);
  const auto flat = validate_batches(constant, labels, order);
  for (double a : flat) EXPECT_NEAR(a, 0.1, 0.07);

  EXPECT_THROW(validate_batches(labels, labels, std::span(order).subspan(0, 511)), std::invalid_argument);
}

TEST(Surrogate, Examples) {
  EXPECT_DOUBLE_EQ(surrogate_eval(ArchSpec(kMnist), 0).overall_accuracy, 0.10);
  const auto a = arch_of({ConvLayer{32, 3, 1}, DenseLayer{128, true, Activation::Relu}});
  const auto b = a.with(DenseLayer{64, true, Activation::Relu});
  EXPECT_LT(surrogate_eval(b, 0).overall_accuracy, surrogate_eval(a, 0).overall_accuracy);
  EXPECT_EQ(surrogate_eval(a, 7), surrogate_eval(a, 7));
}

TEST(Surrogate, BatchProfileShape) {
  const auto a = arch_of({ConvLayer{32, 3, 1}, PoolLayer{2, 2, 0}});
  const auto o = surrogate_eval(a, 3);
  ASSERT_EQ(o.batch_accuracies.size(), kProfileBatches);
  const double mean = std::accumulate(o.batch_accuracies.begin(), o.batch_accuracies.end(), 0.0) / 32.0;
  EXPECT_NEAR(mean, o.overall_accuracy, 4 * surrogate::kBatchNoiseSigma / std::sqrt(32.0));
  for (double v : o.batch_accuracies) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_NE(surrogate_eval(a, 3).batch_accuracies, surrogate_eval(a, 4).batch_accuracies);
}

TEST(Surrogate, ConsecutiveDenseAlwaysLosesAccuracy) {
  core::Rng rng(12);
  for (int t = 0; t < 500; ++t) {
    ArchSpec a(kMnist);
    const auto depth = tk::pick(rng, 0, 4);
    for (std::size_t i = 0; i < depth; ++i) {
      ActionVector act;
      for (auto& v : act.a) v = core::uniform01(rng);
      a.append(decode_action(act, a.output_shape()));
    }
    a.append(DenseLayer{static_cast<int>(grid::fcl_neurons()[tk::pick(rng, 0, 62)]), true, Activation::Relu});
    if (a.size() >= kMaxLayers) continue;
    const auto b = a.with(DenseLayer{64, false, Activation::Tanh});
    EXPECT_LT(surrogate::score(b), surrogate::score(a)) << b.describe();
  }
}

TEST(Surrogate, PerKindBestLayersAreMaximal) {
  for (int f : grid::conv_filters())
    for (int k : grid::conv_kernels())
      for (int s : grid::conv_strides()) EXPECT_LE(surrogate::conv_quality({f, k, s}), surrogate::conv_quality(surrogate::best_conv()));
  for (int k : grid::pool_kernels())
    for (int s : grid::pool_strides())
      for (int p : grid::pool_paddings()) EXPECT_LE(surrogate::pool_quality({k, s, p}), surrogate::pool_quality(surrogate::best_pool()));
  for (int n : grid::fcl_neurons())
    for (bool b : {false, true})
      for (auto a : grid::fcl_activations())
        EXPECT_LE(surrogate::dense_quality({n, b, a}), surrogate::dense_quality(surrogate::best_dense()));
}

TEST(Cache, LookupAfterStoreAndCounter) {
  EvalCache cache("counting");
  CountingEvaluator eval;
  const auto a = arch_of({ConvLayer{8, 3, 1}});
  const auto first = eval_cached(a, eval, &cache);
  const auto second = eval_cached(a, eval, &cache);
  EXPECT_EQ(first, second);
  EXPECT_EQ(eval.evaluations(), 1u);
  EXPECT_EQ(cache.size(), 1u);
  EXPECT_EQ(*cache.lookup(arch_hash(a)), first);
  EXPECT_FALSE(cache.store(arch_hash(a), EvalOutcome{}));
  EXPECT_EQ(*cache.lookup(arch_hash(a)), first);
  eval_cached(a, eval, nullptr);
  EXPECT_EQ(eval.evaluations(), 2u);
}

TEST(Cache, PersistsAndSkipsTornOrForeignLines) {
  TempDir tmp;
  const auto path = tmp.path / "cache.jsonl";
  const auto a = arch_of({ConvLayer{8, 3, 1}});
  const auto b = arch_of({PoolLayer{2, 2, 0}});
  {
    EvalCache cache(path, "surrogate:1");
    cache.store(arch_hash(a), surrogate_eval(a, 1));
    cache.store(arch_hash(b), surrogate_eval(b, 1));
  }
  {
    std::ofstream out(path, std::ios::app);
    out << R"({"digest":"ffff","evaluator":"other","outcome":)" << outcome_to_json(EvalOutcome{}).dump() << "}\n";
    out << R"({"digest":"eeee","evaluator":"surrogate:1","outc)";
  }
  EvalCache reopened(path, "surrogate:1");
  EXPECT_EQ(reopened.size(), 2u);
  EXPECT_EQ(*reopened.lookup(arch_hash(a)), surrogate_eval(a, 1));
  EXPECT_FALSE(reopened.lookup("ffff"));
  EvalCache foreign(path, "other");
  EXPECT_EQ(foreign.size(), 1u);
}

TEST(Cache, EvaluatorErrorLeavesCacheIntact) {
  EvalCache cache("failing");
  FailingEvaluator eval;
  EXPECT_THROW(eval_cached(arch_of({ConvLayer{8, 3, 1}}), eval, &cache), std::runtime_error);
  EXPECT_EQ(cache.size(), 0u);
}

TEST(Cache, UnwritablePathIsAnError) {
  EXPECT_THROW(EvalCache(fs::path("/nonexistent-dir/x/cache.jsonl"), "s"), CacheError);
}

TEST(Training, DeterministicPerSeed) {
  const auto a = arch_of({ConvLayer{8, 5, 2}, PoolLayer{2, 2, 0}});
  const TrainBudget b{.epochs = 1, .batch_size = 64, .lr = 1e-3, .seed = 11};
  const auto x = train_candidate(a, desk_data(), b);
  const auto y = train_candidate(a, desk_data(), b);
  EXPECT_EQ(x, y);
  EXPECT_EQ(x.batch_accuracies.size(), kProfileBatches);
  EXPECT_FALSE(x.diverged);
}

TEST(Training, ZeroEpochsIsChance) {
  const auto o = train_candidate(ArchSpec(kMnist), desk_data(), {.epochs = 0, .batch_size = 64, .lr = 1e-3, .seed = 0});
  EXPECT_NEAR(o.overall_accuracy, 0.10, 0.05);
}

TEST(Training, HeadOnlyMatchesLogisticOracle) {
  const TrainBudget b{.epochs = 1, .batch_size = 64, .lr = 1e-3, .seed = 0};
  const auto o = train_candidate(ArchSpec(kMnist), desk_data(), b);
  core::Rng init_rng(b.seed);
  const CnnModel init(build_model(ArchSpec(kMnist), 10), init_rng);
  const double oracle = logistic_oracle(desk_data(), b, {init.params()[0].value.data().begin(), init.params()[0].value.data().end()},
                                      {init.params()[1].value.data().begin(), init.params()[1].value.data().end()});
  RecordProperty("head_only_accuracy", std::to_string(o.overall_accuracy));
  RecordProperty("logistic_oracle_accuracy", std::to_string(oracle));
  EXPECT_NEAR(o.overall_accuracy, oracle, 2.0 / 512.0);
  EXPECT_GT(o.overall_accuracy, 0.5);
  EXPECT_EQ(o.param_count, 7850u);

  // With the full validation split as the profile, overall accuracy is the batch mean.
  const double mean = std::accumulate(o.batch_accuracies.begin(), o.batch_accuracies.end(), 0.0) / 32.0;
  EXPECT_NEAR(mean, o.overall_accuracy, 1e-12);
}

TEST(Training, DivergenceIsFlagged) {
  const auto a = arch_of({DenseLayer{512, false, Activation::None}, DenseLayer{512, false, Activation::None}});
  const auto o = train_candidate(a, desk_data(), {.epochs = 1, .batch_size = 64, .lr = 1e306, .seed = 0});
  EXPECT_TRUE(o.diverged);
  EXPECT_EQ(o.overall_accuracy, 0.0);
  EXPECT_EQ(o.batch_accuracies.size(), kProfileBatches);
}

TEST(Training, EvaluatorSeedFollowsDigest) {
  auto data = std::make_shared<const Dataset>(desk_data());
  TrainingEvaluator e1(data, {.epochs = 1, .batch_size = 64, .lr = 1e-3, .seed = 0});
  TrainingEvaluator e2(data, {.epochs = 1, .batch_size = 64, .lr = 1e-3, .seed = 0});
  const auto a = arch_of({DenseLayer{16, true, Activation::Relu}});
  const auto b = arch_of({DenseLayer{32, true, Activation::Relu}});
  const auto a1 = e1.evaluate(a);
  e2.evaluate(b);
  EXPECT_EQ(e2.evaluate(a), a1);
  EXPECT_EQ(e1.evaluations(), 1u);
  EXPECT_EQ(e2.evaluations(), 2u);
  EXPECT_NE(e1.fingerprint(), SurrogateEvaluator(0).fingerprint());
}
