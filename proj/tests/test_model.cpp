#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "embfat/finite_diff.hpp"
#include "embfat/model.hpp"
#include "embfat/rng.hpp"
#include "oracles.hpp"

using namespace embfat;
namespace fs = std::filesystem;

namespace {

ModelDims small_dims() { return {10, 3, 4, 2, 6}; }

ModelParams random_params(const ModelDims& dims, std::uint64_t seed) {
  return init_params(dims, seed);
}

Batch make_batch(const std::vector<std::vector<TokenId>>& seqs,
                 const std::vector<std::size_t>& labels, std::size_t max_len) {
  static std::vector<Example> storage;
  storage.clear();
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    storage.push_back({static_cast<std::int64_t>(i), seqs[i], labels[i]});
  }
  std::vector<const Example*> ptrs;
  for (const Example& e : storage) ptrs.push_back(&e);
  return encode_batch(ptrs, max_len);
}

// Straight-line reimplementation of the forward pass, used as an oracle.
std::vector<double> forward_naive(const ModelParams& p, const std::vector<TokenId>& ids,
                                  const Tensor* delta_rows) {
  const std::size_t n = std::min(ids.size(), p.dims.max_len);
  const std::size_t d = p.dims.embed_dim;
  std::vector<double> pooled(d, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      double v = p.embedding.at(static_cast<std::size_t>(ids[t]), j);
      if (delta_rows) v += delta_rows->at(t, j);
      pooled[j] += v;
    }
  }
  for (double& v : pooled) v /= static_cast<double>(n);
  std::vector<double> h(p.dims.hidden, 0.0);
  for (std::size_t j = 0; j < p.dims.hidden; ++j) {
    double s = p.b1.data[j];
    for (std::size_t i = 0; i < d; ++i) s += pooled[i] * p.w1.at(i, j);
    h[j] = s > 0 ? s : 0;
  }
  std::vector<double> logits(p.dims.classes, 0.0);
  for (std::size_t c = 0; c < p.dims.classes; ++c) {
    double s = p.b2.data[c];
    for (std::size_t j = 0; j < p.dims.hidden; ++j) s += h[j] * p.w2.at(j, c);
    logits[c] = s;
  }
  return logits;
}

// Minimum |relu pre-activation| over a batch, for kink rejection in FD tests.
double min_preact(const ModelParams& p, const Batch& batch) {
  double best = 1e300;
  for (std::size_t i = 0; i < batch.size; ++i) {
    std::vector<TokenId> ids;
    for (std::size_t t = 0; t < batch.lengths[i]; ++t) ids.push_back(batch.id_at(i, t));
    const std::size_t n = ids.size(), d = p.dims.embed_dim;
    std::vector<double> pooled(d, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t j = 0; j < d; ++j) {
        pooled[j] += p.embedding.at(static_cast<std::size_t>(ids[t]), j);
      }
    }
    for (double& v : pooled) v /= static_cast<double>(n);
    for (std::size_t j = 0; j < p.dims.hidden; ++j) {
      double s = p.b1.data[j];
      for (std::size_t c = 0; c < d; ++c) s += pooled[c] * p.w1.at(c, j);
      best = std::min(best, std::abs(s));
    }
  }
  return best;
}

}  // namespace

TEST_CASE("init_params: zero biases, glorot bound, determinism") {
  ModelDims dims{50, 16, 32, 2, 8};
  ModelParams p = init_params(dims, 3);
  for (double v : p.b1.data) CHECK(v == 0.0);
  for (double v : p.b2.data) CHECK(v == 0.0);

  const double s = std::sqrt(6.0 / 48.0);
  CHECK(s == doctest::Approx(0.3536).epsilon(1e-3));
  for (double v : p.w1.data) CHECK(std::abs(v) <= s);

  ModelParams q = init_params(dims, 3);
  CHECK(p.w1.data == q.w1.data);
  CHECK(p.embedding.data == q.embedding.data);
  for (std::size_t j = 0; j < dims.embed_dim; ++j) CHECK(p.embedding.at(kPadId, j) == 0.0);

  EmbeddingTable wrong;
  wrong.dim = 8;
  wrong.matrix = Tensor::zeros({50, 8});
  CHECK_THROWS_AS(init_params(dims, 3, &wrong), ConfigError);
}

TEST_CASE("forward with zero delta is bitwise equal to no delta") {
  ModelParams p = random_params(small_dims(), 1);
  Batch b = make_batch({{2, 3, 4}, {5, 6}}, {0, 1}, p.dims.max_len);
  Tensor zero = Tensor::zeros({b.size, b.max_len, p.dims.embed_dim});
  Tensor with = forward(p, b, &zero);
  Tensor without = forward(p, b);
  CHECK(with.data == without.data);
}

TEST_CASE("forward hand-forced identity weights") {
  ModelDims dims{3, 2, 2, 2, 4};
  ModelParams p;
  p.dims = dims;
  p.embedding = Tensor({3, 2}, {0, 0, 0, 0, 1, 0});  // token 2 -> [1,0]
  p.w1 = Tensor({2, 2}, {1, 0, 0, 1});
  p.b1 = Tensor::zeros({2});
  p.w2 = Tensor({2, 2}, {1, 0, 0, 1});
  p.b2 = Tensor::zeros({2});
  Batch b = make_batch({{2}}, {0}, 4);
  Tensor logits = forward(p, b);
  CHECK(logits.data == std::vector<double>{1, 0});
}

TEST_CASE("forward agrees with direct recomputation under nonzero delta") {
  ModelParams p = random_params(small_dims(), 9);
  Rng rng(17);
  std::vector<TokenId> ids{2, 5, 7, 3};
  Tensor delta_rows = Tensor::zeros({4, p.dims.embed_dim});
  for (double& v : delta_rows.data) v = rng.uniform(-0.3, 0.3);

  Batch b = make_batch({ids}, {0}, p.dims.max_len);
  Tensor delta = Tensor::zeros({1, p.dims.max_len, p.dims.embed_dim});
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t j = 0; j < p.dims.embed_dim; ++j) {
      delta.data[t * p.dims.embed_dim + j] = delta_rows.at(t, j);
    }
  }
  Tensor logits = forward(p, b, &delta);
  auto want = forward_naive(p, ids, &delta_rows);
  for (std::size_t c = 0; c < want.size(); ++c) {
    CHECK(logits.data[c] == doctest::Approx(want[c]).epsilon(1e-12));
  }
}

TEST_CASE("loss_and_grads delta gradient: finite differences and masking") {
  ModelParams p;
  Batch b;
  for (std::uint64_t seed = 100;; ++seed) {
    p = random_params(small_dims(), seed);
    b = make_batch({{2, 3, 4}, {5, 6}}, {0, 1}, p.dims.max_len);
    if (min_preact(p, b) > 1e-3) break;
  }
  const std::size_t d = p.dims.embed_dim;
  Tensor delta = Tensor::zeros({b.size, b.max_len, d});

  LossGrads lg = loss_and_grads(p, b, &delta, GradTarget::kDelta);
  REQUIRE(lg.delta.has_value());

  // masked positions carry exactly zero gradient
  for (std::size_t i = 0; i < b.size; ++i) {
    for (std::size_t t = b.lengths[i]; t < b.max_len; ++t) {
      for (std::size_t j = 0; j < d; ++j) {
        CHECK(lg.delta->data[(i * b.max_len + t) * d + j] == 0.0);
      }
    }
  }

  auto f = [&](const std::vector<Tensor>& params) {
    return loss_and_grads(p, b, &params[0], GradTarget::kDelta).loss;
  };
  auto grad = [&](const std::vector<Tensor>& params) {
    return std::vector<Tensor>{*loss_and_grads(p, b, &params[0], GradTarget::kDelta).delta};
  };
  CHECK(finite_diff_check(f, grad, {delta}, 1e-5) < 1e-5);
}

TEST_CASE("full model parameter gradient matches central finite differences") {
  ModelParams p;
  Batch b;
  for (std::uint64_t seed = 7;; ++seed) {
    p = random_params(small_dims(), seed);
    b = make_batch({{2, 3, 4, 8}}, {1}, p.dims.max_len);
    if (min_preact(p, b) > 1e-3) break;
  }
  auto pack = [](const ModelParams& m) {
    return std::vector<Tensor>{m.embedding, m.w1, m.b1, m.w2, m.b2};
  };
  auto unpack = [&](const std::vector<Tensor>& v) {
    ModelParams m = p;
    m.embedding = v[0];
    m.w1 = v[1];
    m.b1 = v[2];
    m.w2 = v[3];
    m.b2 = v[4];
    return m;
  };
  auto f = [&](const std::vector<Tensor>& v) {
    return loss_and_grads(unpack(v), b, nullptr, GradTarget::kParams).loss;
  };
  auto grad = [&](const std::vector<Tensor>& v) {
    LossGrads lg = loss_and_grads(unpack(v), b, nullptr, GradTarget::kParams);
    return std::vector<Tensor>{lg.params->embedding, lg.params->w1, lg.params->b1,
                               lg.params->w2, lg.params->b2};
  };
  CHECK(finite_diff_check(f, grad, pack(p), 1e-5) < 1e-5);
}

TEST_CASE("wrt=both equals union of the single-target calls") {
  ModelParams p = random_params(small_dims(), 4);
  Batch b = make_batch({{2, 3}, {4, 5, 6}}, {1, 0}, p.dims.max_len);
  Tensor delta = Tensor::zeros({b.size, b.max_len, p.dims.embed_dim});
  Rng rng(8);
  for (std::size_t i = 0; i < b.size; ++i) {
    for (std::size_t t = 0; t < b.lengths[i]; ++t) {
      for (std::size_t j = 0; j < p.dims.embed_dim; ++j) {
        delta.data[(i * b.max_len + t) * p.dims.embed_dim + j] = rng.uniform(-0.1, 0.1);
      }
    }
  }
  LossGrads both = loss_and_grads(p, b, &delta, GradTarget::kBoth);
  LossGrads only_p = loss_and_grads(p, b, &delta, GradTarget::kParams);
  LossGrads only_d = loss_and_grads(p, b, &delta, GradTarget::kDelta);
  CHECK(std::abs(both.loss - only_p.loss) <= 1e-12);
  for (std::size_t i = 0; i < both.params->w1.numel(); ++i) {
    CHECK(std::abs(both.params->w1.data[i] - only_p.params->w1.data[i]) <= 1e-12);
  }
  for (std::size_t i = 0; i < both.delta->numel(); ++i) {
    CHECK(std::abs(both.delta->data[i] - only_d.delta->data[i]) <= 1e-12);
  }
}

TEST_CASE("back-prop counter increments once per call regardless of wrt") {
  ModelParams p = random_params(small_dims(), 4);
  Batch b = make_batch({{2, 3}}, {1}, p.dims.max_len);
  Tensor delta = Tensor::zeros({1, b.max_len, p.dims.embed_dim});
  const std::uint64_t before = backprop_count();
  loss_and_grads(p, b, nullptr, GradTarget::kParams);
  loss_and_grads(p, b, &delta, GradTarget::kDelta);
  loss_and_grads(p, b, &delta, GradTarget::kBoth);
  CHECK(backprop_count() - before == 3);
}

TEST_CASE("duplicated example leaves mean loss unchanged") {
  ModelParams p = random_params(small_dims(), 12);
  Batch one = make_batch({{2, 3, 4}}, {0}, p.dims.max_len);
  Batch two = make_batch({{2, 3, 4}, {2, 3, 4}}, {0, 0}, p.dims.max_len);
  const double l1 = loss_and_grads(p, one, nullptr, GradTarget::kParams).loss;
  const double l2 = loss_and_grads(p, two, nullptr, GradTarget::kParams).loss;
  CHECK(std::abs(l1 - l2) <= 1e-12);
}

TEST_CASE("permuting the batch permutes logits and keeps mean loss") {
  ModelParams p = random_params(small_dims(), 13);
  Batch fwd = make_batch({{2, 3}, {4, 5, 6}, {7}}, {0, 1, 0}, p.dims.max_len);
  Batch rev = make_batch({{7}, {4, 5, 6}, {2, 3}}, {0, 1, 0}, p.dims.max_len);
  Tensor lf = forward(p, fwd);
  Tensor lr = forward(p, rev);
  for (std::size_t c = 0; c < p.dims.classes; ++c) {
    CHECK(lf.at(0, c) == lr.at(2, c));
    CHECK(lf.at(1, c) == lr.at(1, c));
    CHECK(lf.at(2, c) == lr.at(0, c));
  }
  const double a = loss_and_grads(p, fwd, nullptr, GradTarget::kParams).loss;
  const double b = loss_and_grads(p, rev, nullptr, GradTarget::kParams).loss;
  CHECK(std::abs(a - b) <= 1e-12);
}

TEST_CASE("predict ties break to the smaller class index") {
  ModelDims dims{3, 2, 2, 2, 4};
  ModelParams p;
  p.dims = dims;
  p.embedding = Tensor::zeros({3, 2});
  p.w1 = Tensor::zeros({2, 2});
  p.b1 = Tensor::zeros({2});
  p.w2 = Tensor::zeros({2, 2});
  p.b2 = Tensor({2}, {1, 1});  // tied logits
  CHECK(predict(p, {2}).label == 0);
  p.b2 = Tensor({2}, {2, 1});
  CHECK(predict(p, {2}).label == 0);
  p.b2 = Tensor({2}, {1, 2});
  CHECK(predict(p, {2}).label == 1);
  CHECK_THROWS_AS(predict(p, {}), ConfigError);
}

TEST_CASE("predict agrees with forward+softmax composition") {
  ModelParams p = random_params(small_dims(), 20);
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<TokenId> ids;
    const std::size_t len = 1 + rng.below(5);
    for (std::size_t t = 0; t < len; ++t) {
      ids.push_back(static_cast<TokenId>(2 + rng.below(p.dims.vocab - 2)));
    }
    Prediction pr = predict(p, ids);
    Batch b = make_batch({ids}, {0}, p.dims.max_len);
    Tensor logits2d = forward(p, b);
    auto sm = softmax_cross_entropy(Tensor({p.dims.classes}, logits2d.data), 0);
    std::size_t best = 0;
    for (std::size_t c = 1; c < sm.probs.numel(); ++c) {
      if (sm.probs.data[c] > sm.probs.data[best]) best = c;
    }
    CHECK(pr.label == best);
    for (std::size_t c = 0; c < sm.probs.numel(); ++c) {
      CHECK(pr.probs.data[c] == doctest::Approx(sm.probs.data[c]).epsilon(1e-12));
    }
  }
}

TEST_CASE("checkpoint round trip is bitwise and errors are explicit") {
  const fs::path dir = fs::temp_directory_path() / "embfat_model_test";
  fs::create_directories(dir);
  const std::string path = (dir / "ck.efat").string();

  ModelParams p = random_params(small_dims(), 30);
  CheckpointMeta meta{17, 2, 30};
  save_checkpoint(p, meta, path);
  Checkpoint back = load_checkpoint(path);
  CHECK(back.params.embedding.data == p.embedding.data);
  CHECK(back.params.w1.data == p.w1.data);
  CHECK(back.params.b1.data == p.b1.data);
  CHECK(back.params.w2.data == p.w2.data);
  CHECK(back.params.b2.data == p.b2.data);
  CHECK(back.meta.epochs_run == 17);
  CHECK(back.meta.trainer_kind == 2);
  CHECK(back.meta.seed == 30);

  // corrupted magic
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);

  // unsupported version
  save_checkpoint(p, meta, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const std::uint32_t v = 99;
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  try {
    load_checkpoint(path);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }

  // truncation
  save_checkpoint(p, meta, path);
  fs::resize_file(path, fs::file_size(path) / 2);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
}
