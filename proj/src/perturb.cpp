#include "embfat/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

namespace embfat {

void PerturbCache::dump(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for write: " + path);
  std::vector<std::int64_t> ids;
  ids.reserve(cache_.size());
  for (const auto& [id, rec] : cache_) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  for (std::int64_t id : ids) {
    const PerturbRecord& rec = cache_.at(id);
    out << rec.sample_id << ' ' << rec.delta.shape[0] << ' ' << rec.delta.shape[1]
        << '\n';
    for (double v : rec.delta.data) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      char buf[20];
      std::snprintf(buf, sizeof(buf), "%016llx",
                    static_cast<unsigned long long>(bits));
      out << buf << '\n';
    }
  }
}

Tensor init_random(std::size_t n, std::size_t d, double eps0, Rng& rng) {
  if (n < 1 || d < 1) throw ConfigError("init_random: n and d must be positive");
  if (eps0 < 0.0) throw ConfigError("init_random: eps0 must be non-negative");
  const double inv = 1.0 / std::sqrt(static_cast<double>(n * d));
  Tensor t = Tensor::zeros({n, d});
  for (double& v : t.data) v = rng.uniform(-eps0, eps0) * inv;
  return t;
}

Tensor init_history(const Tensor& prev, double eps0, Rng& rng) {
  if (prev.shape.size() != 2) {
    throw ShapeError("init_history: previous perturbation must be n×d, got " +
                     shape_str(prev.shape));
  }
  const double inv = 1.0 / std::sqrt(static_cast<double>(prev.numel()));
  Tensor t = Tensor::zeros(prev.shape);
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    const double mag = rng.uniform(0.0, eps0) * inv;
    const double p = prev.data[i];
    t.data[i] = p > 0.0 ? mag : (p < 0.0 ? -mag : 0.0);
  }
  return t;
}

std::optional<Tensor> ascent_step(const Tensor& delta, const Tensor& g, double s) {
  if (!delta.same_shape(g)) {
    throw ShapeError("ascent_step shape mismatch: " + shape_str(delta.shape) + " vs " +
                     shape_str(g.shape));
  }
  if (!(s > 0.0)) throw ConfigError("ascent_step: step must be positive");
  const double norm = l2_norm(g);
  if (norm < kDegenerateGradNorm) return std::nullopt;
  Tensor out = delta;
  const double c = s / norm;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += c * g.data[i];
  return out;
}

namespace {

// Extracts the true-length n×d slice of the batch-shaped delta gradient.
Tensor grad_slice(const Tensor& grad, std::size_t n, std::size_t d) {
  Tensor out = Tensor::zeros({n, d});
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < d; ++j) out.at(t, j) = grad.data[t * d + j];
  }
  return out;
}

Tensor padded_delta(const Tensor& delta, std::size_t max_len, std::size_t d) {
  Tensor out = Tensor::zeros({1, max_len, d});
  const std::size_t n = delta.shape[0];
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < d; ++j) out.data[t * d + j] = delta.at(t, j);
  }
  return out;
}

}  // namespace

Tensor gen_pgd(const ModelParams& params, const Example& example,
               const PerturbConfig& cfg, Rng& rng) {
  if (cfg.steps < 1) throw ConfigError("gen_pgd: steps must be >= 1");
  const std::size_t d = params.dims.embed_dim;
  const std::size_t n = std::min(example.ids.size(), params.dims.max_len);
  Tensor delta = init_random(n, d, cfg.eps0, rng);

  Batch batch = encode_batch({&example}, params.dims.max_len);
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    Tensor padded = padded_delta(delta, params.dims.max_len, d);
    LossGrads lg = loss_and_grads(params, batch, &padded, GradTarget::kDelta);
    Tensor g = grad_slice(*lg.delta, n, d);
    if (auto next = ascent_step(delta, g, cfg.alpha)) delta = std::move(*next);
  }
  return delta;
}

Tensor gen_fat(const ModelParams& params, const Example& example,
               const Tensor& delta0, double eps) {
  if (!(eps > 0.0)) throw ConfigError("gen_fat: eps must be positive");
  const std::size_t d = params.dims.embed_dim;
  const std::size_t n = std::min(example.ids.size(), params.dims.max_len);
  if (delta0.shape != std::vector<std::size_t>{n, d}) {
    throw ShapeError("gen_fat: delta0 shape " + shape_str(delta0.shape) +
                     " does not match example");
  }
  Batch batch = encode_batch({&example}, params.dims.max_len);
  Tensor padded = padded_delta(delta0, params.dims.max_len, d);
  LossGrads lg = loss_and_grads(params, batch, &padded, GradTarget::kDelta);
  Tensor g = grad_slice(*lg.delta, n, d);
  if (auto next = ascent_step(delta0, g, eps)) return std::move(*next);
  return delta0;
}

double direction_similarity(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("direction_similarity shape mismatch: " + shape_str(a.shape) +
                     " vs " + shape_str(b.shape));
  }
  if (a.data.empty()) throw ShapeError("direction_similarity: empty tensors");
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const int sa = a.data[i] > 0.0 ? 1 : (a.data[i] < 0.0 ? -1 : 0);
    const int sb = b.data[i] > 0.0 ? 1 : (b.data[i] < 0.0 ? -1 : 0);
    if (sa == sb) ++same;
  }
  return static_cast<double>(same) / static_cast<double>(a.data.size());
}

}  // namespace embfat
