#pragma once

#include <cstdint>
#include <optional>
#include <unordered_map>

#include "embfat/model.hpp"
#include "embfat/rng.hpp"
#include "embfat/tensor.hpp"

namespace embfat {

// Per-element gradient norms below this are treated as degenerate; the
// corresponding ascent step is skipped instead of erroring.
inline constexpr double kDegenerateGradNorm = 1e-12;

struct PerturbConfig {
  double eps0 = 0.05;   // init magnitude
  double eps = 0.2;     // single-step magnitude
  double alpha = 0.1;   // multi-step step size
  std::size_t steps = 5;
};

struct PerturbRecord {
  std::int64_t sample_id = 0;
  Tensor delta;  // n×d, true length
  std::size_t epoch = 0;
};

class PerturbCache {
 public:
  void put(std::int64_t sample_id, Tensor delta, std::size_t epoch) {
    cache_[sample_id] = PerturbRecord{sample_id, std::move(delta), epoch};
  }
  const PerturbRecord* get(std::int64_t sample_id) const {
    auto it = cache_.find(sample_id);
    return it == cache_.end() ? nullptr : &it->second;
  }
  std::size_t size() const { return cache_.size(); }

  // Debug dump: "sample_id n d" then hex little-endian doubles, one per line.
  void dump(const std::string& path) const;

 private:
  std::unordered_map<std::int64_t, PerturbRecord> cache_;
};

// Elementwise uniform in [-eps0, eps0], scaled by 1/sqrt(n*d).
Tensor init_random(std::size_t n, std::size_t d, double eps0, Rng& rng);

// Magnitude uniform in [0, eps0]/sqrt(n*d), sign copied from prev (sign(0)=0).
Tensor init_history(const Tensor& prev, double eps0, Rng& rng);

// delta + s * g / ||g||_2. Empty when the gradient is degenerate.
std::optional<Tensor> ascent_step(const Tensor& delta, const Tensor& g, double s);

// Multi-step normalized gradient ascent from a random init, no projection.
Tensor gen_pgd(const ModelParams& params, const Example& example,
               const PerturbConfig& cfg, Rng& rng);

// One normalized ascent step of size eps from delta0.
Tensor gen_fat(const ModelParams& params, const Example& example,
               const Tensor& delta0, double eps);

// Fraction of elements whose signs agree, sign(0) = 0.
double direction_similarity(const Tensor& a, const Tensor& b);

}  // namespace embfat
