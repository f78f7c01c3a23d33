#pragma once

#include <cstddef>
#include <vector>

#include "embfat/errors.hpp"

namespace embfat {

// Dense row-major tensor of doubles. Immutable by convention once handed to
// the graph; mutation helpers exist for construction and optimizer updates.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> d);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor scalar(double v);

  std::size_t numel() const { return data.size(); }
  bool is_scalar() const { return data.size() == 1; }
  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  // 2-D accessors; caller guarantees the tensor is a matrix.
  double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }
  double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
};

std::string shape_str(const std::vector<std::size_t>& shape);
std::size_t shape_numel(const std::vector<std::size_t>& shape);

bool all_finite(const Tensor& t);

// ---- eager kernels; the graph registers these same computations ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor tanh_t(const Tensor& a);

// Mean over rows of an n×d matrix whose mask entry is nonzero.
Tensor masked_mean_pool(const Tensor& e, const std::vector<std::uint8_t>& mask);

struct XentResult {
  double loss;
  Tensor probs;
};

// Numerically stable softmax + cross-entropy for a 1-D logits vector.
XentResult softmax_cross_entropy(const Tensor& logits, std::size_t label);

double l2_norm(const Tensor& t);
double linf_norm(const Tensor& t);

}  // namespace embfat
