#include "embfat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace embfat {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  for (std::size_t dim : shape) {
    if (dim == 0) throw ShapeError("zero dimension in shape " + shape_str(shape));
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

bool all_finite(const Tensor& t) {
  return std::all_of(t.data.begin(), t.data.end(),
                     [](double v) { return std::isfinite(v); });
}

static void require_matrix(const Tensor& t, const char* name) {
  if (t.shape.size() != 2) {
    throw ShapeError(std::string(name) + " must be a matrix, got shape " +
                     shape_str(t.shape));
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul lhs");
  require_matrix(b, "matmul rhs");
  if (a.shape[1] != b.shape[0]) {
    throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape) +
                     " vs " + shape_str(b.shape));
  }
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.at(i, p);
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += av * b.at(p, j);
    }
  }
  return out;
}

static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + " shape mismatch: " + shape_str(a.shape) +
                     " vs " + shape_str(b.shape));
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (double& v : out.data) v *= c;
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = a;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor tanh_t(const Tensor& a) {
  Tensor out = a;
  for (double& v : out.data) v = std::tanh(v);
  return out;
}

Tensor masked_mean_pool(const Tensor& e, const std::vector<std::uint8_t>& mask) {
  require_matrix(e, "masked_mean_pool input");
  if (mask.size() != e.shape[0]) {
    throw ShapeError("mask length " + std::to_string(mask.size()) +
                     " does not match row count " + std::to_string(e.shape[0]));
  }
  std::size_t count = 0;
  for (std::uint8_t m : mask) count += m ? 1 : 0;
  if (count == 0) throw ShapeError("masked_mean_pool: all-false mask");
  const std::size_t d = e.shape[1];
  Tensor out = Tensor::zeros({d});
  for (std::size_t r = 0; r < e.shape[0]; ++r) {
    if (!mask[r]) continue;
    for (std::size_t j = 0; j < d; ++j) out.data[j] += e.at(r, j);
  }
  const double inv = 1.0 / static_cast<double>(count);
  for (double& v : out.data) v *= inv;
  return out;
}

XentResult softmax_cross_entropy(const Tensor& logits, std::size_t label) {
  if (logits.shape.size() != 1) {
    throw ShapeError("softmax_cross_entropy expects a vector, got " +
                     shape_str(logits.shape));
  }
  const std::size_t c = logits.data.size();
  if (label >= c) {
    throw ShapeError("label " + std::to_string(label) + " out of range for " +
                     std::to_string(c) + " classes");
  }
  const double mx = *std::max_element(logits.data.begin(), logits.data.end());
  Tensor probs = Tensor::zeros({c});
  double denom = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    probs.data[i] = std::exp(logits.data[i] - mx);
    denom += probs.data[i];
  }
  for (double& p : probs.data) p /= denom;
  const double loss = -(logits.data[label] - mx - std::log(denom));
  return {loss, std::move(probs)};
}

double l2_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data) s += v * v;
  return std::sqrt(s);
}

double linf_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data) s = std::max(s, std::abs(v));
  return s;
}

}  // namespace embfat
