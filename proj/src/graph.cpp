#include "embfat/graph.hpp"

#include <cmath>

namespace embfat {

NodeId Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

void Graph::check_id(NodeId id) const {
  if (id >= nodes_.size()) {
    throw ShapeError("graph node id " + std::to_string(id) + " out of range");
  }
}

NodeId Graph::leaf(Tensor value) {
  NodeId id = push({Op::kLeaf, std::move(value), {}});
  leaves_.push_back(id);
  return id;
}

NodeId Graph::input(Tensor value) { return push({Op::kInput, std::move(value), {}}); }

NodeId Graph::matmul(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  Tensor v = embfat::matmul(nodes_[a].value, nodes_[b].value);
  return push({Op::kMatMul, std::move(v), {a, b}});
}

NodeId Graph::add(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  Tensor v = embfat::add(nodes_[a].value, nodes_[b].value);
  return push({Op::kAdd, std::move(v), {a, b}});
}

NodeId Graph::sub(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  Tensor v = embfat::sub(nodes_[a].value, nodes_[b].value);
  return push({Op::kSub, std::move(v), {a, b}});
}

NodeId Graph::scale(NodeId a, double c) {
  check_id(a);
  Tensor v = embfat::scale(nodes_[a].value, c);
  Node n{Op::kScale, std::move(v), {a}};
  n.scalar = c;
  return push(std::move(n));
}

NodeId Graph::relu(NodeId a) {
  check_id(a);
  return push({Op::kRelu, embfat::relu(nodes_[a].value), {a}});
}

NodeId Graph::tanh_op(NodeId a) {
  check_id(a);
  return push({Op::kTanh, embfat::tanh_t(nodes_[a].value), {a}});
}

NodeId Graph::masked_mean_pool(NodeId e, std::vector<std::uint8_t> mask) {
  check_id(e);
  Tensor v = embfat::masked_mean_pool(nodes_[e].value, mask);
  Node n{Op::kMaskedMeanPool, std::move(v), {e}};
  n.mask = std::move(mask);
  return push(std::move(n));
}

NodeId Graph::softmax_cross_entropy(NodeId logits, std::size_t label) {
  check_id(logits);
  XentResult r = embfat::softmax_cross_entropy(nodes_[logits].value, label);
  Node n{Op::kSoftmaxXent, Tensor::scalar(r.loss), {logits}};
  n.label = label;
  n.probs = std::move(r.probs);
  return push(std::move(n));
}

NodeId Graph::gather_rows(NodeId table, std::vector<std::size_t> rows) {
  check_id(table);
  const Tensor& t = nodes_[table].value;
  if (t.shape.size() != 2) {
    throw ShapeError("gather_rows table must be a matrix, got " + shape_str(t.shape));
  }
  if (rows.empty()) throw ShapeError("gather_rows: empty row list");
  const std::size_t d = t.shape[1];
  Tensor v = Tensor::zeros({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= t.shape[0]) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) +
                       " out of range for table " + shape_str(t.shape));
    }
    for (std::size_t j = 0; j < d; ++j) v.at(i, j) = t.at(rows[i], j);
  }
  Node n{Op::kGatherRows, std::move(v), {table}};
  n.rows = std::move(rows);
  return push(std::move(n));
}

NodeId Graph::reshape(NodeId a, std::vector<std::size_t> shape) {
  check_id(a);
  if (shape_numel(shape) != nodes_[a].value.numel()) {
    throw ShapeError("reshape to " + shape_str(shape) + " changes element count");
  }
  Tensor v(shape, nodes_[a].value.data);
  return push({Op::kReshape, std::move(v), {a}});
}

std::unordered_map<NodeId, Tensor> Graph::backward(NodeId loss) const {
  check_id(loss);
  if (!nodes_[loss].value.is_scalar()) {
    throw ShapeError("backward: loss node must be scalar, got shape " +
                     shape_str(nodes_[loss].value.shape));
  }

  std::vector<Tensor> grads(nodes_.size());
  std::vector<bool> touched(nodes_.size(), false);
  auto grad_of = [&](NodeId id) -> Tensor& {
    if (!touched[id]) {
      grads[id] = Tensor::zeros(nodes_[id].value.shape);
      touched[id] = true;
    }
    return grads[id];
  };

  grad_of(loss).data[0] = 1.0;

  for (NodeId id = loss + 1; id-- > 0;) {
    if (!touched[id]) continue;
    const Node& n = nodes_[id];
    const Tensor& g = grads[id];
    switch (n.op) {
      case Op::kLeaf:
      case Op::kInput:
        break;
      case Op::kMatMul: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        Tensor& ga = grad_of(n.inputs[0]);
        Tensor& gb = grad_of(n.inputs[1]);
        const std::size_t m = a.shape[0], k = a.shape[1], c = b.shape[1];
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) s += g.at(i, j) * b.at(p, j);
            ga.at(i, p) += s;
          }
        }
        for (std::size_t p = 0; p < k; ++p) {
          for (std::size_t j = 0; j < c; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < m; ++i) s += a.at(i, p) * g.at(i, j);
            gb.at(p, j) += s;
          }
        }
        break;
      }
      case Op::kAdd: {
        Tensor& ga = grad_of(n.inputs[0]);
        Tensor& gb = grad_of(n.inputs[1]);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          ga.data[i] += g.data[i];
          gb.data[i] += g.data[i];
        }
        break;
      }
      case Op::kSub: {
        Tensor& ga = grad_of(n.inputs[0]);
        Tensor& gb = grad_of(n.inputs[1]);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          ga.data[i] += g.data[i];
          gb.data[i] -= g.data[i];
        }
        break;
      }
      case Op::kScale: {
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += n.scalar * g.data[i];
        break;
      }
      case Op::kRelu: {
        const Tensor& x = nodes_[n.inputs[0]].value;
        Tensor& ga = grad_of(n.inputs[0]);
        // adjoint at exactly 0 is 0
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          if (x.data[i] > 0.0) ga.data[i] += g.data[i];
        }
        break;
      }
      case Op::kTanh: {
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          const double y = n.value.data[i];
          ga.data[i] += (1.0 - y * y) * g.data[i];
        }
        break;
      }
      case Op::kMaskedMeanPool: {
        const Tensor& e = nodes_[n.inputs[0]].value;
        Tensor& ga = grad_of(n.inputs[0]);
        std::size_t count = 0;
        for (std::uint8_t m : n.mask) count += m ? 1 : 0;
        const double inv = 1.0 / static_cast<double>(count);
        const std::size_t d = e.shape[1];
        for (std::size_t r = 0; r < e.shape[0]; ++r) {
          if (!n.mask[r]) continue;
          for (std::size_t j = 0; j < d; ++j) ga.at(r, j) += inv * g.data[j];
        }
        break;
      }
      case Op::kSoftmaxXent: {
        Tensor& ga = grad_of(n.inputs[0]);
        const double up = g.data[0];
        for (std::size_t i = 0; i < ga.data.size(); ++i) {
          const double onehot = (i == n.label) ? 1.0 : 0.0;
          ga.data[i] += up * (n.probs.data[i] - onehot);
        }
        break;
      }
      case Op::kGatherRows: {
        Tensor& ga = grad_of(n.inputs[0]);
        const std::size_t d = ga.shape[1];
        for (std::size_t i = 0; i < n.rows.size(); ++i) {
          for (std::size_t j = 0; j < d; ++j) ga.at(n.rows[i], j) += g.at(i, j);
        }
        break;
      }
      case Op::kReshape: {
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
        break;
      }
    }
  }

  std::unordered_map<NodeId, Tensor> out;
  for (NodeId l : leaves_) {
    out.emplace(l, touched[l] ? std::move(grads[l]) : Tensor::zeros(nodes_[l].value.shape));
  }
  return out;
}

}  // namespace embfat
