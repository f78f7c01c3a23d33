#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "embfat/tensor.hpp"

namespace embfat {

using NodeId = std::size_t;

// Append-only computation tape. Inputs always precede the nodes that consume
// them, so a reverse sweep over node ids is a valid reverse-topological order.
class Graph {
 public:
  // Differentiable input; backward() reports a gradient for it.
  NodeId leaf(Tensor value);
  // Constant input; participates in forward only.
  NodeId input(Tensor value);

  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId scale(NodeId a, double c);
  NodeId relu(NodeId a);
  NodeId tanh_op(NodeId a);
  NodeId masked_mean_pool(NodeId e, std::vector<std::uint8_t> mask);
  NodeId softmax_cross_entropy(NodeId logits, std::size_t label);
  // Row gather from a V×d table; adjoint scatter-adds into the table.
  NodeId gather_rows(NodeId table, std::vector<std::size_t> rows);
  // Same data, different shape metadata.
  NodeId reshape(NodeId a, std::vector<std::size_t> shape);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  // Cached softmax probabilities of a softmax_cross_entropy node.
  const Tensor& probs(NodeId id) const { return nodes_[id].probs; }

  std::size_t size() const { return nodes_.size(); }

  // dLoss/dLeaf for every leaf. Leaves not reaching the loss map to zeros.
  std::unordered_map<NodeId, Tensor> backward(NodeId loss) const;

 private:
  enum class Op {
    kLeaf,
    kInput,
    kMatMul,
    kAdd,
    kSub,
    kScale,
    kRelu,
    kTanh,
    kMaskedMeanPool,
    kSoftmaxXent,
    kGatherRows,
    kReshape,
  };

  struct Node {
    Op op;
    Tensor value;
    std::vector<NodeId> inputs;
    double scalar = 0.0;                // kScale factor
    std::vector<std::uint8_t> mask;     // kMaskedMeanPool
    std::size_t label = 0;              // kSoftmaxXent
    Tensor probs;                       // kSoftmaxXent cache
    std::vector<std::size_t> rows;      // kGatherRows
  };

  NodeId push(Node node);
  void check_id(NodeId id) const;

  std::vector<Node> nodes_;
  std::vector<NodeId> leaves_;
};

}  // namespace embfat
