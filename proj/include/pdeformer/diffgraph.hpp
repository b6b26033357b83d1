#pragma once

#include <cstddef>
#include <vector>

#include "pdeformer/tensor.hpp"

namespace pdeformer {

using NodeId = std::size_t;

enum class OpKind {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  Scale,
  Shift,
  AddRow,
  AddConst,
  Relu,
  Exp,
  Clamp,
  SoftmaxRows,
  Transpose,
  SliceCols,
  ConcatCols,
  LayerNorm,
  CrossEntropy,
  Sum,
  MeanRows,
  Laplacian,
  EmbedRows,
};

const char* op_name(OpKind k);

// Reverse-mode tape. Nodes are appended in forward order; inputs always
// precede the node that consumes them. Single-writer: one forward/backward
// pass owns the graph.
class DiffGraph {
 public:
  struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<NodeId> inputs;
    Tensor value;
    Tensor grad;  // allocated by backward()
    double a = 0.0, b = 0.0;        // scale factor, shift, clamp bounds, dx
    std::vector<std::size_t> idx;   // labels / lookup ids / slice extents
    Tensor constant;                // AddConst payload
  };

  NodeId leaf(Tensor v);
  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);  // elementwise
  NodeId scale(NodeId x, double c);
  NodeId shift(NodeId x, double c);
  NodeId add_row(NodeId x, NodeId row);  // broadcast a length-d vector over rows
  NodeId add_const(NodeId x, Tensor c);  // constant offset (e.g. position encoding)
  NodeId relu(NodeId x);
  NodeId exp(NodeId x);
  NodeId clamp(NodeId x, double lo, double hi);
  NodeId softmax(NodeId x, std::size_t axis);
  NodeId softmax_rows(NodeId x);
  NodeId transpose(NodeId x);
  NodeId slice_cols(NodeId x, std::size_t start, std::size_t width);
  NodeId concat_cols(const std::vector<NodeId>& parts);
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias);  // eps 1e-5, rows of x
  NodeId cross_entropy(NodeId logits, std::vector<std::size_t> labels);
  NodeId sum(NodeId x);        // -> shape {1}
  NodeId mean_rows(NodeId x);  // seq x d -> 1 x d
  NodeId laplacian(NodeId x, double dx);
  NodeId embed_rows(NodeId table, std::vector<std::size_t> ids);

  // Gradient of scalar `root` w.r.t. every node at or before it.
  void backward(NodeId root);
  void clear_grads();

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  const Tensor& grad(NodeId id) const;
  bool has_grad(NodeId id) const { return !nodes_.at(id).grad.empty(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  NodeId push(Node n);
  const Node& node(NodeId id) const { return nodes_.at(id); }
  void backprop_node(NodeId id);
  void accumulate(NodeId id, const Tensor& g);

  std::vector<Node> nodes_;
};

}  // namespace pdeformer
