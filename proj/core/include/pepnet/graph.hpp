#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pepnet/tensor.hpp"

namespace pepnet {

using NodeId = int32_t;

enum class Op : uint8_t {
  kConstant,
  kInput,
  kParam,
  kMatmul,
  kAdd,
  kAddRow,
  kRelu,
  kSigmoid,
  kSoftmaxRows,
  kMul,
  kConcat,
  kSplit,
  kStopGradient,
  kRepeatCols,
  kScale,
  kSum,
  kBceLoss,
  kEmbeddingRows,
};

const char* op_name(Op op);

// One tape entry: the produced value, its gradient accumulator, and the
// record of the producing operation with its input node references.
struct Node {
  Tensor value;
  Tensor grad;           // allocated lazily during backward
  Op op = Op::kConstant;
  std::vector<NodeId> inputs;
  bool requires_grad = false;
  bool grad_live = false;

  // op-specific payload
  std::vector<int64_t> widths;    // concat part widths / split widths / repeat widths
  std::vector<int32_t> indices;   // embedding row gather indices
  int64_t offset = 0;             // split: column offset of this slice
  double scalar = 0.0;            // scale factor
  Tensor labels;                  // bce targets
  Parameter* bound = nullptr;     // param leaf binding
};

// Reverse-mode tape. Values are computed eagerly at construction; backward()
// walks the tape in reverse construction order, which is a valid reverse
// topological order because inputs always precede their consumers.
// Construction order fully determines values and gradients bitwise.
class Graph {
 public:
  NodeId constant(Tensor v);
  NodeId input(Tensor v);                 // free leaf, requires grad
  NodeId param(Parameter& p);             // bound leaf; one node per Parameter per graph

  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);         // same shape
  NodeId add_row(NodeId m, NodeId row);   // [RxC] + [C], row broadcast
  NodeId relu(NodeId x);
  NodeId sigmoid(NodeId x);               // output strictly inside (0,1)
  NodeId softmax_rows(NodeId x);
  NodeId mul(NodeId a, NodeId b);         // elementwise (Hadamard)
  NodeId concat(std::span<const NodeId> parts);   // along last axis
  std::vector<NodeId> split(NodeId x, std::span<const int64_t> widths);
  NodeId stop_gradient(NodeId x);         // value passes, gradient edge is exactly zero
  NodeId repeat_cols(NodeId x, std::span<const int64_t> widths);  // col f -> widths[f] copies
  NodeId scale(NodeId x, double c);
  NodeId sum(NodeId x);                   // -> scalar [1]
  NodeId bce_loss(NodeId pred, const Tensor& labels);  // mean reduction
  NodeId embedding_rows(NodeId table, std::span<const int32_t> rows);  // gather [B x dim]

  // Accumulates d(loss)/d(node) into every reachable node's grad and into
  // each bound Parameter's grad. loss must be scalar.
  void backward(NodeId loss);

  const Tensor& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }
  const Tensor& grad(NodeId id) const;
  const Node& node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }
  size_t num_nodes() const { return nodes_.size(); }

 private:
  NodeId push(Node n);
  Tensor& grad_buf(NodeId id);

  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, NodeId> param_nodes_;
  static const Tensor kEmptyGrad;
};

}  // namespace pepnet
