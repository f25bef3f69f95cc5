#ifndef DST_AUTOGRAD_HPP
#define DST_AUTOGRAD_HPP

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "dst/tensor.hpp"

namespace dst::ag {

enum class OpKind {
    Leaf,
    Matmul,
    Conv2d,
    MaskedLinear,
    MaskedConv2d,
    Relu,
    MaxPool2d,
    Flatten,
    SoftmaxCrossEntropy,
    Add,
    Mul,
    Sum,
};

class Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the (acyclic) computation graph. `backprop` distributes the
// node's accumulated gradient to its inputs; it is set by the op that built
// the node.
class Node {
  public:
    OpKind kind = OpKind::Leaf;
    Tensor value;
    std::optional<Tensor> grad;
    bool requires_grad = false;
    std::vector<NodePtr> inputs;
    std::function<void(Node&)> backprop;
    bool backward_done = false; // set on the root once backward() ran

    void accumulate_grad(const Tensor& g);
};

NodePtr leaf(Tensor value, bool requires_grad = false);

// C[m×n] = A[m×k]·B[k×n]; backward dA = dC·Bᵀ, dB = Aᵀ·dC.
NodePtr matmul(const NodePtr& a, const NodePtr& b);

// Cross-correlation: input [N,C,H,W] with weight [F,C,kh,kw].
NodePtr conv2d(const NodePtr& input, const NodePtr& weight, std::size_t stride,
               std::size_t padding);

// y = x·(w⊙mask)ᵀ + bias with x [N,in], w [out,in], bias [out]. The weight
// gradient is computed densely (as if the mask were absent on the weight
// path); the activation gradient uses the effective masked weight.
NodePtr masked_linear(const NodePtr& x, const NodePtr& weight, const NodePtr& bias,
                      const Tensor& mask);

// Same convention for convolutions: forward uses w⊙mask, dW is dense.
NodePtr masked_conv2d(const NodePtr& input, const NodePtr& weight, const NodePtr& bias,
                      const Tensor& mask, std::size_t stride, std::size_t padding);

NodePtr relu(const NodePtr& x);
NodePtr maxpool2d(const NodePtr& x, std::size_t window, std::size_t stride);
NodePtr flatten(const NodePtr& x); // [N,...] -> [N, prod(rest)]

// Mean over the batch of -log softmax(logits)[label]; max-stabilized.
NodePtr softmax_cross_entropy(const NodePtr& logits, const std::vector<std::size_t>& labels);

NodePtr add(const NodePtr& a, const NodePtr& b); // elementwise, same shape
NodePtr mul(const NodePtr& a, const NodePtr& b); // elementwise, same shape
NodePtr sum(const NodePtr& x);                   // reduce to scalar

// Reverse topological accumulation from a scalar root. A second call on the
// same root is rejected (no silent double-accumulation).
void backward(const NodePtr& root);

// Row-stabilized softmax of a [N,K] matrix (shared with eval paths).
Tensor softmax_rows(const Tensor& logits);

} // namespace dst::ag

#endif // DST_AUTOGRAD_HPP
