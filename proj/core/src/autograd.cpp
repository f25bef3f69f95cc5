#include "dst/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace dst::ag {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using CMapM = Eigen::Map<const EMat>;

CMapM as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
    return CMapM(t.values.data(), static_cast<Eigen::Index>(rows),
                 static_cast<Eigen::Index>(cols));
}

MapM as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
    return MapM(t.values.data(), static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}

NodePtr make_op(OpKind kind, Tensor value, std::vector<NodePtr> inputs,
                std::function<void(Node&)> backprop) {
    auto node = std::make_shared<Node>();
    node->kind = kind;
    node->value = std::move(value);
    node->inputs = std::move(inputs);
    for (const auto& in : node->inputs) {
        if (in->requires_grad) node->requires_grad = true;
    }
    if (node->requires_grad) node->backprop = std::move(backprop);
    return node;
}

struct ConvDims {
    std::size_t n, c, h, w;    // input
    std::size_t f, kh, kw;     // filters
    std::size_t stride, pad;
    std::size_t ho, wo;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, std::size_t stride,
                   std::size_t padding) {
    if (input.rank() != 4 || weight.rank() != 4) {
        throw ShapeError("conv2d expects 4-d input and weight, got " +
                         shape_to_string(input.shape) + " and " + shape_to_string(weight.shape));
    }
    if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
    ConvDims d{};
    d.n = input.shape[0];
    d.c = input.shape[1];
    d.h = input.shape[2];
    d.w = input.shape[3];
    d.f = weight.shape[0];
    d.kh = weight.shape[2];
    d.kw = weight.shape[3];
    d.stride = stride;
    d.pad = padding;
    if (weight.shape[1] != d.c) {
        throw ShapeError("conv2d: input channels " + shape_to_string(input.shape) +
                         " do not match weight " + shape_to_string(weight.shape));
    }
    if (d.kh > d.h + 2 * d.pad || d.kw > d.w + 2 * d.pad) {
        throw ShapeError("conv2d: kernel " + shape_to_string(weight.shape) +
                         " larger than padded input " + shape_to_string(input.shape));
    }
    d.ho = (d.h + 2 * d.pad - d.kh) / d.stride + 1;
    d.wo = (d.w + 2 * d.pad - d.kw) / d.stride + 1;
    return d;
}

// Rows = N*Ho*Wo, cols = C*kh*kw; out-of-bounds taps contribute zero.
Tensor im2col(const Tensor& input, const ConvDims& d) {
    Tensor col({d.n * d.ho * d.wo, d.c * d.kh * d.kw});
    const double* in = input.values.data();
    double* out = col.values.data();
    const std::size_t cols = d.c * d.kh * d.kw;
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t oy = 0; oy < d.ho; ++oy) {
            for (std::size_t ox = 0; ox < d.wo; ++ox) {
                double* row = out + ((n * d.ho + oy) * d.wo + ox) * cols;
                for (std::size_t ch = 0; ch < d.c; ++ch) {
                    for (std::size_t ky = 0; ky < d.kh; ++ky) {
                        const std::ptrdiff_t iy =
                            static_cast<std::ptrdiff_t>(oy * d.stride + ky) -
                            static_cast<std::ptrdiff_t>(d.pad);
                        for (std::size_t kx = 0; kx < d.kw; ++kx) {
                            const std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(ox * d.stride + kx) -
                                static_cast<std::ptrdiff_t>(d.pad);
                            double v = 0.0;
                            if (iy >= 0 && iy < static_cast<std::ptrdiff_t>(d.h) && ix >= 0 &&
                                ix < static_cast<std::ptrdiff_t>(d.w)) {
                                v = in[((n * d.c + ch) * d.h + iy) * d.w + ix];
                            }
                            row[(ch * d.kh + ky) * d.kw + kx] = v;
                        }
                    }
                }
            }
        }
    }
    return col;
}

// Scatter-add of a column gradient back onto the input layout.
Tensor col2im(const Tensor& dcol, const ConvDims& d) {
    Tensor dx = Tensor::zeros({d.n, d.c, d.h, d.w});
    const double* in = dcol.values.data();
    double* out = dx.values.data();
    const std::size_t cols = d.c * d.kh * d.kw;
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t oy = 0; oy < d.ho; ++oy) {
            for (std::size_t ox = 0; ox < d.wo; ++ox) {
                const double* row = in + ((n * d.ho + oy) * d.wo + ox) * cols;
                for (std::size_t ch = 0; ch < d.c; ++ch) {
                    for (std::size_t ky = 0; ky < d.kh; ++ky) {
                        const std::ptrdiff_t iy =
                            static_cast<std::ptrdiff_t>(oy * d.stride + ky) -
                            static_cast<std::ptrdiff_t>(d.pad);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
                        for (std::size_t kx = 0; kx < d.kw; ++kx) {
                            const std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(ox * d.stride + kx) -
                                static_cast<std::ptrdiff_t>(d.pad);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
                            out[((n * d.c + ch) * d.h + iy) * d.w + ix] +=
                                row[(ch * d.kh + ky) * d.kw + kx];
                        }
                    }
                }
            }
        }
    }
    return dx;
}

// [N,F,Ho,Wo] <-> [N*Ho*Wo, F] reorderings used around the conv GEMMs.
Tensor nchw_from_rows(const Tensor& mat, const ConvDims& d) {
    Tensor y({d.n, d.f, d.ho, d.wo});
    const double* in = mat.values.data();
    double* out = y.values.data();
    for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t oy = 0; oy < d.ho; ++oy)
            for (std::size_t ox = 0; ox < d.wo; ++ox) {
                const double* row = in + ((n * d.ho + oy) * d.wo + ox) * d.f;
                for (std::size_t f = 0; f < d.f; ++f) {
                    out[((n * d.f + f) * d.ho + oy) * d.wo + ox] = row[f];
                }
            }
    return y;
}

Tensor rows_from_nchw(const Tensor& y, const ConvDims& d) {
    Tensor mat({d.n * d.ho * d.wo, d.f});
    const double* in = y.values.data();
    double* out = mat.values.data();
    for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t f = 0; f < d.f; ++f)
            for (std::size_t oy = 0; oy < d.ho; ++oy)
                for (std::size_t ox = 0; ox < d.wo; ++ox) {
                    out[((n * d.ho + oy) * d.wo + ox) * d.f + f] =
                        in[((n * d.f + f) * d.ho + oy) * d.wo + ox];
                }
    return mat;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    Tensor out(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

// Core of conv2d forward/backward, shared by the plain and masked variants.
// `weight_for_dx` is the weight actually used in the forward map; dW is
// computed against it only in the plain variant (the masked variant wants
// the dense gradient, which is the same GEMM -- the mask simply never
// enters the weight-gradient path).
NodePtr conv_node(OpKind kind, const NodePtr& input, const NodePtr& weight,
                  const NodePtr& bias, Tensor effective_weight, std::size_t stride,
                  std::size_t padding) {
    const ConvDims d = conv_dims(input->value, weight->value, stride, padding);
    Tensor col = im2col(input->value, d);
    Tensor out_mat({d.n * d.ho * d.wo, d.f});
    {
        auto colm = as_matrix(col, d.n * d.ho * d.wo, d.c * d.kh * d.kw);
        auto wm = as_matrix(effective_weight, d.f, d.c * d.kh * d.kw);
        as_matrix(out_mat, d.n * d.ho * d.wo, d.f).noalias() = colm * wm.transpose();
    }
    Tensor value = nchw_from_rows(out_mat, d);
    if (bias) {
        double* out = value.values.data();
        for (std::size_t n = 0; n < d.n; ++n)
            for (std::size_t f = 0; f < d.f; ++f) {
                const double b = bias->value[f];
                double* plane = out + (n * d.f + f) * d.ho * d.wo;
                for (std::size_t i = 0; i < d.ho * d.wo; ++i) plane[i] += b;
            }
    }

    std::vector<NodePtr> inputs = {input, weight};
    if (bias) inputs.push_back(bias);
    auto eff = std::make_shared<Tensor>(std::move(effective_weight));
    return make_op(kind, std::move(value), std::move(inputs),
                   [input, weight, bias, eff, d](Node& node) {
                       Tensor dy_mat = rows_from_nchw(*node.grad, d);
                       auto dym = as_matrix(dy_mat, d.n * d.ho * d.wo, d.f);
                       if (weight->requires_grad) {
                           Tensor col = im2col(input->value, d);
                           auto colm = as_matrix(col, d.n * d.ho * d.wo, d.c * d.kh * d.kw);
                           Tensor dw({d.f, d.c, d.kh, d.kw});
                           as_matrix(dw, d.f, d.c * d.kh * d.kw).noalias() =
                               dym.transpose() * colm;
                           weight->accumulate_grad(dw);
                       }
                       if (bias && bias->requires_grad) {
                           Tensor db({d.f});
                           for (std::size_t r = 0; r < d.n * d.ho * d.wo; ++r)
                               for (std::size_t f = 0; f < d.f; ++f)
                                   db[f] += dy_mat[r * d.f + f];
                           bias->accumulate_grad(db);
                       }
                       if (input->requires_grad) {
                           Tensor dcol({d.n * d.ho * d.wo, d.c * d.kh * d.kw});
                           auto wm = as_matrix(*eff, d.f, d.c * d.kh * d.kw);
                           as_matrix(dcol, d.n * d.ho * d.wo, d.c * d.kh * d.kw).noalias() =
                               dym * wm;
                           input->accumulate_grad(col2im(dcol, d));
                       }
                   });
}

} // namespace

void Node::accumulate_grad(const Tensor& g) {
    if (!grad) grad = Tensor::zeros(value.shape);
    require_same_shape(*grad, g, "gradient accumulation");
    for (std::size_t i = 0; i < g.size(); ++i) grad->values[i] += g[i];
}

NodePtr leaf(Tensor value, bool requires_grad) {
    auto node = std::make_shared<Node>();
    node->kind = OpKind::Leaf;
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return node;
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    const Tensor& av = a->value;
    const Tensor& bv = b->value;
    if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0]) {
        throw ShapeError("matmul: incompatible shapes " + shape_to_string(av.shape) + " and " +
                         shape_to_string(bv.shape));
    }
    const std::size_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
    Tensor value({m, n});
    as_matrix(value, m, n).noalias() = as_matrix(av, m, k) * as_matrix(bv, k, n);
    return make_op(OpKind::Matmul, std::move(value), {a, b}, [a, b, m, k, n](Node& node) {
        auto dc = as_matrix(*node.grad, m, n);
        if (a->requires_grad) {
            Tensor da({m, k});
            as_matrix(da, m, k).noalias() = dc * as_matrix(b->value, k, n).transpose();
            a->accumulate_grad(da);
        }
        if (b->requires_grad) {
            Tensor db({k, n});
            as_matrix(db, k, n).noalias() = as_matrix(a->value, m, k).transpose() * dc;
            b->accumulate_grad(db);
        }
    });
}

NodePtr conv2d(const NodePtr& input, const NodePtr& weight, std::size_t stride,
               std::size_t padding) {
    return conv_node(OpKind::Conv2d, input, weight, nullptr, weight->value, stride, padding);
}

NodePtr masked_conv2d(const NodePtr& input, const NodePtr& weight, const NodePtr& bias,
                      const Tensor& mask, std::size_t stride, std::size_t padding) {
    require_same_shape(weight->value, mask, "masked_conv2d mask");
    return conv_node(OpKind::MaskedConv2d, input, weight, bias,
                     hadamard(weight->value, mask), stride, padding);
}

NodePtr masked_linear(const NodePtr& x, const NodePtr& weight, const NodePtr& bias,
                      const Tensor& mask) {
    const Tensor& xv = x->value;
    const Tensor& wv = weight->value;
    require_same_shape(wv, mask, "masked_linear mask");
    if (xv.rank() != 2 || wv.rank() != 2 || xv.shape[1] != wv.shape[1]) {
        throw ShapeError("masked_linear: input " + shape_to_string(xv.shape) +
                         " incompatible with weight " + shape_to_string(wv.shape));
    }
    const std::size_t n = xv.shape[0], in = xv.shape[1], out = wv.shape[0];
    if (bias->value.size() != out) {
        throw ShapeError("masked_linear: bias " + shape_to_string(bias->value.shape) +
                         " does not match weight " + shape_to_string(wv.shape));
    }
    auto eff = std::make_shared<Tensor>(hadamard(wv, mask));
    Tensor value({n, out});
    as_matrix(value, n, out).noalias() =
        as_matrix(xv, n, in) * as_matrix(*eff, out, in).transpose();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < out; ++c) value[r * out + c] += bias->value[c];

    return make_op(OpKind::MaskedLinear, std::move(value), {x, weight, bias},
                   [x, weight, bias, eff, n, in, out](Node& node) {
                       auto dy = as_matrix(*node.grad, n, out);
                       if (weight->requires_grad) {
                           // Dense gradient: mask deliberately not applied.
                           Tensor dw({out, in});
                           as_matrix(dw, out, in).noalias() =
                               dy.transpose() * as_matrix(x->value, n, in);
                           weight->accumulate_grad(dw);
                       }
                       if (bias->requires_grad) {
                           Tensor db({out});
                           for (std::size_t r = 0; r < n; ++r)
                               for (std::size_t c = 0; c < out; ++c)
                                   db[c] += node.grad->values[r * out + c];
                           bias->accumulate_grad(db);
                       }
                       if (x->requires_grad) {
                           Tensor dx({n, in});
                           as_matrix(dx, n, in).noalias() = dy * as_matrix(*eff, out, in);
                           x->accumulate_grad(dx);
                       }
                   });
}

NodePtr relu(const NodePtr& x) {
    Tensor value(x->value.shape);
    for (std::size_t i = 0; i < value.size(); ++i) value[i] = std::max(0.0, x->value[i]);
    return make_op(OpKind::Relu, std::move(value), {x}, [x](Node& node) {
        Tensor dx(x->value.shape);
        for (std::size_t i = 0; i < dx.size(); ++i)
            dx[i] = x->value[i] > 0.0 ? node.grad->values[i] : 0.0;
        x->accumulate_grad(dx);
    });
}

NodePtr maxpool2d(const NodePtr& x, std::size_t window, std::size_t stride) {
    const Tensor& xv = x->value;
    if (xv.rank() != 4) {
        throw ShapeError("maxpool2d expects 4-d input, got " + shape_to_string(xv.shape));
    }
    if (stride < 1 || window < 1) throw ContractError("maxpool2d: window and stride must be >= 1");
    const std::size_t n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
    if (window > h || window > w) {
        throw ShapeError("maxpool2d: window " + std::to_string(window) +
                         " exceeds spatial extents of " + shape_to_string(xv.shape));
    }
    const std::size_t ho = (h - window) / stride + 1;
    const std::size_t wo = (w - window) / stride + 1;
    Tensor value({n, c, ho, wo});
    auto argmax = std::make_shared<std::vector<std::size_t>>(value.size());
    for (std::size_t i = 0; i < n * c; ++i) {
        const double* plane = xv.values.data() + i * h * w;
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                std::size_t best = (oy * stride) * w + (ox * stride);
                double best_v = plane[best];
                for (std::size_t ky = 0; ky < window; ++ky)
                    for (std::size_t kx = 0; kx < window; ++kx) {
                        const std::size_t idx = (oy * stride + ky) * w + (ox * stride + kx);
                        if (plane[idx] > best_v) {
                            best_v = plane[idx];
                            best = idx;
                        }
                    }
                const std::size_t out_idx = (i * ho + oy) * wo + ox;
                value[out_idx] = best_v;
                (*argmax)[out_idx] = i * h * w + best;
            }
    }
    return make_op(OpKind::MaxPool2d, std::move(value), {x}, [x, argmax](Node& node) {
        Tensor dx = Tensor::zeros(x->value.shape);
        for (std::size_t i = 0; i < node.grad->size(); ++i)
            dx[(*argmax)[i]] += node.grad->values[i];
        x->accumulate_grad(dx);
    });
}

NodePtr flatten(const NodePtr& x) {
    const Tensor& xv = x->value;
    if (xv.rank() < 2) {
        throw ShapeError("flatten expects rank >= 2, got " + shape_to_string(xv.shape));
    }
    const std::size_t n = xv.shape[0];
    const std::size_t rest = xv.size() / n;
    Tensor value = xv.reshaped({n, rest});
    return make_op(OpKind::Flatten, std::move(value), {x}, [x](Node& node) {
        x->accumulate_grad(node.grad->reshaped(x->value.shape));
    });
}

Tensor softmax_rows(const Tensor& logits) {
    const std::size_t n = logits.shape[0], k = logits.shape[1];
    Tensor p(logits.shape);
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = logits.values.data() + r * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < k; ++j) p.values[r * k + j] = std::exp(row[j] - mx) / denom;
    }
    return p;
}

NodePtr softmax_cross_entropy(const NodePtr& logits, const std::vector<std::size_t>& labels) {
    const Tensor& lv = logits->value;
    if (lv.rank() != 2) {
        throw ShapeError("softmax_cross_entropy expects [N,K] logits, got " +
                         shape_to_string(lv.shape));
    }
    const std::size_t n = lv.shape[0], k = lv.shape[1];
    if (labels.size() != n) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(n));
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= k) {
            throw std::out_of_range("softmax_cross_entropy: label " +
                                    std::to_string(labels[i]) + " out of range for " +
                                    std::to_string(k) + " classes");
        }
    }
    auto probs = std::make_shared<Tensor>(softmax_rows(lv));
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        loss -= std::log(probs->values[i * k + labels[i]]);
    }
    loss /= static_cast<double>(n);
    auto labels_copy = std::make_shared<std::vector<std::size_t>>(labels);
    return make_op(OpKind::SoftmaxCrossEntropy, Tensor::scalar(loss), {logits},
                   [logits, probs, labels_copy, n, k](Node& node) {
                       const double g = node.grad->values[0] / static_cast<double>(n);
                       Tensor dl(logits->value.shape);
                       for (std::size_t i = 0; i < n; ++i) {
                           for (std::size_t j = 0; j < k; ++j)
                               dl[i * k + j] = g * probs->values[i * k + j];
                           dl[i * k + (*labels_copy)[i]] -= g;
                       }
                       logits->accumulate_grad(dl);
                   });
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
    require_same_shape(a->value, b->value, "add");
    Tensor value(a->value.shape);
    for (std::size_t i = 0; i < value.size(); ++i) value[i] = a->value[i] + b->value[i];
    return make_op(OpKind::Add, std::move(value), {a, b}, [a, b](Node& node) {
        if (a->requires_grad) a->accumulate_grad(*node.grad);
        if (b->requires_grad) b->accumulate_grad(*node.grad);
    });
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
    require_same_shape(a->value, b->value, "mul");
    Tensor value = hadamard(a->value, b->value);
    return make_op(OpKind::Mul, std::move(value), {a, b}, [a, b](Node& node) {
        if (a->requires_grad) a->accumulate_grad(hadamard(*node.grad, b->value));
        if (b->requires_grad) b->accumulate_grad(hadamard(*node.grad, a->value));
    });
}

NodePtr sum(const NodePtr& x) {
    double total = 0.0;
    for (double v : x->value.values) total += v;
    return make_op(OpKind::Sum, Tensor::scalar(total), {x}, [x](Node& node) {
        x->accumulate_grad(Tensor::full(x->value.shape, node.grad->values[0]));
    });
}

void backward(const NodePtr& root) {
    if (root->value.size() != 1) {
        throw ContractError("backward requires a scalar root, got " +
                            shape_to_string(root->value.shape));
    }
    if (root->backward_done) {
        throw StateError("backward already ran on this graph; rebuild it before calling again");
    }

    // Iterative DFS postorder; reverse order is a valid reverse-topological
    // visit for gradient accumulation.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next].get();
            ++next;
            if (visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad = Tensor::full(root->value.shape, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->grad && node->backprop) node->backprop(*node);
    }
    root->backward_done = true;
}

} // namespace dst::ag
