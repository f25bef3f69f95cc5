#ifndef DST_MODEL_HPP
#define DST_MODEL_HPP

#include <optional>
#include <string>
#include <vector>

#include "dst/autograd.hpp"
#include "dst/rng.hpp"
#include "dst/sparsity.hpp"
#include "dst/tensor.hpp"

namespace dst {

enum class LayerKind { Linear, Conv };

// One weighted layer: dense weight array, binary mask, dense bias, and an
// optional dense gradient buffer filled on rewiring batches.
//
// Weight layout: linear [n_out, n_in]; conv [n_out, n_in, kh, kw]. Row r of
// the (flattened) weight matrix always belongs to output unit r.
struct SparseLayerState {
    LayerKind kind = LayerKind::Linear;
    LayerShape shape;
    Tensor weight;
    Tensor mask;
    Tensor bias;
    std::optional<Tensor> grad_buffer;
    std::size_t stride = 1;
    std::size_t padding = 0;

    std::size_t weight_count() const { return weight.size(); }
    std::size_t active_count() const;
    double density() const;

    // Weight must be exactly 0 wherever mask is 0.
    bool mask_integrity_ok() const;
    void zero_inactive();
};

enum class ModelFamily { Mlp, SmallCnn, MiniVgg };

ModelFamily family_from_string(const std::string& s);
std::string to_string(ModelFamily f);

// `widths` holds hidden-layer widths for mlp, conv channels for small-cnn,
// and conv channels plus a final oversized-FC width for mini-vgg.
struct ModelSpec {
    ModelFamily family = ModelFamily::Mlp;
    std::vector<std::size_t> widths;
    std::vector<std::size_t> input_shape; // {C, H, W}
    std::size_t classes = 10;
};

// Non-weighted forward steps interleaved with the weighted layers.
struct ArchStep {
    enum class Kind { Layer, Relu, MaxPool, Flatten };
    Kind kind = Kind::Layer;
    std::size_t layer_index = 0; // valid when kind == Layer
    std::size_t window = 0;      // maxpool
    std::size_t stride = 0;      // maxpool
};

struct Model {
    ModelSpec spec;
    std::vector<SparseLayerState> layers;
    std::vector<ArchStep> steps;

    std::size_t total_weights() const;
    std::size_t total_active() const;
    std::vector<LayerShape> layer_shapes() const;
};

// Kaiming-uniform weights (bound sqrt(6/fan_in)), zero biases, all-ones
// masks. Throws ConfigError on an inconsistent spec.
Model build_model(const ModelSpec& spec, Rng& rng);

// Sparsify: draw a uniform random mask per layer with the allocation's
// active counts and zero the deactivated weights.
void apply_allocation(Model& model, const DensityAllocation& alloc, Rng& rng);

// Logits for a [N,C,H,W] batch; every layer computes with weight ⊙ mask.
Tensor forward(const Model& model, const Tensor& batch);

// Differentiable forward; exposes the parameter leaves for the optimizer.
struct ForwardPass {
    ag::NodePtr logits;
    std::vector<ag::NodePtr> weights;
    std::vector<ag::NodePtr> biases;
};
ForwardPass forward_graph(const Model& model, const Tensor& batch);

// Loss + per-layer gradients of one batch. Weight gradients are dense: they
// cover every position, active and inactive alike.
struct BatchGrads {
    double loss = 0.0;
    std::vector<Tensor> weight_grads;
    std::vector<Tensor> bias_grads;
};
BatchGrads compute_grads(const Model& model, const Tensor& batch,
                         const std::vector<std::size_t>& labels);

// compute_grads + store each dense weight gradient into the layer's
// grad_buffer (the rewiring strategies read it from there).
std::vector<Tensor> dense_weight_grads(Model& model, const Tensor& batch,
                                       const std::vector<std::size_t>& labels);

// Flat binary container, little-endian, versioned header, bit-packed masks.
// Layout documented in docs/formats.md.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

} // namespace dst

#endif // DST_MODEL_HPP
