#include "dst/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>

#include "dst/errors.hpp"

namespace dst {

std::size_t SparseLayerState::active_count() const {
    std::size_t n = 0;
    for (double m : mask.values) n += (m != 0.0);
    return n;
}

double SparseLayerState::density() const {
    return static_cast<double>(active_count()) / static_cast<double>(weight_count());
}

bool SparseLayerState::mask_integrity_ok() const {
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const double m = mask[i];
        if (m != 0.0 && m != 1.0) return false;
        if (m == 0.0 && weight[i] != 0.0) return false;
    }
    return true;
}

void SparseLayerState::zero_inactive() {
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] == 0.0) weight.values[i] = 0.0;
    }
}

ModelFamily family_from_string(const std::string& s) {
    if (s == "mlp") return ModelFamily::Mlp;
    if (s == "small-cnn") return ModelFamily::SmallCnn;
    if (s == "mini-vgg") return ModelFamily::MiniVgg;
    throw ConfigError("unknown model family '" + s + "' (expected mlp, small-cnn or mini-vgg)");
}

std::string to_string(ModelFamily f) {
    switch (f) {
        case ModelFamily::Mlp: return "mlp";
        case ModelFamily::SmallCnn: return "small-cnn";
        case ModelFamily::MiniVgg: return "mini-vgg";
    }
    return "?";
}

std::size_t Model::total_weights() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight_count();
    return n;
}

std::size_t Model::total_active() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.active_count();
    return n;
}

std::vector<LayerShape> Model::layer_shapes() const {
    std::vector<LayerShape> shapes;
    shapes.reserve(layers.size());
    for (const auto& l : layers) shapes.push_back(l.shape);
    return shapes;
}

namespace {

SparseLayerState make_linear(std::size_t n_in, std::size_t n_out) {
    SparseLayerState l;
    l.kind = LayerKind::Linear;
    l.shape = LayerShape{n_in, n_out, 1, 1, false};
    l.weight = Tensor::zeros({n_out, n_in});
    l.mask = Tensor::full({n_out, n_in}, 1.0);
    l.bias = Tensor::zeros({n_out});
    return l;
}

SparseLayerState make_conv(std::size_t c_in, std::size_t c_out, std::size_t k,
                           std::size_t stride, std::size_t padding) {
    SparseLayerState l;
    l.kind = LayerKind::Conv;
    l.shape = LayerShape{c_in, c_out, k, k, true};
    l.weight = Tensor::zeros({c_out, c_in, k, k});
    l.mask = Tensor::full({c_out, c_in, k, k}, 1.0);
    l.bias = Tensor::zeros({c_out});
    l.stride = stride;
    l.padding = padding;
    return l;
}

struct Assembly {
    std::vector<SparseLayerState> layers;
    std::vector<ArchStep> steps;
};

void push_layer(Assembly& a, SparseLayerState layer) {
    a.steps.push_back({ArchStep::Kind::Layer, a.layers.size(), 0, 0});
    a.layers.push_back(std::move(layer));
}

void push_pool(Assembly& a, std::size_t window, std::size_t stride, std::size_t& h,
               std::size_t& w) {
    if (window > h || window > w) {
        throw ConfigError("model spec: pooling window exceeds spatial extent (" +
                          std::to_string(h) + "x" + std::to_string(w) + ")");
    }
    a.steps.push_back({ArchStep::Kind::MaxPool, 0, window, stride});
    h = (h - window) / stride + 1;
    w = (w - window) / stride + 1;
}

Assembly assemble(const ModelSpec& spec) {
    if (spec.input_shape.size() != 3) {
        throw ConfigError("model spec: input shape must be {channels, height, width}");
    }
    if (spec.classes < 2) throw ConfigError("model spec: need at least 2 classes");
    Assembly a;
    const std::size_t c0 = spec.input_shape[0];
    std::size_t h = spec.input_shape[1];
    std::size_t w = spec.input_shape[2];

    switch (spec.family) {
        case ModelFamily::Mlp: {
            a.steps.push_back({ArchStep::Kind::Flatten, 0, 0, 0});
            std::size_t prev = c0 * h * w;
            for (std::size_t width : spec.widths) {
                if (width == 0) throw ConfigError("model spec: zero layer width");
                push_layer(a, make_linear(prev, width));
                a.steps.push_back({ArchStep::Kind::Relu, 0, 0, 0});
                prev = width;
            }
            push_layer(a, make_linear(prev, spec.classes));
            break;
        }
        case ModelFamily::SmallCnn: {
            if (spec.widths.empty()) {
                throw ConfigError("model spec: small-cnn needs at least one conv channel count");
            }
            std::size_t prev = c0;
            for (std::size_t channels : spec.widths) {
                if (channels == 0) throw ConfigError("model spec: zero channel count");
                push_layer(a, make_conv(prev, channels, 3, 1, 1));
                a.steps.push_back({ArchStep::Kind::Relu, 0, 0, 0});
                push_pool(a, 2, 2, h, w);
                prev = channels;
            }
            a.steps.push_back({ArchStep::Kind::Flatten, 0, 0, 0});
            push_layer(a, make_linear(prev * h * w, spec.classes));
            break;
        }
        case ModelFamily::MiniVgg: {
            if (spec.widths.size() < 2) {
                throw ConfigError(
                    "model spec: mini-vgg needs conv channels plus a final FC width");
            }
            const std::size_t fc_width = spec.widths.back();
            std::size_t prev = c0;
            for (std::size_t i = 0; i + 1 < spec.widths.size(); ++i) {
                const std::size_t channels = spec.widths[i];
                if (channels == 0) throw ConfigError("model spec: zero channel count");
                push_layer(a, make_conv(prev, channels, 3, 1, 1));
                a.steps.push_back({ArchStep::Kind::Relu, 0, 0, 0});
                if (i + 2 < spec.widths.size()) push_pool(a, 2, 2, h, w);
                prev = channels;
            }
            a.steps.push_back({ArchStep::Kind::Flatten, 0, 0, 0});
            push_layer(a, make_linear(prev * h * w, fc_width));
            a.steps.push_back({ArchStep::Kind::Relu, 0, 0, 0});
            push_layer(a, make_linear(fc_width, spec.classes));

            // The family exists to reproduce the oversized-FC phenomenon;
            // insist the FC really dwarfs every conv layer.
            std::size_t max_conv = 0;
            for (const auto& l : a.layers) {
                if (l.kind == LayerKind::Conv) max_conv = std::max(max_conv, l.weight_count());
            }
            const std::size_t fc_params = prev * h * w * fc_width;
            if (fc_params < 8 * max_conv) {
                throw ConfigError("model spec: mini-vgg FC layer has " +
                                  std::to_string(fc_params) + " weights, need >= 8x the largest "
                                  "conv layer (" + std::to_string(max_conv) + ")");
            }
            break;
        }
    }
    return a;
}

} // namespace

Model build_model(const ModelSpec& spec, Rng& rng) {
    Assembly a = assemble(spec);
    Model model;
    model.spec = spec;
    model.layers = std::move(a.layers);
    model.steps = std::move(a.steps);
    for (auto& layer : model.layers) {
        const std::size_t fan_in =
            layer.shape.n_in * layer.shape.kernel_h * layer.shape.kernel_w;
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (double& v : layer.weight.values) v = uniform_real(rng, -bound, bound);
    }
    return model;
}

void apply_allocation(Model& model, const DensityAllocation& alloc, Rng& rng) {
    if (alloc.active_counts.size() != model.layers.size()) {
        throw ContractError("apply_allocation: allocation has " +
                            std::to_string(alloc.active_counts.size()) + " layers, model has " +
                            std::to_string(model.layers.size()));
    }
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        auto& layer = model.layers[i];
        layer.mask = random_mask(layer.mask.shape, alloc.active_counts[i], rng);
        layer.zero_inactive();
    }
}

namespace {

ForwardPass run_forward(const Model& model, const Tensor& batch, bool with_grad) {
    if (batch.rank() != 4 || batch.shape[1] != model.spec.input_shape[0] ||
        batch.shape[2] != model.spec.input_shape[1] ||
        batch.shape[3] != model.spec.input_shape[2]) {
        throw ShapeError("forward: batch " + shape_to_string(batch.shape) +
                         " does not match model input (C,H,W) = " +
                         shape_to_string(model.spec.input_shape));
    }
    ForwardPass pass;
    ag::NodePtr x = ag::leaf(batch, false);
    pass.weights.reserve(model.layers.size());
    pass.biases.reserve(model.layers.size());
    for (const auto& layer : model.layers) {
        pass.weights.push_back(ag::leaf(layer.weight, with_grad));
        pass.biases.push_back(ag::leaf(layer.bias, with_grad));
    }
    for (const ArchStep& step : model.steps) {
        switch (step.kind) {
            case ArchStep::Kind::Layer: {
                const auto& layer = model.layers[step.layer_index];
                const auto& wn = pass.weights[step.layer_index];
                const auto& bn = pass.biases[step.layer_index];
                if (layer.kind == LayerKind::Linear) {
                    x = ag::masked_linear(x, wn, bn, layer.mask);
                } else {
                    x = ag::masked_conv2d(x, wn, bn, layer.mask, layer.stride, layer.padding);
                }
                break;
            }
            case ArchStep::Kind::Relu:
                x = ag::relu(x);
                break;
            case ArchStep::Kind::MaxPool:
                x = ag::maxpool2d(x, step.window, step.stride);
                break;
            case ArchStep::Kind::Flatten:
                x = ag::flatten(x);
                break;
        }
    }
    pass.logits = x;
    return pass;
}

} // namespace

Tensor forward(const Model& model, const Tensor& batch) {
    return run_forward(model, batch, false).logits->value;
}

ForwardPass forward_graph(const Model& model, const Tensor& batch) {
    return run_forward(model, batch, true);
}

BatchGrads compute_grads(const Model& model, const Tensor& batch,
                         const std::vector<std::size_t>& labels) {
    ForwardPass pass = forward_graph(model, batch);
    ag::NodePtr loss = ag::softmax_cross_entropy(pass.logits, labels);
    ag::backward(loss);
    BatchGrads out;
    out.loss = loss->value[0];
    out.weight_grads.reserve(model.layers.size());
    out.bias_grads.reserve(model.layers.size());
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        out.weight_grads.push_back(pass.weights[i]->grad.value());
        out.bias_grads.push_back(pass.biases[i]->grad.value());
    }
    return out;
}

std::vector<Tensor> dense_weight_grads(Model& model, const Tensor& batch,
                                       const std::vector<std::size_t>& labels) {
    if (batch.size() == 0 || batch.shape[0] == 0) {
        throw ContractError("dense_weight_grads: empty batch");
    }
    BatchGrads grads = compute_grads(model, batch, labels);
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        model.layers[i].grad_buffer = grads.weight_grads[i];
    }
    return std::move(grads.weight_grads);
}

// ---------------------------------------------------------------------------
// Checkpoint container (see docs/formats.md)
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'D', 'S', 'T', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double v) {
    const std::uint64_t u = std::bit_cast<std::uint64_t>(v);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

struct Reader {
    std::ifstream in;
    std::size_t offset = 0;
    explicit Reader(const std::string& path) : in(path, std::ios::binary) {
        if (!in) throw IoError("cannot open checkpoint file: " + path);
    }
    void read(void* dst, std::size_t n, const char* what) {
        in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n) {
            throw ParseError(std::string("checkpoint truncated while reading ") + what, offset);
        }
        offset += n;
    }
    std::uint32_t u32(const char* what) {
        unsigned char b[4];
        read(b, 4, what);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }
    double f64(const char* what) {
        unsigned char b[8];
        read(b, 8, what);
        std::uint64_t u = 0;
        for (int i = 7; i >= 0; --i) u = (u << 8) | b[i];
        return std::bit_cast<double>(u);
    }
};

} // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint file for writing: " + path);
    os.write(kMagic, 8);
    put_u32(os, kVersion);
    put_u32(os, static_cast<std::uint32_t>(model.spec.family));
    put_u32(os, static_cast<std::uint32_t>(model.spec.classes));
    put_u32(os, static_cast<std::uint32_t>(model.spec.input_shape.size()));
    for (std::size_t e : model.spec.input_shape) put_u32(os, static_cast<std::uint32_t>(e));
    put_u32(os, static_cast<std::uint32_t>(model.spec.widths.size()));
    for (std::size_t e : model.spec.widths) put_u32(os, static_cast<std::uint32_t>(e));
    put_u32(os, static_cast<std::uint32_t>(model.layers.size()));
    for (const auto& layer : model.layers) {
        put_u32(os, layer.kind == LayerKind::Linear ? 0u : 1u);
        put_u32(os, static_cast<std::uint32_t>(layer.shape.n_in));
        put_u32(os, static_cast<std::uint32_t>(layer.shape.n_out));
        put_u32(os, static_cast<std::uint32_t>(layer.shape.kernel_h));
        put_u32(os, static_cast<std::uint32_t>(layer.shape.kernel_w));
        put_u32(os, static_cast<std::uint32_t>(layer.stride));
        put_u32(os, static_cast<std::uint32_t>(layer.padding));
        for (double v : layer.weight.values) put_f64(os, v);
        for (double v : layer.bias.values) put_f64(os, v);
        const std::size_t n = layer.mask.size();
        std::vector<unsigned char> packed((n + 7) / 8, 0);
        for (std::size_t i = 0; i < n; ++i) {
            if (layer.mask[i] != 0.0) packed[i / 8] |= static_cast<unsigned char>(1u << (i % 8));
        }
        os.write(reinterpret_cast<const char*>(packed.data()),
                 static_cast<std::streamsize>(packed.size()));
    }
    if (!os) throw IoError("write failed for checkpoint file: " + path);
}

Model load_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[8];
    r.read(magic, 8, "magic");
    if (!std::equal(magic, magic + 8, kMagic)) {
        throw ParseError("bad checkpoint magic", 0);
    }
    const std::uint32_t version = r.u32("version");
    if (version != kVersion) {
        throw ParseError("unsupported checkpoint version " + std::to_string(version), 8);
    }
    ModelSpec spec;
    const std::uint32_t family = r.u32("family");
    if (family > 2) throw ParseError("bad model family tag " + std::to_string(family), r.offset);
    spec.family = static_cast<ModelFamily>(family);
    spec.classes = r.u32("classes");
    const std::uint32_t rank = r.u32("input rank");
    for (std::uint32_t i = 0; i < rank; ++i) spec.input_shape.push_back(r.u32("input shape"));
    const std::uint32_t n_widths = r.u32("width count");
    for (std::uint32_t i = 0; i < n_widths; ++i) spec.widths.push_back(r.u32("widths"));

    Assembly a = assemble(spec);
    Model model;
    model.spec = spec;
    model.layers = std::move(a.layers);
    model.steps = std::move(a.steps);

    const std::uint32_t layer_count = r.u32("layer count");
    if (layer_count != model.layers.size()) {
        throw ParseError("layer count " + std::to_string(layer_count) +
                             " does not match architecture (" +
                             std::to_string(model.layers.size()) + ")",
                         r.offset);
    }
    for (auto& layer : model.layers) {
        const std::uint32_t kind = r.u32("layer kind");
        const std::uint32_t n_in = r.u32("n_in");
        const std::uint32_t n_out = r.u32("n_out");
        const std::uint32_t kh = r.u32("kernel_h");
        const std::uint32_t kw = r.u32("kernel_w");
        layer.stride = r.u32("stride");
        layer.padding = r.u32("padding");
        const bool is_conv = layer.kind == LayerKind::Conv;
        if (kind != (is_conv ? 1u : 0u) || n_in != layer.shape.n_in ||
            n_out != layer.shape.n_out || kh != layer.shape.kernel_h ||
            kw != layer.shape.kernel_w) {
            throw ParseError("layer descriptor does not match architecture", r.offset);
        }
        for (double& v : layer.weight.values) v = r.f64("weights");
        for (double& v : layer.bias.values) v = r.f64("bias");
        const std::size_t n = layer.mask.size();
        std::vector<unsigned char> packed((n + 7) / 8);
        r.read(packed.data(), packed.size(), "mask bits");
        for (std::size_t i = 0; i < n; ++i) {
            layer.mask[i] = (packed[i / 8] >> (i % 8)) & 1u ? 1.0 : 0.0;
        }
        if (!layer.mask_integrity_ok()) {
            throw ParseError("checkpoint violates mask/weight integrity", r.offset);
        }
    }
    return model;
}

} // namespace dst
