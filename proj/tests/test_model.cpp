#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "dst/errors.hpp"
#include "dst/model.hpp"
#include "support/oracles.hpp"

using namespace dst;
using dst::testing::finite_difference_grad;
using dst::testing::max_rel_error;

namespace {

ModelSpec mnist_mlp() { return {ModelFamily::Mlp, {256, 128}, {1, 28, 28}, 10}; }

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("mlp layer parameter counts") {
    Rng rng(31);
    const Model model = build_model(mnist_mlp(), rng);
    REQUIRE(model.layers.size() == 3);
    CHECK(model.layers[0].weight_count() == 200704);
    CHECK(model.layers[1].weight_count() == 32768);
    CHECK(model.layers[2].weight_count() == 1280);
    CHECK(model.total_weights() == 200704 + 32768 + 1280);
}

TEST_CASE("kaiming uniform bound") {
    Rng rng(32);
    const Model model = build_model(mnist_mlp(), rng);
    const double bound = std::sqrt(6.0 / 784.0);
    CHECK(bound == doctest::Approx(0.0875).epsilon(1e-3));
    double max_abs = 0.0;
    for (double v : model.layers[0].weight.values) {
        CHECK(std::abs(v) <= bound);
        max_abs = std::max(max_abs, std::abs(v));
    }
    // The draw actually spans the interval.
    CHECK(max_abs > 0.95 * bound);
}

TEST_CASE("fresh models are fully dense") {
    Rng rng(33);
    const Model model = build_model(mnist_mlp(), rng);
    for (const auto& layer : model.layers) {
        CHECK(layer.density() == 1.0);
        CHECK(layer.mask_integrity_ok());
    }
}

TEST_CASE("inconsistent specs are construction errors") {
    Rng rng(34);
    CHECK_THROWS_AS(build_model({ModelFamily::Mlp, {0}, {1, 8, 8}, 10}, rng), ConfigError);
    CHECK_THROWS_AS(build_model({ModelFamily::Mlp, {16}, {1, 8}, 10}, rng), ConfigError);
    CHECK_THROWS_AS(build_model({ModelFamily::SmallCnn, {}, {1, 8, 8}, 10}, rng), ConfigError);
    // Too little spatial input for the mini-vgg FC to reach 8x the largest conv.
    CHECK_THROWS_AS(build_model({ModelFamily::MiniVgg, {16, 32, 64, 64, 512}, {1, 8, 8}, 10}, rng),
                    ConfigError);
}

TEST_CASE("mini-vgg carries a deliberately oversized FC layer") {
    Rng rng(35);
    const Model model =
        build_model({ModelFamily::MiniVgg, {16, 32, 64, 64, 512}, {1, 28, 28}, 10}, rng);
    std::size_t max_conv = 0;
    std::size_t fc = 0;
    for (const auto& layer : model.layers) {
        if (layer.kind == LayerKind::Conv) {
            max_conv = std::max(max_conv, layer.weight_count());
        } else {
            fc = std::max(fc, layer.weight_count());
        }
    }
    CHECK(fc >= 8 * max_conv);
}

TEST_CASE("zero batch through a zero-bias model gives zero logits") {
    Rng rng(36);
    const Model model = build_model({ModelFamily::Mlp, {16}, {1, 4, 4}, 3}, rng);
    const Tensor logits = forward(model, Tensor::zeros({2, 1, 4, 4}));
    for (double v : logits.values) CHECK(v == 0.0);
}

TEST_CASE("an all-zero mask makes logits independent of that layer's weights") {
    Rng rng(37);
    Model model = build_model({ModelFamily::Mlp, {8, 8}, {1, 3, 3}, 3}, rng);
    model.layers[1].mask = Tensor::zeros(model.layers[1].mask.shape);
    const Tensor batch = dst::testing::random_tensor({2, 1, 3, 3}, rng);
    const Tensor before = forward(model, batch);
    for (double& v : model.layers[1].weight.values) v = uniform_real(rng, -5.0, 5.0);
    const Tensor after = forward(model, batch);
    CHECK(before.values == after.values);
}

TEST_CASE("two-layer toy forward matches hand computation") {
    Rng rng(38);
    Model model = build_model({ModelFamily::Mlp, {2}, {1, 1, 2}, 2}, rng);
    // x -> relu(x W0^T + b0) -> W1^T + b1 with explicit numbers.
    model.layers[0].weight = Tensor({2, 2}, {1.0, -1.0, 0.5, 2.0});
    model.layers[0].bias = Tensor({2}, {0.0, -1.0});
    model.layers[1].weight = Tensor({2, 2}, {1.0, 1.0, -1.0, 0.5});
    model.layers[1].bias = Tensor({2}, {0.25, 0.0});

    const Tensor x({1, 1, 1, 2}, {2.0, 1.0});
    // h = relu([2*1 + 1*(-1), 2*0.5 + 1*2 - 1]) = [1, 2]
    // logits = [1*1 + 2*1 + 0.25, 1*(-1) + 2*0.5] = [3.25, 0]
    const Tensor logits = forward(model, x);
    CHECK(logits.values[0] == doctest::Approx(3.25));
    CHECK(logits.values[1] == doctest::Approx(0.0));
}

TEST_CASE("forward rejects mismatched batches") {
    Rng rng(39);
    const Model model = build_model({ModelFamily::Mlp, {4}, {1, 2, 2}, 2}, rng);
    CHECK_THROWS_AS(forward(model, Tensor::zeros({1, 1, 3, 3})), ShapeError);
}

TEST_CASE("dense gradients with all-ones masks equal the true gradients") {
    Rng rng(40);
    Model model = build_model({ModelFamily::Mlp, {6}, {1, 2, 2}, 3}, rng);
    const Tensor batch = dst::testing::random_tensor({4, 1, 2, 2}, rng);
    const std::vector<std::size_t> labels = {0, 1, 2, 1};
    const auto grads = dense_weight_grads(model, batch, labels);

    // Wiggle a couple of weights; loss slope must match the dense gradient.
    auto loss_at = [&](std::size_t li, std::size_t pos, double value) {
        Model probe = model;
        probe.layers[li].weight.values[pos] = value;
        const auto g = compute_grads(probe, batch, labels);
        return g.loss;
    };
    for (std::size_t li : {std::size_t{0}, std::size_t{1}}) {
        for (std::size_t pos : {std::size_t{0}, std::size_t{5}}) {
            const double w0 = model.layers[li].weight[pos];
            const double eps = 1e-5;
            const double fd = (loss_at(li, pos, w0 + eps) - loss_at(li, pos, w0 - eps)) / (2 * eps);
            CHECK(grads[li][pos] == doctest::Approx(fd).epsilon(1e-4));
        }
    }
}

TEST_CASE("single linear layer dense gradient equals the outer-product oracle") {
    Rng rng(41);
    Model model = build_model({ModelFamily::Mlp, {}, {1, 1, 5}, 3}, rng);
    REQUIRE(model.layers.size() == 1);
    auto& layer = model.layers[0];
    // Sparsify heavily so masked positions exist.
    layer.mask = Tensor({3, 5}, {1, 0, 0, 1, 0, 0, 1, 0, 0, 1, 1, 0, 1, 0, 0});
    layer.zero_inactive();

    const Tensor x = dst::testing::random_tensor({1, 1, 1, 5}, rng);
    const std::vector<std::size_t> labels = {2};
    dense_weight_grads(model, x, labels);

    const Tensor logits = forward(model, x);
    const Tensor probs = ag::softmax_rows(logits);
    std::size_t nonzero_at_masked = 0;
    for (std::size_t o = 0; o < 3; ++o) {
        for (std::size_t i = 0; i < 5; ++i) {
            const double delta = probs.values[o] - (o == labels[0] ? 1.0 : 0.0);
            const double expect = delta * x.values[i];
            CHECK(layer.grad_buffer->values[o * 5 + i] == doctest::Approx(expect));
            if (layer.mask.values[o * 5 + i] == 0.0 && expect != 0.0) ++nonzero_at_masked;
        }
    }
    // The dense gradient is generally nonzero at inactive positions.
    CHECK(nonzero_at_masked > 0);
}

TEST_CASE("dense_weight_grads rejects empty batches and fills grad buffers") {
    Rng rng(42);
    Model model = build_model({ModelFamily::Mlp, {4}, {1, 2, 2}, 2}, rng);
    const Tensor batch = dst::testing::random_tensor({2, 1, 2, 2}, rng);
    dense_weight_grads(model, batch, {0, 1});
    for (const auto& layer : model.layers) {
        REQUIRE(layer.grad_buffer.has_value());
        CHECK(layer.grad_buffer->same_shape(layer.weight));
    }
}

TEST_CASE("checkpoint round trip preserves the model bit for bit") {
    Rng rng(43);
    Model model = build_model({ModelFamily::SmallCnn, {8, 16}, {1, 12, 12}, 5}, rng);
    model.layers[0].mask = random_mask(model.layers[0].mask.shape, 30, rng);
    model.layers[0].zero_inactive();

    const std::string path = temp_path("dst_ckpt_roundtrip.bin");
    save_checkpoint(model, path);
    const Model loaded = load_checkpoint(path);

    CHECK(loaded.spec.family == model.spec.family);
    CHECK(loaded.spec.widths == model.spec.widths);
    CHECK(loaded.spec.input_shape == model.spec.input_shape);
    CHECK(loaded.spec.classes == model.spec.classes);
    REQUIRE(loaded.layers.size() == model.layers.size());
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        CHECK(loaded.layers[li].weight.values == model.layers[li].weight.values);
        CHECK(loaded.layers[li].mask.values == model.layers[li].mask.values);
        CHECK(loaded.layers[li].bias.values == model.layers[li].bias.values);
    }
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint loader rejects corrupt files") {
    Rng rng(44);
    const Model model = build_model({ModelFamily::Mlp, {4}, {1, 2, 2}, 2}, rng);
    const std::string path = temp_path("dst_ckpt_corrupt.bin");
    save_checkpoint(model, path);

    SUBCASE("bad magic") {
        auto* f = std::fopen(path.c_str(), "r+b");
        std::fputc('X', f);
        std::fclose(f);
        CHECK_THROWS_AS(load_checkpoint(path), ParseError);
    }
    SUBCASE("truncation") {
        std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
        CHECK_THROWS_AS(load_checkpoint(path), ParseError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_checkpoint(temp_path("no_such_ckpt.bin")), IoError);
    }
    std::filesystem::remove(path);
}
