#include "dst/optim.hpp"

#include "dst/errors.hpp"

namespace dst {

SgdOptimizer::SgdOptimizer(const Model& model, double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
    weight_velocity_.reserve(model.layers.size());
    bias_velocity_.reserve(model.layers.size());
    for (const auto& layer : model.layers) {
        weight_velocity_.push_back(Tensor::zeros(layer.weight.shape));
        bias_velocity_.push_back(Tensor::zeros(layer.bias.shape));
    }
}

void SgdOptimizer::step(Model& model, const BatchGrads& grads, double lr) {
    if (grads.weight_grads.size() != model.layers.size()) {
        throw ContractError("SgdOptimizer::step: gradient count does not match layer count");
    }
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        auto& layer = model.layers[li];
        const Tensor& gw = grads.weight_grads[li];
        require_same_shape(gw, layer.weight, "weight gradient");
        Tensor& vw = weight_velocity_[li];
        for (std::size_t i = 0; i < layer.weight.size(); ++i) {
            if (layer.mask[i] == 0.0) continue;
            double g = gw[i];
            if (weight_decay_ != 0.0) g += weight_decay_ * layer.weight[i];
            vw.values[i] = momentum_ * vw[i] + g;
            layer.weight.values[i] -= lr * vw[i];
        }
        const Tensor& gb = grads.bias_grads[li];
        require_same_shape(gb, layer.bias, "bias gradient");
        Tensor& vb = bias_velocity_[li];
        for (std::size_t i = 0; i < layer.bias.size(); ++i) {
            vb.values[i] = momentum_ * vb[i] + gb[i];
            layer.bias.values[i] -= lr * vb[i];
        }
    }
}

void SgdOptimizer::reset_position(std::size_t layer, std::size_t position) {
    weight_velocity_.at(layer).values.at(position) = 0.0;
}

} // namespace dst
