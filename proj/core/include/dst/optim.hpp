#ifndef DST_OPTIM_HPP
#define DST_OPTIM_HPP

#include <vector>

#include "dst/model.hpp"
#include "dst/tensor.hpp"

namespace dst {

// SGD with classical momentum. Weight updates are masked: inactive weight
// positions are never touched and stay exactly 0. Biases update densely.
// Weight decay, when enabled, applies to active weights only.
class SgdOptimizer {
  public:
    SgdOptimizer(const Model& model, double momentum, double weight_decay = 0.0);

    void step(Model& model, const BatchGrads& grads, double lr);

    // Clears the momentum of one weight position; rewiring calls this for
    // every dropped and inserted weight.
    void reset_position(std::size_t layer, std::size_t position);

    double momentum() const { return momentum_; }

  private:
    double momentum_;
    double weight_decay_;
    std::vector<Tensor> weight_velocity_;
    std::vector<Tensor> bias_velocity_;
};

} // namespace dst

#endif // DST_OPTIM_HPP
