#ifndef DST_SPARSITY_HPP
#define DST_SPARSITY_HPP

#include <cstddef>
#include <vector>

#include "dst/rng.hpp"
#include "dst/tensor.hpp"

namespace dst {

// Shape of one weighted layer. Kernel extents are 1 for linear layers.
struct LayerShape {
    std::size_t n_in = 0;
    std::size_t n_out = 0;
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    bool is_conv = false;

    std::size_t weight_count() const { return n_in * n_out * kernel_h * kernel_w; }
};

// Per-layer densities and active counts under a global sparsity budget.
// Invariant: sum(active_counts) == budget == round((1-s) * total weights).
struct DensityAllocation {
    std::vector<double> densities;
    std::vector<std::size_t> active_counts;
    double global_sparsity = 0.0;
    std::size_t budget = 0;

    std::size_t total_active() const;
};

enum class Distribution { Erk, Uniform };

Distribution distribution_from_string(const std::string& s);
std::string to_string(Distribution d);

// Erdos-Renyi-Kernel scale: 1 - (n_in + n_out + kh + kw) / (n_in*n_out*kh*kw);
// kernel terms are dropped for linear layers. Negative scales (degenerate
// tiny layers) are floored at zero.
double erk_scale(const LayerShape& layer);

// Densities proportional to the ERK scale, with the proportionality factor
// solved so the total active count meets the budget exactly. Layers whose
// density reaches 1 are clamped and the factor is re-solved over the rest.
DensityAllocation erk_allocation(const std::vector<LayerShape>& layers, double sparsity);

// The same density 1-s in every layer, including the first and last.
DensityAllocation uniform_allocation(const std::vector<LayerShape>& layers, double sparsity);

// Exactly `active_count` ones placed uniformly at random without replacement.
Tensor random_mask(const std::vector<std::size_t>& shape, std::size_t active_count, Rng& rng);

// Integer apportionment: counts close to `targets` (real-valued, each capped
// by `caps`) summing exactly to `total`, largest remainder first.
std::vector<std::size_t> largest_remainder_round(const std::vector<double>& targets,
                                                 const std::vector<std::size_t>& caps,
                                                 std::size_t total);

} // namespace dst

#endif // DST_SPARSITY_HPP
