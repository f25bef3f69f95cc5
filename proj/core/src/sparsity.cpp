#include "dst/sparsity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dst/errors.hpp"

namespace dst {

std::size_t DensityAllocation::total_active() const {
    return std::accumulate(active_counts.begin(), active_counts.end(), std::size_t{0});
}

Distribution distribution_from_string(const std::string& s) {
    if (s == "erk") return Distribution::Erk;
    if (s == "uniform") return Distribution::Uniform;
    throw ConfigError("unknown distribution '" + s + "' (expected erk or uniform)");
}

std::string to_string(Distribution d) {
    return d == Distribution::Erk ? "erk" : "uniform";
}

double erk_scale(const LayerShape& layer) {
    const double prod = static_cast<double>(layer.weight_count());
    double sum = static_cast<double>(layer.n_in + layer.n_out);
    if (layer.is_conv) sum += static_cast<double>(layer.kernel_h + layer.kernel_w);
    return std::max(0.0, 1.0 - sum / prod);
}

std::vector<std::size_t> largest_remainder_round(const std::vector<double>& targets,
                                                 const std::vector<std::size_t>& caps,
                                                 std::size_t total) {
    const std::size_t n = targets.size();
    if (caps.size() != n) throw ContractError("largest_remainder_round: targets/caps size mismatch");
    std::size_t capacity = std::accumulate(caps.begin(), caps.end(), std::size_t{0});
    if (total > capacity) {
        throw ContractError("largest_remainder_round: total " + std::to_string(total) +
                            " exceeds capacity " + std::to_string(capacity));
    }

    std::vector<std::size_t> counts(n);
    std::vector<double> remainders(n);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double t = std::clamp(targets[i], 0.0, static_cast<double>(caps[i]));
        counts[i] = static_cast<std::size_t>(std::floor(t));
        remainders[i] = t - static_cast<double>(counts[i]);
        assigned += counts[i];
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    if (assigned < total) {
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
        std::size_t deficit = total - assigned;
        while (deficit > 0) {
            bool progressed = false;
            for (std::size_t i : order) {
                if (deficit == 0) break;
                if (counts[i] < caps[i]) {
                    ++counts[i];
                    --deficit;
                    progressed = true;
                }
            }
            if (!progressed) {
                throw ContractError("largest_remainder_round: cannot place remaining budget");
            }
        }
    } else if (assigned > total) {
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return remainders[a] < remainders[b]; });
        std::size_t surplus = assigned - total;
        while (surplus > 0) {
            bool progressed = false;
            for (std::size_t i : order) {
                if (surplus == 0) break;
                if (counts[i] > 0) {
                    --counts[i];
                    --surplus;
                    progressed = true;
                }
            }
            if (!progressed) {
                throw ContractError("largest_remainder_round: cannot shed surplus");
            }
        }
    }
    return counts;
}

namespace {

void validate_layers(const std::vector<LayerShape>& layers, double sparsity) {
    if (layers.empty()) throw ConfigError("allocation requires at least one layer");
    if (!(sparsity >= 0.0 && sparsity < 1.0)) {
        throw ConfigError("sparsity must lie in [0,1), got " + std::to_string(sparsity));
    }
    for (const LayerShape& l : layers) {
        if (l.n_in == 0 || l.n_out == 0 || l.kernel_h == 0 || l.kernel_w == 0) {
            throw ConfigError("layer dimensions must be positive");
        }
    }
}

std::size_t global_budget(const std::vector<LayerShape>& layers, double sparsity) {
    std::size_t total = 0;
    for (const LayerShape& l : layers) total += l.weight_count();
    return static_cast<std::size_t>(std::llround((1.0 - sparsity) * static_cast<double>(total)));
}

} // namespace

DensityAllocation erk_allocation(const std::vector<LayerShape>& layers, double sparsity) {
    validate_layers(layers, sparsity);
    const std::size_t n = layers.size();
    const std::size_t budget = global_budget(layers, sparsity);

    std::vector<double> scales(n);
    std::vector<double> sizes(n);
    for (std::size_t i = 0; i < n; ++i) {
        scales[i] = erk_scale(layers[i]);
        sizes[i] = static_cast<double>(layers[i].weight_count());
    }

    std::vector<double> densities(n, 0.0);
    std::vector<bool> clamped(n, false);

    // Solve eps with clamped layers pinned at density 1, until no new clamps.
    for (;;) {
        double remaining = static_cast<double>(budget);
        double denom = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (clamped[i]) {
                remaining -= sizes[i];
            } else {
                denom += scales[i] * sizes[i];
            }
        }
        if (denom <= 0.0) {
            // All remaining layers have zero ERK score; spread what is left
            // uniformly by size so the budget still lands exactly.
            double open = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                if (!clamped[i]) open += sizes[i];
            const double ratio = open > 0.0 ? std::max(0.0, remaining) / open : 0.0;
            for (std::size_t i = 0; i < n; ++i)
                if (!clamped[i]) densities[i] = std::min(1.0, ratio);
            break;
        }
        const double eps = std::max(0.0, remaining) / denom;
        bool new_clamp = false;
        for (std::size_t i = 0; i < n; ++i) {
            if (clamped[i]) continue;
            if (eps * scales[i] > 1.0) {
                clamped[i] = true;
                new_clamp = true;
            }
        }
        if (!new_clamp) {
            for (std::size_t i = 0; i < n; ++i)
                if (!clamped[i]) densities[i] = eps * scales[i];
            break;
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        if (clamped[i]) densities[i] = 1.0;

    std::vector<double> targets(n);
    std::vector<std::size_t> caps(n);
    for (std::size_t i = 0; i < n; ++i) {
        targets[i] = densities[i] * sizes[i];
        caps[i] = layers[i].weight_count();
    }

    DensityAllocation alloc;
    alloc.densities = std::move(densities);
    alloc.active_counts = largest_remainder_round(targets, caps, budget);
    alloc.global_sparsity = sparsity;
    alloc.budget = budget;
    return alloc;
}

DensityAllocation uniform_allocation(const std::vector<LayerShape>& layers, double sparsity) {
    validate_layers(layers, sparsity);
    const std::size_t n = layers.size();
    const std::size_t budget = global_budget(layers, sparsity);

    std::vector<double> targets(n);
    std::vector<std::size_t> caps(n);
    for (std::size_t i = 0; i < n; ++i) {
        caps[i] = layers[i].weight_count();
        targets[i] = (1.0 - sparsity) * static_cast<double>(caps[i]);
    }

    DensityAllocation alloc;
    alloc.densities.assign(n, 1.0 - sparsity);
    alloc.active_counts = largest_remainder_round(targets, caps, budget);
    alloc.global_sparsity = sparsity;
    alloc.budget = budget;
    return alloc;
}

Tensor random_mask(const std::vector<std::size_t>& shape, std::size_t active_count, Rng& rng) {
    const std::size_t size = shape_numel(shape);
    if (active_count > size) {
        throw ContractError("random_mask: active_count " + std::to_string(active_count) +
                            " exceeds mask size " + std::to_string(size));
    }
    Tensor mask = Tensor::zeros(shape);
    for (std::size_t i : sample_without_replacement(rng, size, active_count)) {
        mask[i] = 1.0;
    }
    return mask;
}

} // namespace dst
