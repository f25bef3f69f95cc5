#ifndef DST_RNG_HPP
#define DST_RNG_HPP

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "dst/errors.hpp"

namespace dst {

// Every run owns exactly one generator; all randomness (init, masks,
// shuffles, rewiring) is drawn from it in a fixed order so that a seed
// pins the whole run.
using Rng = std::mt19937_64;

inline double uniform_real(Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    return dist(rng);
}

inline double normal_real(Rng& rng, double mean, double stddev) {
    std::normal_distribution<double> dist(mean, stddev);
    return dist(rng);
}

// k distinct indices drawn uniformly from [0, n), via partial Fisher-Yates.
inline std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n,
                                                           std::size_t k) {
    if (k > n) {
        throw ContractError("sample_without_replacement: k=" + std::to_string(k) +
                            " exceeds population n=" + std::to_string(n));
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> dist(i, n - 1);
        std::swap(idx[i], idx[dist(rng)]);
    }
    idx.resize(k);
    return idx;
}

// Same, but drawing from an explicit candidate pool.
inline std::vector<std::size_t> sample_from_pool(Rng& rng, std::vector<std::size_t> pool,
                                                 std::size_t k) {
    if (k > pool.size()) {
        throw ContractError("sample_from_pool: k=" + std::to_string(k) +
                            " exceeds pool size " + std::to_string(pool.size()));
    }
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> dist(i, pool.size() - 1);
        std::swap(pool[i], pool[dist(rng)]);
    }
    pool.resize(k);
    return pool;
}

inline void shuffle_indices(Rng& rng, std::vector<std::size_t>& idx) {
    std::shuffle(idx.begin(), idx.end(), rng);
}

} // namespace dst

#endif // DST_RNG_HPP
