#ifndef DST_REWIRE_HPP
#define DST_REWIRE_HPP

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "dst/model.hpp"
#include "dst/rng.hpp"

namespace dst {

// Value given to every newly inserted weight: small but non-zero, so the
// next magnitude pruning pass can see it.
inline constexpr double kInsertValue = 1e-10;

enum class Strategy { Set, Rigl, Dsr, Ggr };

Strategy strategy_from_string(const std::string& s);
std::string to_string(Strategy s);

// Cosine decay of the drop fraction: f0 at epoch 1, 0 at end_epoch.
struct RewireSchedule {
    double f0 = 0.10;
    std::size_t end_epoch = 100;
    bool at_epoch_start = true;
};

double drop_fraction(std::size_t epoch, const RewireSchedule& sched);

// Per-layer drop and insert counts of one rewiring step.
// Invariant: sum(dropped) == sum(inserted).
struct RewirePlan {
    std::vector<std::size_t> dropped;
    std::vector<std::size_t> inserted;
    Strategy strategy = Strategy::Set;
    std::size_t shortfall = 0; // insertions that had to fall back to random

    std::size_t total_dropped() const;
    std::size_t total_inserted() const;
};

// Adaptive magnitude threshold used by DSR.
struct DsrState {
    double threshold = 1e-3;
    double tolerance = 0.1;
};

// Deactivate the `count` active positions with the smallest |weight|;
// magnitude ties are broken uniformly at random. Returns dropped positions.
std::vector<std::size_t> local_magnitude_drop(SparseLayerState& layer, std::size_t count,
                                              Rng& rng);

// Streaming selection of the k globally largest |gradient| candidates.
// Visits layers in order holding only the running k-buffer plus one layer's
// candidates; the selection equals a full global sort. Ties are broken by
// (layer index, position index) ascending.
struct LayerCandidates {
    const Tensor* grads = nullptr;
    const std::vector<std::size_t>* eligible = nullptr;
};
struct TopkSelection {
    std::vector<std::size_t> counts;
    std::vector<std::vector<std::size_t>> positions;
};
TopkSelection streaming_global_topk(const std::vector<LayerCandidates>& layers, std::size_t k);

// Growth: all insertions set mask to 1 and the weight to kInsertValue.
// `exclude` holds positions dropped in the current step; they are not
// eligible for regrowth.
std::vector<std::size_t> grow_set(SparseLayerState& layer, std::size_t n, Rng& rng,
                                  const std::vector<std::size_t>& exclude = {});
std::vector<std::size_t> grow_rigl(SparseLayerState& layer, std::size_t n,
                                   const std::vector<std::size_t>& exclude = {});
std::vector<std::size_t> grow_ggr(SparseLayerState& layer, std::size_t n, Rng& rng,
                                  const std::vector<std::size_t>& exclude = {});

// DSR removal: drop every active weight with |w| below the shared threshold,
// then adapt the threshold toward the target count.
std::vector<std::vector<std::size_t>> dsr_drop(Model& model, DsrState& state,
                                               std::size_t target_count);

// DSR growth allocation: proportional to post-drop active counts, capped at
// each layer's free capacity with overflow re-spread among uncapped layers.
std::vector<std::size_t> dsr_allocate(std::size_t dropped_total,
                                      const std::vector<std::size_t>& active_counts,
                                      const std::vector<std::size_t>& free_capacities);

// Called for every position whose mask bit toggled during a rewire step, so
// the optimizer can clear its state there.
using ToggleHook = std::function<void(std::size_t layer, std::size_t position)>;

// One full drop-and-grow cycle. SET/RigL reinsert within each layer (layer
// densities invariant); DSR and GGR move weights across layers. GGR fixes
// per-layer insert counts with the streaming global top-k over the dense
// gradients of the rewiring batch, then inserts half by gradient and half
// at random within each layer.
RewirePlan rewire_step(Model& model, Strategy strategy, std::size_t epoch,
                       const RewireSchedule& sched, const Tensor& batch,
                       const std::vector<std::size_t>& labels, Rng& rng, DsrState& dsr,
                       const ToggleHook& on_toggle = nullptr);

} // namespace dst

#endif // DST_REWIRE_HPP
