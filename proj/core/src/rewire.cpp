#include "dst/rewire.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dst/errors.hpp"
#include "dst/sparsity.hpp"

namespace dst {

Strategy strategy_from_string(const std::string& s) {
    if (s == "set") return Strategy::Set;
    if (s == "rigl") return Strategy::Rigl;
    if (s == "dsr") return Strategy::Dsr;
    if (s == "ggr") return Strategy::Ggr;
    throw ConfigError("unknown strategy '" + s + "' (expected set, rigl, dsr or ggr)");
}

std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::Set: return "set";
        case Strategy::Rigl: return "rigl";
        case Strategy::Dsr: return "dsr";
        case Strategy::Ggr: return "ggr";
    }
    return "?";
}

std::size_t RewirePlan::total_dropped() const {
    return std::accumulate(dropped.begin(), dropped.end(), std::size_t{0});
}

std::size_t RewirePlan::total_inserted() const {
    return std::accumulate(inserted.begin(), inserted.end(), std::size_t{0});
}

double drop_fraction(std::size_t epoch, const RewireSchedule& sched) {
    if (epoch < 1) {
        throw ContractError("drop_fraction: rewiring starts at epoch 1, got epoch " +
                            std::to_string(epoch));
    }
    if (sched.end_epoch < 2) throw ContractError("drop_fraction: end_epoch must be >= 2");
    if (!(sched.f0 >= 0.0 && sched.f0 < 1.0)) {
        throw ContractError("drop_fraction: f0 must lie in [0,1)");
    }
    if (epoch >= sched.end_epoch) return 0.0;
    const double t = static_cast<double>(epoch - 1) / static_cast<double>(sched.end_epoch - 1);
    return 0.5 * sched.f0 * (1.0 + std::cos(t * M_PI));
}

std::vector<std::size_t> local_magnitude_drop(SparseLayerState& layer, std::size_t count,
                                              Rng& rng) {
    std::vector<std::pair<double, std::size_t>> active;
    for (std::size_t i = 0; i < layer.mask.size(); ++i) {
        if (layer.mask[i] != 0.0) active.emplace_back(std::abs(layer.weight[i]), i);
    }
    if (count > active.size()) {
        throw ContractError("local_magnitude_drop: count " + std::to_string(count) +
                            " exceeds active count " + std::to_string(active.size()));
    }
    std::vector<std::size_t> dropped;
    if (count == 0) return dropped;

    std::sort(active.begin(), active.end());
    const double cutoff = active[count - 1].first;

    std::vector<std::size_t> tied;
    for (const auto& [mag, pos] : active) {
        if (mag < cutoff) {
            dropped.push_back(pos);
        } else if (mag == cutoff) {
            tied.push_back(pos);
        } else {
            break;
        }
    }
    const std::size_t need = count - dropped.size();
    for (std::size_t pos : sample_from_pool(rng, tied, need)) dropped.push_back(pos);

    for (std::size_t pos : dropped) {
        layer.mask[pos] = 0.0;
        layer.weight.values[pos] = 0.0;
    }
    return dropped;
}

TopkSelection streaming_global_topk(const std::vector<LayerCandidates>& layers, std::size_t k) {
    std::size_t total = 0;
    for (const auto& l : layers) total += l.eligible->size();
    if (total < k) throw TopkShortfall(k, total);

    struct Cand {
        double mag;
        std::size_t layer;
        std::size_t pos;
    };
    const auto better = [](const Cand& a, const Cand& b) {
        if (a.mag != b.mag) return a.mag > b.mag;
        if (a.layer != b.layer) return a.layer < b.layer;
        return a.pos < b.pos;
    };

    // Union the running k-buffer with one layer's candidates at a time; at
    // no point is more than one layer's gradient set held alongside it.
    std::vector<Cand> buffer;
    buffer.reserve(k);
    for (std::size_t li = 0; li < layers.size(); ++li) {
        const auto& lc = layers[li];
        for (std::size_t pos : *lc.eligible) {
            buffer.push_back({std::abs(lc.grads->values[pos]), li, pos});
        }
        std::sort(buffer.begin(), buffer.end(), better);
        if (buffer.size() > k) buffer.resize(k);
    }

    TopkSelection sel;
    sel.counts.assign(layers.size(), 0);
    sel.positions.assign(layers.size(), {});
    for (const Cand& c : buffer) {
        ++sel.counts[c.layer];
        sel.positions[c.layer].push_back(c.pos);
    }
    for (auto& pos : sel.positions) std::sort(pos.begin(), pos.end());
    return sel;
}

namespace {

std::vector<std::size_t> free_pool(const SparseLayerState& layer,
                                   const std::vector<std::size_t>& exclude) {
    std::vector<char> blocked(layer.mask.size(), 0);
    for (std::size_t p : exclude) blocked[p] = 1;
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < layer.mask.size(); ++i) {
        if (layer.mask[i] == 0.0 && !blocked[i]) pool.push_back(i);
    }
    return pool;
}

void activate(SparseLayerState& layer, std::size_t pos) {
    layer.mask[pos] = 1.0;
    layer.weight.values[pos] = kInsertValue;
}

} // namespace

std::vector<std::size_t> grow_set(SparseLayerState& layer, std::size_t n, Rng& rng,
                                  const std::vector<std::size_t>& exclude) {
    std::vector<std::size_t> pool = free_pool(layer, exclude);
    if (n > pool.size()) {
        throw ContractError("grow_set: n " + std::to_string(n) + " exceeds " +
                            std::to_string(pool.size()) + " free positions");
    }
    std::vector<std::size_t> chosen = sample_from_pool(rng, std::move(pool), n);
    for (std::size_t pos : chosen) activate(layer, pos);
    return chosen;
}

std::vector<std::size_t> grow_rigl(SparseLayerState& layer, std::size_t n,
                                   const std::vector<std::size_t>& exclude) {
    if (!layer.grad_buffer) {
        throw StateError("grow_rigl: layer has no dense gradient buffer");
    }
    std::vector<std::size_t> pool = free_pool(layer, exclude);
    if (n > pool.size()) {
        throw ContractError("grow_rigl: n " + std::to_string(n) + " exceeds " +
                            std::to_string(pool.size()) + " eligible positions");
    }
    const Tensor& g = *layer.grad_buffer;
    std::sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b) {
        const double ga = std::abs(g.values[a]);
        const double gb = std::abs(g.values[b]);
        if (ga != gb) return ga > gb;
        return a < b;
    });
    pool.resize(n);
    for (std::size_t pos : pool) activate(layer, pos);
    return pool;
}

std::vector<std::size_t> grow_ggr(SparseLayerState& layer, std::size_t n, Rng& rng,
                                  const std::vector<std::size_t>& exclude) {
    const std::size_t by_grad = (n + 1) / 2;
    std::vector<std::size_t> inserted = grow_rigl(layer, by_grad, exclude);
    // Gradient picks are active now, so the random half draws from what is
    // left of the eligible pool.
    for (std::size_t pos : grow_set(layer, n / 2, rng, exclude)) inserted.push_back(pos);
    return inserted;
}

std::vector<std::vector<std::size_t>> dsr_drop(Model& model, DsrState& state,
                                               std::size_t target_count) {
    if (!(state.threshold > 0.0)) throw ContractError("dsr_drop: threshold must be positive");
    std::vector<std::vector<std::size_t>> dropped(model.layers.size());
    std::size_t total = 0;
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        auto& layer = model.layers[li];
        for (std::size_t i = 0; i < layer.mask.size(); ++i) {
            if (layer.mask[i] != 0.0 && std::abs(layer.weight[i]) < state.threshold) {
                layer.mask[i] = 0.0;
                layer.weight.values[i] = 0.0;
                dropped[li].push_back(i);
                ++total;
            }
        }
    }
    const double target = static_cast<double>(target_count);
    if (static_cast<double>(total) < (1.0 - state.tolerance) * target) {
        state.threshold *= 2.0;
    } else if (static_cast<double>(total) > (1.0 + state.tolerance) * target) {
        state.threshold /= 2.0;
    }
    return dropped;
}

std::vector<std::size_t> dsr_allocate(std::size_t dropped_total,
                                      const std::vector<std::size_t>& active_counts,
                                      const std::vector<std::size_t>& free_capacities) {
    const std::size_t n = active_counts.size();
    if (free_capacities.size() != n) {
        throw ContractError("dsr_allocate: active/capacity size mismatch");
    }
    const std::size_t capacity =
        std::accumulate(free_capacities.begin(), free_capacities.end(), std::size_t{0});
    if (dropped_total > capacity) {
        throw ContractError("dsr_allocate: " + std::to_string(dropped_total) +
                            " insertions exceed total free capacity " + std::to_string(capacity));
    }

    std::vector<double> targets(n, 0.0);
    std::vector<bool> open(n);
    for (std::size_t i = 0; i < n; ++i) open[i] = free_capacities[i] > 0;

    double remaining = static_cast<double>(dropped_total);
    for (;;) {
        double wsum = 0.0;
        double csum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (open[i]) {
                wsum += static_cast<double>(active_counts[i]);
                csum += static_cast<double>(free_capacities[i]);
            }
        }
        if (csum <= 0.0) break;
        // Proportional to post-drop active counts; if every open layer is
        // empty, fall back to capacity-proportional shares. Shares within a
        // pass are computed against the same remaining total; overflowing
        // layers are pinned at capacity and the rest re-solved.
        bool pinned = false;
        for (std::size_t i = 0; i < n; ++i) {
            if (!open[i]) continue;
            const double w = wsum > 0.0 ? static_cast<double>(active_counts[i]) / wsum
                                        : static_cast<double>(free_capacities[i]) / csum;
            targets[i] = remaining * w;
            if (targets[i] >= static_cast<double>(free_capacities[i])) {
                targets[i] = static_cast<double>(free_capacities[i]);
                pinned = true;
            }
        }
        if (!pinned) break;
        for (std::size_t i = 0; i < n; ++i) {
            if (open[i] && targets[i] == static_cast<double>(free_capacities[i])) {
                open[i] = false;
                remaining -= targets[i];
            }
        }
        if (remaining <= 0.0) {
            for (std::size_t i = 0; i < n; ++i) {
                if (open[i]) targets[i] = 0.0;
            }
            break;
        }
    }
    return largest_remainder_round(targets, free_capacities, dropped_total);
}

namespace {

std::vector<std::size_t> planned_drop_counts(const Model& model, double fraction) {
    std::vector<double> targets;
    std::vector<std::size_t> caps;
    std::size_t total_active = 0;
    for (const auto& layer : model.layers) {
        const std::size_t a = layer.active_count();
        targets.push_back(fraction * static_cast<double>(a));
        caps.push_back(a);
        total_active += a;
    }
    const auto total_drop = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(total_active)));
    return largest_remainder_round(targets, caps, total_drop);
}

void notify(const ToggleHook& hook, std::size_t layer, const std::vector<std::size_t>& positions) {
    if (!hook) return;
    for (std::size_t p : positions) hook(layer, p);
}

// Places `deficit` insertions greedily into the layers with the most free
// positions; by this point every free position (dropped ones included) is
// fair game, since eligible candidates ran out.
void spill_random(Model& model, std::size_t deficit, Rng& rng, RewirePlan& plan,
                  const ToggleHook& hook) {
    while (deficit > 0) {
        std::size_t best = model.layers.size();
        std::size_t best_free = 0;
        for (std::size_t li = 0; li < model.layers.size(); ++li) {
            const std::size_t free =
                model.layers[li].weight_count() - model.layers[li].active_count();
            if (free > best_free) {
                best_free = free;
                best = li;
            }
        }
        if (best == model.layers.size()) {
            throw StateError("rewire_step: no free positions left for required insertions");
        }
        const std::size_t take = std::min(deficit, best_free);
        auto grown = grow_set(model.layers[best], take, rng);
        notify(hook, best, grown);
        plan.inserted[best] += take;
        deficit -= take;
    }
}

} // namespace

RewirePlan rewire_step(Model& model, Strategy strategy, std::size_t epoch,
                       const RewireSchedule& sched, const Tensor& batch,
                       const std::vector<std::size_t>& labels, Rng& rng, DsrState& dsr,
                       const ToggleHook& on_toggle) {
    const std::size_t n_layers = model.layers.size();
    RewirePlan plan;
    plan.strategy = strategy;
    plan.dropped.assign(n_layers, 0);
    plan.inserted.assign(n_layers, 0);

    const double f = drop_fraction(epoch, sched);
    if (f <= 0.0) return plan;

    std::vector<std::vector<std::size_t>> dropped_pos(n_layers);

    if (strategy == Strategy::Dsr) {
        std::size_t total_active = 0;
        for (const auto& layer : model.layers) total_active += layer.active_count();
        const auto target = static_cast<std::size_t>(
            std::llround(f * static_cast<double>(total_active)));
        dropped_pos = dsr_drop(model, dsr, target);
    } else {
        const std::vector<std::size_t> counts = planned_drop_counts(model, f);
        for (std::size_t li = 0; li < n_layers; ++li) {
            dropped_pos[li] = local_magnitude_drop(model.layers[li], counts[li], rng);
        }
    }

    std::size_t total_dropped = 0;
    for (std::size_t li = 0; li < n_layers; ++li) {
        plan.dropped[li] = dropped_pos[li].size();
        total_dropped += dropped_pos[li].size();
        notify(on_toggle, li, dropped_pos[li]);
    }
    if (total_dropped == 0) return plan;

    if (strategy == Strategy::Rigl || strategy == Strategy::Ggr) {
        dense_weight_grads(model, batch, labels);
    }

    switch (strategy) {
        case Strategy::Set:
        case Strategy::Rigl: {
            // Same-layer reinsertion keeps every layer's density invariant.
            for (std::size_t li = 0; li < n_layers; ++li) {
                auto& layer = model.layers[li];
                const std::size_t want = dropped_pos[li].size();
                const std::size_t eligible = free_pool(layer, dropped_pos[li]).size();
                const std::size_t take = std::min(want, eligible);
                auto grown = strategy == Strategy::Set
                                 ? grow_set(layer, take, rng, dropped_pos[li])
                                 : grow_rigl(layer, take, dropped_pos[li]);
                notify(on_toggle, li, grown);
                plan.inserted[li] += take;
                if (take < want) {
                    // Eligible pool exhausted; the only free slots left are
                    // the just-dropped ones.
                    auto extra = grow_set(layer, want - take, rng);
                    notify(on_toggle, li, extra);
                    plan.inserted[li] += extra.size();
                    plan.shortfall += extra.size();
                }
            }
            break;
        }
        case Strategy::Dsr: {
            std::vector<std::size_t> active_post(n_layers);
            std::vector<std::size_t> free_caps(n_layers);
            std::size_t total_free = 0;
            for (std::size_t li = 0; li < n_layers; ++li) {
                active_post[li] = model.layers[li].active_count();
                free_caps[li] = free_pool(model.layers[li], dropped_pos[li]).size();
                total_free += free_caps[li];
            }
            const std::size_t assign = std::min(total_dropped, total_free);
            const std::vector<std::size_t> counts =
                dsr_allocate(assign, active_post, free_caps);
            for (std::size_t li = 0; li < n_layers; ++li) {
                auto grown = grow_set(model.layers[li], counts[li], rng, dropped_pos[li]);
                notify(on_toggle, li, grown);
                plan.inserted[li] += counts[li];
            }
            if (assign < total_dropped) {
                plan.shortfall += total_dropped - assign;
                spill_random(model, total_dropped - assign, rng, plan, on_toggle);
            }
            break;
        }
        case Strategy::Ggr: {
            std::vector<std::vector<std::size_t>> eligible(n_layers);
            std::vector<LayerCandidates> cands(n_layers);
            std::size_t total_eligible = 0;
            for (std::size_t li = 0; li < n_layers; ++li) {
                eligible[li] = free_pool(model.layers[li], dropped_pos[li]);
                total_eligible += eligible[li].size();
                cands[li] = {&*model.layers[li].grad_buffer, &eligible[li]};
            }
            const std::size_t k = std::min(total_dropped, total_eligible);
            const TopkSelection sel = streaming_global_topk(cands, k);
            for (std::size_t li = 0; li < n_layers; ++li) {
                auto grown = grow_ggr(model.layers[li], sel.counts[li], rng, dropped_pos[li]);
                notify(on_toggle, li, grown);
                plan.inserted[li] += sel.counts[li];
            }
            if (k < total_dropped) {
                plan.shortfall += total_dropped - k;
                spill_random(model, total_dropped - k, rng, plan, on_toggle);
            }
            break;
        }
    }
    return plan;
}

} // namespace dst
