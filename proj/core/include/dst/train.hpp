#ifndef DST_TRAIN_HPP
#define DST_TRAIN_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "dst/dataset.hpp"
#include "dst/model.hpp"
#include "dst/optim.hpp"
#include "dst/rewire.hpp"
#include "dst/sparsity.hpp"

namespace dst {

struct TrainConfig {
    double base_lr = 0.1;
    double lr_decay_factor = 5.0;
    std::vector<std::size_t> milestones = {10, 15, 18};
    std::size_t epochs = 20;
    std::size_t batch_size = 128;
    double momentum = 0.9;
    double weight_decay = 0.0;
    double sparsity = 0.9;
    Distribution distribution = Distribution::Uniform;
    Strategy strategy = Strategy::Ggr;
    std::uint64_t seed = 1;
    RewireSchedule schedule{0.10, 10, true};
    DsrState dsr{1e-3, 0.1};

    void validate() const; // throws ConfigError
};

struct LayerEpochStats {
    double density = 0.0;
    std::size_t dropped = 0;
    std::size_t inserted = 0;
};

// One epoch's diagnostics; one CSV row.
struct MetricsRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double drop_fraction = 0.0;
    double train_loss = 0.0;
    double test_accuracy = 0.0;
    std::vector<LayerEpochStats> layers;
};

// Warmup ramp in epoch 0 from 0 to base_lr, then milestone decay by
// 1/lr_decay_factor per passed milestone.
double lr_at(std::size_t epoch, std::size_t step_in_epoch, std::size_t steps_per_epoch,
             const TrainConfig& cfg);

// Top-1 accuracy in percent.
double evaluate(const Model& model, const Dataset& test_set, std::size_t batch_size = 256);

using TrainObserver = std::function<void(const Model&, const MetricsRecord&)>;

// The full §desk-scale loop: shuffled mini-batch SGD, one rewiring step at
// the start of every epoch >= 1 while the drop fraction is positive, and a
// test-set evaluation per epoch. All randomness comes from `rng`.
std::vector<MetricsRecord> train(Model& model, const Dataset& train_set,
                                 const Dataset& test_set, const TrainConfig& cfg, Rng& rng,
                                 const TrainObserver& observer = nullptr);

// Seed-to-result pipeline: build, sparsify, train. This is the determinism
// boundary: equal spec+config+data gives bit-identical results.
struct RunResult {
    Model model;
    std::vector<MetricsRecord> metrics;
    double final_test_accuracy = 0.0;
    double wall_seconds = 0.0;
};
RunResult run_experiment(const ModelSpec& mspec, const Dataset& train_set,
                         const Dataset& test_set, const TrainConfig& cfg,
                         const TrainObserver& observer = nullptr);

} // namespace dst

#endif // DST_TRAIN_HPP
