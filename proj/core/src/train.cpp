#include "dst/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "dst/errors.hpp"

namespace dst {

void TrainConfig::validate() const {
    if (base_lr <= 0.0) throw ConfigError("base_lr must be positive");
    if (lr_decay_factor <= 0.0) throw ConfigError("lr_decay_factor must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(sparsity >= 0.0 && sparsity < 1.0)) throw ConfigError("sparsity must lie in [0,1)");
    if (!(schedule.f0 >= 0.0 && schedule.f0 < 1.0)) throw ConfigError("f0 must lie in [0,1)");
    if (schedule.end_epoch < 2) throw ConfigError("rewire end_epoch must be >= 2");
    for (std::size_t i = 1; i < milestones.size(); ++i) {
        if (milestones[i] <= milestones[i - 1]) {
            throw ConfigError("milestones must be strictly increasing");
        }
    }
    if (!milestones.empty() && milestones.back() >= epochs && epochs > 0) {
        throw ConfigError("milestones must lie before the final epoch");
    }
}

double lr_at(std::size_t epoch, std::size_t step_in_epoch, std::size_t steps_per_epoch,
             const TrainConfig& cfg) {
    if (epoch == 0) {
        if (steps_per_epoch == 0) return 0.0;
        return cfg.base_lr * static_cast<double>(step_in_epoch) /
               static_cast<double>(steps_per_epoch);
    }
    std::size_t passed = 0;
    for (std::size_t m : cfg.milestones) {
        if (epoch >= m) ++passed;
    }
    return cfg.base_lr * std::pow(cfg.lr_decay_factor, -static_cast<double>(passed));
}

double evaluate(const Model& model, const Dataset& test_set, std::size_t batch_size) {
    const std::size_t n = test_set.size();
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t count = std::min(batch_size, n - start);
        idx.resize(count);
        std::iota(idx.begin(), idx.end(), start);
        const Tensor logits = forward(model, gather_images(test_set, idx));
        const std::size_t k = logits.shape[1];
        for (std::size_t i = 0; i < count; ++i) {
            const double* row = logits.values.data() + i * k;
            std::size_t best = 0;
            for (std::size_t j = 1; j < k; ++j) {
                if (row[j] > row[best]) best = j;
            }
            if (best == test_set.labels[start + i]) ++correct;
        }
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

std::vector<MetricsRecord> train(Model& model, const Dataset& train_set,
                                 const Dataset& test_set, const TrainConfig& cfg, Rng& rng,
                                 const TrainObserver& observer) {
    cfg.validate();
    if (train_set.size() == 0 || test_set.size() == 0) {
        throw ConfigError("train: datasets must be nonempty");
    }
    for (std::size_t l : train_set.labels) {
        if (l >= model.spec.classes) {
            throw ConfigError("train: dataset label " + std::to_string(l) +
                              " out of range for " + std::to_string(model.spec.classes) +
                              " classes");
        }
    }
    if (train_set.images.shape[1] != model.spec.input_shape[0] ||
        train_set.images.shape[2] != model.spec.input_shape[1] ||
        train_set.images.shape[3] != model.spec.input_shape[2]) {
        throw ConfigError("train: dataset images " + shape_to_string(train_set.images.shape) +
                          " do not match model input " +
                          shape_to_string(model.spec.input_shape));
    }

    const std::size_t n = train_set.size();
    const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;

    SgdOptimizer opt(model, cfg.momentum, cfg.weight_decay);
    DsrState dsr = cfg.dsr;
    const ToggleHook toggle = [&opt](std::size_t layer, std::size_t pos) {
        opt.reset_position(layer, pos);
    };

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::vector<MetricsRecord> records;
    records.reserve(cfg.epochs);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_indices(rng, order);

        MetricsRecord rec;
        rec.epoch = epoch;
        RewirePlan plan;
        plan.dropped.assign(model.layers.size(), 0);
        plan.inserted.assign(model.layers.size(), 0);

        double f = 0.0;
        if (epoch >= 1) {
            f = drop_fraction(epoch, cfg.schedule);
            if (f > 0.0) {
                // Rewire on the epoch's first mini-batch; the same batch
                // then takes part in the normal pass below.
                const std::size_t count = std::min(cfg.batch_size, n);
                std::vector<std::size_t> idx(order.begin(),
                                             order.begin() + static_cast<std::ptrdiff_t>(count));
                const Tensor batch = gather_images(train_set, idx);
                const auto labels = gather_labels(train_set, idx);
                plan = rewire_step(model, cfg.strategy, epoch, cfg.schedule, batch, labels,
                                   rng, dsr, toggle);
            }
        }
        rec.drop_fraction = f;

        double loss_sum = 0.0;
        double lr = 0.0;
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            const std::size_t start = step * cfg.batch_size;
            const std::size_t count = std::min(cfg.batch_size, n - start);
            std::vector<std::size_t> idx(
                order.begin() + static_cast<std::ptrdiff_t>(start),
                order.begin() + static_cast<std::ptrdiff_t>(start + count));
            const Tensor batch = gather_images(train_set, idx);
            const auto labels = gather_labels(train_set, idx);
            const BatchGrads grads = compute_grads(model, batch, labels);
            lr = lr_at(epoch, step, steps_per_epoch, cfg);
            opt.step(model, grads, lr);
            loss_sum += grads.loss;
        }

        rec.lr = lr;
        rec.train_loss = loss_sum / static_cast<double>(steps_per_epoch);
        rec.test_accuracy = evaluate(model, test_set);
        rec.layers.resize(model.layers.size());
        for (std::size_t li = 0; li < model.layers.size(); ++li) {
            rec.layers[li].density = model.layers[li].density();
            rec.layers[li].dropped = plan.dropped[li];
            rec.layers[li].inserted = plan.inserted[li];
        }
        records.push_back(rec);
        if (observer) observer(model, rec);
    }
    return records;
}

RunResult run_experiment(const ModelSpec& mspec, const Dataset& train_set,
                         const Dataset& test_set, const TrainConfig& cfg,
                         const TrainObserver& observer) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(cfg.seed);
    RunResult result;
    result.model = build_model(mspec, rng);
    const auto alloc = cfg.distribution == Distribution::Erk
                           ? erk_allocation(result.model.layer_shapes(), cfg.sparsity)
                           : uniform_allocation(result.model.layer_shapes(), cfg.sparsity);
    apply_allocation(result.model, alloc, rng);
    result.metrics = train(result.model, train_set, test_set, cfg, rng, observer);
    result.final_test_accuracy =
        result.metrics.empty() ? 0.0 : result.metrics.back().test_accuracy;
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

} // namespace dst
