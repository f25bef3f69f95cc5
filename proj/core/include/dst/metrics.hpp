#ifndef DST_METRICS_HPP
#define DST_METRICS_HPP

#include <string>
#include <utility>
#include <vector>

#include "dst/model.hpp"
#include "dst/train.hpp"

namespace dst {

// Structural diagnostics of one layer's mask.
struct LayerStats {
    std::size_t layer_index = 0;
    LayerKind kind = LayerKind::Linear;
    LayerShape shape;
    std::size_t active = 0;
    double density = 0.0;
    std::size_t empty_outputs = 0; // output units with an all-zero mask row
    std::size_t empty_inputs = 0;  // input units unused by every output
};

// Empty output units and empty input units of a layer. For conv layers the
// reduction runs over (input-channel x kh x kw) per filter and
// (filter x kh x kw) per input channel.
std::pair<std::size_t, std::size_t> empty_unit_stats(const SparseLayerState& layer);

std::vector<LayerStats> collect_layer_stats(const Model& model);

// Dense parameters remaining after deleting completely empty output and
// input units, per layer: (n_out - empty_out) * (n_in - empty_in) * kh * kw.
// Unit removal does not propagate across layers.
std::size_t shrunk_param_count(const Model& model);

// Binary P5 graymap of the mask: 255 = active, 0 = inactive. Conv masks are
// flattened to n_out x (n_in * kh * kw).
void export_mask_image(const SparseLayerState& layer, const std::string& path);

// Metrics CSV: header plus one row per epoch, columns
//   epoch, lr, drop_fraction, train_loss, test_acc,
//   then per layer: layer<i>_density, layer<i>_dropped, layer<i>_inserted.
// Doubles are printed with max_digits10 so rows parse back losslessly.
void write_metrics_csv(const std::vector<MetricsRecord>& records, const std::string& path);
std::vector<MetricsRecord> parse_metrics_csv(const std::string& path);

// Flat run-summary JSON: config echo, normalization constants, final
// metrics, shrunk parameter count and wall-clock.
struct RunSummary {
    std::vector<std::pair<std::string, std::string>> config_echo; // key, printed value
    std::vector<std::size_t> layer_sizes;
    double final_test_accuracy = 0.0;
    std::string metrics_csv;
    std::size_t shrunk_params = 0;
    std::size_t total_weights = 0;
    std::size_t total_active = 0;
    double wall_seconds = 0.0;
};
std::string run_summary_json(const RunSummary& summary);
void write_run_summary(const RunSummary& summary, const std::string& path);

} // namespace dst

#endif // DST_METRICS_HPP
