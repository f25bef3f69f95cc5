#ifndef DST_CONFIG_HPP
#define DST_CONFIG_HPP

#include <string>
#include <utility>
#include <vector>

#include "dst/dataset.hpp"
#include "dst/model.hpp"
#include "dst/train.hpp"

namespace dst {

// Where training data comes from: IDX files on disk or one of the synthetic
// generators (which need no external downloads).
struct DataConfig {
    std::string source = "blobs"; // idx | blobs | stripes
    std::string train_images;
    std::string train_labels;
    std::string test_images;
    std::string test_labels;
    std::size_t n_train = 2000;
    std::size_t n_test = 500;
    double margin = 6.0;
    double noise = 0.15;
    std::uint64_t data_seed = 42;
    bool normalize = true;
};

struct RunConfig {
    ModelSpec model{ModelFamily::Mlp, {256, 128}, {1, 28, 28}, 10};
    TrainConfig train;
    DataConfig data;
};

// `key = value` text with [section] headers per module; '#' starts a
// comment. Unknown sections or keys are errors (naming the line).
RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_text(const std::string& text, const std::string& origin = "<config>");

// Materialize the configured datasets; train-split normalization constants
// are applied to both splits and returned.
struct LoadedData {
    Dataset train;
    Dataset test;
    NormStats stats;
};
LoadedData load_data(const DataConfig& cfg, const ModelSpec& model);

// Flat key/value echo of a full configuration, for the run summary.
std::vector<std::pair<std::string, std::string>> config_echo(const RunConfig& cfg);

} // namespace dst

#endif // DST_CONFIG_HPP
