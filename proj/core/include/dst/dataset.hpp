#ifndef DST_DATASET_HPP
#define DST_DATASET_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dst/tensor.hpp"

namespace dst {

// Labeled image set; images are [N, C, H, W] doubles.
struct Dataset {
    Tensor images;
    std::vector<std::size_t> labels;
    std::string split;

    std::size_t size() const { return labels.size(); }
    std::size_t num_classes() const;
};

// IDX (MNIST container) reader. Accepts both plain and gzip-compressed
// files; pixels are scaled to [0,1]. Magic numbers: 0x00000803 for images,
// 0x00000801 for labels, big-endian.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Writes a single-channel dataset in the same container, quantizing [0,1]
// pixels to bytes.
void write_idx(const Dataset& data, const std::string& images_path,
               const std::string& labels_path, bool gzip = false);

// Per-channel mean/std computed on one split and applied to any split; the
// constants end up in the run summary.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};
NormStats compute_norm_stats(const Dataset& data);
void normalize(Dataset& data, const NormStats& stats);

// Gaussian clusters around `classes` random centers placed at distance
// `margin`, mapped affinely into [0,1]. Labels cycle round-robin. Larger
// margins make the classes linearly separable by a wide gap.
Dataset synthetic_blobs(std::size_t classes, std::size_t n, std::size_t dim,
                        std::uint64_t seed, double margin = 6.0);

// Same cluster model reshaped to [N, C, H, W] images.
Dataset synthetic_blob_images(std::size_t classes, std::size_t n,
                              const std::vector<std::size_t>& chw, std::uint64_t seed,
                              double margin = 6.0);

// 10-way oriented stripe patterns with random phase, shift and pixel noise;
// classification requires spatial features, which keeps the convolutional
// layers relevant.
Dataset synthetic_stripes(std::size_t classes, std::size_t n, std::size_t height,
                          std::size_t width, std::uint64_t seed, double noise = 0.15);

// First `count` samples in one dataset, the rest in the other.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, std::size_t count);

// Batch assembly by index list.
Tensor gather_images(const Dataset& data, const std::vector<std::size_t>& indices);
std::vector<std::size_t> gather_labels(const Dataset& data,
                                       const std::vector<std::size_t>& indices);

} // namespace dst

#endif // DST_DATASET_HPP
