#include "dst/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "dst/errors.hpp"
#include "dst/rng.hpp"

namespace dst {

std::size_t Dataset::num_classes() const {
    std::size_t mx = 0;
    for (std::size_t l : labels) mx = std::max(mx, l);
    return labels.empty() ? 0 : mx + 1;
}

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

// gzopen reads plain files transparently, which is exactly the contract:
// gzip-compressed IDX is accepted wherever a plain one is.
std::vector<unsigned char> read_file_auto(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open file: " + path);
    std::vector<unsigned char> out;
    unsigned char chunk[1 << 16];
    int n = 0;
    while ((n = gzread(f, chunk, sizeof(chunk))) > 0) {
        out.insert(out.end(), chunk, chunk + n);
    }
    const bool failed = n < 0;
    gzclose(f);
    if (failed) throw IoError("decompression failed for file: " + path);
    return out;
}

struct IdxReader {
    const std::vector<unsigned char>& buf;
    std::size_t offset = 0;
    const std::string& path;

    std::uint32_t u32be(const char* what) {
        if (offset + 4 > buf.size()) {
            throw ParseError(path + ": truncated while reading " + std::string(what), offset);
        }
        const std::uint32_t v = (static_cast<std::uint32_t>(buf[offset]) << 24) |
                                (static_cast<std::uint32_t>(buf[offset + 1]) << 16) |
                                (static_cast<std::uint32_t>(buf[offset + 2]) << 8) |
                                static_cast<std::uint32_t>(buf[offset + 3]);
        offset += 4;
        return v;
    }

    const unsigned char* bytes(std::size_t n, const char* what) {
        if (offset + n > buf.size()) {
            throw ParseError(path + ": truncated while reading " + std::string(what), offset);
        }
        const unsigned char* p = buf.data() + offset;
        offset += n;
        return p;
    }
};

char hex_digit(unsigned v) { return "0123456789abcdef"[v & 0xf]; }

std::string hex32(std::uint32_t v) {
    std::string s = "0x";
    for (int i = 7; i >= 0; --i) s += hex_digit(v >> (4 * i));
    return s;
}

} // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto ibuf = read_file_auto(images_path);
    IdxReader ir{ibuf, 0, images_path};
    const std::uint32_t imagic = ir.u32be("image magic");
    if (imagic != kImageMagic) {
        throw ParseError(images_path + ": bad image magic " + hex32(imagic) + ", expected " +
                             hex32(kImageMagic),
                         0);
    }
    const std::size_t n = ir.u32be("image count");
    const std::size_t rows = ir.u32be("row count");
    const std::size_t cols = ir.u32be("column count");
    const unsigned char* pixels = ir.bytes(n * rows * cols, "pixel data");

    const auto lbuf = read_file_auto(labels_path);
    IdxReader lr{lbuf, 0, labels_path};
    const std::uint32_t lmagic = lr.u32be("label magic");
    if (lmagic != kLabelMagic) {
        throw ParseError(labels_path + ": bad label magic " + hex32(lmagic) + ", expected " +
                             hex32(kLabelMagic),
                         0);
    }
    const std::size_t ln = lr.u32be("label count");
    if (ln != n) {
        throw ParseError(labels_path + ": label count " + std::to_string(ln) +
                             " does not match image count " + std::to_string(n),
                         4);
    }
    const unsigned char* labels = lr.bytes(ln, "label data");

    Dataset out;
    out.images = Tensor({n, 1, rows, cols});
    for (std::size_t i = 0; i < n * rows * cols; ++i) {
        out.images.values[i] = static_cast<double>(pixels[i]) / 255.0;
    }
    out.labels.assign(labels, labels + ln);
    return out;
}

void write_idx(const Dataset& data, const std::string& images_path,
               const std::string& labels_path, bool gzip) {
    if (data.images.rank() != 4 || data.images.shape[1] != 1) {
        throw ContractError("write_idx supports single-channel [N,1,H,W] datasets, got " +
                            shape_to_string(data.images.shape));
    }
    const std::size_t n = data.images.shape[0];
    const std::size_t rows = data.images.shape[2];
    const std::size_t cols = data.images.shape[3];
    if (data.labels.size() != n) {
        throw ContractError("write_idx: label count does not match image count");
    }

    auto put_u32be = [](std::vector<unsigned char>& v, std::uint32_t x) {
        v.push_back(static_cast<unsigned char>((x >> 24) & 0xff));
        v.push_back(static_cast<unsigned char>((x >> 16) & 0xff));
        v.push_back(static_cast<unsigned char>((x >> 8) & 0xff));
        v.push_back(static_cast<unsigned char>(x & 0xff));
    };

    std::vector<unsigned char> ibuf;
    ibuf.reserve(16 + n * rows * cols);
    put_u32be(ibuf, kImageMagic);
    put_u32be(ibuf, static_cast<std::uint32_t>(n));
    put_u32be(ibuf, static_cast<std::uint32_t>(rows));
    put_u32be(ibuf, static_cast<std::uint32_t>(cols));
    for (double v : data.images.values) {
        const double q = std::clamp(v, 0.0, 1.0) * 255.0;
        ibuf.push_back(static_cast<unsigned char>(std::llround(q)));
    }

    std::vector<unsigned char> lbuf;
    lbuf.reserve(8 + n);
    put_u32be(lbuf, kLabelMagic);
    put_u32be(lbuf, static_cast<std::uint32_t>(n));
    for (std::size_t l : data.labels) {
        if (l > 255) throw ContractError("write_idx: label exceeds byte range");
        lbuf.push_back(static_cast<unsigned char>(l));
    }

    auto write_one = [gzip](const std::string& path, const std::vector<unsigned char>& buf) {
        if (gzip) {
            gzFile f = gzopen(path.c_str(), "wb");
            if (!f) throw IoError("cannot open file for writing: " + path);
            const int written = gzwrite(f, buf.data(), static_cast<unsigned>(buf.size()));
            gzclose(f);
            if (written != static_cast<int>(buf.size())) {
                throw IoError("write failed for file: " + path);
            }
        } else {
            std::FILE* f = std::fopen(path.c_str(), "wb");
            if (!f) throw IoError("cannot open file for writing: " + path);
            const std::size_t written = std::fwrite(buf.data(), 1, buf.size(), f);
            std::fclose(f);
            if (written != buf.size()) throw IoError("write failed for file: " + path);
        }
    };
    write_one(images_path, ibuf);
    write_one(labels_path, lbuf);
}

NormStats compute_norm_stats(const Dataset& data) {
    const std::size_t c = data.images.shape[1];
    const std::size_t plane = data.images.shape[2] * data.images.shape[3];
    const std::size_t n = data.images.shape[0];
    NormStats stats;
    stats.mean.assign(c, 0.0);
    stats.stddev.assign(c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* p = data.images.values.data() + (i * c + ch) * plane;
            for (std::size_t j = 0; j < plane; ++j) stats.mean[ch] += p[j];
        }
    }
    const double count = static_cast<double>(n * plane);
    for (std::size_t ch = 0; ch < c; ++ch) stats.mean[ch] /= count;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* p = data.images.values.data() + (i * c + ch) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                const double d = p[j] - stats.mean[ch];
                stats.stddev[ch] += d * d;
            }
        }
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
        stats.stddev[ch] = std::sqrt(stats.stddev[ch] / count);
        if (stats.stddev[ch] < 1e-12) stats.stddev[ch] = 1.0;
    }
    return stats;
}

void normalize(Dataset& data, const NormStats& stats) {
    const std::size_t c = data.images.shape[1];
    if (stats.mean.size() != c || stats.stddev.size() != c) {
        throw ContractError("normalize: stats channel count does not match dataset");
    }
    const std::size_t plane = data.images.shape[2] * data.images.shape[3];
    const std::size_t n = data.images.shape[0];
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            double* p = data.images.values.data() + (i * c + ch) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                p[j] = (p[j] - stats.mean[ch]) / stats.stddev[ch];
            }
        }
    }
}

Dataset synthetic_blob_images(std::size_t classes, std::size_t n,
                              const std::vector<std::size_t>& chw, std::uint64_t seed,
                              double margin) {
    if (classes < 2) throw ContractError("synthetic_blobs: need at least 2 classes");
    if (chw.size() != 3) throw ContractError("synthetic_blobs: image shape must be {C,H,W}");
    const std::size_t dim = shape_numel(chw);
    Rng rng(seed);

    // Random unit-vector centers scaled by the margin; samples add unit
    // Gaussian noise, then everything maps affinely into [0,1].
    std::vector<std::vector<double>> centers(classes, std::vector<double>(dim));
    for (auto& c : centers) {
        double norm = 0.0;
        for (double& v : c) {
            v = normal_real(rng, 0.0, 1.0);
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (double& v : c) v = margin * v / norm;
    }

    const double radius = margin + 4.0;
    Dataset out;
    out.images = Tensor({n, chw[0], chw[1], chw[2]});
    out.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t label = i % classes;
        out.labels[i] = label;
        double* px = out.images.values.data() + i * dim;
        for (std::size_t j = 0; j < dim; ++j) {
            const double v = centers[label][j] + normal_real(rng, 0.0, 1.0);
            px[j] = std::clamp(0.5 + v / (2.0 * radius), 0.0, 1.0);
        }
    }
    return out;
}

Dataset synthetic_blobs(std::size_t classes, std::size_t n, std::size_t dim,
                        std::uint64_t seed, double margin) {
    return synthetic_blob_images(classes, n, {1, 1, dim}, seed, margin);
}

Dataset synthetic_stripes(std::size_t classes, std::size_t n, std::size_t height,
                          std::size_t width, std::uint64_t seed, double noise) {
    if (classes < 2) throw ContractError("synthetic_stripes: need at least 2 classes");
    Rng rng(seed);
    Dataset out;
    out.images = Tensor({n, 1, height, width});
    out.labels.resize(n);

    // Class c is a stripe orientation; each sample draws a random phase so
    // no single pixel is informative on its own.
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t label = i % classes;
        out.labels[i] = label;
        const double theta = M_PI * static_cast<double>(label) / static_cast<double>(classes);
        const double wavelength = 4.0 + 2.0 * static_cast<double>(label % 3);
        const double phase = uniform_real(rng, 0.0, 2.0 * M_PI);
        double* px = out.images.values.data() + i * height * width;
        for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t x = 0; x < width; ++x) {
                const double u = std::cos(theta) * static_cast<double>(x) +
                                 std::sin(theta) * static_cast<double>(y);
                const double wave = std::sin(2.0 * M_PI * u / wavelength + phase);
                const double v = 0.5 + 0.4 * wave + normal_real(rng, 0.0, noise);
                px[y * width + x] = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, std::size_t count) {
    if (count > data.size()) throw ContractError("split_dataset: count exceeds dataset size");
    const std::size_t c = data.images.shape[1];
    const std::size_t h = data.images.shape[2];
    const std::size_t w = data.images.shape[3];
    const std::size_t dim = c * h * w;

    Dataset head, tail;
    head.split = "train";
    tail.split = "test";
    head.images = Tensor({count, c, h, w});
    tail.images = Tensor({data.size() - count, c, h, w});
    std::copy_n(data.images.values.begin(), count * dim, head.images.values.begin());
    std::copy(data.images.values.begin() + static_cast<std::ptrdiff_t>(count * dim),
              data.images.values.end(), tail.images.values.begin());
    head.labels.assign(data.labels.begin(), data.labels.begin() + static_cast<std::ptrdiff_t>(count));
    tail.labels.assign(data.labels.begin() + static_cast<std::ptrdiff_t>(count), data.labels.end());
    return {std::move(head), std::move(tail)};
}

Tensor gather_images(const Dataset& data, const std::vector<std::size_t>& indices) {
    const std::size_t c = data.images.shape[1];
    const std::size_t h = data.images.shape[2];
    const std::size_t w = data.images.shape[3];
    const std::size_t dim = c * h * w;
    Tensor batch({indices.size(), c, h, w});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        std::copy_n(data.images.values.begin() + static_cast<std::ptrdiff_t>(indices[i] * dim),
                    dim, batch.values.begin() + static_cast<std::ptrdiff_t>(i * dim));
    }
    return batch;
}

std::vector<std::size_t> gather_labels(const Dataset& data,
                                       const std::vector<std::size_t>& indices) {
    std::vector<std::size_t> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) out[i] = data.labels[indices[i]];
    return out;
}

} // namespace dst
