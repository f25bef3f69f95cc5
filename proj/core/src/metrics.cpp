#include "dst/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "dst/errors.hpp"

namespace dst {

std::pair<std::size_t, std::size_t> empty_unit_stats(const SparseLayerState& layer) {
    const std::size_t n_out = layer.shape.n_out;
    const std::size_t n_in = layer.shape.n_in;
    const std::size_t k = layer.shape.kernel_h * layer.shape.kernel_w;

    std::vector<char> out_used(n_out, 0);
    std::vector<char> in_used(n_in, 0);
    for (std::size_t o = 0; o < n_out; ++o) {
        for (std::size_t i = 0; i < n_in; ++i) {
            const double* cell = layer.mask.values.data() + (o * n_in + i) * k;
            for (std::size_t j = 0; j < k; ++j) {
                if (cell[j] != 0.0) {
                    out_used[o] = 1;
                    in_used[i] = 1;
                    break;
                }
            }
        }
    }
    std::size_t empty_out = 0, empty_in = 0;
    for (char u : out_used) empty_out += !u;
    for (char u : in_used) empty_in += !u;
    return {empty_out, empty_in};
}

std::vector<LayerStats> collect_layer_stats(const Model& model) {
    std::vector<LayerStats> stats;
    stats.reserve(model.layers.size());
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        const auto& layer = model.layers[li];
        LayerStats s;
        s.layer_index = li;
        s.kind = layer.kind;
        s.shape = layer.shape;
        s.active = layer.active_count();
        s.density = layer.density();
        const auto [eo, ei] = empty_unit_stats(layer);
        s.empty_outputs = eo;
        s.empty_inputs = ei;
        stats.push_back(s);
    }
    return stats;
}

std::size_t shrunk_param_count(const Model& model) {
    std::size_t total = 0;
    for (const auto& layer : model.layers) {
        const auto [eo, ei] = empty_unit_stats(layer);
        total += (layer.shape.n_out - eo) * (layer.shape.n_in - ei) * layer.shape.kernel_h *
                 layer.shape.kernel_w;
    }
    return total;
}

void export_mask_image(const SparseLayerState& layer, const std::string& path) {
    const std::size_t height = layer.shape.n_out;
    const std::size_t width = layer.mask.size() / height;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open mask image for writing: " + path);
    os << "P5\n" << width << " " << height << "\n255\n";
    std::vector<unsigned char> row(width);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            row[x] = layer.mask[y * width + x] != 0.0 ? 255 : 0;
        }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(width));
    }
    if (!os) throw IoError("write failed for mask image: " + path);
}

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

void write_metrics_csv(const std::vector<MetricsRecord>& records, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open metrics CSV for writing: " + path);
    const std::size_t n_layers = records.empty() ? 0 : records.front().layers.size();
    os << "epoch,lr,drop_fraction,train_loss,test_acc";
    for (std::size_t i = 0; i < n_layers; ++i) {
        os << ",layer" << i << "_density,layer" << i << "_dropped,layer" << i << "_inserted";
    }
    os << "\n";
    for (const auto& r : records) {
        os << r.epoch << ',' << fmt_double(r.lr) << ',' << fmt_double(r.drop_fraction) << ','
           << fmt_double(r.train_loss) << ',' << fmt_double(r.test_accuracy);
        for (const auto& l : r.layers) {
            os << ',' << fmt_double(l.density) << ',' << l.dropped << ',' << l.inserted;
        }
        os << "\n";
    }
    if (!os) throw IoError("write failed for metrics CSV: " + path);
}

std::vector<MetricsRecord> parse_metrics_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open metrics CSV: " + path);
    std::string line;
    std::size_t line_no = 0;

    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::string cur;
        for (char c : s) {
            if (c == ',') {
                out.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        out.push_back(cur);
        return out;
    };

    if (!std::getline(is, line)) throw ParseError(path + ": missing header", 1);
    ++line_no;
    const auto header = split(line);
    if (header.size() < 5 || (header.size() - 5) % 3 != 0) {
        throw ParseError(path + ": malformed header", line_no);
    }
    const std::size_t n_layers = (header.size() - 5) / 3;

    std::vector<MetricsRecord> records;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != header.size()) {
            throw ParseError(path + ": expected " + std::to_string(header.size()) +
                                 " columns, got " + std::to_string(cells.size()),
                             line_no);
        }
        try {
            MetricsRecord r;
            r.epoch = std::stoull(cells[0]);
            r.lr = std::stod(cells[1]);
            r.drop_fraction = std::stod(cells[2]);
            r.train_loss = std::stod(cells[3]);
            r.test_accuracy = std::stod(cells[4]);
            r.layers.resize(n_layers);
            for (std::size_t i = 0; i < n_layers; ++i) {
                r.layers[i].density = std::stod(cells[5 + 3 * i]);
                r.layers[i].dropped = std::stoull(cells[6 + 3 * i]);
                r.layers[i].inserted = std::stoull(cells[7 + 3 * i]);
            }
            records.push_back(std::move(r));
        } catch (const std::invalid_argument&) {
            throw ParseError(path + ": non-numeric cell", line_no);
        } catch (const std::out_of_range&) {
            throw ParseError(path + ": numeric overflow", line_no);
        }
    }
    return records;
}

namespace {

std::string json_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size() + 2);
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            default:
                if (static_cast<unsigned char>(c) < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof(buf), "\\u%04x", c);
                    out += buf;
                } else {
                    out += c;
                }
        }
    }
    return out;
}

bool looks_numeric(const std::string& s) {
    if (s.empty()) return false;
    char* end = nullptr;
    std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size();
}

} // namespace

std::string run_summary_json(const RunSummary& summary) {
    std::ostringstream os;
    os << "{\n";
    for (const auto& [key, value] : summary.config_echo) {
        os << "  \"" << json_escape(key) << "\": ";
        if (looks_numeric(value)) {
            os << value;
        } else {
            os << '"' << json_escape(value) << '"';
        }
        os << ",\n";
    }
    os << "  \"final_test_accuracy\": " << fmt_double(summary.final_test_accuracy) << ",\n";
    os << "  \"metrics_csv\": \"" << json_escape(summary.metrics_csv) << "\",\n";
    os << "  \"layer_sizes\": \"";
    for (std::size_t i = 0; i < summary.layer_sizes.size(); ++i) {
        if (i) os << ',';
        os << summary.layer_sizes[i];
    }
    os << "\",\n";
    os << "  \"total_weights\": " << summary.total_weights << ",\n";
    os << "  \"total_active\": " << summary.total_active << ",\n";
    os << "  \"shrunk_params\": " << summary.shrunk_params << ",\n";
    os << "  \"wall_seconds\": " << fmt_double(summary.wall_seconds) << "\n";
    os << "}\n";
    return os.str();
}

void write_run_summary(const RunSummary& summary, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open run summary for writing: " + path);
    os << run_summary_json(summary);
    if (!os) throw IoError("write failed for run summary: " + path);
}

} // namespace dst
