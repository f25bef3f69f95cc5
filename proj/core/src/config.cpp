#include "dst/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dst/errors.hpp"

namespace dst {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split_list(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

struct Cursor {
    const std::string& origin;
    std::size_t line;
};

[[noreturn]] void fail(const Cursor& at, const std::string& msg) {
    throw ConfigError(at.origin + ":" + std::to_string(at.line) + ": " + msg);
}

double parse_double(const Cursor& at, const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) fail(at, key + ": trailing characters in '" + v + "'");
        return d;
    } catch (const std::invalid_argument&) {
        fail(at, key + ": expected a number, got '" + v + "'");
    } catch (const std::out_of_range&) {
        fail(at, key + ": number out of range: '" + v + "'");
    }
}

std::uint64_t parse_uint(const Cursor& at, const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const unsigned long long u = std::stoull(v, &used);
        if (used != v.size()) fail(at, key + ": trailing characters in '" + v + "'");
        return u;
    } catch (const std::invalid_argument&) {
        fail(at, key + ": expected an integer, got '" + v + "'");
    } catch (const std::out_of_range&) {
        fail(at, key + ": integer out of range: '" + v + "'");
    }
}

bool parse_bool(const Cursor& at, const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail(at, key + ": expected a boolean, got '" + v + "'");
}

std::vector<std::size_t> parse_size_list(const Cursor& at, const std::string& key,
                                         const std::string& v) {
    std::vector<std::size_t> out;
    if (trim(v).empty()) return out;
    for (const std::string& item : split_list(v, ',')) {
        out.push_back(parse_uint(at, key, item));
    }
    return out;
}

std::vector<std::size_t> parse_shape(const Cursor& at, const std::string& key,
                                     const std::string& v) {
    std::vector<std::size_t> out;
    for (const std::string& item : split_list(v, 'x')) {
        out.push_back(parse_uint(at, key, item));
    }
    return out;
}

} // namespace

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string raw;
    std::string section;
    Cursor at{origin, 0};

    while (std::getline(is, raw)) {
        ++at.line;
        std::string line = raw;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']') fail(at, "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section != "model" && section != "sparsity" && section != "rewire" &&
                section != "train" && section != "data") {
                fail(at, "unknown section [" + section + "]");
            }
            continue;
        }

        const auto eq = line.find('=');
        if (eq == std::string::npos) fail(at, "expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) fail(at, "empty key");
        if (section.empty()) fail(at, "key '" + key + "' outside any section");

        try {
            if (section == "model") {
                if (key == "family") cfg.model.family = family_from_string(value);
                else if (key == "widths") cfg.model.widths = parse_size_list(at, key, value);
                else if (key == "input") cfg.model.input_shape = parse_shape(at, key, value);
                else if (key == "classes") cfg.model.classes = parse_uint(at, key, value);
                else fail(at, "unknown key '" + key + "' in [model]");
            } else if (section == "sparsity") {
                if (key == "sparsity") cfg.train.sparsity = parse_double(at, key, value);
                else if (key == "distribution")
                    cfg.train.distribution = distribution_from_string(value);
                else fail(at, "unknown key '" + key + "' in [sparsity]");
            } else if (section == "rewire") {
                if (key == "strategy") cfg.train.strategy = strategy_from_string(value);
                else if (key == "f0") cfg.train.schedule.f0 = parse_double(at, key, value);
                else if (key == "end_epoch")
                    cfg.train.schedule.end_epoch = parse_uint(at, key, value);
                else if (key == "dsr_threshold")
                    cfg.train.dsr.threshold = parse_double(at, key, value);
                else if (key == "dsr_tolerance")
                    cfg.train.dsr.tolerance = parse_double(at, key, value);
                else fail(at, "unknown key '" + key + "' in [rewire]");
            } else if (section == "train") {
                if (key == "epochs") cfg.train.epochs = parse_uint(at, key, value);
                else if (key == "batch_size") cfg.train.batch_size = parse_uint(at, key, value);
                else if (key == "lr") cfg.train.base_lr = parse_double(at, key, value);
                else if (key == "lr_decay_factor")
                    cfg.train.lr_decay_factor = parse_double(at, key, value);
                else if (key == "milestones")
                    cfg.train.milestones = parse_size_list(at, key, value);
                else if (key == "momentum") cfg.train.momentum = parse_double(at, key, value);
                else if (key == "weight_decay")
                    cfg.train.weight_decay = parse_double(at, key, value);
                else if (key == "seed") cfg.train.seed = parse_uint(at, key, value);
                else fail(at, "unknown key '" + key + "' in [train]");
            } else { // data
                if (key == "source") {
                    if (value != "idx" && value != "blobs" && value != "stripes") {
                        fail(at, "source must be idx, blobs or stripes");
                    }
                    cfg.data.source = value;
                } else if (key == "train_images") cfg.data.train_images = value;
                else if (key == "train_labels") cfg.data.train_labels = value;
                else if (key == "test_images") cfg.data.test_images = value;
                else if (key == "test_labels") cfg.data.test_labels = value;
                else if (key == "n_train") cfg.data.n_train = parse_uint(at, key, value);
                else if (key == "n_test") cfg.data.n_test = parse_uint(at, key, value);
                else if (key == "margin") cfg.data.margin = parse_double(at, key, value);
                else if (key == "noise") cfg.data.noise = parse_double(at, key, value);
                else if (key == "data_seed") cfg.data.data_seed = parse_uint(at, key, value);
                else if (key == "normalize") cfg.data.normalize = parse_bool(at, key, value);
                else fail(at, "unknown key '" + key + "' in [data]");
            }
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            fail(at, e.what());
        }
    }
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path);
    std::ostringstream buffer;
    buffer << is.rdbuf();
    return parse_config_text(buffer.str(), path);
}

LoadedData load_data(const DataConfig& cfg, const ModelSpec& model) {
    LoadedData out;
    if (cfg.source == "idx") {
        if (cfg.train_images.empty() || cfg.train_labels.empty() || cfg.test_images.empty() ||
            cfg.test_labels.empty()) {
            throw ConfigError("data source 'idx' needs train_images, train_labels, "
                              "test_images and test_labels paths");
        }
        out.train = load_idx(cfg.train_images, cfg.train_labels);
        out.test = load_idx(cfg.test_images, cfg.test_labels);
        out.train.split = "train";
        out.test.split = "test";
    } else {
        if (cfg.n_train == 0 || cfg.n_test == 0) {
            throw ConfigError("synthetic data needs n_train >= 1 and n_test >= 1");
        }
        const std::size_t total = cfg.n_train + cfg.n_test;
        Dataset all;
        if (cfg.source == "blobs") {
            all = synthetic_blob_images(model.classes, total, model.input_shape, cfg.data_seed,
                                        cfg.margin);
        } else if (cfg.source == "stripes") {
            if (model.input_shape[0] != 1) {
                throw ConfigError("stripes data is single-channel; model input must be 1xHxW");
            }
            all = synthetic_stripes(model.classes, total, model.input_shape[1],
                                    model.input_shape[2], cfg.data_seed, cfg.noise);
        } else {
            throw ConfigError("unknown data source '" + cfg.source + "'");
        }
        auto [train, test] = split_dataset(all, cfg.n_train);
        out.train = std::move(train);
        out.test = std::move(test);
    }
    if (cfg.normalize) {
        out.stats = compute_norm_stats(out.train);
        normalize(out.train, out.stats);
        normalize(out.test, out.stats);
    } else {
        const std::size_t channels = out.train.images.shape[1];
        out.stats.mean.assign(channels, 0.0);
        out.stats.stddev.assign(channels, 1.0);
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> config_echo(const RunConfig& cfg) {
    std::vector<std::pair<std::string, std::string>> echo;
    auto add = [&echo](const std::string& k, const std::string& v) { echo.emplace_back(k, v); };
    auto num = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%g", v);
        return std::string(buf);
    };
    auto list = [](const std::vector<std::size_t>& xs, char sep) {
        std::string s;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (i) s += sep;
            s += std::to_string(xs[i]);
        }
        return s;
    };

    add("model.family", to_string(cfg.model.family));
    add("model.widths", list(cfg.model.widths, ','));
    add("model.input", list(cfg.model.input_shape, 'x'));
    add("model.classes", std::to_string(cfg.model.classes));
    add("sparsity.sparsity", num(cfg.train.sparsity));
    add("sparsity.distribution", to_string(cfg.train.distribution));
    add("rewire.strategy", to_string(cfg.train.strategy));
    add("rewire.f0", num(cfg.train.schedule.f0));
    add("rewire.end_epoch", std::to_string(cfg.train.schedule.end_epoch));
    add("rewire.dsr_threshold", num(cfg.train.dsr.threshold));
    add("rewire.dsr_tolerance", num(cfg.train.dsr.tolerance));
    add("train.epochs", std::to_string(cfg.train.epochs));
    add("train.batch_size", std::to_string(cfg.train.batch_size));
    add("train.lr", num(cfg.train.base_lr));
    add("train.lr_decay_factor", num(cfg.train.lr_decay_factor));
    add("train.milestones", list(cfg.train.milestones, ','));
    add("train.momentum", num(cfg.train.momentum));
    add("train.weight_decay", num(cfg.train.weight_decay));
    add("train.seed", std::to_string(cfg.train.seed));
    add("data.source", cfg.data.source);
    if (cfg.data.source == "idx") {
        add("data.train_images", cfg.data.train_images);
        add("data.train_labels", cfg.data.train_labels);
        add("data.test_images", cfg.data.test_images);
        add("data.test_labels", cfg.data.test_labels);
    } else {
        add("data.n_train", std::to_string(cfg.data.n_train));
        add("data.n_test", std::to_string(cfg.data.n_test));
        add("data.data_seed", std::to_string(cfg.data.data_seed));
        if (cfg.data.source == "blobs") add("data.margin", num(cfg.data.margin));
        if (cfg.data.source == "stripes") add("data.noise", num(cfg.data.noise));
    }
    add("data.normalize", cfg.data.normalize ? "true" : "false");
    return echo;
}

} // namespace dst
