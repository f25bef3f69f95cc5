#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "dst/errors.hpp"
#include "dst/metrics.hpp"
#include "dst/plots.hpp"
#include "support/oracles.hpp"

using namespace dst;
using dst::testing::brute_force_empty_units;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

SparseLayerState linear_layer_with_mask(std::size_t n_out, std::size_t n_in, Tensor mask) {
    SparseLayerState layer;
    layer.kind = LayerKind::Linear;
    layer.shape = {n_in, n_out, 1, 1, false};
    layer.weight = Tensor::zeros({n_out, n_in});
    layer.mask = std::move(mask);
    layer.bias = Tensor::zeros({n_out});
    return layer;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

} // namespace

TEST_CASE("empty unit stats on linear masks") {
    SUBCASE("all ones") {
        const auto layer = linear_layer_with_mask(3, 4, Tensor::full({3, 4}, 1.0));
        CHECK(empty_unit_stats(layer) == std::pair<std::size_t, std::size_t>{0, 0});
    }
    SUBCASE("all zeros") {
        const auto layer = linear_layer_with_mask(3, 4, Tensor::zeros({3, 4}));
        CHECK(empty_unit_stats(layer) == std::pair<std::size_t, std::size_t>{3, 4});
    }
    SUBCASE("single active cell at (0,0)") {
        Tensor mask = Tensor::zeros({3, 3});
        mask.values[0] = 1.0;
        const auto layer = linear_layer_with_mask(3, 3, std::move(mask));
        CHECK(empty_unit_stats(layer) == std::pair<std::size_t, std::size_t>{2, 2});
    }
}

TEST_CASE("empty unit stats on conv masks reduce over kernel slices") {
    SparseLayerState layer;
    layer.kind = LayerKind::Conv;
    layer.shape = {3, 2, 2, 2, true}; // 2 filters, 3 input channels, 2x2
    layer.weight = Tensor::zeros({2, 3, 2, 2});
    layer.bias = Tensor::zeros({2});
    layer.mask = Tensor::zeros({2, 3, 2, 2});
    // Filter 0 uses channel 1 (one tap); filter 1 is fully empty.
    layer.mask.values[(0 * 3 + 1) * 4 + 3] = 1.0;
    const auto [eo, ei] = empty_unit_stats(layer);
    CHECK(eo == 1); // filter 1
    CHECK(ei == 2); // channels 0 and 2
}

TEST_CASE("empty unit stats agree with a brute-force scan on random masks") {
    Rng rng(81);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n_out = 1 + trial % 7;
        const std::size_t n_in = 1 + (trial / 3) % 9;
        const std::size_t k = trial % 2 ? 1 : 3;
        SparseLayerState layer;
        layer.kind = k == 1 ? LayerKind::Linear : LayerKind::Conv;
        layer.shape = {n_in, n_out, k, k, k != 1};
        layer.weight = Tensor::zeros({n_out, n_in, k, k});
        layer.bias = Tensor::zeros({n_out});
        layer.mask = random_mask({n_out, n_in, k, k},
                                 static_cast<std::size_t>(uniform_real(rng, 0.0, 1.0) *
                                                          static_cast<double>(n_out * n_in * k * k)),
                                 rng);
        const auto got = empty_unit_stats(layer);
        const auto want = brute_force_empty_units(layer.mask, n_out, n_in, k * k);
        REQUIRE(got == want);
    }
}

TEST_CASE("shrunk parameter count") {
    SUBCASE("no empty units keeps the dense count") {
        Model model;
        model.layers.push_back(linear_layer_with_mask(3, 4, Tensor::full({3, 4}, 1.0)));
        CHECK(shrunk_param_count(model) == 12);
    }
    SUBCASE("half empty rows and columns shrink to a quarter") {
        Tensor mask = Tensor::zeros({4, 4});
        for (std::size_t o = 0; o < 2; ++o)
            for (std::size_t i = 0; i < 2; ++i) mask.values[o * 4 + i] = 1.0;
        Model model;
        model.layers.push_back(linear_layer_with_mask(4, 4, std::move(mask)));
        CHECK(shrunk_param_count(model) == 4); // 16 / 4
    }
    SUBCASE("two-layer sum") {
        Tensor m0 = Tensor::zeros({2, 3});
        m0.values[0] = 1.0; // layer 0: 1 empty row, 2 empty cols -> 1*1
        Tensor m1 = Tensor::full({2, 2}, 1.0); // layer 1: dense -> 4
        Model model;
        model.layers.push_back(linear_layer_with_mask(2, 3, std::move(m0)));
        model.layers.push_back(linear_layer_with_mask(2, 2, std::move(m1)));
        CHECK(shrunk_param_count(model) == 1 + 4);
    }
}

TEST_CASE("mask bitmaps are valid P5 graymaps") {
    SUBCASE("all-active mask renders white") {
        const auto layer = linear_layer_with_mask(4, 4, Tensor::full({4, 4}, 1.0));
        const std::string path = temp_path("dst_mask_all.pgm");
        export_mask_image(layer, path);
        const std::string bytes = slurp(path);
        const std::string header = "P5\n4 4\n255\n";
        REQUIRE(bytes.size() == header.size() + 16);
        CHECK(bytes.substr(0, header.size()) == header);
        for (std::size_t i = header.size(); i < bytes.size(); ++i) {
            CHECK(static_cast<unsigned char>(bytes[i]) == 255);
        }
        std::filesystem::remove(path);
    }
    SUBCASE("checkerboard alternates 255 and 0") {
        Tensor mask({2, 2}, {1, 0, 0, 1});
        const auto layer = linear_layer_with_mask(2, 2, std::move(mask));
        const std::string path = temp_path("dst_mask_checker.pgm");
        export_mask_image(layer, path);
        const std::string bytes = slurp(path);
        const std::string header = "P5\n2 2\n255\n";
        REQUIRE(bytes.size() == header.size() + 4);
        CHECK(static_cast<unsigned char>(bytes[header.size() + 0]) == 255);
        CHECK(static_cast<unsigned char>(bytes[header.size() + 1]) == 0);
        CHECK(static_cast<unsigned char>(bytes[header.size() + 2]) == 0);
        CHECK(static_cast<unsigned char>(bytes[header.size() + 3]) == 255);
        std::filesystem::remove(path);
    }
    SUBCASE("conv masks flatten to n_out by n_in*kh*kw") {
        SparseLayerState layer;
        layer.kind = LayerKind::Conv;
        layer.shape = {3, 2, 2, 2, true};
        layer.mask = Tensor::full({2, 3, 2, 2}, 1.0);
        const std::string path = temp_path("dst_mask_conv.pgm");
        export_mask_image(layer, path);
        const std::string bytes = slurp(path);
        CHECK(bytes.substr(0, 10) == "P5\n12 2\n25");
        std::filesystem::remove(path);
    }
    SUBCASE("unwritable path raises an io error") {
        const auto layer = linear_layer_with_mask(2, 2, Tensor::full({2, 2}, 1.0));
        CHECK_THROWS_AS(export_mask_image(layer, "/no/such/dir/mask.pgm"), IoError);
    }
}

namespace {

std::vector<MetricsRecord> sample_records() {
    std::vector<MetricsRecord> records;
    for (std::size_t e = 0; e < 4; ++e) {
        MetricsRecord r;
        r.epoch = e;
        r.lr = 0.1 / (1.0 + static_cast<double>(e));
        r.drop_fraction = e == 0 ? 0.0 : 0.1 / static_cast<double>(e);
        r.train_loss = 2.3 - 0.37 * static_cast<double>(e);
        r.test_accuracy = 25.0 * static_cast<double>(e) + 0.125;
        r.layers = {{0.5 + 0.01 * static_cast<double>(e), e, e},
                    {1.0 / 3.0 - 0.01 * static_cast<double>(e), 2 * e, 2 * e}};
        records.push_back(r);
    }
    return records;
}

} // namespace

TEST_CASE("metrics CSV round trips losslessly") {
    const auto records = sample_records();
    const std::string path = temp_path("dst_metrics.csv");
    write_metrics_csv(records, path);

    const auto parsed = parse_metrics_csv(path);
    REQUIRE(parsed.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(parsed[i].epoch == records[i].epoch);
        CHECK(parsed[i].lr == records[i].lr);
        CHECK(parsed[i].drop_fraction == records[i].drop_fraction);
        CHECK(parsed[i].train_loss == records[i].train_loss);
        CHECK(parsed[i].test_accuracy == records[i].test_accuracy);
        REQUIRE(parsed[i].layers.size() == records[i].layers.size());
        for (std::size_t li = 0; li < records[i].layers.size(); ++li) {
            CHECK(parsed[i].layers[li].density == records[i].layers[li].density);
            CHECK(parsed[i].layers[li].dropped == records[i].layers[li].dropped);
            CHECK(parsed[i].layers[li].inserted == records[i].layers[li].inserted);
        }
    }
    std::filesystem::remove(path);
}

TEST_CASE("metrics CSV parse errors name the line") {
    const std::string path = temp_path("dst_metrics_bad.csv");
    {
        std::ofstream os(path);
        os << "epoch,lr,drop_fraction,train_loss,test_acc,layer0_density,layer0_dropped,"
              "layer0_inserted\n";
        os << "0,0.1,0,1.0,50.0,0.5,1\n"; // one cell short
    }
    CHECK_THROWS_AS(parse_metrics_csv(path), ParseError);
    {
        std::ofstream os(path);
        os << "epoch,lr,drop_fraction,train_loss,test_acc,layer0_density,layer0_dropped,"
              "layer0_inserted\n";
        os << "0,0.1,zero,1.0,50.0,0.5,1,1\n";
    }
    CHECK_THROWS_AS(parse_metrics_csv(path), ParseError);
    std::filesystem::remove(path);
}

TEST_CASE("run summary JSON is valid and carries the echo") {
    RunSummary summary;
    summary.config_echo = {{"model.family", "mlp"}, {"train.seed", "7"}};
    summary.layer_sizes = {200704, 32768, 1280};
    summary.final_test_accuracy = 97.5;
    summary.metrics_csv = "out/metrics.csv";
    summary.shrunk_params = 1234;
    summary.total_weights = 234752;
    summary.total_active = 23475;
    summary.wall_seconds = 12.5;

    const auto j = nlohmann::json::parse(run_summary_json(summary));
    CHECK(j["model.family"] == "mlp");
    CHECK(j["train.seed"] == 7);
    CHECK(j["final_test_accuracy"] == doctest::Approx(97.5));
    CHECK(j["layer_sizes"] == "200704,32768,1280");
    CHECK(j["shrunk_params"] == 1234);
}

TEST_CASE("emit_plots renders three charts with proportional bars") {
    const auto records = sample_records();
    const std::string csv = temp_path("dst_plot_metrics.csv");
    write_metrics_csv(records, csv);
    const std::string out_dir = temp_path("dst_plots");
    std::filesystem::create_directories(out_dir);

    const auto written = emit_plots(csv, out_dir, {100, 300});
    REQUIRE(written.size() == 3);
    for (const auto& path : written) CHECK(std::filesystem::exists(path));

    // Bar heights in the density chart are proportional to the densities.
    const std::string svg = slurp(out_dir + "/density_bars.svg");
    std::vector<double> heights;
    std::size_t pos = 0;
    while ((pos = svg.find("<rect", pos)) != std::string::npos) {
        const std::size_t end = svg.find("/>", pos);
        const std::string tag = svg.substr(pos, end - pos);
        if (tag.find("#4878cf") != std::string::npos) {
            const std::size_t h = tag.find("height=\"");
            heights.push_back(std::stod(tag.substr(h + 8)));
        }
        pos = end;
    }
    REQUIRE(heights.size() == 2);
    const double d0 = records.back().layers[0].density;
    const double d1 = records.back().layers[1].density;
    CHECK(heights[0] / heights[1] == doctest::Approx(d0 / d1).epsilon(0.01));

    // Plot area is 320 px tall; a density of 0.53 must land at 0.53 * 320.
    CHECK(heights[0] == doctest::Approx(d0 * 320.0).epsilon(0.01));

    CHECK_THROWS_AS(emit_plots(csv, out_dir, {100}), ContractError);
    std::filesystem::remove_all(out_dir);
    std::filesystem::remove(csv);
}

TEST_CASE("emit_plots rejects malformed CSVs with a line number") {
    const std::string csv = temp_path("dst_plot_bad.csv");
    {
        std::ofstream os(csv);
        os << "epoch,lr\n";
    }
    CHECK_THROWS_AS(emit_plots(csv, std::filesystem::temp_directory_path().string(), {}),
                    ParseError);
    std::filesystem::remove(csv);
}

TEST_CASE("single-layer run produces one bar per chart") {
    std::vector<MetricsRecord> records;
    MetricsRecord r;
    r.epoch = 0;
    r.lr = 0.1;
    r.train_loss = 1.0;
    r.test_accuracy = 50.0;
    r.layers = {{0.25, 0, 0}};
    records.push_back(r);
    const std::string csv = temp_path("dst_plot_single.csv");
    write_metrics_csv(records, csv);
    const std::string out_dir = temp_path("dst_plots_single");
    std::filesystem::create_directories(out_dir);
    emit_plots(csv, out_dir, {64});

    const std::string svg = slurp(out_dir + "/density_bars.svg");
    std::size_t bars = 0;
    std::size_t pos = 0;
    while ((pos = svg.find("<rect", pos)) != std::string::npos) {
        ++bars;
        ++pos;
    }
    CHECK(bars == 2); // background + one bar
    std::filesystem::remove_all(out_dir);
    std::filesystem::remove(csv);
}
