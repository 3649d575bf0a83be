#include "cdfl/runner.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace cdfl;

namespace {

const data::Dataset& mnist() {
    static const data::Dataset ds =
        data::load_idx(CDFL_DATA_DIR "/images-idx3-ubyte", CDFL_DATA_DIR "/labels-idx1-ubyte");
    return ds;
}

ExperimentConfig small_config() {
    ExperimentConfig cfg;
    cfg.data.train_per_station = 60;
    cfg.data.test_per_station = 20;
    cfg.batch_size = 16;
    cfg.rounds = 3;
    cfg.seed = 11;
    return cfg;
}

std::string csv_of(const std::vector<MetricsRow>& rows) {
    std::ostringstream out;
    emit_csv(rows, out);
    return out.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

MetricsRow row(std::size_t round, std::size_t station, double acc) {
    MetricsRow r;
    r.round = round;
    r.station = station;
    r.accuracy = acc;
    return r;
}

} // namespace

TEST_CASE("zero rounds emit only the initial evaluation") {
    auto cfg = small_config();
    cfg.rounds = 0;
    const auto res = run_experiment(cfg, {.dataset = &mnist()});
    REQUIRE(res.rows.size() == 4);
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(res.rows[k].round == 0);
        CHECK(res.rows[k].station == k);
        CHECK(res.rows[k].eta.empty());
        CHECK(res.final_models[k] == initial_model(cfg, 784, 28, 28, 10, k));
    }
}

TEST_CASE("metrics completeness and invariants") {
    auto cfg = small_config();
    for (auto algo : {baselines::Algorithm::cdfl, baselines::Algorithm::cfa, baselines::Algorithm::cdfa,
                      baselines::Algorithm::c_dfa}) {
        cfg.aggregator.algorithm = algo;
        cfg.aggregator.layer_fraction = 0.5;
        const auto res = run_experiment(cfg, {.dataset = &mnist()});
        CHECK(res.rows.size() == (cfg.rounds + 1) * 4);
        for (const auto& r : res.rows) {
            CHECK(r.loss >= 0.0);
            CHECK(r.accuracy >= 0.0);
            CHECK(r.accuracy <= 1.0);
            CHECK(r.algorithm == baselines::to_string(algo));
            if (r.round == 0) continue;
            REQUIRE(r.eta.size() == 3);
            double sum = 0.0;
            for (const auto& [id, w] : r.eta) sum += w;
            CHECK(std::abs(sum - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("a single station is plain local training") {
    auto cfg = small_config();
    cfg.topology.stations = 1;
    cfg.rounds = 6;
    const auto res = run_experiment(cfg, {.dataset = &mnist()});

    // Oracle: the nn module alone, same partition and seeds.
    const auto& ds = mnist();
    const auto manifest = data::partition_with_redundancy(
        ds, topology::Topology::from_edges(1, {}),
        {cfg.data.train_per_station, cfg.data.test_per_station, cfg.data.rho, cfg.seed});
    const auto& split = manifest.stations[0];
    std::vector<int> train_labels, test_labels;
    for (auto r : split.train) train_labels.push_back(ds.labels[r]);
    for (auto r : split.test) test_labels.push_back(ds.labels[r]);
    const nn::DataView train{&ds.features, split.train, train_labels};
    const nn::DataView test{&ds.features, split.test, test_labels};

    auto params = initial_model(cfg, 784, 28, 28, 10, 0);
    nn::AdamState adam(params, cfg.optimizer);
    std::mt19937_64 rng(shuffle_seed(cfg.seed, 0));
    REQUIRE(res.rows.size() == cfg.rounds + 1);
    for (std::size_t t = 0; t <= cfg.rounds; ++t) {
        if (t > 0) params = nn::model_update(std::move(params), train, cfg.local_epochs, cfg.batch_size, adam, rng);
        CHECK(res.rows[t].accuracy == nn::evaluate(params, test));
        CHECK(res.rows[t].loss == nn::loss(params, train.all()));
    }
    CHECK(res.final_models[0] == params);
}

TEST_CASE("same initial models for every algorithm") {
    auto cfg = small_config();
    cfg.rounds = 0;
    const auto a = run_experiment(cfg, {.dataset = &mnist()});
    cfg.aggregator.algorithm = baselines::Algorithm::cdfa;
    const auto b = run_experiment(cfg, {.dataset = &mnist()});
    CHECK(a.final_models == b.final_models);
    CHECK_FALSE(a.final_models[0] == a.final_models[1]);
}

TEST_CASE("determinism: reruns and serial versus parallel") {
    const auto cfg = small_config();
    const auto a = run_experiment(cfg, {.serial = false, .dataset = &mnist()});
    const auto b = run_experiment(cfg, {.serial = true, .dataset = &mnist()});
    const auto c = run_experiment(cfg, {.serial = false, .dataset = &mnist()});
    CHECK(csv_of(a.rows) == csv_of(b.rows));
    CHECK(csv_of(a.rows) == csv_of(c.rows));
    CHECK(a.final_models == b.final_models);
}

TEST_CASE("early stop ends the run once every station reaches the target") {
    auto cfg = small_config();
    cfg.rounds = 50;
    cfg.early_stop_acc = 0.0;
    const auto res = run_experiment(cfg, {.dataset = &mnist()});
    CHECK(res.rows.size() == 4);
}

TEST_CASE("configuration failures") {
    auto cfg = small_config();
    cfg.data.train_per_station = 5000;
    CHECK_THROWS_AS(run_experiment(cfg, {.dataset = &mnist()}), ConfigError);
    cfg = small_config();
    cfg.batch_size = 60;
    CHECK_THROWS_AS(run_experiment(cfg, {.dataset = &mnist()}), ConfigError);
    cfg = small_config();
    cfg.data.images = "/nonexistent/images";
    cfg.data.labels = "/nonexistent/labels";
    CHECK_THROWS_AS(run_experiment(cfg), RunError);
}

TEST_CASE("epochs_to_accuracy") {
    std::vector<MetricsRow> rows;
    for (std::size_t t = 0; t <= 20; ++t) {
        rows.push_back(row(t, 0, 0.1 + 0.08 * static_cast<double>(t)));
        rows.push_back(row(t, 1, 0.3));
    }
    const auto at0 = epochs_to_accuracy(rows, 0.0);
    CHECK(at0.at(0) == 0u);
    CHECK(at0.at(1) == 0u);
    const auto at8 = epochs_to_accuracy(rows, 0.8);
    // 0.1 + 0.08 t crosses 0.8 between t = 8 (0.74) and t = 9 (0.82).
    CHECK(at8.at(0) == 9u);
    CHECK_FALSE(at8.at(1).has_value());
}

TEST_CASE("CSV output") {
    SUBCASE("header only when empty") {
        CHECK(csv_of({}) == "round,station,algorithm,loss,accuracy,seed\n");
    }
    SUBCASE("row counts and round trip") {
        auto cfg = small_config();
        cfg.rounds = 2;
        const auto res = run_experiment(cfg, {.dataset = &mnist()});
        const auto text = csv_of(res.rows);
        CHECK(count_lines(text) == 1 + 8 + 4);
        std::istringstream in(text);
        const auto back = read_csv(in);
        REQUIRE(back.size() == res.rows.size());
        for (std::size_t i = 0; i < back.size(); ++i) {
            CHECK(back[i].loss == res.rows[i].loss);
            CHECK(back[i].accuracy == res.rows[i].accuracy);
            CHECK(back[i].algorithm == "cdfl");
            CHECK(back[i].seed == 11);
        }
    }
    SUBCASE("shortest round-trip numbers") {
        std::vector<MetricsRow> rows{row(1, 2, 0.1)};
        rows[0].algorithm = "cfa";
        rows[0].loss = 2.5;
        rows[0].seed = 3;
        CHECK(csv_of(rows) == "round,station,algorithm,loss,accuracy,seed\n1,2,cfa,2.5,0.1,3\n");
    }
}

TEST_CASE("files: CSV, weights and SVG") {
    auto cfg = small_config();
    cfg.rounds = 2;
    const auto res = run_experiment(cfg, {.dataset = &mnist()});
    const auto dir = std::filesystem::temp_directory_path() / "cdfl_runner_test";
    std::filesystem::create_directories(dir);
    emit_csv(res.rows, dir / "m.csv");
    emit_weights_csv(res.rows, dir / "w.csv");
    emit_svg(res.rows, dir / "a.svg");
    emit_svg(res.rows, dir / "l.svg", PlotMetric::loss);

    std::ifstream w(dir / "w.csv");
    std::string header;
    std::getline(w, header);
    CHECK(header == "round,station,neighbor,eta");
    std::size_t lines = 0;
    for (std::string l; std::getline(w, l);) ++lines;
    CHECK(lines == 2 * 4 * 3);

    std::ifstream svg(dir / "a.svg");
    const std::string text((std::istreambuf_iterator<char>(svg)), {});
    CHECK(text.find("<svg") != std::string::npos);
    CHECK(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) > 4);
    std::size_t polylines = 0;
    for (auto p = text.find("<polyline"); p != std::string::npos; p = text.find("<polyline", p + 1)) ++polylines;
    CHECK(polylines == 4);

    CHECK_THROWS(emit_csv(res.rows, "/nonexistent/dir/m.csv"));
    CHECK_THROWS(emit_svg({}, dir / "empty.svg"));
    std::filesystem::remove_all(dir);
}
