// Command-line front end: run, partition, sketch, plot, compare.

#include "cdfl/config.hpp"
#include "cdfl/data.hpp"
#include "cdfl/runner.hpp"
#include "cdfl/sketch.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

cdfl::ExperimentConfig load(const std::string& path) {
    auto cfg = cdfl::load_config(path);
    cdfl::apply_env_overrides(cfg);
    cfg.validate();
    return cfg;
}

std::string cell(const std::vector<cdfl::MetricsRow>& rows, std::size_t station, std::optional<std::size_t> reached) {
    double acc = 0.0;
    std::size_t round = 0;
    for (const auto& r : rows) {
        if (r.station != station) continue;
        if (reached ? r.round == *reached : r.round >= round) {
            acc = r.accuracy;
            round = r.round;
        }
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%zu(%.2f)", reached ? "" : ">", round, acc);
    return buf;
}

void print_table(const std::vector<std::pair<std::string, std::vector<cdfl::MetricsRow>>>& runs, double threshold) {
    std::printf("rounds to accuracy >= %.2f  (round(accuracy); '>' = not reached, final round shown)\n", threshold);
    std::size_t stations = 0;
    for (const auto& [name, rows] : runs)
        for (const auto& r : rows) stations = std::max(stations, r.station + 1);
    std::printf("%-10s", "algorithm");
    for (std::size_t k = 0; k < stations; ++k) std::printf("  station %-5zu", k);
    std::printf("\n");
    for (const auto& [name, rows] : runs) {
        const auto reached = cdfl::epochs_to_accuracy(rows, threshold);
        std::printf("%-10s", name.c_str());
        for (std::size_t k = 0; k < stations; ++k) {
            auto it = reached.find(k);
            std::printf("  %-13s", cell(rows, k, it == reached.end() ? std::nullopt : it->second).c_str());
        }
        std::printf("\n");
    }
}

int cmd_run(const std::string& config_path, bool serial, const std::filesystem::path& out_dir, double threshold) {
    const auto cfg = load(config_path);
    const auto result = cdfl::run_experiment(cfg, {.serial = serial});
    std::filesystem::create_directories(out_dir);
    cdfl::emit_csv(result.rows, out_dir / "metrics.csv");
    cdfl::emit_weights_csv(result.rows, out_dir / "mixing_weights.csv");
    cdfl::emit_svg(result.rows, out_dir / "accuracy.svg", cdfl::PlotMetric::accuracy);
    cdfl::emit_svg(result.rows, out_dir / "loss.svg", cdfl::PlotMetric::loss);
    {
        std::ofstream manifest(out_dir / "manifest.txt");
        cdfl::data::write_manifest(manifest, result.manifest);
    }
    print_table({{std::string(cdfl::baselines::to_string(cfg.aggregator.algorithm)), result.rows}}, threshold);
    std::printf("wrote %s\n", (out_dir / "metrics.csv").string().c_str());
    return 0;
}

int cmd_partition(const std::string& config_path, const std::filesystem::path& out) {
    const auto cfg = load(config_path);
    const auto ds = cdfl::data::load_idx(cfg.data.images, cfg.data.labels);
    cdfl::data::PartitionManifest manifest;
    try {
        manifest = cdfl::data::partition_with_redundancy(
            ds, cdfl::build_topology(cfg.topology),
            {cfg.data.train_per_station, cfg.data.test_per_station, cfg.data.rho, cfg.seed});
    } catch (const cdfl::data::DataError& e) {
        throw cdfl::ConfigError(e.what());
    }
    std::ofstream f(out);
    if (!f) throw cdfl::RunError("cannot write " + out.string());
    cdfl::data::write_manifest(f, manifest);
    return 0;
}

int cmd_sketch(const std::string& input, bool lc) {
    std::ifstream in(input, std::ios::binary);
    if (!in) throw cdfl::RunError("cannot open " + input);
    cdfl::sketch::SketchSet sk;
    std::string line;
    std::size_t items = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        sk.insert(line);
        ++items;
    }
    std::printf("items %zu\nestimate %.6f\n", items, sk.estimate_cardinality(lc));
    return 0;
}

int cmd_plot(const std::string& csv, const std::filesystem::path& out, const std::string& metric) {
    std::ifstream in(csv);
    if (!in) throw cdfl::RunError("cannot open " + csv);
    const auto rows = cdfl::read_csv(in);
    cdfl::emit_svg(rows, out, metric == "loss" ? cdfl::PlotMetric::loss : cdfl::PlotMetric::accuracy);
    return 0;
}

int cmd_compare(const std::vector<std::string>& configs, bool serial, const std::filesystem::path& out_dir,
                double threshold) {
    std::vector<std::pair<std::string, std::vector<cdfl::MetricsRow>>> runs;
    std::vector<cdfl::MetricsRow> joined;
    for (const auto& path : configs) {
        const auto cfg = load(path);
        auto result = cdfl::run_experiment(cfg, {.serial = serial});
        std::string name(cdfl::baselines::to_string(cfg.aggregator.algorithm));
        joined.insert(joined.end(), result.rows.begin(), result.rows.end());
        runs.emplace_back(std::move(name), std::move(result.rows));
    }
    std::filesystem::create_directories(out_dir);
    cdfl::emit_csv(joined, out_dir / "compare.csv");
    cdfl::emit_svg(joined, out_dir / "compare_accuracy.svg", cdfl::PlotMetric::accuracy);
    cdfl::emit_svg(joined, out_dir / "compare_loss.svg", cdfl::PlotMetric::loss);
    print_table(runs, threshold);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Redundancy-aware decentralized federated learning simulator"};
    app.require_subcommand(1);

    std::string config_path, out, input, csv, metric = "accuracy";
    std::vector<std::string> configs;
    bool serial = false, lc = false;
    double threshold = 0.8;

    auto* run = app.add_subcommand("run", "run one experiment");
    run->add_option("--config", config_path, "config file")->required();
    run->add_flag("--serial", serial, "process stations one at a time");
    run->add_option("--out", out, "output directory")->default_val("out");
    run->add_option("--threshold", threshold, "accuracy threshold for the summary table");

    auto* partition = app.add_subcommand("partition", "write the data partition manifest");
    partition->add_option("--config", config_path, "config file")->required();
    partition->add_option("--out", out, "manifest path")->required();

    auto* sketch = app.add_subcommand("sketch", "estimate distinct items, one item per line");
    sketch->add_option("--input", input, "item file")->required();
    sketch->add_flag("--lc", lc, "apply the linear-counting correction");

    auto* plot = app.add_subcommand("plot", "render a metrics CSV as SVG");
    plot->add_option("--csv", csv, "metrics CSV")->required();
    plot->add_option("--out", out, "SVG path")->required();
    plot->add_option("--metric", metric, "accuracy or loss")->check(CLI::IsMember({"accuracy", "loss"}));

    auto* compare = app.add_subcommand("compare", "run several configs side by side");
    compare->add_option("--configs", configs, "comma-separated config files")->required()->delimiter(',');
    compare->add_flag("--serial", serial, "process stations one at a time");
    compare->add_option("--out", out, "output directory")->default_val("out");
    compare->add_option("--threshold", threshold, "accuracy threshold for the summary table");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*run) return cmd_run(config_path, serial, out, threshold);
        if (*partition) return cmd_partition(config_path, out);
        if (*sketch) return cmd_sketch(input, lc);
        if (*plot) return cmd_plot(csv, out, metric);
        if (*compare) return cmd_compare(configs, serial, out, threshold);
    } catch (const cdfl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
