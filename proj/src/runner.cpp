#include "cdfl/runner.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <chrono>
#include <exception>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <thread>

namespace cdfl {

namespace {

using consensus::StationId;

struct Station {
    StationId id = 0;
    std::vector<std::size_t> train_rows;
    std::vector<int> train_labels;
    std::vector<std::size_t> test_rows;
    std::vector<int> test_labels;

    nn::ModelParams params;
    nn::AdamState adam;
    std::mt19937_64 rng;

    sketch::SketchSet sketch;
    std::vector<sketch::ProbeIndices> probes;
    std::vector<std::uint8_t> sketch_wire;

    consensus::MixingWeights eta;

    nn::DataView train_view(const nn::Matrix& features) const { return {&features, train_rows, train_labels}; }
    nn::DataView test_view(const nn::Matrix& features) const { return {&features, test_rows, test_labels}; }
};

// Runs fn(k) for every station, on one thread per station unless serial.
// Station failures are reported in station order.
void for_each_station(std::size_t count, bool serial, std::size_t round, const std::function<void(std::size_t)>& fn) {
    std::vector<std::exception_ptr> errors(count);
    auto guarded = [&](std::size_t k) {
        try {
            fn(k);
        } catch (...) {
            errors[k] = std::current_exception();
        }
    };
    if (serial || count == 1) {
        for (std::size_t k = 0; k < count; ++k) guarded(k);
    } else {
        std::vector<std::jthread> threads;
        threads.reserve(count);
        for (std::size_t k = 0; k < count; ++k) threads.emplace_back(guarded, k);
    }
    for (std::size_t k = 0; k < count; ++k) {
        if (!errors[k]) continue;
        try {
            std::rethrow_exception(errors[k]);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw RunError("round " + std::to_string(round) + ", station " + std::to_string(k) + ": " + e.what());
        }
    }
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}

std::vector<std::pair<std::size_t, double>> snapshot(const consensus::MixingWeights& w) {
    return {w.weights.begin(), w.weights.end()};
}

} // namespace

nn::ModelParams initial_model(const ExperimentConfig& config, std::size_t inputs, std::size_t image_rows,
                              std::size_t image_cols, std::size_t classes, std::size_t station) {
    std::mt19937_64 rng(config.seed ^ static_cast<std::uint64_t>(station));
    if (config.model.kind == "tiny_cnn") return nn::make_tiny_cnn(image_rows, image_cols, 1, classes, rng);
    return nn::make_mlp(inputs, config.model.hidden, classes, rng);
}

std::uint64_t shuffle_seed(std::uint64_t seed, std::size_t station) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(station), 0x5348u};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    return (std::uint64_t{words[1]} << 32) | words[0];
}

topology::Topology build_topology(const TopologySpec& spec) {
    try {
        if (spec.stations == 1) return topology::Topology::from_edges(1, {});
        if (spec.kind == "ring") return topology::ring(spec.stations);
        return topology::Topology::from_edges(spec.stations, spec.edges);
    } catch (const topology::TopologyError& e) {
        throw ConfigError(e.what());
    }
}

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
    config.validate();

    data::Dataset loaded;
    const data::Dataset* ds = options.dataset;
    if (ds == nullptr) {
        try {
            loaded = data::load_idx(config.data.images, config.data.labels);
        } catch (const data::DataError& e) {
            throw RunError(e.what());
        }
        ds = &loaded;
    }

    const topology::Topology topo = build_topology(config.topology);
    const std::size_t k_count = topo.size();

    ExperimentResult result;
    try {
        result.manifest = data::partition_with_redundancy(
            *ds, topo,
            {config.data.train_per_station, config.data.test_per_station, config.data.rho, config.seed});
    } catch (const data::DataError& e) {
        throw ConfigError(e.what());
    }

    const std::string algo_name(baselines::to_string(config.aggregator.algorithm));
    const nn::Matrix& features = ds->features;

    std::vector<Station> stations(k_count);
    for_each_station(k_count, options.serial, 0, [&](std::size_t k) {
        Station& st = stations[k];
        st.id = k;
        const auto& split = result.manifest.stations[k];
        st.train_rows = split.train;
        st.test_rows = split.test;
        for (auto r : st.train_rows) st.train_labels.push_back(ds->labels[r]);
        for (auto r : st.test_rows) st.test_labels.push_back(ds->labels[r]);

        st.params = initial_model(config, features.cols, ds->image_rows, ds->image_cols, ds->classes, k);
        st.adam = nn::AdamState(st.params, config.optimizer);
        st.rng.seed(shuffle_seed(config.seed, k));

        st.sketch = sketch::SketchSet(config.sketch);
        st.probes.reserve(st.train_rows.size());
        for (auto r : st.train_rows) {
            st.probes.push_back(
                sketch::probe_indices(config.sketch, data::serialize_item(*ds, r, config.data.quantization_levels)));
            st.sketch.insert(st.probes.back());
        }
        st.sketch_wire = st.sketch.serialize();
    });

    std::vector<std::size_t> sizes(k_count);
    for (std::size_t k = 0; k < k_count; ++k) sizes[k] = stations[k].train_rows.size();

    auto emit_round = [&](std::size_t round, const std::vector<double>& wall) {
        std::vector<MetricsRow> rows(k_count);
        for_each_station(k_count, options.serial, round, [&](std::size_t k) {
            const Station& st = stations[k];
            MetricsRow& row = rows[k];
            row.round = round;
            row.station = k;
            row.algorithm = algo_name;
            row.loss = nn::loss(st.params, st.train_view(features).all());
            row.accuracy = nn::evaluate(st.params, st.test_view(features));
            if (round > 0) row.eta = snapshot(st.eta);
            row.wall_ms = wall[k];
            row.seed = config.seed;
        });
        bool all_reached = config.early_stop_acc.has_value();
        for (auto& row : rows) {
            if (config.early_stop_acc && row.accuracy < *config.early_stop_acc) all_reached = false;
            result.rows.push_back(std::move(row));
        }
        return all_reached;
    };

    bool stop = emit_round(0, std::vector<double>(k_count, 0.0));

    const std::vector<bool> layer_mask =
        config.aggregator.algorithm == baselines::Algorithm::c_dfa
            ? baselines::c_dfa_layer_mask(stations[0].params.layers.size(), config.aggregator.layer_fraction)
            : std::vector<bool>{};

    for (std::size_t round = 1; round <= config.rounds && !stop; ++round) {
        // Every station posts before anyone reads: the exchange is the barrier.
        std::map<StationId, topology::RoundMessage> outbox;
        for (const Station& st : stations) {
            topology::RoundMessage msg{st.id, round, topology::encode_params(st.params), st.sketch_wire};
            outbox.emplace(st.id, topology::decode_message(topology::encode_message(msg)));
        }
        topology::Inbox inbox;
        try {
            inbox = topology::exchange(topo, round, outbox);
        } catch (const topology::TopologyError& e) {
            throw RunError("round " + std::to_string(round) + ": " + e.what());
        }

        std::vector<std::vector<nn::ModelParams>> neighbor_params(k_count);
        std::vector<std::vector<sketch::SketchSet>> neighbor_sketches(k_count);
        for_each_station(k_count, options.serial, round, [&](std::size_t k) {
            Station& st = stations[k];
            const auto& msgs = inbox.at(k);
            for (const auto& msg : msgs) {
                neighbor_params[k].push_back(topology::decode_params(msg.params, st.params));
                neighbor_sketches[k].push_back(sketch::SketchSet::deserialize(msg.sketch));
            }

            switch (config.aggregator.algorithm) {
            case baselines::Algorithm::cdfl: {
                std::map<StationId, consensus::NeighborSketch> nbs;
                for (std::size_t j = 0; j < msgs.size(); ++j)
                    nbs[msgs[j].sender] = {&neighbor_sketches[k][j], sizes[msgs[j].sender]};
                const consensus::LocalData local{k, sizes[k], &st.sketch, st.probes};
                st.eta = consensus::mixing_weights(
                    k, consensus::novelty_ratios(local, nbs, config.novelty_mode, config.lc_correction));
                break;
            }
            case baselines::Algorithm::cfa:
            case baselines::Algorithm::c_dfa: {
                std::map<StationId, std::size_t> sz{{k, sizes[k]}};
                for (const auto& msg : msgs) sz[msg.sender] = sizes[msg.sender];
                st.eta = baselines::cfa_weights(k, sz);
                break;
            }
            case baselines::Algorithm::cdfa: {
                std::vector<StationId> ids;
                for (const auto& msg : msgs) ids.push_back(msg.sender);
                st.eta = consensus::uniform_weights(k, ids);
                break;
            }
            }
        });

        std::vector<consensus::MixingWeights> all_eta;
        for (const auto& st : stations) all_eta.push_back(st.eta);
        double gamma = 0.0;
        try {
            gamma = consensus::step_size(config.schedule, round, consensus::max_row_sum(all_eta));
        } catch (const consensus::ConsensusError& e) {
            throw RunError("round " + std::to_string(round) + ": " + e.what());
        }

        std::vector<double> wall(k_count, 0.0);
        for_each_station(k_count, options.serial, round, [&](std::size_t k) {
            const auto start = std::chrono::steady_clock::now();
            Station& st = stations[k];
            const auto& msgs = inbox.at(k);
            std::vector<consensus::NeighborModel> nbs;
            for (std::size_t j = 0; j < msgs.size(); ++j) nbs.push_back({msgs[j].sender, &neighbor_params[k][j]});

            nn::ModelParams mixed = consensus::consensus_combine(st.params, nbs, st.eta, gamma, layer_mask);
            st.params = nn::model_update(std::move(mixed), st.train_view(features), config.local_epochs,
                                         config.batch_size, st.adam, st.rng);
            wall[k] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        });

        stop = emit_round(round, wall);
    }

    for (auto& st : stations) result.final_models.push_back(std::move(st.params));
    return result;
}

std::map<std::size_t, std::optional<std::size_t>> epochs_to_accuracy(const std::vector<MetricsRow>& rows,
                                                                     double threshold) {
    std::map<std::size_t, std::optional<std::size_t>> out;
    for (const auto& row : rows) {
        auto& slot = out[row.station];
        if (row.accuracy >= threshold && (!slot || row.round < *slot)) slot = row.round;
    }
    return out;
}

void emit_csv(const std::vector<MetricsRow>& rows, std::ostream& out) {
    out << "round,station,algorithm,loss,accuracy,seed\n";
    for (const auto& r : rows)
        out << r.round << ',' << r.station << ',' << r.algorithm << ',' << format_double(r.loss) << ','
            << format_double(r.accuracy) << ',' << r.seed << '\n';
}

void emit_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RunError("cannot write " + path.string());
    emit_csv(rows, out);
    if (!out) throw RunError("write failed: " + path.string());
}

std::vector<MetricsRow> read_csv(std::istream& in) {
    std::vector<MetricsRow> rows;
    std::string line;
    if (!std::getline(in, line) || line.rfind("round,station,algorithm,loss,accuracy,seed", 0) != 0)
        throw RunError("not a metrics CSV");
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string f[6];
        for (auto& field : f)
            if (!std::getline(ss, field, ',')) throw RunError("metrics CSV line " + std::to_string(lineno) + ": too few fields");
        try {
            MetricsRow r;
            r.round = std::stoull(f[0]);
            r.station = std::stoull(f[1]);
            r.algorithm = f[2];
            r.loss = std::stod(f[3]);
            r.accuracy = std::stod(f[4]);
            r.seed = std::stoull(f[5]);
            rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw RunError("metrics CSV line " + std::to_string(lineno) + ": bad number");
        }
    }
    return rows;
}

void emit_weights_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RunError("cannot write " + path.string());
    out << "round,station,neighbor,eta\n";
    for (const auto& r : rows)
        for (const auto& [id, w] : r.eta) out << r.round << ',' << r.station << ',' << id << ',' << format_double(w) << '\n';
    if (!out) throw RunError("write failed: " + path.string());
}

void emit_svg(const std::vector<MetricsRow>& rows, const std::filesystem::path& path, PlotMetric metric) {
    if (rows.empty()) throw RunError("no metrics to plot");

    std::map<std::pair<std::string, std::size_t>, std::vector<std::pair<double, double>>> series;
    double max_round = 1.0, y_max = 1.0;
    for (const auto& r : rows) {
        const double y = metric == PlotMetric::accuracy ? r.accuracy : r.loss;
        series[{r.algorithm, r.station}].emplace_back(static_cast<double>(r.round), y);
        max_round = std::max(max_round, static_cast<double>(r.round));
        if (metric == PlotMetric::loss) y_max = std::max(y_max, y);
    }

    constexpr double W = 720, H = 440, left = 60, right = 200, top = 30, bottom = 50;
    const double pw = W - left - right, ph = H - top - bottom;
    auto px = [&](double x) { return left + pw * x / max_round; };
    auto py = [&](double y) { return top + ph * (1.0 - y / y_max); };
    static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                              "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

    std::ofstream out(path, std::ios::binary);
    if (!out) throw RunError("cannot write " + path.string());
    const char* label = metric == PlotMetric::accuracy ? "test accuracy" : "training loss";
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double y = y_max * i / 5.0;
        const double x = max_round * i / 5.0;
        out << "<text x=\"" << left - 8 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << format_double(std::round(y * 100) / 100) << "</text>\n";
        out << "<text x=\"" << px(x) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << format_double(std::round(x)) << "</text>\n";
    }
    out << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">round</text>\n";
    out << "<text x=\"15\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 15 " << top + ph / 2 << ")\" text-anchor=\"middle\">" << label << "</text>\n";

    std::size_t idx = 0;
    for (const auto& [key, pts] : series) {
        const char* color = kColors[idx % std::size(kColors)];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : pts) out << px(x) << ',' << py(y) << ' ';
        out << "\"/>\n";
        const double ly = top + 14.0 * static_cast<double>(idx) + 10;
        out << "<line x1=\"" << left + pw + 15 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 35 << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << left + pw + 40 << "\" y=\"" << ly + 4 << "\">" << key.first << " station " << key.second << "</text>\n";
        ++idx;
    }
    out << "</svg>\n";
    if (!out) throw RunError("write failed: " + path.string());
}

} // namespace cdfl
