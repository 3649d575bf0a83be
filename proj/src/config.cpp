#include "cdfl/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <sstream>

namespace cdfl {

namespace {

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string piece;
    while (std::getline(ss, piece, sep)) out.push_back(trim(piece));
    return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
        const auto n = std::stoull(v, &pos, 0);
        if (pos != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& v) {
    std::filesystem::path p(v);
    return p.is_relative() && !base.empty() ? base / p : p;
}

void set_key(ExperimentConfig& c, const std::string& key, const std::string& v, const std::filesystem::path& base) {
    if (key == "topology.kind") c.topology.kind = v;
    else if (key == "topology.stations") c.topology.stations = to_u64(key, v);
    else if (key == "topology.edges") {
        c.topology.edges.clear();
        for (const auto& e : split(v, ',')) {
            const auto ends = split(e, '-');
            if (ends.size() != 2) throw ConfigError(key + ": expected a-b pairs, got '" + e + "'");
            c.topology.edges.emplace_back(to_u64(key, ends[0]), to_u64(key, ends[1]));
        }
    } else if (key == "topology.link_model") c.topology.link_model = v;
    else if (key == "algorithm") {
        try {
            c.aggregator.algorithm = baselines::parse_algorithm(v);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    } else if (key == "algorithm.layer_fraction") c.aggregator.layer_fraction = to_double(key, v);
    else if (key == "model.kind") c.model.kind = v;
    else if (key == "model.hidden") {
        c.model.hidden.clear();
        for (const auto& h : split(v, ','))
            if (!h.empty()) c.model.hidden.push_back(to_u64(key, h));
    } else if (key == "optimizer.learning_rate") c.optimizer.learning_rate = to_double(key, v);
    else if (key == "optimizer.beta1") c.optimizer.beta1 = to_double(key, v);
    else if (key == "optimizer.beta2") c.optimizer.beta2 = to_double(key, v);
    else if (key == "optimizer.delta") c.optimizer.delta = to_double(key, v);
    else if (key == "optimizer.batch_size") c.batch_size = to_u64(key, v);
    else if (key == "consensus.gamma") c.schedule.gamma0 = to_double(key, v);
    else if (key == "consensus.schedule") {
        if (v == "constant") c.schedule.kind = consensus::Schedule::constant;
        else if (v == "decaying") c.schedule.kind = consensus::Schedule::decaying;
        else throw ConfigError(key + ": expected constant or decaying");
    } else if (key == "consensus.half_life") c.schedule.half_life = to_double(key, v);
    else if (key == "consensus.novelty_mode") {
        if (v == "pairwise") c.novelty_mode = consensus::NoveltyMode::pairwise;
        else if (v == "self") c.novelty_mode = consensus::NoveltyMode::self;
        else throw ConfigError(key + ": expected pairwise or self");
    } else if (key == "sketch.bits") c.sketch.bitmap_bits = to_u64(key, v);
    else if (key == "sketch.width") c.sketch.width = static_cast<unsigned>(to_u64(key, v));
    else if (key == "sketch.seeds") {
        const auto parts = split(v, ',');
        if (parts.size() != 3) throw ConfigError(key + ": expected three seeds");
        for (std::size_t i = 0; i < 3; ++i) c.sketch.seeds[i] = to_u64(key, parts[i]);
    } else if (key == "sketch.lc_correction") c.lc_correction = to_bool(key, v);
    else if (key == "sketch.weighting") {
        if (v == "uniform") c.sketch.weighting = sketch::WeightMode::uniform;
        else if (v == "frequency") c.sketch.weighting = sketch::WeightMode::frequency;
        else throw ConfigError(key + ": expected uniform or frequency");
    } else if (key == "data.images") c.data.images = resolve(base, v);
    else if (key == "data.labels") c.data.labels = resolve(base, v);
    else if (key == "data.train_per_station") c.data.train_per_station = to_u64(key, v);
    else if (key == "data.test_per_station") c.data.test_per_station = to_u64(key, v);
    else if (key == "data.redundancy") c.data.rho = to_double(key, v);
    else if (key == "data.quantization_levels") c.data.quantization_levels = static_cast<unsigned>(to_u64(key, v));
    else if (key == "run.rounds") c.rounds = to_u64(key, v);
    else if (key == "run.local_epochs") c.local_epochs = to_u64(key, v);
    else if (key == "run.early_stop_acc") c.early_stop_acc = to_double(key, v);
    else if (key == "seed") c.seed = to_u64(key, v);
    else throw ConfigError("unknown config key: " + key);
}

} // namespace

void ExperimentConfig::validate() const {
    if (topology.kind != "ring" && topology.kind != "graph") throw ConfigError("topology.kind must be ring or graph");
    if (topology.stations == 0) throw ConfigError("topology.stations must be positive");
    if (topology.link_model != "ideal") throw ConfigError("topology.link_model: only 'ideal' is implemented");
    if (model.kind != "mlp" && model.kind != "tiny_cnn") throw ConfigError("model.kind must be mlp or tiny_cnn");
    for (auto h : model.hidden)
        if (h == 0) throw ConfigError("model.hidden widths must be positive");
    try {
        optimizer.validate();
        schedule.validate();
        sketch.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (!(aggregator.layer_fraction > 0.0 && aggregator.layer_fraction <= 1.0))
        throw ConfigError("algorithm.layer_fraction must lie in (0, 1]");
    if (batch_size == 0) throw ConfigError("optimizer.batch_size must be positive");
    if (batch_size >= data.train_per_station) throw ConfigError("optimizer.batch_size must be below data.train_per_station");
    if (data.test_per_station == 0) throw ConfigError("data.test_per_station must be positive");
    if (!(data.rho >= 0.0 && data.rho < 1.0)) throw ConfigError("data.redundancy must lie in [0, 1)");
    if (data.quantization_levels < 2 || data.quantization_levels > 16)
        throw ConfigError("data.quantization_levels must lie in [2, 16]");
    if (early_stop_acc && !(*early_stop_acc >= 0.0 && *early_stop_acc <= 1.0))
        throw ConfigError("run.early_stop_acc must lie in [0, 1]");
}

ExperimentConfig parse_config(std::istream& in, const std::filesystem::path& base_dir) {
    ExperimentConfig c;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        set_key(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), base_dir);
    }
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    return parse_config(in, path.parent_path());
}

void apply_env_overrides(ExperimentConfig& config) {
    if (const char* s = std::getenv("CDFL_SEED"); s != nullptr && *s != '\0') config.seed = to_u64("CDFL_SEED", s);
}

} // namespace cdfl
