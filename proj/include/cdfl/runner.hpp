#pragma once

// Round-synchronous experiment driver: every round each station receives its
// neighbors' models and sketches, mixes, trains locally, evaluates and posts.

#include "cdfl/config.hpp"
#include "cdfl/data.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cdfl {

class RunError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct MetricsRow {
    std::size_t round = 0;
    std::size_t station = 0;
    std::string algorithm;
    double loss = 0.0;      // mean cross-entropy over the station's training set
    double accuracy = 0.0;  // on the station's test set
    std::vector<std::pair<std::size_t, double>> eta;  // empty at round 0
    double wall_ms = 0.0;
    std::uint64_t seed = 0;
};

struct RunOptions {
    bool serial = false;
    /// Reuse an already loaded dataset instead of reading config.data paths.
    const data::Dataset* dataset = nullptr;
};

struct ExperimentResult {
    std::vector<MetricsRow> rows;
    std::vector<nn::ModelParams> final_models;
    data::PartitionManifest manifest;
};

/// Initial model of station k: seeded with seed ^ k, identical across algorithms.
nn::ModelParams initial_model(const ExperimentConfig& config, std::size_t inputs, std::size_t image_rows,
                              std::size_t image_cols, std::size_t classes, std::size_t station);

/// Seed of station k's shuffling engine.
std::uint64_t shuffle_seed(std::uint64_t seed, std::size_t station);

topology::Topology build_topology(const TopologySpec& spec);

/// Throws ConfigError for invalid or infeasible configurations and RunError
/// naming the round and station for failures during the run.
ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

/// First round at which each station's accuracy reaches `threshold`.
std::map<std::size_t, std::optional<std::size_t>> epochs_to_accuracy(const std::vector<MetricsRow>& rows,
                                                                     double threshold);

/// Columns round,station,algorithm,loss,accuracy,seed. Numbers use the
/// shortest round-trip representation.
void emit_csv(const std::vector<MetricsRow>& rows, std::ostream& out);
void emit_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);
std::vector<MetricsRow> read_csv(std::istream& in);

/// Columns round,station,neighbor,eta.
void emit_weights_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);

enum class PlotMetric { accuracy, loss };

/// One polyline per (algorithm, station) over rounds.
void emit_svg(const std::vector<MetricsRow>& rows, const std::filesystem::path& path,
              PlotMetric metric = PlotMetric::accuracy);

} // namespace cdfl
