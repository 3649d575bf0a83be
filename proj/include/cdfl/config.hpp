#pragma once

// Experiment definition, read from `key = value` text with dotted section keys.
//
//   topology.kind          ring | graph                     (ring)
//   topology.stations      station count K                  (4)
//   topology.edges         graph only: 0-1,1-2,...
//   topology.link_model    ideal                            (ideal)
//   algorithm              cdfl | cfa | cdfa | c_dfa        (cdfl)
//   algorithm.layer_fraction  c_dfa layer fraction M        (1.0)
//   model.kind             mlp | tiny_cnn                   (mlp)
//   model.hidden           hidden widths, comma separated   (30)
//   optimizer.learning_rate / beta1 / beta2 / delta         (1e-4, 0.9, 0.999, 1e-7)
//   optimizer.batch_size                                    (32)
//   consensus.gamma        gamma_0 in (0, 1)                (0.5)
//   consensus.schedule     constant | decaying              (constant)
//   consensus.half_life    decaying schedule T_half         (10)
//   consensus.novelty_mode pairwise | self                  (pairwise)
//   sketch.bits            bitmap size m, power of two      (65536)
//   sketch.width           simhash width, 32 | 64           (64)
//   sketch.seeds           three seeds, comma separated     (0x9E37,0xC2B2,0x1656)
//   sketch.lc_correction   true | false                     (false)
//   sketch.weighting       uniform | frequency              (uniform)
//   data.images / data.labels   IDX paths, relative to the config file
//   data.train_per_station / data.test_per_station          (320, 80)
//   data.redundancy        rho in [0, 1)                    (0.5)
//   data.quantization_levels                                (16)
//   run.rounds             R                                (100)
//   run.local_epochs                                        (1)
//   run.early_stop_acc     optional accuracy threshold
//   seed                   master seed                      (1)

#include "cdfl/baselines.hpp"
#include "cdfl/consensus.hpp"
#include "cdfl/nn.hpp"
#include "cdfl/sketch.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cdfl {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TopologySpec {
    std::string kind = "ring";
    std::size_t stations = 4;
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    std::string link_model = "ideal";
};

struct ModelSpec {
    std::string kind = "mlp";
    std::vector<std::size_t> hidden{30};
};

struct DataSpec {
    std::filesystem::path images;
    std::filesystem::path labels;
    std::size_t train_per_station = 320;
    std::size_t test_per_station = 80;
    double rho = 0.5;
    unsigned quantization_levels = 16;
};

struct ExperimentConfig {
    TopologySpec topology;
    baselines::AggregatorKind aggregator;
    ModelSpec model;
    nn::AdamConfig optimizer;
    std::size_t batch_size = 32;
    consensus::StepSchedule schedule;
    consensus::NoveltyMode novelty_mode = consensus::NoveltyMode::pairwise;
    bool lc_correction = false;
    sketch::SketchParams sketch;
    DataSpec data;
    std::size_t rounds = 100;
    std::size_t local_epochs = 1;
    std::optional<double> early_stop_acc;
    std::uint64_t seed = 1;

    /// Throws ConfigError on any out-of-range value.
    void validate() const;
};

/// Relative data paths resolve against `base_dir`. Throws ConfigError.
ExperimentConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies CDFL_SEED from the environment, if set.
void apply_env_overrides(ExperimentConfig& config);

} // namespace cdfl
