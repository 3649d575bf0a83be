#pragma once

// Redundancy-aware neighborhood averaging: novelty ratios from exchanged
// sketches, mixing weights proportional to novelty, and the consensus update
// that pulls a station's model toward its neighbors.

#include "cdfl/nn.hpp"
#include "cdfl/sketch.hpp"

#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

namespace cdfl::consensus {

using StationId = std::size_t;

class ConsensusError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Mixing weights of one aggregating station over its closed neighborhood.
struct MixingWeights {
    StationId self = 0;
    std::map<StationId, double> weights;  // includes self
    bool fallback_uniform = false;        // set when every ratio was zero

    double at(StationId id) const;
    double sum() const;
};

enum class NoveltyMode {
    pairwise,  // neighbor novelty = local items missing from the neighbor's sketch
    self,      // neighbor novelty = the neighbor's own distinct-count estimate
};

struct NeighborSketch {
    const sketch::SketchSet* sketch = nullptr;
    std::size_t dataset_size = 0;  // E_i
};

struct LocalData {
    StationId id = 0;
    std::size_t dataset_size = 0;                         // E_k
    const sketch::SketchSet* sketch = nullptr;            // sketch of the station's own data
    std::span<const sketch::ProbeIndices> probes;         // one entry per local item
};

/// Novelty ratio E'/E for the station itself and every neighbor, each in [0, 1].
std::map<StationId, double> novelty_ratios(const LocalData& local, const std::map<StationId, NeighborSketch>& neighbors,
                                           NoveltyMode mode, bool lc_correction = false);

/// eta_i = ratio_i / sum_j ratio_j over the closed neighborhood; uniform when
/// every ratio is zero.
MixingWeights mixing_weights(StationId self, const std::map<StationId, double>& ratios);

/// Uniform weights over `self` plus `neighbors`.
MixingWeights uniform_weights(StationId self, std::span<const StationId> neighbors);

struct NeighborModel {
    StationId id = 0;
    const nn::ModelParams* params = nullptr;
};

/// psi = W_k + gamma * sum_i eta_i (W_i - W_k) over the open neighborhood.
/// Layers with federated[n] == false keep W_k. An empty mask federates all
/// layers. Throws ConsensusError("unstable step size") unless
/// 0 <= gamma < 1 / (row sum of eta).
nn::ModelParams consensus_combine(const nn::ModelParams& own, std::span<const NeighborModel> neighbors,
                                  const MixingWeights& eta, double gamma, const std::vector<bool>& federated = {});

enum class Schedule { constant, decaying };

struct StepSchedule {
    Schedule kind = Schedule::constant;
    double gamma0 = 0.5;
    double half_life = 10.0;  // decaying only: gamma0 / (1 + t / half_life)

    void validate() const;
};

/// Largest mixing-weight row sum across stations; 1 for normalized weights.
double max_row_sum(std::span<const MixingWeights> all);

/// gamma_t for round t. Throws ConsensusError when the result is not below
/// 1 / max_row_sum.
double step_size(const StepSchedule& schedule, std::size_t round, double max_row_sum = 1.0);

} // namespace cdfl::consensus
