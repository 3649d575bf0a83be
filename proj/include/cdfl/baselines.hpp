#pragma once

// Comparison aggregators that share the consensus update but weight
// neighbors differently or federate only part of the network.

#include "cdfl/consensus.hpp"

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cdfl::baselines {

using consensus::StationId;

enum class Algorithm {
    cdfl,   // novelty-weighted consensus
    cfa,    // dataset-size weighted consensus
    cdfa,   // uniform consensus
    c_dfa,  // size-weighted consensus over the deepest fraction of layers
};

struct AggregatorKind {
    Algorithm algorithm = Algorithm::cdfl;
    double layer_fraction = 1.0;  // c_dfa only, in (0, 1]
};

std::string_view to_string(Algorithm a);
/// Accepts cdfl, cfa, cdfa, c_dfa (also c-dfl, c-dfa). Throws std::invalid_argument.
Algorithm parse_algorithm(std::string_view name);

/// eta_i = E_i / sum_j E_j over the closed neighborhood.
consensus::MixingWeights cfa_weights(StationId self, const std::map<StationId, std::size_t>& sizes);

/// Consensus update with uniform weights over the closed neighborhood.
nn::ModelParams cdfa_combine(StationId self, const nn::ModelParams& own,
                             std::span<const consensus::NeighborModel> neighbors, double gamma);

/// Mask of federated layers: the ceil(M * N) layers nearest the output.
std::vector<bool> c_dfa_layer_mask(std::size_t layer_count, double layer_fraction);

} // namespace cdfl::baselines
