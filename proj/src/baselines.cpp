#include "cdfl/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cdfl::baselines {

std::string_view to_string(Algorithm a) {
    switch (a) {
    case Algorithm::cdfl: return "cdfl";
    case Algorithm::cfa: return "cfa";
    case Algorithm::cdfa: return "cdfa";
    case Algorithm::c_dfa: return "c_dfa";
    }
    return "unknown";
}

Algorithm parse_algorithm(std::string_view name) {
    if (name == "cdfl" || name == "c-dfl" || name == "c_dfl") return Algorithm::cdfl;
    if (name == "cfa") return Algorithm::cfa;
    if (name == "cdfa") return Algorithm::cdfa;
    if (name == "c_dfa" || name == "c-dfa") return Algorithm::c_dfa;
    throw std::invalid_argument("unknown algorithm: " + std::string(name));
}

consensus::MixingWeights cfa_weights(StationId self, const std::map<StationId, std::size_t>& sizes) {
    std::map<StationId, double> as_ratio;
    for (const auto& [id, n] : sizes) {
        if (n == 0) throw consensus::ConsensusError("dataset size must be at least 1");
        as_ratio[id] = static_cast<double>(n);
    }
    return consensus::mixing_weights(self, as_ratio);
}

nn::ModelParams cdfa_combine(StationId self, const nn::ModelParams& own,
                             std::span<const consensus::NeighborModel> neighbors, double gamma) {
    std::vector<StationId> ids;
    for (const auto& nb : neighbors) ids.push_back(nb.id);
    return consensus::consensus_combine(own, neighbors, consensus::uniform_weights(self, ids), gamma);
}

std::vector<bool> c_dfa_layer_mask(std::size_t layer_count, double layer_fraction) {
    if (!(layer_fraction > 0.0 && layer_fraction <= 1.0)) throw std::invalid_argument("layer fraction must lie in (0, 1]");
    // The epsilon keeps exact products such as 0.5 * 4 from rounding up.
    const double q = std::ceil(layer_fraction * static_cast<double>(layer_count) - 1e-9);
    const auto federated = std::clamp<std::size_t>(static_cast<std::size_t>(q), 1, layer_count);
    std::vector<bool> mask(layer_count, false);
    for (std::size_t n = layer_count - federated; n < layer_count; ++n) mask[n] = true;
    return mask;
}

} // namespace cdfl::baselines
