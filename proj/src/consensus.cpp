#include "cdfl/consensus.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cdfl::consensus {

double MixingWeights::at(StationId id) const {
    auto it = weights.find(id);
    return it == weights.end() ? 0.0 : it->second;
}

double MixingWeights::sum() const {
    double s = 0.0;
    for (const auto& [id, w] : weights) s += w;
    return s;
}

namespace {

double clamp_ratio(double estimate, std::size_t size) {
    if (size == 0) throw ConsensusError("dataset size must be at least 1");
    const double n = static_cast<double>(size);
    return std::clamp(estimate, 0.0, n) / n;
}

} // namespace

std::map<StationId, double> novelty_ratios(const LocalData& local, const std::map<StationId, NeighborSketch>& neighbors,
                                           NoveltyMode mode, bool lc_correction) {
    if (local.sketch == nullptr) throw ConsensusError("missing local sketch");
    std::map<StationId, double> out;
    out[local.id] = clamp_ratio(local.sketch->estimate_cardinality(lc_correction), local.dataset_size);

    const auto& params = local.sketch->params();
    for (const auto& [id, nb] : neighbors) {
        if (nb.sketch == nullptr) throw ConsensusError("missing sketch for station " + std::to_string(id));
        if (!nb.sketch->compatible_with(params)) throw sketch::SketchError("incompatible sketch");
        double estimate = 0.0;
        if (mode == NoveltyMode::pairwise)
            estimate = static_cast<double>(sketch::estimate_distinct_from(params, local.probes, *nb.sketch));
        else
            estimate = nb.sketch->estimate_cardinality(lc_correction);
        out[id] = clamp_ratio(estimate, nb.dataset_size);
    }
    return out;
}

MixingWeights mixing_weights(StationId self, const std::map<StationId, double>& ratios) {
    if (!ratios.contains(self)) throw ConsensusError("ratios must include the aggregating station");
    MixingWeights mw;
    mw.self = self;
    double total = 0.0;
    for (const auto& [id, r] : ratios) {
        if (!(r >= 0.0) || !std::isfinite(r)) throw ConsensusError("novelty ratio must be finite and non-negative");
        total += r;
    }
    if (total <= 0.0) {
        mw.fallback_uniform = true;
        const double u = 1.0 / static_cast<double>(ratios.size());
        for (const auto& [id, r] : ratios) mw.weights[id] = u;
        return mw;
    }
    for (const auto& [id, r] : ratios) mw.weights[id] = r / total;
    return mw;
}

MixingWeights uniform_weights(StationId self, std::span<const StationId> neighbors) {
    std::map<StationId, double> ones{{self, 1.0}};
    for (auto id : neighbors) ones[id] = 1.0;
    return mixing_weights(self, ones);
}

nn::ModelParams consensus_combine(const nn::ModelParams& own, std::span<const NeighborModel> neighbors,
                                  const MixingWeights& eta, double gamma, const std::vector<bool>& federated) {
    const double row = eta.sum();
    if (!(gamma >= 0.0) || !(gamma * row < 1.0)) throw ConsensusError("unstable step size");
    if (!federated.empty() && federated.size() != own.layers.size())
        throw ConsensusError("layer mask size does not match model");

    nn::ModelParams out = own;
    for (const auto& nb : neighbors) {
        if (nb.params == nullptr) throw ConsensusError("missing neighbor model");
        own.require_same_shape(*nb.params);
        const double c = gamma * eta.at(nb.id);
        if (c == 0.0) continue;
        for (std::size_t n = 0; n < own.layers.size(); ++n) {
            if (!federated.empty() && !federated[n]) continue;
            const auto& wk = own.layers[n];
            const auto& wi = nb.params->layers[n];
            auto& o = out.layers[n];
            for (std::size_t j = 0; j < wk.weight.data.size(); ++j)
                o.weight.data[j] += c * (wi.weight.data[j] - wk.weight.data[j]);
            for (std::size_t j = 0; j < wk.bias.size(); ++j) o.bias[j] += c * (wi.bias[j] - wk.bias[j]);
        }
    }
    return out;
}

void StepSchedule::validate() const {
    if (!(gamma0 > 0.0 && gamma0 < 1.0)) throw ConsensusError("consensus step size must lie in (0, 1)");
    if (kind == Schedule::decaying && !(half_life > 0.0)) throw ConsensusError("half life must be positive");
}

double max_row_sum(std::span<const MixingWeights> all) {
    double mx = 0.0;
    for (const auto& w : all) mx = std::max(mx, w.sum());
    return mx;
}

double step_size(const StepSchedule& schedule, std::size_t round, double max_row_sum) {
    double gamma = schedule.gamma0;
    if (schedule.kind == Schedule::decaying) gamma = schedule.gamma0 / (1.0 + static_cast<double>(round) / schedule.half_life);
    if (!(max_row_sum > 0.0) || !(gamma * max_row_sum < 1.0)) throw ConsensusError("unstable step size");
    return gamma;
}

} // namespace cdfl::consensus
