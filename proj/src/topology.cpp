#include "cdfl/topology.hpp"

#include "cdfl/wire.hpp"

#include <algorithm>
#include <string>

namespace cdfl::topology {

Topology Topology::from_edges(std::size_t k, std::span<const std::pair<StationId, StationId>> edges) {
    if (k == 0) throw TopologyError("topology needs at least one station");
    Topology t;
    t.adjacency_.resize(k);
    for (auto [a, b] : edges) {
        if (a >= k || b >= k) throw TopologyError("edge references unknown station");
        if (a == b) throw TopologyError("self-loop on station " + std::to_string(a));
        t.adjacency_[a].push_back(b);
        t.adjacency_[b].push_back(a);
    }
    for (auto& adj : t.adjacency_) {
        std::sort(adj.begin(), adj.end());
        adj.erase(std::unique(adj.begin(), adj.end()), adj.end());
    }

    std::vector<bool> seen(k, false);
    std::vector<StationId> stack{0};
    seen[0] = true;
    while (!stack.empty()) {
        const StationId s = stack.back();
        stack.pop_back();
        for (StationId n : t.adjacency_[s])
            if (!seen[n]) {
                seen[n] = true;
                stack.push_back(n);
            }
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) throw TopologyError("graph is not connected");
    return t;
}

std::size_t Topology::edge_count() const {
    std::size_t n = 0;
    for (const auto& adj : adjacency_) n += adj.size();
    return n / 2;
}

Topology ring(std::size_t k) {
    if (k < 2) throw TopologyError("ring needs at least 2 stations");
    std::vector<std::pair<StationId, StationId>> edges;
    for (StationId s = 0; s < k; ++s) edges.emplace_back(s, (s + 1) % k);
    return Topology::from_edges(k, edges);
}

std::vector<std::uint8_t> encode_message(const RoundMessage& msg) {
    wire::Writer w;
    w.u8(kMessageVersion);
    w.u64(msg.sender);
    w.u64(msg.round);
    w.u64(msg.params.size());
    w.u64(msg.sketch.size());
    w.raw(msg.params);
    w.raw(msg.sketch);
    return w.take();
}

RoundMessage decode_message(std::span<const std::uint8_t> bytes) {
    try {
        wire::Reader r(bytes);
        if (r.u8() != kMessageVersion) throw TopologyError("unsupported message version");
        RoundMessage msg;
        msg.sender = static_cast<StationId>(r.u64());
        msg.round = r.u64();
        const std::uint64_t plen = r.u64();
        const std::uint64_t slen = r.u64();
        if (plen > r.remaining() || slen != r.remaining() - plen) throw TopologyError("payload length mismatch");
        auto p = r.raw(static_cast<std::size_t>(plen));
        auto s = r.raw(static_cast<std::size_t>(slen));
        msg.params.assign(p.begin(), p.end());
        msg.sketch.assign(s.begin(), s.end());
        return msg;
    } catch (const wire::DecodeError& e) {
        throw TopologyError(std::string("message decode: ") + e.what());
    }
}

std::vector<std::uint8_t> encode_params(const nn::ModelParams& params) {
    wire::Writer w;
    w.u64(params.layers.size());
    for (const auto& l : params.layers) {
        w.u64(l.weight.rows);
        w.u64(l.weight.cols);
    }
    for (const auto& l : params.layers) {
        for (double x : l.weight.data) w.f64(x);
        for (double x : l.bias) w.f64(x);
    }
    return w.take();
}

nn::ModelParams decode_params(std::span<const std::uint8_t> bytes, const nn::ModelParams& like) {
    try {
        wire::Reader r(bytes);
        const std::uint64_t n = r.u64();
        if (n != like.layers.size()) throw TopologyError("layer count mismatch");
        nn::ModelParams out = like;
        for (auto& l : out.layers) {
            const std::uint64_t rows = r.u64();
            const std::uint64_t cols = r.u64();
            if (rows != l.weight.rows || cols != l.weight.cols) throw TopologyError("layer shape mismatch");
        }
        for (auto& l : out.layers) {
            for (double& x : l.weight.data) x = r.f64();
            for (double& x : l.bias) x = r.f64();
        }
        if (r.remaining() != 0) throw TopologyError("trailing bytes after parameters");
        return out;
    } catch (const wire::DecodeError& e) {
        throw TopologyError(std::string("params decode: ") + e.what());
    }
}

Inbox exchange(const Topology& topo, std::uint64_t round, const std::map<StationId, RoundMessage>& outbox) {
    for (StationId k = 0; k < topo.size(); ++k) {
        auto it = outbox.find(k);
        if (it == outbox.end()) throw TopologyError("station stalled: " + std::to_string(k));
        if (it->second.round != round) throw TopologyError("stale message from station " + std::to_string(k));
        if (it->second.sender != k) throw TopologyError("sender mismatch for station " + std::to_string(k));
    }
    Inbox inbox;
    for (StationId k = 0; k < topo.size(); ++k) {
        auto& box = inbox[k];
        for (StationId n : topo.neighbors(k)) box.push_back(outbox.at(n));
    }
    return inbox;
}

} // namespace cdfl::topology
