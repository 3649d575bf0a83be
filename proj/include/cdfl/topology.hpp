#pragma once

// Station graph and the synchronous, lossless round exchange.

#include "cdfl/nn.hpp"

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace cdfl::topology {

using StationId = std::size_t;

class TopologyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Topology {
public:
    /// Undirected edges over stations 0..k-1. Throws TopologyError on self-loops,
    /// out-of-range ids or a disconnected graph. A single station is allowed.
    static Topology from_edges(std::size_t k, std::span<const std::pair<StationId, StationId>> edges);

    std::size_t size() const { return adjacency_.size(); }
    /// Open neighborhood, ascending.
    std::span<const StationId> neighbors(StationId k) const { return adjacency_.at(k); }
    std::size_t edge_count() const;

private:
    std::vector<std::vector<StationId>> adjacency_;
};

/// Station k is linked to (k-1) mod K and (k+1) mod K. Requires K >= 2.
Topology ring(std::size_t k);

struct RoundMessage {
    StationId sender = 0;
    std::uint64_t round = 0;
    std::vector<std::uint8_t> params;  // encode_params output
    std::vector<std::uint8_t> sketch;  // SketchSet::serialize output

    friend bool operator==(const RoundMessage&, const RoundMessage&) = default;
};

inline constexpr std::uint8_t kMessageVersion = 1;

/// u8 version, u64 sender, u64 round, u64 params length, u64 sketch length
/// (little-endian), then the two payloads.
std::vector<std::uint8_t> encode_message(const RoundMessage& msg);
RoundMessage decode_message(std::span<const std::uint8_t> bytes);

/// u64 layer count, (u64 out, u64 in) per layer, then per layer the weights
/// row-major followed by the bias, all f64 little-endian. Layer kinds and conv
/// geometry come from `like` on decode.
std::vector<std::uint8_t> encode_params(const nn::ModelParams& params);
nn::ModelParams decode_params(std::span<const std::uint8_t> bytes, const nn::ModelParams& like);

using Inbox = std::map<StationId, std::vector<RoundMessage>>;

/// Delivers each station the messages of its neighbors, ascending by sender.
/// Throws TopologyError("station stalled") when a station posted nothing and
/// TopologyError("stale message") when a round tag differs from `round`.
Inbox exchange(const Topology& topo, std::uint64_t round, const std::map<StationId, RoundMessage>& outbox);

} // namespace cdfl::topology
