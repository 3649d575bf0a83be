#include "cdfl/sketch.hpp"
#include "cdfl/topology.hpp"

#include <doctest.h>

#include <cstring>
#include <random>
#include <vector>

using namespace cdfl;
using namespace cdfl::topology;

namespace {

std::vector<StationId> nbrs(const Topology& t, StationId k) {
    const auto s = t.neighbors(k);
    return {s.begin(), s.end()};
}

std::map<StationId, RoundMessage> outbox_for(const Topology& t, std::uint64_t round) {
    std::map<StationId, RoundMessage> out;
    for (StationId k = 0; k < t.size(); ++k) out[k] = RoundMessage{k, round, {std::uint8_t(k)}, {}};
    return out;
}

std::uint64_t read_u64(const std::vector<std::uint8_t>& b, std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[at + static_cast<std::size_t>(i)];
    return v;
}

} // namespace

TEST_CASE("ring neighborhoods") {
    // Stations are numbered from zero: station 0 talks to 3 and 1.
    const auto r4 = ring(4);
    CHECK(nbrs(r4, 0) == std::vector<StationId>{1, 3});
    CHECK(nbrs(r4, 1) == std::vector<StationId>{0, 2});
    CHECK(nbrs(r4, 2) == std::vector<StationId>{1, 3});
    CHECK(nbrs(r4, 3) == std::vector<StationId>{0, 2});
    CHECK(r4.edge_count() == 4);

    const auto r2 = ring(2);
    CHECK(nbrs(r2, 0) == std::vector<StationId>{1});
    CHECK(nbrs(r2, 1) == std::vector<StationId>{0});

    const auto r3 = ring(3);
    for (StationId k = 0; k < 3; ++k) {
        auto n = nbrs(r3, k);
        CHECK(n.size() == 2);
        CHECK(std::find(n.begin(), n.end(), k) == n.end());
    }
    CHECK_THROWS_AS(ring(1), TopologyError);
    CHECK_THROWS_AS(ring(0), TopologyError);
}

TEST_CASE("from_edges validation") {
    const std::vector<std::pair<StationId, StationId>> loop{{0, 0}, {0, 1}};
    CHECK_THROWS_AS(Topology::from_edges(2, loop), TopologyError);
    const std::vector<std::pair<StationId, StationId>> split{{0, 1}, {2, 3}};
    CHECK_THROWS_AS(Topology::from_edges(4, split), TopologyError);
    const std::vector<std::pair<StationId, StationId>> range{{0, 5}};
    CHECK_THROWS_AS(Topology::from_edges(2, range), TopologyError);
    CHECK(Topology::from_edges(1, {}).size() == 1);

    const std::vector<std::pair<StationId, StationId>> star{{0, 1}, {0, 2}, {3, 0}, {1, 0}};
    const auto t = Topology::from_edges(4, star);
    CHECK(nbrs(t, 0) == std::vector<StationId>{1, 2, 3});
    CHECK(nbrs(t, 3) == std::vector<StationId>{0});
    CHECK(t.edge_count() == 3);
}

TEST_CASE("exchange") {
    SUBCASE("4-ring delivers two messages each, ascending by sender") {
        const auto t = ring(4);
        const auto inbox = exchange(t, 7, outbox_for(t, 7));
        for (StationId k = 0; k < 4; ++k) {
            REQUIRE(inbox.at(k).size() == 2);
            CHECK(inbox.at(k)[0].sender < inbox.at(k)[1].sender);
        }
        CHECK(inbox.at(0)[0].sender == 1);
        CHECK(inbox.at(0)[1].sender == 3);
    }
    SUBCASE("2-ring") {
        const auto t = ring(2);
        const auto inbox = exchange(t, 0, outbox_for(t, 0));
        REQUIRE(inbox.at(0).size() == 1);
        CHECK(inbox.at(0)[0].sender == 1);
        CHECK(inbox.at(1)[0].sender == 0);
    }
    SUBCASE("stalled station") {
        const auto t = ring(4);
        auto out = outbox_for(t, 1);
        out.erase(2);
        CHECK_THROWS_WITH_AS(exchange(t, 1, out), doctest::Contains("station stalled"), TopologyError);
    }
    SUBCASE("stale message") {
        const auto t = ring(4);
        auto out = outbox_for(t, 3);
        out[1].round = 2;
        CHECK_THROWS_WITH_AS(exchange(t, 3, out), doctest::Contains("stale message"), TopologyError);
    }
}

TEST_CASE("property: exchange conserves messages, is symmetric and deterministic") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t k = 2 + rng() % 8;
        // Random connected graph: a spanning path plus extra random edges.
        std::vector<std::pair<StationId, StationId>> edges;
        for (StationId i = 1; i < k; ++i) edges.emplace_back(rng() % i, i);
        for (int e = 0; e < 5; ++e) {
            const StationId a = rng() % k, b = rng() % k;
            if (a != b) edges.emplace_back(a, b);
        }
        const auto t = Topology::from_edges(k, edges);
        const auto out = outbox_for(t, 4);
        const auto inbox = exchange(t, 4, out);

        std::size_t delivered = 0, expected = 0;
        for (StationId s = 0; s < k; ++s) {
            expected += t.neighbors(s).size();
            delivered += inbox.at(s).size();
            for (const auto& m : inbox.at(s)) {
                CHECK(m == out.at(m.sender));
                bool back = false;
                for (const auto& r : inbox.at(m.sender)) back |= r.sender == s;
                CHECK(back);
            }
        }
        CHECK(delivered == expected);
        CHECK(exchange(t, 4, out) == inbox);
    }
}

TEST_CASE("message wire layout") {
    RoundMessage m{3, 42, {1, 2, 3}, {9, 8}};
    const auto bytes = encode_message(m);
    REQUIRE(bytes.size() == 1 + 8 * 4 + 3 + 2);
    CHECK(bytes[0] == kMessageVersion);
    CHECK(read_u64(bytes, 1) == 3);
    CHECK(read_u64(bytes, 9) == 42);
    CHECK(read_u64(bytes, 17) == 3);
    CHECK(read_u64(bytes, 25) == 2);
    CHECK(std::vector<std::uint8_t>(bytes.begin() + 33, bytes.end()) == std::vector<std::uint8_t>{1, 2, 3, 9, 8});
    CHECK(decode_message(bytes) == m);

    auto bad = bytes;
    bad[0] = 2;
    CHECK_THROWS(decode_message(bad));
    auto shorter = bytes;
    shorter.pop_back();
    CHECK_THROWS(decode_message(shorter));
    auto longer = bytes;
    longer.push_back(0);
    CHECK_THROWS(decode_message(longer));
}

TEST_CASE("params wire layout") {
    nn::ModelParams p;
    nn::Layer l;
    l.weight = nn::Matrix(2, 1);
    l.weight(0, 0) = 1.5;
    l.weight(1, 0) = -2.0;
    l.bias = {0.25, 0.0};
    p.layers.push_back(l);
    const auto bytes = encode_params(p);
    REQUIRE(bytes.size() == 8 + 16 + 4 * 8);
    CHECK(read_u64(bytes, 0) == 1);
    CHECK(read_u64(bytes, 8) == 2);
    CHECK(read_u64(bytes, 16) == 1);
    double v = 0;
    std::memcpy(&v, bytes.data() + 24, 8);
    CHECK(v == 1.5);
    std::memcpy(&v, bytes.data() + 32, 8);
    CHECK(v == -2.0);
    std::memcpy(&v, bytes.data() + 40, 8);
    CHECK(v == 0.25);
    CHECK(decode_params(bytes, p) == p);
}

TEST_CASE("property: params and full messages round-trip") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        const auto p = nn::make_mlp(1 + rng() % 20, std::vector<std::size_t>{1 + rng() % 10}, 2 + rng() % 5, rng);
        CHECK(decode_params(encode_params(p), p) == p);

        sketch::SketchSet sk;
        for (int i = 0; i < 30; ++i) sk.insert(std::to_string(rng()));
        const RoundMessage m{rng() % 10, rng() % 100, encode_params(p), sk.serialize()};
        const auto back = decode_message(encode_message(m));
        CHECK(back == m);
        CHECK(sketch::SketchSet::deserialize(back.sketch) == sk);
        CHECK(decode_params(back.params, p) == p);

        const auto other = nn::make_mlp(3, std::vector<std::size_t>{2}, 2, rng);
        if (other.parameter_count() != p.parameter_count()) CHECK_THROWS(decode_params(encode_params(p), other));
    }
}
