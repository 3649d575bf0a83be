#include "cdfl/data.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

using namespace cdfl;
using namespace cdfl::data;

namespace {

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

// Two 2x3 images. Pixels 0,255,51 / 102,153,204 and 1,2,3 / 4,5,6; labels 7 and 2.
std::vector<std::uint8_t> fixture_images() {
    std::vector<std::uint8_t> b;
    put_u32(b, 0x00000803);
    put_u32(b, 2);
    put_u32(b, 2);
    put_u32(b, 3);
    for (std::uint8_t p : {0, 255, 51, 102, 153, 204, 1, 2, 3, 4, 5, 6}) b.push_back(p);
    return b;
}

std::vector<std::uint8_t> fixture_labels() {
    std::vector<std::uint8_t> b;
    put_u32(b, 0x00000801);
    put_u32(b, 2);
    b.push_back(7);
    b.push_back(2);
    return b;
}

// Synthetic dataset with `per_class` samples of each of 10 classes; pixel 0 encodes the row.
Dataset synthetic(std::size_t per_class) {
    Dataset d;
    d.image_rows = 2;
    d.image_cols = 2;
    d.classes = 10;
    d.features = nn::Matrix(per_class * 10, 4);
    for (std::size_t i = 0; i < per_class * 10; ++i) {
        d.labels.push_back(static_cast<int>(i % 10));
        d.features(i, 0) = static_cast<double>(i) / static_cast<double>(per_class * 10);
    }
    return d;
}

const Dataset& mnist() {
    static const Dataset ds = load_idx(CDFL_DATA_DIR "/images-idx3-ubyte", CDFL_DATA_DIR "/labels-idx1-ubyte");
    return ds;
}

std::vector<std::string> split_tokens(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string t;
    while (std::getline(ss, t, ';')) out.push_back(t);
    return out;
}

std::set<std::size_t> as_set(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

} // namespace

TEST_CASE("IDX: hand-written fixture") {
    const auto d = parse_idx(fixture_images(), fixture_labels());
    REQUIRE(d.size() == 2);
    CHECK(d.image_rows == 2);
    CHECK(d.image_cols == 3);
    // Class count is inferred from the largest label.
    CHECK(d.classes == 8);
    CHECK(d.labels == std::vector<int>{7, 2});
    CHECK(d.features(0, 0) == 0.0);
    CHECK(d.features(0, 1) == 1.0);
    CHECK(d.features(0, 2) == doctest::Approx(0.2));
    CHECK(d.features(0, 5) == doctest::Approx(0.8));
    CHECK(d.features(1, 5) == doctest::Approx(6.0 / 255.0));
}

TEST_CASE("IDX: fail closed") {
    auto imgs = fixture_images();
    auto labs = fixture_labels();
    SUBCASE("bad magic") {
        imgs[3] = 0x01;
        CHECK_THROWS_WITH_AS(parse_idx(imgs, labs), "not an IDX file", DataError);
        CHECK_THROWS_WITH_AS(parse_idx(labs, labs), "not an IDX file", DataError);
    }
    SUBCASE("truncated images") {
        imgs.pop_back();
        CHECK_THROWS_AS(parse_idx(imgs, labs), DataError);
    }
    SUBCASE("truncated header") {
        imgs.resize(10);
        CHECK_THROWS_AS(parse_idx(imgs, labs), DataError);
    }
    SUBCASE("count mismatch") {
        labs[7] = 3;
        labs.push_back(1);
        CHECK_THROWS_AS(parse_idx(imgs, labs), DataError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_idx("/nonexistent/images", "/nonexistent/labels"), DataError);
    }
}

TEST_CASE("IDX: bundled MNIST") {
    const auto& d = mnist();
    CHECK(d.size() == 10000);
    CHECK(d.image_rows == 28);
    CHECK(d.image_cols == 28);
    CHECK(d.features.cols == 784);
    CHECK(d.classes == 10);
    CHECK(*std::min_element(d.labels.begin(), d.labels.end()) == 0);
    CHECK(*std::max_element(d.labels.begin(), d.labels.end()) == 9);
    CHECK(*std::min_element(d.features.data.begin(), d.features.data.end()) >= 0.0);
    CHECK(*std::max_element(d.features.data.begin(), d.features.data.end()) <= 1.0);
}

TEST_CASE("partition: rho 0 gives disjoint stations") {
    const auto m = partition_with_redundancy(mnist(), topology::ring(4), {320, 80, 0.0, 3});
    REQUIRE(m.stations.size() == 4);
    std::set<std::size_t> seen;
    for (const auto& s : m.stations) {
        CHECK(s.train.size() == 320);
        CHECK(s.test.size() == 80);
        for (auto i : s.train) CHECK(seen.insert(i).second);
    }
    for (const auto& s : m.stations)
        for (auto i : s.test) CHECK(seen.insert(i).second);
}

TEST_CASE("partition: rho 0.5 on the 4-ring") {
    const auto topo = topology::ring(4);
    const auto m = partition_with_redundancy(mnist(), topo, {320, 80, 0.5, 1});
    for (std::size_t k = 0; k < 4; ++k) {
        const auto mine = as_set(m.stations[k].train);
        CHECK(mine.size() == 320);
        for (auto nb : topo.neighbors(k)) {
            const auto theirs = as_set(m.stations[nb].train);
            std::size_t shared = 0;
            for (auto i : mine) shared += theirs.contains(i);
            CHECK(shared == 80);
            CHECK(exact_distinct_from(m, k, nb) == 240);
        }
        // The station opposite on the ring shares nothing.
        CHECK(exact_distinct_from(m, k, (k + 2) % 4) == 320);
        for (std::size_t j = 0; j < 4; ++j)
            for (auto i : m.stations[j].test) CHECK_FALSE(mine.contains(i));
    }
}

TEST_CASE("partition: determinism and seed sensitivity") {
    const auto topo = topology::ring(4);
    const auto a = partition_with_redundancy(mnist(), topo, {320, 80, 0.5, 9});
    const auto b = partition_with_redundancy(mnist(), topo, {320, 80, 0.5, 9});
    const auto c = partition_with_redundancy(mnist(), topo, {320, 80, 0.5, 10});
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(a.stations[k].train == b.stations[k].train);
        CHECK(a.stations[k].test == b.stations[k].test);
    }
    CHECK(a.stations[0].train != c.stations[0].train);
}

TEST_CASE("property: partitions are stratified and counted exactly") {
    std::mt19937_64 rng(4);
    const auto ds = synthetic(200);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t k = 2 + rng() % 5;
        const std::size_t ns = 10 + rng() % 60;
        const std::size_t nt = 1 + rng() % 20;
        const auto topo = topology::ring(k);
        // Coverage is guaranteed once the unique part alone can hold every class.
        const std::size_t max_shared = (ns - 10) / topo.neighbors(0).size();
        const double rho = static_cast<double>(rng() % (max_shared + 1)) * topo.neighbors(0).size() / static_cast<double>(ns);
        const auto m = partition_with_redundancy(ds, topo, {ns, nt, rho, rng()});
        for (std::size_t s = 0; s < k; ++s) {
            const auto& st = m.stations[s];
            CHECK(st.train.size() == ns);
            CHECK(st.test.size() == nt);
            CHECK(as_set(st.train).size() == ns);
            std::set<int> classes;
            for (auto i : st.train) classes.insert(ds.labels[i]);
            CHECK(classes.size() == 10);
        }
    }
}

TEST_CASE("partition: infeasible requests") {
    const auto ds = synthetic(10);
    CHECK_THROWS_AS(partition_with_redundancy(ds, topology::ring(4), {320, 80, 0.5, 1}), DataError);
    CHECK_THROWS_AS(partition_with_redundancy(ds, topology::ring(2), {10, 1, 1.0, 1}), DataError);
    // Odd ring with no unique slots: neighboring shared chunks cannot all complement each other.
    CHECK_THROWS_WITH_AS(partition_with_redundancy(synthetic(100), topology::ring(3), {10, 1, 0.99, 1}),
                         "class coverage infeasible for this partition", DataError);
    CHECK_THROWS_AS(partition_with_redundancy(ds, topology::ring(2), {10, 1, -0.1, 1}), DataError);
}

TEST_CASE("manifest text round-trip") {
    const auto m = partition_with_redundancy(synthetic(50), topology::ring(3), {20, 5, 0.25, 77});
    std::stringstream ss;
    write_manifest(ss, m);
    const std::string text = ss.str();
    CHECK(text.rfind("rho 0.25\nseed 77\nk 0 train ", 0) == 0);
    const auto back = read_manifest(ss);
    CHECK(back.rho == m.rho);
    CHECK(back.seed == m.seed);
    REQUIRE(back.stations.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(back.stations[k].train == m.stations[k].train);
        CHECK(back.stations[k].test == m.stations[k].test);
    }
    std::istringstream bad("rho 0.5\nk 0 nonsense 1 2\n");
    CHECK_THROWS_AS(read_manifest(bad), DataError);
}

TEST_CASE("serialize_item") {
    SUBCASE("fixture layout") {
        const std::vector<double> px{0.0, 1.0, 0.5, 0.0624, 0.0625, 0.99};
        // 0.0625 * 16 = 1 exactly; 1.0 clamps to level 15.
        CHECK(serialize_item(px, 3, 2, 3) == "y3;000f8;0101f");
        CHECK(serialize_item(px, 3, 2, 3, 2) == "y3;00011;01001");
    }
    SUBCASE("value semantics") {
        const auto& d = mnist();
        const std::vector<double> a(d.features.row(5).begin(), d.features.row(5).end());
        const std::vector<double> b = a;
        CHECK(serialize_item(a, d.labels[5], 28, 28) == serialize_item(b, d.labels[5], 28, 28));
        CHECK(serialize_item(d, 5) == serialize_item(a, d.labels[5], 28, 28));
        CHECK(split_tokens(serialize_item(d, 5)).size() == 29);
    }
    SUBCASE("one pixel across a boundary changes one token") {
        const auto& d = mnist();
        std::vector<double> a(d.features.row(11).begin(), d.features.row(11).end());
        auto b = a;
        b[14 * 28 + 9] = a[14 * 28 + 9] < 0.5 ? 0.9 : 0.1;
        const auto ta = split_tokens(serialize_item(a, d.labels[11], 28, 28));
        const auto tb = split_tokens(serialize_item(b, d.labels[11], 28, 28));
        REQUIRE(ta.size() == tb.size());
        std::size_t diff = 0;
        for (std::size_t i = 0; i < ta.size(); ++i) diff += ta[i] != tb[i];
        CHECK(diff == 1);
        CHECK(ta[15] != tb[15]);
    }
    SUBCASE("invalid levels") {
        const std::vector<double> px{0.0};
        CHECK_THROWS_AS(serialize_item(px, 0, 1, 1, 17), DataError);
        CHECK_THROWS_AS(serialize_item(px, 0, 1, 1, 1), DataError);
    }
}

TEST_CASE("property: serialization is injective on quantized images") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> a(16), b(16);
        for (auto& x : a) x = u(rng);
        b = a;
        if (rng() % 2) b[rng() % 16] = u(rng);
        const int la = static_cast<int>(rng() % 3), lb = rng() % 4 ? la : static_cast<int>(rng() % 3);
        bool same = la == lb;
        for (std::size_t i = 0; i < 16; ++i)
            same &= std::min(15, static_cast<int>(a[i] * 16)) == std::min(15, static_cast<int>(b[i] * 16));
        CHECK((serialize_item(a, la, 4, 4) == serialize_item(b, lb, 4, 4)) == same);
    }
}
