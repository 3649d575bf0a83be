#include "cdfl/sketch.hpp"

#include "cdfl/wire.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <map>

namespace cdfl::sketch {

ItemTokens tokenize(std::string_view item, WeightMode mode) {
    if (item.empty()) throw SketchError("empty item");

    std::vector<std::string> pieces;
    std::size_t start = 0;
    while (start <= item.size()) {
        std::size_t end = item.find(';', start);
        if (end == std::string_view::npos) end = item.size();
        if (end > start) pieces.emplace_back(item.substr(start, end - start));
        start = end + 1;
    }
    if (pieces.empty()) throw SketchError("empty item");

    ItemTokens out;
    if (mode == WeightMode::uniform) {
        out.weights.assign(pieces.size(), 1.0);
        out.tokens = std::move(pieces);
        return out;
    }

    // First-occurrence order keeps the token list deterministic.
    std::map<std::string, std::size_t> counts;
    for (const auto& p : pieces) ++counts[p];
    for (const auto& p : pieces) {
        auto it = counts.find(p);
        if (it->second == 0) continue;
        out.tokens.push_back(p);
        out.weights.push_back(1.0 + std::log(static_cast<double>(it->second)));
        it->second = 0;
    }
    return out;
}

namespace {

constexpr std::uint32_t rot(std::uint32_t x, int k) { return std::rotl(x, k); }

inline void mix(std::uint32_t& a, std::uint32_t& b, std::uint32_t& c) {
    a -= c; a ^= rot(c, 4);  c += b;
    b -= a; b ^= rot(a, 6);  a += c;
    c -= b; c ^= rot(b, 8);  b += a;
    a -= c; a ^= rot(c, 16); c += b;
    b -= a; b ^= rot(a, 19); a += c;
    c -= b; c ^= rot(b, 4);  b += a;
}

inline void final_mix(std::uint32_t& a, std::uint32_t& b, std::uint32_t& c) {
    c ^= b; c -= rot(b, 14);
    a ^= c; a -= rot(c, 11);
    b ^= a; b -= rot(a, 25);
    c ^= b; c -= rot(b, 16);
    a ^= c; a -= rot(c, 4);
    b ^= a; b -= rot(a, 14);
    c ^= b; c -= rot(b, 24);
}

inline std::uint32_t load_le(const unsigned char* k, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        if (n == 4) {
            std::uint32_t v;
            std::memcpy(&v, k, 4);
            return v;
        }
    }
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= std::uint32_t{k[i]} << (8 * i);
    return v;
}

} // namespace

std::uint64_t jenkins64(std::string_view bytes, std::uint64_t seed) {
    auto pc = static_cast<std::uint32_t>(seed);
    auto pb = static_cast<std::uint32_t>(seed >> 32);
    const auto* k = reinterpret_cast<const unsigned char*>(bytes.data());
    std::size_t length = bytes.size();

    std::uint32_t a = 0xdeadbeef + static_cast<std::uint32_t>(length) + pc;
    std::uint32_t b = a;
    std::uint32_t c = a + pb;

    while (length > 12) {
        a += load_le(k, 4);
        b += load_le(k + 4, 4);
        c += load_le(k + 8, 4);
        mix(a, b, c);
        length -= 12;
        k += 12;
    }
    if (length == 0) return std::uint64_t{c} | (std::uint64_t{b} << 32);

    // Tail of 1..12 bytes, zero-padded.
    a += load_le(k, std::min<std::size_t>(length, 4));
    if (length > 4) b += load_le(k + 4, std::min<std::size_t>(length - 4, 4));
    if (length > 8) c += load_le(k + 8, length - 8);
    final_mix(a, b, c);
    return std::uint64_t{c} | (std::uint64_t{b} << 32);
}

Fingerprint simhash(const ItemTokens& tokens, unsigned width, std::uint64_t seed) {
    if (width != 32 && width != 64) throw SketchError("simhash width must be 32 or 64");
    if (tokens.tokens.empty() || tokens.tokens.size() != tokens.weights.size())
        throw SketchError("malformed token list");

    std::array<double, 64> v{};
    for (std::size_t f = 0; f < tokens.tokens.size(); ++f) {
        const double w = tokens.weights[f];
        if (!(w >= 0.0)) throw SketchError("negative feature weight");
        const std::uint64_t h = jenkins64(tokens.tokens[f], seed);
        // +w for a set bit, -w otherwise; written without a branch so it vectorizes.
        for (unsigned i = 0; i < width; ++i) v[i] += 2.0 * w * static_cast<double>((h >> i) & 1U) - w;
    }

    std::uint64_t bits = 0;
    for (unsigned i = 0; i < width; ++i)
        if (v[i] > 0.0) bits |= std::uint64_t{1} << i;
    return {bits, width};
}

unsigned hamming_distance(Fingerprint a, Fingerprint b) {
    return static_cast<unsigned>(std::popcount(a.value ^ b.value));
}

Bitmap::Bitmap(std::size_t size) : size_(size), words_((size + 63) / 64, 0) {}

bool Bitmap::test(std::size_t index) const { return (words_[index / 64] >> (index % 64)) & 1U; }

void Bitmap::set(std::size_t index) { words_[index / 64] |= std::uint64_t{1} << (index % 64); }

std::size_t Bitmap::popcount() const {
    std::size_t n = 0;
    for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
}

std::vector<std::uint8_t> Bitmap::to_bytes() const {
    std::vector<std::uint8_t> out((size_ + 7) / 8, 0);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<std::uint8_t>(words_[i / 8] >> (8 * (i % 8)));
    return out;
}

Bitmap Bitmap::from_bytes(std::size_t size, std::span<const std::uint8_t> bytes) {
    if (bytes.size() != (size + 7) / 8) throw SketchError("bitmap byte count mismatch");
    Bitmap bm(size);
    for (std::size_t i = 0; i < bytes.size(); ++i) bm.words_[i / 8] |= std::uint64_t{bytes[i]} << (8 * (i % 8));
    // Padding bits past m must stay clear so popcount <= m.
    if (size % 64 != 0 && !bm.words_.empty()) {
        const std::uint64_t tail = bm.words_.back() >> (size % 64);
        if (tail != 0) throw SketchError("bitmap padding bits set");
    }
    return bm;
}

void SketchParams::validate() const {
    if (bitmap_bits == 0 || !std::has_single_bit(bitmap_bits)) throw SketchError("bitmap size must be a power of two");
    if (width != 32 && width != 64) throw SketchError("simhash width must be 32 or 64");
    if (seeds[0] == seeds[1] || seeds[0] == seeds[2] || seeds[1] == seeds[2])
        throw SketchError("sketch seeds must be pairwise distinct");
}

ProbeIndices probe_indices(const SketchParams& params, std::string_view item) {
    const ItemTokens tokens = tokenize(item, params.weighting);
    ProbeIndices out{};
    for (std::size_t i = 0; i < 3; ++i) {
        // m is a power of two, so mod is a mask.
        out[i] = static_cast<std::size_t>(simhash(tokens, params.width, params.seeds[i]).value &
                                           (params.bitmap_bits - 1));
    }
    return out;
}

SketchSet::SketchSet() : SketchSet(SketchParams{}) {}

SketchSet::SketchSet(SketchParams params) : params_(params) {
    params_.validate();
    for (auto& bm : bitmaps_) bm = Bitmap(params_.bitmap_bits);
}

void SketchSet::insert(std::string_view item) { insert(probe_indices(params_, item)); }

void SketchSet::insert(const ProbeIndices& probe) {
    for (std::size_t i = 0; i < 3; ++i) bitmaps_[i].set(probe[i]);
}

double SketchSet::estimate_cardinality(bool lc_correction) const {
    const double m = static_cast<double>(params_.bitmap_bits);
    double sum = 0.0;
    for (const auto& bm : bitmaps_) {
        const double x = static_cast<double>(bm.popcount());
        if (!lc_correction) {
            sum += x;
            continue;
        }
        if (x >= m) throw SketchError("sketch saturated");
        sum += -m * std::log1p(-x / m);
    }
    return sum / 3.0;
}

bool SketchSet::probably_contains(const ProbeIndices& probe) const {
    int hits = 0;
    for (std::size_t i = 0; i < 3; ++i) hits += bitmaps_[i].test(probe[i]) ? 1 : 0;
    return hits >= 2;
}

bool SketchSet::compatible_with(const SketchParams& other) const {
    return params_.bitmap_bits == other.bitmap_bits && params_.width == other.width && params_.seeds == other.seeds;
}

std::vector<std::uint8_t> SketchSet::serialize() const {
    wire::Writer w;
    w.u64(params_.bitmap_bits);
    w.u64(params_.width);
    for (auto s : params_.seeds) w.u64(s);
    for (const auto& bm : bitmaps_) w.raw(bm.to_bytes());
    return w.take();
}

SketchSet SketchSet::deserialize(std::span<const std::uint8_t> bytes) {
    wire::Reader r(bytes);
    SketchParams p;
    try {
        p.bitmap_bits = static_cast<std::size_t>(r.u64());
        p.width = static_cast<unsigned>(r.u64());
        for (auto& s : p.seeds) s = r.u64();
        p.validate();
        SketchSet out(p);
        const std::size_t nbytes = (p.bitmap_bits + 7) / 8;
        for (auto& bm : out.bitmaps_) bm = Bitmap::from_bytes(p.bitmap_bits, r.raw(nbytes));
        if (r.remaining() != 0) throw SketchError("trailing bytes after sketch");
        return out;
    } catch (const wire::DecodeError& e) {
        throw SketchError(std::string("sketch decode: ") + e.what());
    }
}

std::size_t estimate_distinct_from(const SketchParams& local, std::span<const std::string> local_items,
                                   const SketchSet& neighbor) {
    if (!neighbor.compatible_with(local)) throw SketchError("incompatible sketch");
    std::size_t missing = 0;
    for (const auto& item : local_items)
        if (!neighbor.probably_contains(probe_indices(local, item))) ++missing;
    return missing;
}

std::size_t estimate_distinct_from(const SketchParams& local, std::span<const ProbeIndices> local_probes,
                                   const SketchSet& neighbor) {
    if (!neighbor.compatible_with(local)) throw SketchError("incompatible sketch");
    std::size_t missing = 0;
    for (const auto& probe : local_probes)
        if (!neighbor.probably_contains(probe)) ++missing;
    return missing;
}

} // namespace cdfl::sketch
