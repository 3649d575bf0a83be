#pragma once

// Counting non-repeated data: simhash fingerprints recorded in three seeded
// bitmaps, used to estimate how many distinct items a station holds and how
// many of its items are absent from a neighbor's data.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cdfl::sketch {

class SketchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class WeightMode {
    uniform,   // every token weighs 1.0, repeated tokens count once per occurrence
    frequency, // repeated tokens collapse to one feature of weight 1 + ln(count)
};

struct ItemTokens {
    std::vector<std::string> tokens;
    std::vector<double> weights;
};

/// Splits an item on ';', dropping empty pieces. Throws SketchError("empty item")
/// when the item is empty or has no non-empty piece.
ItemTokens tokenize(std::string_view item, WeightMode mode = WeightMode::uniform);

/// Bob Jenkins' lookup3 `hashlittle2`, returning c | (b << 32). The low 32 bits
/// of the seed initialize c, the high 32 bits initialize b.
std::uint64_t jenkins64(std::string_view bytes, std::uint64_t seed);

struct Fingerprint {
    std::uint64_t value = 0;
    unsigned width = 64;

    friend bool operator==(const Fingerprint&, const Fingerprint&) = default;
};

/// Weighted simhash over the token hashes. Bit i is set iff the signed weight
/// sum at position i is strictly positive. Width must be 32 or 64.
Fingerprint simhash(const ItemTokens& tokens, unsigned width, std::uint64_t seed);

unsigned hamming_distance(Fingerprint a, Fingerprint b);

class Bitmap {
public:
    Bitmap() = default;
    explicit Bitmap(std::size_t size);

    std::size_t size() const { return size_; }
    bool test(std::size_t index) const;
    void set(std::size_t index);
    std::size_t popcount() const;

    /// ceil(size/8) bytes, bit j stored in byte j/8 at position j%8.
    std::vector<std::uint8_t> to_bytes() const;
    static Bitmap from_bytes(std::size_t size, std::span<const std::uint8_t> bytes);

    friend bool operator==(const Bitmap&, const Bitmap&) = default;

private:
    std::size_t size_ = 0;
    std::vector<std::uint64_t> words_;
};

inline constexpr std::array<std::uint64_t, 3> kDefaultSeeds{0x9E37, 0xC2B2, 0x1656};

struct SketchParams {
    std::size_t bitmap_bits = std::size_t{1} << 16;
    unsigned width = 64;
    std::array<std::uint64_t, 3> seeds = kDefaultSeeds;
    WeightMode weighting = WeightMode::uniform;

    /// Throws SketchError unless bitmap_bits is a power of two, width is 32 or
    /// 64 and the seeds are pairwise distinct.
    void validate() const;
};

/// Bitmap cell of an item in each of the three bitmaps.
using ProbeIndices = std::array<std::size_t, 3>;

ProbeIndices probe_indices(const SketchParams& params, std::string_view item);

class SketchSet {
public:
    SketchSet();
    explicit SketchSet(SketchParams params);

    const SketchParams& params() const { return params_; }
    const std::array<Bitmap, 3>& bitmaps() const { return bitmaps_; }

    void insert(std::string_view item);
    void insert(const ProbeIndices& probe);

    /// Average popcount over the three bitmaps. With lc_correction each popcount
    /// X is first mapped to -m ln(1 - X/m); a full bitmap then throws
    /// SketchError("sketch saturated").
    double estimate_cardinality(bool lc_correction = false) const;

    /// True when the item's cell is set in at least two of the three bitmaps.
    bool probably_contains(const ProbeIndices& probe) const;

    /// m, n and seeds agree. The weighting mode is local and not compared.
    bool compatible_with(const SketchParams& other) const;

    /// Wire format: u64 m, u64 n, 3 x u64 seed (all little-endian), then the
    /// three bitmaps as ceil(m/8) bytes each.
    std::vector<std::uint8_t> serialize() const;
    static SketchSet deserialize(std::span<const std::uint8_t> bytes);

    friend bool operator==(const SketchSet& a, const SketchSet& b) {
        return a.params_.bitmap_bits == b.params_.bitmap_bits && a.params_.width == b.params_.width &&
               a.params_.seeds == b.params_.seeds && a.bitmaps_ == b.bitmaps_;
    }

private:
    SketchParams params_;
    std::array<Bitmap, 3> bitmaps_;
};

/// Number of local items the neighbor's sketch does not hold, judged by a
/// majority of the three bitmaps. Estimates |D_local \ D_neighbor|.
std::size_t estimate_distinct_from(const SketchParams& local, std::span<const std::string> local_items,
                                   const SketchSet& neighbor);
std::size_t estimate_distinct_from(const SketchParams& local, std::span<const ProbeIndices> local_probes,
                                   const SketchSet& neighbor);

} // namespace cdfl::sketch
