#pragma once

// IDX ingestion, redundancy-injecting partitioning and item serialization.

#include "cdfl/nn.hpp"
#include "cdfl/topology.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdfl::data {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Dataset {
    nn::Matrix features;  // one sample per row, pixels scaled to [0, 1]
    std::vector<int> labels;
    std::size_t image_rows = 0;
    std::size_t image_cols = 0;
    std::size_t classes = 0;

    std::size_t size() const { return labels.size(); }
};

/// Reads an IDX3 image file (magic 0x00000803) and an IDX1 label file (magic
/// 0x00000801). Throws DataError("not an IDX file") on a bad magic and
/// DataError on truncation or a count mismatch.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Same, from in-memory file contents.
Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels);

struct StationSplit {
    std::vector<std::size_t> train;  // dataset row indices
    std::vector<std::size_t> test;
};

struct PartitionManifest {
    std::vector<StationSplit> stations;
    double rho = 0.0;
    std::uint64_t seed = 0;
};

struct PartitionSpec {
    std::size_t train_per_station = 320;
    std::size_t test_per_station = 80;
    double rho = 0.5;
    std::uint64_t seed = 0;
};

/// Every station gets `train_per_station` class-stratified samples. For each
/// edge, round(rho * n_s / degree) samples are assigned to both endpoints; the
/// rest are unique to the station. Test sets are disjoint from all training
/// data and from each other. Throws DataError on infeasible counts.
PartitionManifest partition_with_redundancy(const Dataset& dataset, const topology::Topology& topo,
                                            const PartitionSpec& spec);

/// |train_a \ train_b| by dataset index.
std::size_t exact_distinct_from(const PartitionManifest& manifest, std::size_t a, std::size_t b);

/// Lines `rho <v>`, `seed <v>`, then `k <id> train <idx...>` and
/// `k <id> test <idx...>` per station.
void write_manifest(std::ostream& out, const PartitionManifest& manifest);
PartitionManifest read_manifest(std::istream& in);

/// Label token `y<label>` followed by one token per image row: the row index
/// as two hex digits, then every pixel quantized to `levels` steps as one hex
/// digit. Tokens are joined by ';'. Requires 2 <= levels <= 16.
std::string serialize_item(std::span<const double> pixels, int label, std::size_t rows, std::size_t cols,
                           unsigned levels = 16);
std::string serialize_item(const Dataset& dataset, std::size_t index, unsigned levels = 16);

} // namespace cdfl::data
