#include "cdfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

namespace cdfl::data {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
    if (bytes.size() < offset + 4) throw DataError("truncated IDX header");
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
    if (read_be32(images, 0) != kImagesMagic || read_be32(labels, 0) != kLabelsMagic)
        throw DataError("not an IDX file");

    const std::size_t count = read_be32(images, 4);
    const std::size_t rows = read_be32(images, 8);
    const std::size_t cols = read_be32(images, 12);
    const std::size_t label_count = read_be32(labels, 4);
    if (count != label_count) throw DataError("image and label counts differ");
    if (rows == 0 || cols == 0) throw DataError("empty image shape");

    const std::size_t pixels = rows * cols;
    if (images.size() != 16 + count * pixels) throw DataError("image file size does not match its header");
    if (labels.size() != 8 + count) throw DataError("label file size does not match its header");

    Dataset ds;
    ds.image_rows = rows;
    ds.image_cols = cols;
    ds.features = nn::Matrix(count, pixels);
    for (std::size_t i = 0; i < count * pixels; ++i) ds.features.data[i] = images[16 + i] / 255.0;
    ds.labels.resize(count);
    int max_label = -1;
    for (std::size_t i = 0; i < count; ++i) {
        ds.labels[i] = labels[8 + i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.classes = static_cast<std::size_t>(max_label + 1);
    return ds;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    const auto img = slurp(images);
    const auto lab = slurp(labels);
    return parse_idx(img, lab);
}

namespace {

// Per-class shuffled pools drawn from in class round-robin order.
class StratifiedPool {
public:
    StratifiedPool(const Dataset& ds, std::mt19937_64& rng) : pools_(ds.classes) {
        for (std::size_t i = 0; i < ds.size(); ++i) pools_[static_cast<std::size_t>(ds.labels[i])].push_back(i);
        for (auto& p : pools_) {
            std::shuffle(p.begin(), p.end(), rng);
            std::reverse(p.begin(), p.end());  // pop from the back in shuffled order
        }
    }

    std::size_t classes() const { return pools_.size(); }

    bool has(std::size_t cls) const { return !pools_[cls].empty(); }

    std::size_t take(std::size_t cls) {
        const std::size_t idx = pools_[cls].back();
        pools_[cls].pop_back();
        return idx;
    }

    std::size_t next() {
        for (std::size_t tries = 0; tries < pools_.size(); ++tries) {
            const std::size_t cls = cursor_++ % pools_.size();
            if (has(cls)) return take(cls);
        }
        throw DataError("dataset too small for the requested partition");
    }

private:
    std::vector<std::vector<std::size_t>> pools_;
    std::size_t cursor_ = 0;
};

} // namespace

PartitionManifest partition_with_redundancy(const Dataset& dataset, const topology::Topology& topo,
                                            const PartitionSpec& spec) {
    const std::size_t k = topo.size();
    const std::size_t n_s = spec.train_per_station;
    if (!(spec.rho >= 0.0 && spec.rho < 1.0)) throw DataError("redundancy fraction must lie in [0, 1)");
    if (n_s == 0) throw DataError("train_per_station must be positive");
    if (dataset.classes == 0) throw DataError("dataset has no classes");

    std::size_t shared = 0;
    if (spec.rho > 0.0 && k > 1) {
        const std::size_t degree = topo.neighbors(0).size();
        for (std::size_t s = 0; s < k; ++s)
            if (topo.neighbors(s).size() != degree) throw DataError("redundancy model needs every station to have the same degree");
        shared = static_cast<std::size_t>(std::llround(spec.rho * static_cast<double>(n_s) / static_cast<double>(degree)));
        if (shared * degree > n_s) throw DataError("redundancy fraction leaves no room for unique samples");
    }

    const std::size_t distinct = k * n_s - topo.edge_count() * shared + k * spec.test_per_station;
    if (distinct > dataset.size()) throw DataError("dataset too small for the requested partition");

    std::mt19937_64 rng(spec.seed);
    StratifiedPool pool(dataset, rng);

    PartitionManifest m;
    m.rho = spec.rho;
    m.seed = spec.seed;
    m.stations.resize(k);

    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b : topo.neighbors(a)) {
            if (b <= a) continue;
            for (std::size_t j = 0; j < shared; ++j) {
                const std::size_t idx = pool.next();
                m.stations[a].train.push_back(idx);
                m.stations[b].train.push_back(idx);
            }
        }

    for (auto& st : m.stations) {
        std::set<int> present;
        for (auto idx : st.train) present.insert(dataset.labels[idx]);
        // Classes the shared chunks missed come first so each station spans all classes.
        for (std::size_t cls = 0; cls < pool.classes() && st.train.size() < n_s; ++cls)
            if (!present.contains(static_cast<int>(cls)) && pool.has(cls)) st.train.push_back(pool.take(cls));
        while (st.train.size() < n_s) st.train.push_back(pool.next());
        if (n_s >= dataset.classes) {
            std::set<int> cover;
            for (auto idx : st.train) cover.insert(dataset.labels[idx]);
            if (cover.size() < dataset.classes) throw DataError("class coverage infeasible for this partition");
        }
    }

    for (auto& st : m.stations)
        for (std::size_t j = 0; j < spec.test_per_station; ++j) st.test.push_back(pool.next());

    for (auto& st : m.stations) std::shuffle(st.train.begin(), st.train.end(), rng);
    return m;
}

std::size_t exact_distinct_from(const PartitionManifest& manifest, std::size_t a, std::size_t b) {
    const auto& other = manifest.stations.at(b).train;
    const std::set<std::size_t> theirs(other.begin(), other.end());
    const auto& mine = manifest.stations.at(a).train;
    const std::set<std::size_t> own(mine.begin(), mine.end());
    std::size_t n = 0;
    for (auto idx : own)
        if (!theirs.contains(idx)) ++n;
    return n;
}

void write_manifest(std::ostream& out, const PartitionManifest& manifest) {
    std::ostringstream rho;
    rho.precision(17);
    rho << manifest.rho;
    out << "rho " << rho.str() << "\n";
    out << "seed " << manifest.seed << "\n";
    for (std::size_t k = 0; k < manifest.stations.size(); ++k) {
        out << "k " << k << " train";
        for (auto idx : manifest.stations[k].train) out << ' ' << idx;
        out << "\nk " << k << " test";
        for (auto idx : manifest.stations[k].test) out << ' ' << idx;
        out << "\n";
    }
}

PartitionManifest read_manifest(std::istream& in) {
    PartitionManifest m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key)) continue;
        if (key == "rho") {
            if (!(ls >> m.rho)) throw DataError("manifest line " + std::to_string(lineno) + ": bad rho");
        } else if (key == "seed") {
            if (!(ls >> m.seed)) throw DataError("manifest line " + std::to_string(lineno) + ": bad seed");
        } else if (key == "k") {
            std::size_t id = 0;
            std::string which;
            if (!(ls >> id >> which) || (which != "train" && which != "test"))
                throw DataError("manifest line " + std::to_string(lineno) + ": expected `k <id> train|test`");
            if (m.stations.size() <= id) m.stations.resize(id + 1);
            auto& dst = which == "train" ? m.stations[id].train : m.stations[id].test;
            std::size_t idx = 0;
            while (ls >> idx) dst.push_back(idx);
            if (!ls.eof()) throw DataError("manifest line " + std::to_string(lineno) + ": bad index");
        } else {
            throw DataError("manifest line " + std::to_string(lineno) + ": unknown key " + key);
        }
    }
    return m;
}

std::string serialize_item(std::span<const double> pixels, int label, std::size_t rows, std::size_t cols,
                           unsigned levels) {
    if (levels < 2 || levels > 16) throw DataError("quantization levels must lie in [2, 16]");
    if (pixels.size() != rows * cols) throw DataError("pixel count does not match image shape");
    static constexpr char kHex[] = "0123456789abcdef";

    std::string out = "y" + std::to_string(label);
    out.reserve(out.size() + rows * (cols + 3));
    for (std::size_t r = 0; r < rows; ++r) {
        out += ';';
        out += kHex[(r >> 4) & 0xF];
        out += kHex[r & 0xF];
        for (std::size_t c = 0; c < cols; ++c) {
            const double p = std::clamp(pixels[r * cols + c], 0.0, 1.0);
            const auto q = std::min<unsigned>(levels - 1, static_cast<unsigned>(p * levels));
            out += kHex[q];
        }
    }
    return out;
}

std::string serialize_item(const Dataset& dataset, std::size_t index, unsigned levels) {
    return serialize_item(dataset.features.row(index), dataset.labels.at(index), dataset.image_rows,
                          dataset.image_cols, levels);
}

} // namespace cdfl::data
