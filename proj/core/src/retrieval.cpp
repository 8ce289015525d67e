#include "kdf/eval.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace kdf::eval {

RetrievalIndex::RetrievalIndex(std::vector<Matrix> blocks, std::span<const data::PlaceSample> database)
    : blocks_(std::move(blocks)) {
    if (blocks_.empty()) {
        throw UsageError("retrieval index needs at least one embedding block");
    }
    for (const Matrix& b : blocks_) {
        if (b.rows() != static_cast<Eigen::Index>(database.size())) {
            throw UsageError("retrieval index: block has " + std::to_string(b.rows()) + " rows for " +
                             std::to_string(database.size()) + " database samples");
        }
        if (!b.allFinite()) {
            throw UsageError("retrieval index: non-finite database embedding");
        }
    }
    sample_ids_.reserve(database.size());
    poses_.reserve(database.size());
    for (const auto& s : database) {
        sample_ids_.push_back(s.sample_id);
        poses_.push_back(s.pose);
    }
}

Eigen::Index RetrievalIndex::dim() const noexcept {
    Eigen::Index d = 0;
    for (const Matrix& b : blocks_) {
        d += b.cols();
    }
    return d;
}

Matrix RetrievalIndex::embeddings() const {
    Matrix out(static_cast<Eigen::Index>(size()), dim());
    Eigen::Index col = 0;
    for (const Matrix& b : blocks_) {
        out.middleCols(col, b.cols()) = b;
        col += b.cols();
    }
    return out;
}

double RetrievalIndex::squared_distance(std::size_t row, std::span<const RowVector> query) const {
    double sum = 0.0;
    for (std::size_t k = 0; k < blocks_.size(); ++k) {
        sum += (blocks_[k].row(static_cast<Eigen::Index>(row)) - query[k]).squaredNorm();
    }
    return sum;
}

std::vector<Matrix> embed_blocks(std::span<const nn::ModelSnapshot> snapshots,
                                 std::span<const data::PlaceSample> samples, bool fusion) {
    const std::size_t want = fusion ? 2 : 1;
    if (snapshots.size() != want) {
        throw UsageError(std::string(fusion ? "fusion needs exactly two snapshots" : "retrieval without fusion needs "
                                                                                      "exactly one snapshot") +
                         " (got " + std::to_string(snapshots.size()) + ")");
    }
    const auto scans = nn::scan_refs(samples);
    std::vector<Matrix> blocks;
    for (const auto& s : snapshots) {
        blocks.push_back(s.encode(scans).values);
    }
    return blocks;
}

RetrievalIndex build_index(std::span<const nn::ModelSnapshot> snapshots,
                           std::span<const data::PlaceSample> database, bool fusion) {
    return RetrievalIndex(embed_blocks(snapshots, database, fusion), database);
}

Retrieved retrieve(const RetrievalIndex& index, std::span<const RowVector> query, std::size_t k) {
    if (k < 1) {
        throw UsageError("retrieve: k must be >= 1");
    }
    if (index.size() == 0) {
        throw UsageError("retrieve: database is empty");
    }
    if (query.size() != index.blocks().size()) {
        throw UsageError("retrieve: query has " + std::to_string(query.size()) + " blocks, index has " +
                         std::to_string(index.blocks().size()));
    }
    for (std::size_t b = 0; b < query.size(); ++b) {
        if (query[b].size() != index.blocks()[b].cols()) {
            throw UsageError("retrieve: query embedding width does not match the index");
        }
    }
    const std::size_t m = index.size();
    std::vector<double> dist(m);
    for (std::size_t i = 0; i < m; ++i) {
        dist[i] = index.squared_distance(i, query);
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    const auto& ids = index.sample_ids();
    const auto better = [&](std::size_t a, std::size_t b) {
        return dist[a] < dist[b] || (dist[a] == dist[b] && ids[a] < ids[b]);
    };
    Retrieved out;
    out.truncated = k > m;
    const std::size_t take = std::min(k, m);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), better);
    order.resize(take);
    out.squared_distances.reserve(take);
    for (std::size_t i : order) {
        out.squared_distances.push_back(dist[i]);
    }
    out.rows = std::move(order);
    return out;
}

Retrieved retrieve(const RetrievalIndex& index, const data::PlaceSample& query,
                   std::span<const nn::ModelSnapshot> snapshots, std::size_t k) {
    const auto blocks = embed_blocks(snapshots, std::span<const data::PlaceSample>(&query, 1), index.fused());
    std::vector<RowVector> q;
    for (const Matrix& b : blocks) {
        q.push_back(b.row(0));
    }
    return retrieve(index, q, k);
}

} // namespace kdf::eval
