#include "kdf/eval.hpp"

#include <algorithm>
#include <string>

namespace kdf::eval {

namespace {

bool within(const Vec2& a, const Vec2& b, double radius) { return (a - b).norm() < radius; }

} // namespace

RecallReport recall_at_n(const RetrievalIndex& index, std::span<const Matrix> query_blocks,
                         std::span<const data::PlaceSample> queries, double pos_test, std::size_t n) {
    if (queries.empty()) {
        throw UsageError("recall_at_n: query split is empty");
    }
    if (n < 1) {
        throw UsageError("recall_at_n: n must be >= 1");
    }
    if (!(pos_test > 0.0)) {
        throw UsageError("recall_at_n: pos_test must be positive");
    }
    if (query_blocks.size() != index.blocks().size()) {
        throw UsageError("recall_at_n: query blocks do not match the index");
    }
    for (const Matrix& b : query_blocks) {
        if (b.rows() != static_cast<Eigen::Index>(queries.size())) {
            throw UsageError("recall_at_n: query embeddings do not match the query count");
        }
    }
    const auto& poses = index.poses();
    RecallReport report;
    std::size_t hits = 0;
    std::vector<RowVector> q(query_blocks.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const bool has_positive = std::any_of(poses.begin(), poses.end(), [&](const Vec2& p) {
            return within(p, queries[i].pose, pos_test);
        });
        if (!has_positive) {
            ++report.excluded;
            continue;
        }
        ++report.evaluated;
        for (std::size_t b = 0; b < q.size(); ++b) {
            q[b] = query_blocks[b].row(static_cast<Eigen::Index>(i));
        }
        const Retrieved r = retrieve(index, q, n);
        for (std::size_t row : r.rows) {
            if (within(poses[row], queries[i].pose, pos_test)) {
                ++hits;
                break;
            }
        }
    }
    if (report.evaluated > 0) {
        report.percent = 100.0 * static_cast<double>(hits) / static_cast<double>(report.evaluated);
    }
    return report;
}

RecallReport recall_at_n(const RetrievalIndex& index, std::span<const data::PlaceSample> queries,
                         std::span<const nn::ModelSnapshot> snapshots, double pos_test, std::size_t n) {
    if (queries.empty()) {
        throw UsageError("recall_at_n: query split is empty");
    }
    const auto blocks = embed_blocks(snapshots, queries, index.fused());
    return recall_at_n(index, blocks, queries, pos_test, n);
}

RecallMatrix RecallMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) {
        return {};
    }
    RecallMatrix r(rows.size(), rows.front().size());
    for (std::size_t l = 0; l < rows.size(); ++l) {
        if (rows[l].size() != r.tasks()) {
            throw UsageError("recall matrix rows differ in length");
        }
        for (std::size_t t = 0; t < r.tasks(); ++t) {
            r.at(l, t) = rows[l][t];
        }
    }
    return r;
}

ForgettingMax parse_forgetting_max(std::string_view name) {
    if (name == "printed") {
        return ForgettingMax::Printed;
    }
    if (name == "from_t") {
        return ForgettingMax::FromT;
    }
    throw ConfigError("forgetting_max must be printed|from_t (got '" + std::string(name) + "')");
}

std::string_view to_string(ForgettingMax m) noexcept {
    return m == ForgettingMax::Printed ? "printed" : "from_t";
}

ForgettingReport forgetting_score(const RecallMatrix& r, ForgettingMax mode) {
    const std::size_t steps = r.steps();
    if (steps < 2) {
        throw UsageError("forgetting score needs at least two steps (got " + std::to_string(steps) + ")");
    }
    if (r.tasks() != steps) {
        throw UsageError("forgetting score needs a square recall matrix");
    }
    const std::size_t last = steps - 1;
    ForgettingReport out;
    double sum = 0.0;
    for (std::size_t t = 0; t < last; ++t) {
        const std::size_t lo = mode == ForgettingMax::Printed ? 0 : t;
        const std::size_t hi = mode == ForgettingMax::Printed ? t : last - 1;
        double best = r.at(lo, t);
        for (std::size_t l = lo + 1; l <= hi; ++l) {
            best = std::max(best, r.at(l, t));
        }
        const double drop = best - r.at(last, t);
        out.drops.push_back(drop);
        sum += drop;
    }
    out.score = sum / static_cast<double>(last);
    return out;
}

std::vector<TaskSplit> task_splits(std::span<const continual::PreparedDomain> domains) {
    std::vector<TaskSplit> out;
    for (const auto& d : domains) {
        out.push_back({d.entry.name, d.split.database, d.split.queries, d.entry.policy.pos_test});
    }
    return out;
}

Evaluation evaluate_protocol(std::span<const nn::ModelSnapshot> snapshots, std::span<const TaskSplit> tasks,
                             bool fusion, ForgettingMax mode) {
    if (snapshots.empty()) {
        throw UsageError("evaluate_protocol: no snapshots");
    }
    if (tasks.empty()) {
        throw UsageError("evaluate_protocol: no tasks");
    }
    for (const auto& t : tasks) {
        if (t.database.empty() || t.queries.empty()) {
            throw ConfigError("domain '" + t.name + "' has no test split");
        }
    }
    const std::size_t steps = snapshots.size();

    // Embeddings per (snapshot, task); fused rows reuse them.
    std::vector<std::vector<Matrix>> db(steps);
    std::vector<std::vector<Matrix>> qs(steps);
    for (std::size_t l = 0; l < steps; ++l) {
        for (const auto& t : tasks) {
            db[l].push_back(snapshots[l].encode(nn::scan_refs(t.database)).values);
            qs[l].push_back(snapshots[l].encode(nn::scan_refs(t.queries)).values);
        }
    }

    Evaluation ev;
    ev.fusion = fusion;
    ev.recall = RecallMatrix(steps, tasks.size());
    ev.cells.assign(steps, std::vector<CellDetail>(tasks.size()));
    for (std::size_t l = 0; l < steps; ++l) {
        for (std::size_t t = 0; t < tasks.size(); ++t) {
            std::vector<Matrix> db_blocks;
            std::vector<Matrix> q_blocks;
            if (fusion && l > 0) {
                db_blocks = {db[l - 1][t], db[l][t]};
                q_blocks = {qs[l - 1][t], qs[l][t]};
            } else {
                db_blocks = {db[l][t]};
                q_blocks = {qs[l][t]};
            }
            const RetrievalIndex index(std::move(db_blocks), tasks[t].database);
            const RecallReport rep = recall_at_n(index, q_blocks, tasks[t].queries, tasks[t].pos_test, 1);
            ev.recall.at(l, t) = rep.percent;
            ev.cells[l][t] = {rep.evaluated, rep.excluded, index.dim()};
        }
    }
    double sum = 0.0;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        sum += ev.recall.at(steps - 1, t);
    }
    ev.mean_recall_at_1 = sum / static_cast<double>(tasks.size());
    if (steps >= 2 && steps == tasks.size()) {
        ev.forgetting = forgetting_score(ev.recall, mode);
    }
    return ev;
}

} // namespace kdf::eval
