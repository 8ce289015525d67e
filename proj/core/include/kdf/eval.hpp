#ifndef KDF_EVAL_HPP
#define KDF_EVAL_HPP

#include "kdf/continual.hpp"
#include "kdf/data.hpp"
#include "kdf/diffnet.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

// Exact nearest-neighbour retrieval, Recall@N, step-by-step recall matrices
// and the forgetting score.

namespace kdf::eval {

// Database embeddings stored as one block per model. A fused index holds two
// blocks; its squared distance is the sum of the per-block squared distances.
class RetrievalIndex {
public:
    RetrievalIndex() = default;
    RetrievalIndex(std::vector<Matrix> blocks, std::span<const data::PlaceSample> database);

    std::size_t size() const noexcept { return sample_ids_.size(); }
    Eigen::Index dim() const noexcept;
    bool fused() const noexcept { return blocks_.size() > 1; }
    const std::vector<Matrix>& blocks() const noexcept { return blocks_; }
    const std::vector<std::int64_t>& sample_ids() const noexcept { return sample_ids_; }
    const std::vector<Vec2>& poses() const noexcept { return poses_; }

    // Concatenated rows, M x dim().
    Matrix embeddings() const;

    // Squared distance from database row `row` to a query given as blocks.
    double squared_distance(std::size_t row, std::span<const RowVector> query) const;

private:
    std::vector<Matrix> blocks_;
    std::vector<std::int64_t> sample_ids_;
    std::vector<Vec2> poses_;
};

// Per-model embeddings of a sample list, one block per snapshot.
std::vector<Matrix> embed_blocks(std::span<const nn::ModelSnapshot> snapshots,
                                 std::span<const data::PlaceSample> samples, bool fusion);

// fusion=false needs one snapshot, fusion=true exactly two (old, new).
RetrievalIndex build_index(std::span<const nn::ModelSnapshot> snapshots,
                           std::span<const data::PlaceSample> database, bool fusion);

struct Retrieved {
    std::vector<std::size_t> rows; // database rows, best first
    std::vector<double> squared_distances;
    bool truncated = false;        // k exceeded the database size
};

// Brute-force top-k; ties go to the lower sample_id.
Retrieved retrieve(const RetrievalIndex& index, std::span<const RowVector> query, std::size_t k);
Retrieved retrieve(const RetrievalIndex& index, const data::PlaceSample& query,
                   std::span<const nn::ModelSnapshot> snapshots, std::size_t k);

struct RecallReport {
    double percent = 0.0;
    std::size_t evaluated = 0;
    std::size_t excluded = 0; // queries with no true positive in the database
};

// Query embeddings given as blocks matching the index.
RecallReport recall_at_n(const RetrievalIndex& index, std::span<const Matrix> query_blocks,
                         std::span<const data::PlaceSample> queries, double pos_test, std::size_t n);
RecallReport recall_at_n(const RetrievalIndex& index, std::span<const data::PlaceSample> queries,
                         std::span<const nn::ModelSnapshot> snapshots, double pos_test, std::size_t n);

// R(l, t): Recall@1 in percent of task t after training step l.
class RecallMatrix {
public:
    RecallMatrix() = default;
    RecallMatrix(std::size_t steps, std::size_t tasks) : steps_(steps), tasks_(tasks), values_(steps * tasks, 0.0) {}

    std::size_t steps() const noexcept { return steps_; }
    std::size_t tasks() const noexcept { return tasks_; }
    double& at(std::size_t l, std::size_t t) { return values_.at(l * tasks_ + t); }
    double at(std::size_t l, std::size_t t) const { return values_.at(l * tasks_ + t); }

    static RecallMatrix from_rows(const std::vector<std::vector<double>>& rows);

private:
    std::size_t steps_ = 0;
    std::size_t tasks_ = 0;
    std::vector<double> values_;
};

enum class ForgettingMax { Printed, FromT };
ForgettingMax parse_forgetting_max(std::string_view name);
std::string_view to_string(ForgettingMax m) noexcept;

struct ForgettingReport {
    double score = 0.0;
    std::vector<double> drops; // one per task except the last
};

// F = mean over t < T-1 of (best earlier recall of t) - (final recall of t).
// Printed: best over rows 0..t. FromT: best over rows t..T-2.
ForgettingReport forgetting_score(const RecallMatrix& r, ForgettingMax mode = ForgettingMax::Printed);

struct TaskSplit {
    std::string name;
    std::span<const data::PlaceSample> database;
    std::span<const data::PlaceSample> queries;
    double pos_test = 25.0;
};

std::vector<TaskSplit> task_splits(std::span<const continual::PreparedDomain> domains);

struct CellDetail {
    std::size_t evaluated = 0;
    std::size_t excluded = 0;
    Eigen::Index embedding_dim = 0;
};

struct Evaluation {
    bool fusion = false;
    RecallMatrix recall;
    double mean_recall_at_1 = 0.0;
    std::optional<ForgettingReport> forgetting; // absent for a single task
    std::vector<std::vector<CellDetail>> cells;  // [step][task]
};

// With fusion, rows after the first retrieve with the (l-1, l) snapshot pair.
Evaluation evaluate_protocol(std::span<const nn::ModelSnapshot> snapshots, std::span<const TaskSplit> tasks,
                             bool fusion, ForgettingMax mode = ForgettingMax::Printed);

// ---------------------------------------------------------------------------
// Result files

struct RunReport {
    std::uint64_t seed = 0;
    std::string config_digest;
    std::vector<std::string> domains;
    Evaluation single;
    std::optional<Evaluation> fused;
    bool fusion_headline = false; // top-level fields report the fused evaluation
    std::span<const continual::StepResult> steps;
    std::vector<std::string> notes;
};

// Deterministic JSON text (no timestamps).
std::string results_json(const RunReport& report);
// Rows are steps, columns are tasks.
std::string recall_csv(const RecallMatrix& r, std::span<const std::string> names);
// One JSON object per epoch.
std::string run_log_jsonl(std::span<const continual::StepResult> steps);

} // namespace kdf::eval

#endif
