#include "kdf/eval.hpp"
#include "kdf/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

using namespace kdf;
using namespace kdf::eval;

namespace {

data::PlaceSample place(double x, std::int64_t id) {
    data::PlaceSample s;
    s.pose = Vec2(x, 0.0);
    s.sample_id = id;
    return s;
}

Matrix column(std::initializer_list<double> v) {
    Matrix m(static_cast<Eigen::Index>(v.size()), 1);
    Eigen::Index i = 0;
    for (double x : v) {
        m(i++, 0) = x;
    }
    return m;
}

std::vector<RowVector> query1(double x) {
    RowVector r(1);
    r << x;
    return {r};
}

struct Corpus {
    std::vector<data::PlaceSample> database; // first session
    std::vector<data::PlaceSample> queries;  // second session
};

Corpus small_corpus(std::uint64_t seed, int places) {
    data::DomainSpec spec;
    spec.seed = seed;
    spec.n_places = places;
    spec.trajectory_length = 150.0;
    Corpus c;
    for (auto& s : data::generate_domain(spec, data::PairPolicy::oxford(), 32)) {
        (s.session == 0 ? c.database : c.queries).push_back(std::move(s));
    }
    return c;
}

nn::ModelSnapshot snapshot(std::uint64_t seed, int dim = 32) {
    return nn::ModelSnapshot::freeze(nn::init_params(seed, 16, dim), 0, "eval", true);
}

} // namespace

TEST(Retrieve, OrdersByDistance) {
    const std::vector<data::PlaceSample> db{place(0, 0), place(1, 1), place(2, 2)};
    // Squared distances from the query at 0: 0.09, 0.01, 0.04.
    const RetrievalIndex index({column({0.3, 0.1, 0.2})}, db);
    const auto r = retrieve(index, query1(0.0), 3);
    EXPECT_EQ(r.rows, (std::vector<std::size_t>{1, 2, 0}));
    EXPECT_NEAR(r.squared_distances[0], 0.01, 1e-15);
    EXPECT_FALSE(r.truncated);
}

TEST(Retrieve, TiesGoToLowerSampleId) {
    const std::vector<data::PlaceSample> db{place(0, 9), place(1, 4), place(2, 7)};
    const RetrievalIndex index({column({1.0, -1.0, 1.0})}, db);
    const auto r = retrieve(index, query1(0.0), 3);
    EXPECT_EQ(r.rows, (std::vector<std::size_t>{1, 2, 0}));
}

TEST(Retrieve, KBeyondDatabaseIsFlagged) {
    const std::vector<data::PlaceSample> db{place(0, 0), place(1, 1)};
    const RetrievalIndex index({column({0.0, 1.0})}, db);
    const auto r = retrieve(index, query1(0.0), 5);
    EXPECT_TRUE(r.truncated);
    EXPECT_EQ(r.rows.size(), 2u);
    EXPECT_THROW(retrieve(index, query1(0.0), 0), UsageError);
}

TEST(Retrieve, InvariantToDatabasePermutation) {
    Rng rng(12);
    const std::size_t m = 40;
    Matrix e(static_cast<Eigen::Index>(m), 4);
    std::vector<data::PlaceSample> db;
    for (std::size_t i = 0; i < m; ++i) {
        for (Eigen::Index c = 0; c < 4; ++c) {
            e(static_cast<Eigen::Index>(i), c) = rng.normal();
        }
        db.push_back(place(static_cast<double>(i), static_cast<std::int64_t>(i)));
    }
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Matrix pe(e.rows(), e.cols());
    std::vector<data::PlaceSample> pdb;
    for (std::size_t i = 0; i < m; ++i) {
        pe.row(static_cast<Eigen::Index>(i)) = e.row(static_cast<Eigen::Index>(perm[i]));
        pdb.push_back(db[perm[i]]);
    }
    const RetrievalIndex a({e}, db);
    const RetrievalIndex b({pe}, pdb);
    for (int q = 0; q < 10; ++q) {
        RowVector v(4);
        for (Eigen::Index c = 0; c < 4; ++c) {
            v(c) = rng.normal();
        }
        const auto ra = retrieve(a, std::vector<RowVector>{v}, 5);
        const auto rb = retrieve(b, std::vector<RowVector>{v}, 5);
        for (std::size_t k = 0; k < 5; ++k) {
            EXPECT_EQ(a.sample_ids()[ra.rows[k]], b.sample_ids()[rb.rows[k]]);
        }
    }
}

TEST(Recall, FixtureWithExcludedQuery) {
    // Database places at x = 0, 100, 200, 300; embeddings on a line.
    const std::vector<data::PlaceSample> db{place(0, 0), place(100, 1), place(200, 2), place(300, 3)};
    const RetrievalIndex index({column({0.0, 1.0, 2.0, 3.0})}, db);
    // Queries near each place; the third retrieves the wrong one; the fifth has no positive.
    const std::vector<data::PlaceSample> queries{place(5, 10), place(105, 11), place(205, 12), place(295, 13),
                                                 place(1000, 14)};
    const std::vector<Matrix> blocks{column({0.1, 1.1, 1.4, 2.9, 0.0})};
    const auto r1 = recall_at_n(index, blocks, queries, 25.0, 1);
    EXPECT_EQ(r1.evaluated, 4u);
    EXPECT_EQ(r1.excluded, 1u);
    EXPECT_DOUBLE_EQ(r1.percent, 75.0);
    EXPECT_DOUBLE_EQ(recall_at_n(index, blocks, queries, 25.0, 2).percent, 100.0);
}

TEST(Recall, EmptyQuerySplitIsAnError) {
    const std::vector<data::PlaceSample> db{place(0, 0)};
    const RetrievalIndex index({column({0.0})}, db);
    EXPECT_THROW(recall_at_n(index, std::vector<Matrix>{Matrix(0, 1)}, {}, 25.0, 1), UsageError);
}

TEST(Recall, MonotoneInN) {
    const auto [db, qs] = small_corpus(3, 70);
    const std::vector<nn::ModelSnapshot> snaps{snapshot(1)};
    const auto index = build_index(snaps, db, false);
    double prev = -1.0;
    for (std::size_t n : {1, 2, 5, 10, 100}) {
        const double r = recall_at_n(index, qs, snaps, 25.0, n).percent;
        EXPECT_GE(r, prev);
        prev = r;
    }
    EXPECT_DOUBLE_EQ(prev, 100.0);
}

TEST(Fusion, ConcatenatesEmbeddings) {
    const auto db = small_corpus(3, 20).database;
    const std::vector<nn::ModelSnapshot> snaps{snapshot(1), snapshot(2)};
    const auto index = build_index(snaps, db, true);
    EXPECT_TRUE(index.fused());
    EXPECT_EQ(index.dim(), 64);
    EXPECT_EQ(index.embeddings().cols(), 64);
    EXPECT_THROW(build_index(std::vector<nn::ModelSnapshot>{snapshot(1)}, db, true), UsageError);
    const std::vector<nn::ModelSnapshot> three{snapshot(1), snapshot(2), snapshot(3)};
    EXPECT_THROW(build_index(three, db, true), UsageError);
}

TEST(Fusion, IdenticalSnapshotsDoubleDistancesAndKeepRecall) {
    const auto [db, qs] = small_corpus(3, 70);
    const std::vector<nn::ModelSnapshot> one{snapshot(5)};
    const std::vector<nn::ModelSnapshot> two{snapshot(5), snapshot(5)};
    const auto single = build_index(one, db, false);
    const auto fused = build_index(two, db, true);
    const auto qb1 = embed_blocks(one, qs, false);
    const auto qb2 = embed_blocks(two, qs, true);
    for (std::size_t row = 0; row < db.size(); row += 7) {
        const std::vector<RowVector> a{qb1[0].row(0)};
        const std::vector<RowVector> b{qb2[0].row(0), qb2[1].row(0)};
        EXPECT_EQ(fused.squared_distance(row, b), 2.0 * single.squared_distance(row, a));
    }
    EXPECT_EQ(recall_at_n(single, qb1, qs, 25.0, 1).percent, recall_at_n(fused, qb2, qs, 25.0, 1).percent);
}

TEST(Forgetting, FixtureMatrix) {
    const auto r = RecallMatrix::from_rows({{90, 40, 0}, {80, 70, 0}, {75, 65, 60}});
    const auto f = forgetting_score(r);
    EXPECT_EQ(f.score, 10.0);
    EXPECT_EQ(f.drops, (std::vector<double>{15.0, 5.0}));
}

TEST(Forgetting, InvariantToConstantShift) {
    Rng rng(13);
    for (int draw = 0; draw < 50; ++draw) {
        const std::size_t n = 2 + rng.index(4);
        std::vector<std::vector<double>> rows(n, std::vector<double>(n));
        std::vector<std::vector<double>> shifted = rows;
        for (std::size_t l = 0; l < n; ++l) {
            for (std::size_t t = 0; t < n; ++t) {
                rows[l][t] = rng.uniform(0.0, 80.0);
                shifted[l][t] = rows[l][t] + 12.5;
            }
        }
        EXPECT_NEAR(forgetting_score(RecallMatrix::from_rows(rows)).score,
                    forgetting_score(RecallMatrix::from_rows(shifted)).score, 1e-12);
    }
}

TEST(Forgetting, FromTModeUsesRowsAfterTheTask) {
    const auto r = RecallMatrix::from_rows({{50, 0, 0}, {80, 70, 0}, {75, 65, 60}});
    EXPECT_DOUBLE_EQ(forgetting_score(r, ForgettingMax::Printed).score, (-25.0 + 5.0) / 2.0);
    EXPECT_DOUBLE_EQ(forgetting_score(r, ForgettingMax::FromT).score, (5.0 + 5.0) / 2.0);
    EXPECT_EQ(parse_forgetting_max("from_t"), ForgettingMax::FromT);
    EXPECT_THROW(parse_forgetting_max("latest"), ConfigError);
}

TEST(Forgetting, NeedsTwoStepsAndASquareMatrix) {
    EXPECT_THROW(forgetting_score(RecallMatrix::from_rows({{50}})), UsageError);
    EXPECT_THROW(forgetting_score(RecallMatrix::from_rows({{50, 1, 2}, {40, 3, 4}})), UsageError);
}

TEST(Protocol, SingleTaskReportsNoForgetting) {
    const auto [db, qs] = small_corpus(3, 50);
    const std::vector<TaskSplit> tasks{{"only", db, qs, 25.0}};
    const std::vector<nn::ModelSnapshot> snaps{snapshot(1)};
    const auto ev = evaluate_protocol(snaps, tasks, false);
    EXPECT_FALSE(ev.forgetting);
    EXPECT_EQ(ev.mean_recall_at_1, ev.recall.at(0, 0));
}

TEST(Protocol, FusedFirstRowMatchesSingle) {
    const auto [db0, q0] = small_corpus(3, 50);
    const auto [db1, q1] = small_corpus(5, 50);
    const std::vector<TaskSplit> tasks{{"a", db0, q0, 25.0}, {"b", db1, q1, 25.0}};
    const std::vector<nn::ModelSnapshot> snaps{snapshot(1), snapshot(2)};
    const auto single = evaluate_protocol(snaps, tasks, false);
    const auto fused = evaluate_protocol(snaps, tasks, true);
    ASSERT_TRUE(single.forgetting && fused.forgetting);
    for (std::size_t t = 0; t < 2; ++t) {
        EXPECT_EQ(single.recall.at(0, t), fused.recall.at(0, t));
    }
    EXPECT_EQ(fused.cells[1][0].embedding_dim, 64);
    EXPECT_EQ(single.cells[1][0].embedding_dim, 32);
}

TEST(Output, ResultsJsonIsDeterministic) {
    const auto [db, qs] = small_corpus(3, 50);
    const std::vector<TaskSplit> tasks{{"a", db, qs, 25.0}, {"b", db, qs, 25.0}};
    const std::vector<nn::ModelSnapshot> snaps{snapshot(1), snapshot(2)};
    RunReport rep;
    rep.seed = 3;
    rep.config_digest = "abc";
    rep.domains = {"a", "b"};
    rep.single = evaluate_protocol(snaps, tasks, false);
    rep.fused = evaluate_protocol(snaps, tasks, true);
    rep.fusion_headline = true;
    const std::string a = results_json(rep);
    const std::string b = results_json(rep);
    EXPECT_EQ(a, b);
    EXPECT_NE(a.find("\"mode\": \"fused\""), std::string::npos);
    EXPECT_NE(a.find("\"forgetting\""), std::string::npos);
}

TEST(Output, RecallCsvHasHeaderAndRows) {
    const auto r = RecallMatrix::from_rows({{90, 40}, {80, 70}});
    const std::vector<std::string> names{"x", "y"};
    const std::string csv = recall_csv(r, names);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,x,y");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}
