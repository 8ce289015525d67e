#include "kdf/continual.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace kdf;
using namespace kdf::continual;

namespace {

std::vector<data::PlaceSample> labelled(int domain, std::size_t n) {
    std::vector<data::PlaceSample> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].domain_id = domain;
        out[i].sample_id = static_cast<std::int64_t>(i);
        out[i].pose = Vec2(static_cast<double>(i), 0.0);
    }
    return out;
}

ProtocolConfig tiny_protocol(int domains = 2) {
    ProtocolConfig c;
    c.points_per_scan = 32;
    c.encoder = {8, 8, true};
    for (int d = 0; d < domains; ++d) {
        DomainEntry e;
        e.name = "d" + std::to_string(d);
        e.spec.seed = 40 + static_cast<std::uint64_t>(d);
        e.spec.n_places = 90;
        e.spec.trajectory_length = 240.0;
        e.spec.style.sensor_tilt = 0.4 * d;
        e.policy = d % 2 == 0 ? data::PairPolicy::oxford() : data::PairPolicy::mulran();
        c.domains.push_back(e);
    }
    c.plan.epochs = 3;
    c.plan.lr = 1e-3;
    c.plan.lr_decay_epoch = 2;
    c.plan.batch_start = 8;
    c.plan.batch_cap = 24;
    c.plan.objective.tau = 0.1;
    c.buffer_capacity = 32;
    c.digest = "test";
    return c;
}

} // namespace

TEST(Buffer, QuotasSplitEvenlyWithRemainderFirst) {
    EXPECT_EQ(buffer_quotas(256, 2), (std::vector<std::size_t>{128, 128}));
    EXPECT_EQ(buffer_quotas(256, 3), (std::vector<std::size_t>{86, 85, 85}));
    EXPECT_TRUE(buffer_quotas(256, 0).empty());
}

TEST(Buffer, RebalancesWhenDomainsArrive) {
    const auto a = labelled(0, 400);
    const auto b = labelled(1, 400);
    const auto c = labelled(2, 400);
    MemoryBuffer buf(256);
    buf = update_buffer(buf, a, 0, 1);
    EXPECT_EQ(buf.size(), 256u);
    buf = update_buffer(buf, b, 1, 1);
    EXPECT_EQ(buf.count_for(0), 128u);
    EXPECT_EQ(buf.count_for(1), 128u);
    buf = update_buffer(buf, c, 2, 1);
    EXPECT_EQ(buf.count_for(0), 86u);
    EXPECT_EQ(buf.count_for(1), 85u);
    EXPECT_EQ(buf.count_for(2), 85u);
    EXPECT_TRUE(buf.shortfalls().empty());
    EXPECT_THROW(update_buffer(buf, c, 2, 1), UsageError);
}

TEST(Buffer, SmallDomainIsKeptWholeAndNoted) {
    MemoryBuffer buf(256);
    buf = update_buffer(buf, labelled(0, 400), 0, 3);
    buf = update_buffer(buf, labelled(1, 50), 1, 3);
    EXPECT_EQ(buf.count_for(1), 50u);
    EXPECT_EQ(buf.count_for(0), 128u);
    ASSERT_EQ(buf.shortfalls().size(), 1u);
    EXPECT_NE(buf.shortfalls()[0].find("domain 1"), std::string::npos);
}

TEST(Buffer, SamplingIsSeedDeterministicWithoutDuplicates) {
    const auto a = labelled(0, 400);
    const auto x = update_buffer(MemoryBuffer(64), a, 0, 9);
    const auto y = update_buffer(MemoryBuffer(64), a, 0, 9);
    std::vector<std::int64_t> ids;
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_EQ(x.entries()[i].sample_id, y.entries()[i].sample_id);
        ids.push_back(x.entries()[i].sample_id);
    }
    std::sort(ids.begin(), ids.end());
    EXPECT_EQ(std::adjacent_find(ids.begin(), ids.end()), ids.end());
}

TEST(Batch, ExpandsOnlyBelowThreshold) {
    StepPlan p;
    EXPECT_EQ(maybe_expand_batch(16, 0.5, p), 23u);
    EXPECT_EQ(maybe_expand_batch(200, 0.5, p), 256u);
    EXPECT_EQ(maybe_expand_batch(16, 0.9, p), 16u);
    EXPECT_EQ(maybe_expand_batch(10, 0.0, p), 14u);
}

TEST(Plan, LearningRateDropsAtDecayEpoch) {
    StepPlan p;
    p.lr = 1e-4;
    p.lr_decay_epoch = 30;
    EXPECT_DOUBLE_EQ(p.lr_at(29), 1e-4);
    EXPECT_DOUBLE_EQ(p.lr_at(30), 1e-5);
}

TEST(Plan, RejectsInvalidSettings) {
    StepPlan p;
    p.objective.toggles = {false, false, false};
    EXPECT_THROW(p.validate(), ConfigError);
    StepPlan q;
    q.batch_start = 300;
    EXPECT_THROW(q.validate(), ConfigError);
    StepPlan r;
    r.epochs = 0;
    EXPECT_THROW(r.validate(), ConfigError);
}

class ProtocolTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        config_ = new ProtocolConfig(tiny_protocol());
        domains_ = new std::vector<PreparedDomain>(prepare_domains(*config_));
        run_ = new ProtocolRun(run_protocol(*config_, *domains_, 5));
    }
    static void TearDownTestSuite() {
        delete run_;
        delete domains_;
        delete config_;
    }

    static ProtocolConfig* config_;
    static std::vector<PreparedDomain>* domains_;
    static ProtocolRun* run_;
};

ProtocolConfig* ProtocolTest::config_ = nullptr;
std::vector<PreparedDomain>* ProtocolTest::domains_ = nullptr;
ProtocolRun* ProtocolTest::run_ = nullptr;

TEST_F(ProtocolTest, ProducesOneSnapshotPerDomain) {
    ASSERT_EQ(run_->snapshots.size(), 2u);
    EXPECT_EQ(run_->snapshots[0].step_index(), 0);
    EXPECT_EQ(run_->snapshots[1].step_index(), 1);
    EXPECT_EQ(run_->snapshots[1].config_digest(), "test");
    EXPECT_NE(run_->snapshots[0].hash(), run_->snapshots[1].hash());
}

TEST_F(ProtocolTest, FirstStepNeverQueriesLambda) {
    const auto& s0 = run_->steps[0];
    EXPECT_EQ(s0.lambda_queries, 0);
    EXPECT_FALSE(s0.teacher_hash_before);
    for (const auto& r : s0.log) {
        EXPECT_FALSE(r.lambda);
        EXPECT_EQ(r.loss_rkd, 0.0);
        EXPECT_EQ(r.loss_dkd, 0.0);
    }
}

TEST_F(ProtocolTest, TeacherStaysFrozen) {
    const auto& s1 = run_->steps[1];
    ASSERT_TRUE(s1.teacher_hash_before && s1.teacher_hash_after);
    EXPECT_EQ(*s1.teacher_hash_before, *s1.teacher_hash_after);
    EXPECT_EQ(*s1.teacher_hash_before, run_->snapshots[0].hash());
}

TEST_F(ProtocolTest, LambdaDecreasesAcrossEpochs) {
    const auto& log = run_->steps[1].log;
    EXPECT_EQ(run_->steps[1].lambda_queries, config_->plan.epochs);
    ASSERT_TRUE(log[0].lambda);
    EXPECT_EQ(*log[0].lambda, 0.5);
    for (std::size_t e = 1; e < log.size(); ++e) {
        EXPECT_LT(*log[e].lambda, *log[e - 1].lambda);
    }
}

TEST_F(ProtocolTest, BatchSizeNeverShrinksOrExceedsCap) {
    for (const auto& step : run_->steps) {
        for (std::size_t e = 0; e < step.log.size(); ++e) {
            EXPECT_LE(step.log[e].batch_size, config_->plan.batch_cap);
            if (e > 0) {
                EXPECT_GE(step.log[e].batch_size, step.log[e - 1].batch_size);
            }
        }
    }
}

TEST_F(ProtocolTest, LogRecordsScheduledLearningRate) {
    const auto& log = run_->steps[0].log;
    EXPECT_DOUBLE_EQ(log[0].lr, 1e-3);
    EXPECT_DOUBLE_EQ(log[2].lr, 1e-4);
}

TEST_F(ProtocolTest, RepeatRunIsBitIdentical) {
    const ProtocolRun again = run_protocol(*config_, *domains_, 5);
    for (std::size_t t = 0; t < again.snapshots.size(); ++t) {
        EXPECT_EQ(again.snapshots[t].hash(), run_->snapshots[t].hash());
        ASSERT_EQ(again.steps[t].log.size(), run_->steps[t].log.size());
        for (std::size_t e = 0; e < again.steps[t].log.size(); ++e) {
            EXPECT_EQ(again.steps[t].log[e].loss_pr, run_->steps[t].log[e].loss_pr);
        }
    }
    const ProtocolRun other = run_protocol(*config_, *domains_, 6);
    EXPECT_NE(other.snapshots[1].hash(), run_->snapshots[1].hash());
}

TEST_F(ProtocolTest, EmptyBufferIsRejected) {
    StepPlan plan = config_->plan;
    plan.step_index = 1;
    std::vector<data::PairPolicy> policies{config_->domains[0].policy, config_->domains[1].policy};
    const StepData data{(*domains_)[1].split.train, policies};
    EXPECT_THROW(train_continual_step(run_->snapshots[0], data, MemoryBuffer(32), plan, 1, "test"), ConfigError);
}

TEST_F(ProtocolTest, FineTuningMatchesTeacherlessStep) {
    StepPlan plan = config_->plan;
    plan.step_index = 1;
    plan.use_buffer = false;
    plan.objective.toggles = {true, false, false};
    std::vector<data::PairPolicy> policies{config_->domains[0].policy, config_->domains[1].policy};
    const StepData data{(*domains_)[1].split.train, policies};
    const auto tuned = train_continual_step(run_->snapshots[0], data, MemoryBuffer(32), plan, 11, "test");
    const auto plain = train_step(run_->snapshots[0].params(), nullptr, data, nullptr, plan, true, 11, "test");
    EXPECT_EQ(tuned.snapshot.hash(), plain.snapshot.hash());
}

TEST(Protocol, ValidationNamesTheDomain) {
    ProtocolConfig c = tiny_protocol();
    c.domains[1].spec.n_places = 0;
    try {
        c.validate();
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("domains[1]"), std::string::npos) << e.what();
    }
    ProtocolConfig dup = tiny_protocol();
    dup.domains[1].spec = dup.domains[0].spec;
    EXPECT_THROW(dup.validate(), ConfigError);
}

TEST(Protocol, SplitsAreGeographicallyDisjoint) {
    const auto c = tiny_protocol(1);
    const auto domains = prepare_domains(c);
    const auto& split = domains[0].split;
    ASSERT_FALSE(split.train.empty());
    ASSERT_FALSE(split.database.empty());
    ASSERT_FALSE(split.queries.empty());
    for (const auto& t : split.train) {
        for (const auto& q : split.queries) {
            EXPECT_LT(t.arc, q.arc);
        }
    }
}
