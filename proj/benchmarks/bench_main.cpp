#include "kdf/continual.hpp"
#include "kdf/eval.hpp"
#include "kdf/losses.hpp"
#include "kdf/rng.hpp"

#include <benchmark/benchmark.h>

using namespace kdf;

namespace {

std::vector<data::PlaceSample> corpus(int places, int points) {
    data::DomainSpec spec;
    spec.seed = 17;
    spec.n_places = places;
    spec.trajectory_length = 2.0 * places;
    return data::generate_domain(spec, data::PairPolicy::oxford(), points);
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols) {
    Rng rng(5);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.normal();
    }
    return m;
}

void BM_Encode(benchmark::State& state) {
    const auto samples = corpus(static_cast<int>(state.range(0)), 128);
    const auto params = nn::init_params(1, 64, 32);
    const auto refs = nn::scan_refs(samples);
    for (auto _ : state) {
        benchmark::DoNotOptimize(nn::encode(params, refs, true).values.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Encode)->Arg(16)->Arg(64);

void BM_Backward(benchmark::State& state) {
    const auto samples = corpus(static_cast<int>(state.range(0)), 128);
    const auto params = nn::init_params(1, 64, 32);
    const auto refs = nn::scan_refs(samples);
    nn::ForwardCache cache;
    nn::encode(params, refs, true, nn::Producer::New, &cache);
    const Matrix upstream = random_matrix(state.range(0), 32);
    for (auto _ : state) {
        benchmark::DoNotOptimize(nn::backward(params, cache, upstream).w1.data());
    }
}
BENCHMARK(BM_Backward)->Arg(16)->Arg(64);

void BM_Rkd(benchmark::State& state) {
    const Matrix a = random_matrix(state.range(0), 32);
    const Matrix b = a + 0.1 * random_matrix(state.range(0), 32).reverse();
    for (auto _ : state) {
        benchmark::DoNotOptimize(loss::rkd_loss(a, b, 0.01).value);
    }
}
BENCHMARK(BM_Rkd)->Arg(16)->Arg(64)->Arg(256);

void BM_BatchTriplet(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto samples = corpus(static_cast<int>(n), 8);
    const auto relation = data::label_pairs(samples, data::PairPolicy::oxford(), data::PairMode::Train);
    const Matrix e = random_matrix(state.range(0), 32);
    for (auto _ : state) {
        benchmark::DoNotOptimize(loss::batch_triplet_loss(e, relation, 0.2).value);
    }
}
BENCHMARK(BM_BatchTriplet)->Arg(16)->Arg(64)->Arg(256);

void BM_Retrieve(benchmark::State& state) {
    const auto db = corpus(static_cast<int>(state.range(0)), 8);
    const eval::RetrievalIndex index({random_matrix(state.range(0), 32)}, db);
    const std::vector<RowVector> query{random_matrix(1, 32).row(0)};
    for (auto _ : state) {
        benchmark::DoNotOptimize(eval::retrieve(index, query, 1).rows.data());
    }
}
BENCHMARK(BM_Retrieve)->Arg(200)->Arg(2000);

} // namespace
BENCHMARK_MAIN();
