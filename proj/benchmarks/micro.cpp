#include <memory>
#include <random>

#include <benchmark/benchmark.h>

#include "wisk/bench.hpp"
#include "wisk/cdf_models.hpp"
#include "wisk/packer.hpp"
#include "wisk/pipeline.hpp"
#include "wisk/synthetic.hpp"

using namespace wisk;

namespace {

struct Fixture {
    Dataset ds;
    Workload train;
    Workload test;
    BuildResult built;
    std::unique_ptr<UniformGridIndex> grid;

    Fixture() {
        SyntheticSpec s;
        s.num_objects = 10000;
        ds = generate_dataset(s);
        WorkloadSpec w;
        w.count = 300;
        w.distribution = Distribution::Lap;
        train = generate_workload(ds, w);
        w.rng_seed = 4242;
        w.count = 500;
        test = generate_workload(ds, w);
        BuildConfig cfg;
        cfg.estimator = EstimatorKind::Exact;
        cfg.packer.rl.min_total_steps = 300;
        built = build_wisk(ds, train, cfg);
        grid = build_uniform_grid(ds, 8);
    }
};

// Built once, on first use.
Fixture& fixture() {
    static Fixture f;
    return f;
}

void BM_QueryRange(benchmark::State& st) {
    auto& f = fixture();
    std::size_t i = 0;
    for (auto _ : st) {
        benchmark::DoNotOptimize(f.built.index->query_range(f.test.queries[i++ % f.test.size()]));
    }
}
BENCHMARK(BM_QueryRange);

void BM_GridQuery(benchmark::State& st) {
    auto& f = fixture();
    std::size_t i = 0;
    for (auto _ : st) benchmark::DoNotOptimize(f.grid->query(f.test.queries[i++ % f.test.size()]));
}
BENCHMARK(BM_GridQuery);

void BM_BruteForce(benchmark::State& st) {
    auto& f = fixture();
    std::size_t i = 0;
    for (auto _ : st) benchmark::DoNotOptimize(query_bruteforce(f.ds, f.test.queries[i++ % f.test.size()]));
}
BENCHMARK(BM_BruteForce);

void BM_Bknn(benchmark::State& st) {
    auto& f = fixture();
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 100.0);
    const KeywordSet keys{0, 1, 2};
    for (auto _ : st) {
        benchmark::DoNotOptimize(f.built.index->query_bknn({u(rng), u(rng)}, keys, static_cast<std::size_t>(st.range(0))));
    }
}
BENCHMARK(BM_Bknn)->Arg(1)->Arg(10);

void BM_MlpCdfEval(benchmark::State& st) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(50.0, 10.0);
    std::vector<double> v(5000);
    for (auto& x : v) x = n(rng);
    const auto cdf = fit_mlp_cdf(v, CdfConfig{}, 1);
    double x = 0.0;
    for (auto _ : st) {
        benchmark::DoNotOptimize(cdf(x));
        x = x > 100.0 ? 0.0 : x + 0.37;
    }
}
BENCHMARK(BM_MlpCdfEval);

void BM_EstimateQueryObjects(benchmark::State& st) {
    auto& f = fixture();
    static const KeywordModels models = [] {
        auto& ff = fixture();
        CdfConfig c;
        c.epochs = 30;
        return build_keyword_models(ff.ds, mine_frequent_itemsets(ff.ds, c.min_support, c.max_itemset_size), c);
    }();
    std::size_t i = 0;
    for (auto _ : st) {
        const auto& q = f.test.queries[i++ % f.test.size()];
        benchmark::DoNotOptimize(estimate_query_objects(models, q.keys, q.area));
    }
}
BENCHMARK(BM_EstimateQueryObjects);

void BM_SplitSearch(benchmark::State& st) {
    auto& f = fixture();
    const ExactCountEstimator est(f.ds.objects());
    SubSpace s;
    s.rect = f.ds.space();
    for (std::uint32_t i = 0; i < f.ds.size(); ++i) s.members.push_back(i);
    for (std::uint32_t i = 0; i < f.train.size(); ++i) s.queries.push_back(i);
    for (auto _ : st) benchmark::DoNotOptimize(find_optimal_split(s, Axis::X, f.ds.objects(), f.train, est, SgdConfig{}));
}
BENCHMARK(BM_SplitSearch)->Unit(benchmark::kMillisecond);

void BM_PackingStepAndEncode(benchmark::State& st) {
    const std::size_t n = 64;
    const std::size_t m = 100;
    std::mt19937_64 rng(9);
    std::vector<std::vector<QueryId>> labels(n);
    for (auto& l : labels) {
        for (QueryId q = 0; q < m; ++q)
            if (rng() % 10 == 0) l.push_back(q);
    }
    PackingEnv env(labels, m);
    std::vector<std::uint32_t> idx;
    std::vector<double> val;
    for (auto _ : st) {
        if (env.done()) env.reset();
        env.encode(idx, val);
        const auto mask = env.mask();
        std::size_t a = 0;
        while (!mask[a]) ++a;
        benchmark::DoNotOptimize(env.step(a));
    }
}
BENCHMARK(BM_PackingStepAndEncode);

void BM_QNetworkForward(benchmark::State& st) {
    const std::size_t n = 64;
    const std::size_t m = 100;
    const Mlp net({(m + 1) * n + m, 64, 64, n}, OutputActivation::Identity, 1);
    std::vector<std::uint32_t> idx;
    std::vector<double> val;
    for (std::uint32_t i = 0; i < 300; ++i) {
        idx.push_back(i * 21);
        val.push_back(1.0);
    }
    Mlp::Workspace ws;
    for (auto _ : st) benchmark::DoNotOptimize(net.forward_sparse(idx, val, ws));
}
BENCHMARK(BM_QNetworkForward);

}  // namespace

BENCHMARK_MAIN();
