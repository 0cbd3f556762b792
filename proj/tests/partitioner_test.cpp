#include <random>
#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "support.hpp"
#include "wisk/cdf_models.hpp"
#include "wisk/partitioner.hpp"

using namespace wisk;
using namespace wisk::testing;

namespace {

// Red objects carry k1, green ones k2; both queries span the strip.
struct TwoColor {
    Dataset ds = make_dataset({{0.1, 0.5, {"k1"}},
                               {0.2, 0.5, {"k1"}},
                               {0.3, 0.5, {"k1"}},
                               {2.5, 0.5, {"k1"}},
                               {0.15, 0.5, {"k2"}},
                               {0.25, 0.5, {"k2"}},
                               {2.2, 0.5, {"k2"}},
                               {2.8, 0.5, {"k2"}}});
    Workload w;
    TwoColor() {
        w.queries.push_back(make_query(0, {0, 0, 3, 1}, {kw(ds, "k1")}));
        w.queries.push_back(make_query(1, {2, 0, 3, 1}, {kw(ds, "k2")}));
    }
    BottomCluster cluster(std::uint32_t id, std::vector<std::uint32_t> members) const {
        return make_cluster(id, ds.objects(), members, w);
    }
};

struct StoreFood {
    Dataset ds = make_dataset({{1, 1, {"Store"}},
                               {2, 1, {"Store"}},
                               {3, 1, {"Store"}},
                               {4, 1, {"Food"}},
                               {5, 1, {"Food"}},
                               {6, 1, {"Food"}},
                               {7, 1, {"Food"}},
                               {6.5, 1, {"Hotel"}}});
    Workload w;
    StoreFood() {
        w.queries.push_back(make_query(0, {0.5, 0, 3.5, 2}, {kw(ds, "Store")}));
        w.queries.push_back(make_query(1, {0.5, 0, 3.5, 2}, {kw(ds, "Store")}));
        w.queries.push_back(make_query(2, {5.5, 0, 7.5, 2}, {kw(ds, "Food")}));
    }
};

// Objects checked by a query: keyword-matching members of every relevant cluster.
std::size_t checks(std::span<const BottomCluster> clusters, const Workload& w, const Dataset& ds) {
    std::size_t total = 0;
    for (const auto& q : w.queries)
        for (const auto& c : clusters) {
            if (!q.area.intersects(c.mbr)) continue;
            for (auto id : c.object_ids) total += intersects(ds.object(id).kws, q.keys) ? 1 : 0;
        }
    return total;
}

void expect_partition(std::span<const BottomCluster> clusters, const Dataset& ds) {
    std::set<ObjectId> seen;
    std::size_t total = 0;
    for (const auto& c : clusters) {
        total += c.object_ids.size();
        seen.insert(c.object_ids.begin(), c.object_ids.end());
        for (auto id : c.object_ids) EXPECT_TRUE(c.mbr.contains(ds.object(id).loc));
    }
    EXPECT_EQ(total, ds.size());
    EXPECT_EQ(seen.size(), ds.size());
}

struct Instance {
    Dataset ds;
    Workload w;
    SubSpace s;
};

Instance random_instance(std::uint64_t seed, std::size_t n = 1000, std::size_t nq = 40) {
    Instance in{random_dataset(n, 30, seed), {}, {}};
    WorkloadSpec spec;
    spec.count = nq;
    spec.region_fraction = 0.02;
    spec.num_keywords = 2;
    spec.distribution = Distribution::Uni;
    spec.rng_seed = seed + 1;
    in.w = generate_workload(in.ds, spec);
    in.s.rect = in.ds.space();
    for (std::uint32_t i = 0; i < in.ds.size(); ++i) in.s.members.push_back(i);
    std::vector<std::uint32_t> all(in.w.size());
    for (std::uint32_t i = 0; i < all.size(); ++i) all[i] = i;
    in.s.queries = subspace_queries(in.s.rect, in.ds.objects(), in.s.members, in.w, all);
    return in;
}

// Hard post-split cost computed straight from the objects.
double naive_split_cost(const Instance& in, Axis dim, double v) {
    double cost = 0.0;
    for (auto qi : in.s.queries) {
        const auto& q = in.w.queries[qi];
        double left = 0, right = 0;
        for (auto i : in.s.members) {
            const auto& o = in.ds.objects()[i];
            if (!intersects(o.kws, q.keys)) continue;
            (o.loc[dim] <= v ? left : right) += 1;
        }
        if (q.area.lo(dim) <= v) cost += left;
        if (v < q.area.hi(dim)) cost += right;
    }
    return cost;
}

}  // namespace

TEST(WorkloadCost, TwoColorToy) {
    const TwoColor t;
    const CostWeights cw{0.3, 1.7};
    const std::vector<BottomCluster> one{t.cluster(0, {0, 1, 2, 3, 4, 5, 6, 7})};
    EXPECT_DOUBLE_EQ(workload_cost(one, t.w, cw), 2 * cw.w1 + 8 * cw.w2);
    const std::vector<BottomCluster> two{t.cluster(0, {0, 1, 2, 4, 5}), t.cluster(1, {3, 6, 7})};
    EXPECT_DOUBLE_EQ(workload_cost(two, t.w, cw), 4 * cw.w1 + 6 * cw.w2);
    EXPECT_EQ(workload_cost(two, Workload{}, cw), 0.0);
}

TEST(WorkloadCost, SplitAcceptedOnlyWhenObjectSavingsBeatClusterOverhead) {
    const TwoColor t;
    const ExactCountEstimator est(t.ds.objects());
    for (double ratio : {0.5, 1.0, 2.0}) {
        const CostWeights cw{ratio, 1.0};
        const auto clusters = generate_bottom_clusters(t.ds, t.w, est, cw, PartitionLimits{1, 2});
        expect_partition(clusters, t.ds);
        const bool split = clusters.size() > 1;
        EXPECT_EQ(split, 2 * cw.w2 > 2 * cw.w1) << "w1 = " << ratio;
        if (split) {
            EXPECT_EQ(clusters.size(), 2u);
            EXPECT_DOUBLE_EQ(workload_cost(clusters, t.w, cw), 4 * cw.w1 + 6 * cw.w2);
        }
    }
}

TEST(Partition, StoreFoodKeywordAwareBeatsBlind) {
    const StoreFood t;
    const CostWeights cw{0.1, 1.0};
    const PartitionLimits limits{1, 6};
    const ExactCountEstimator aware(t.ds.objects());
    const ExactCountEstimator blind(t.ds.objects(), true);
    const auto a = generate_bottom_clusters(t.ds, t.w, aware, cw, limits);
    const auto b = generate_bottom_clusters(t.ds, t.w, blind, cw, limits);
    expect_partition(a, t.ds);
    expect_partition(b, t.ds);
    EXPECT_EQ(checks(a, t.w, t.ds), 8u);
    EXPECT_EQ(checks(b, t.w, t.ds), 10u);
    // The blind layout relabeled for keywords, so both costs use the same rule.
    std::vector<BottomCluster> relabeled;
    for (const auto& c : b) {
        std::vector<std::uint32_t> m(c.object_ids.begin(), c.object_ids.end());
        relabeled.push_back(make_cluster(c.id, t.ds.objects(), m, t.w));
    }
    EXPECT_LE(workload_cost(a, t.w, cw), workload_cost(relabeled, t.w, cw));
}

TEST(Partition, NoProfitMeansOneCluster) {
    const auto ds = random_dataset(300, 10, 2);
    Workload w;
    w.queries.push_back(make_query(0, ds.space(), {0, 1, 2}));  // covers everything
    const ExactCountEstimator est(ds.objects());
    const auto c = generate_bottom_clusters(ds, w, est, CostWeights{}, PartitionLimits{});
    ASSERT_EQ(c.size(), 1u);
    Rect mbr = Rect::empty();
    for (const auto& o : ds.objects()) mbr.expand(o.loc);
    EXPECT_EQ(c[0].mbr, mbr);
}

TEST(Partition, ClustersPartitionTheDataset) {
    for (std::uint64_t seed : {3, 4}) {
        const auto in = random_instance(seed, 2000, 80);
        CdfConfig cfg;
        cfg.epochs = 30;
        const auto models = build_keyword_models(in.ds, ItemsetTable{}, cfg);
        const auto clusters = generate_bottom_clusters(in.ds, in.w, models, CostWeights{}, PartitionLimits{});
        EXPECT_GT(clusters.size(), 1u);
        expect_partition(clusters, in.ds);
        for (const auto& c : clusters) EXPECT_EQ(c.labels, compute_labels(c, in.w));
        // Round trip through JSON.
        const auto back = clusters_from_json(clusters_to_json(clusters), in.ds);
        ASSERT_EQ(back.size(), clusters.size());
        for (std::size_t i = 0; i < back.size(); ++i) {
            EXPECT_EQ(back[i].object_ids, clusters[i].object_ids);
            EXPECT_EQ(back[i].mbr, clusters[i].mbr);
            EXPECT_EQ(back[i].labels, clusters[i].labels);
        }
    }
}

TEST(ProfitCheck, Arithmetic) {
    const CostWeights cw{0.1, 1.0};
    EXPECT_TRUE(profit_loss_check(10, 4, 10, cw));
    EXPECT_FALSE(profit_loss_check(4, 4, 10, cw));
    EXPECT_TRUE(profit_loss_check(4.5, 4, 0, cw));
    EXPECT_FALSE(profit_loss_check(4, 4, 0, cw));
}

TEST(SplitLoss, SigmoidFactors) {
    const auto ds = make_dataset({{1, 0, {"a"}}, {2, 0, {"a"}}, {3, 0, {"a"}}, {8, 0, {"a"}}});
    Workload w;
    w.queries.push_back(make_query(0, {2, -1, 9, 1}, {0}));
    SubSpace s{ds.space(), {0, 1, 2, 3}, {0}};
    const ExactCountEstimator est(ds.objects());
    // At the query's lower bound the left factor is sigmoid(0) = 0.5.
    const double at = split_loss(s, Axis::X, 2.0, w, est);
    EXPECT_DOUBLE_EQ(at, 0.5 * 2 + sigmoid(3.0 * 7) * 2);
    // Far left of the query: the left term vanishes.
    const double far = split_loss(s, Axis::X, -20.0, w, est);
    EXPECT_NEAR(far, 4.0, 1e-9);
}

TEST(SplitLoss, GradientMatchesFiniteDifferences) {
    // 500 uniform objects, 10 queries, a smooth learned estimator.
    auto in = random_instance(5, 500, 10);
    CdfConfig cfg;
    cfg.epochs = 40;
    const auto models = build_keyword_models(in.ds, ItemsetTable{}, cfg);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(5, 95);
    for (Axis dim : {Axis::X, Axis::Y}) {
        const SplitLoss loss(in.s, dim, in.w, models);
        for (int i = 0; i < 5; ++i) {
            const double v = u(rng);
            double g = 0.0;
            loss.value(v, 1.0, &g);
            const double h = 1e-5;
            const double fd = (loss.value(v + h, 1.0) - loss.value(v - h, 1.0)) / (2 * h);
            EXPECT_NEAR(g, fd, 1e-3 * std::max(1.0, std::abs(fd))) << "v = " << v;
        }
    }
}

TEST(SplitSearch, SeparatedGroups) {
    std::vector<Row> rows;
    for (int i = 0; i < 50; ++i) rows.push_back({10.0 + i * 0.1, 5, {"a"}});
    for (int i = 0; i < 50; ++i) rows.push_back({80.0 + i * 0.1, 5, {"a"}});
    const auto ds = make_dataset(rows);
    Workload w;
    w.queries.push_back(make_query(0, {0, 0, 100, 10}, {0}));
    SubSpace s{ds.space(), {}, {0}};
    for (std::uint32_t i = 0; i < 100; ++i) s.members.push_back(i);
    const ExactCountEstimator est(ds.objects());
    // One query over everything pays both sides wherever the split goes.
    const auto flat = find_optimal_split(s, Axis::X, ds.objects(), w, est, SgdConfig{});
    ASSERT_TRUE(flat);
    EXPECT_NEAR(flat->cost, 100.0, 1e-6);
    // One query per group: the split lands between them.
    w.queries[0].area = {0, 0, 20, 10};
    w.queries.push_back(make_query(1, {70, 0, 100, 10}, {0}));
    s.queries = {0, 1};
    const auto best = find_optimal_split(s, Axis::X, ds.objects(), w, est, SgdConfig{});
    ASSERT_TRUE(best);
    EXPECT_GT(best->val, 14.9);
    EXPECT_LT(best->val, 80.0);
    EXPECT_EQ(best->cost, 100.0);
    const auto bf = brute_force_best_split(s, Axis::X, ds.objects(), w);
    ASSERT_TRUE(bf);
    EXPECT_LE(best->cost, bf->cost);  // no member coordinate lies in [20, 70)
}

TEST(SplitSearch, BruteForceIsMinimalAndMatchesNaiveCost) {
    const auto in = random_instance(6, 600, 30);
    std::mt19937_64 rng(2);
    for (Axis dim : {Axis::X, Axis::Y}) {
        const auto bf = brute_force_best_split(in.s, dim, in.ds.objects(), in.w);
        ASSERT_TRUE(bf);
        EXPECT_DOUBLE_EQ(bf->cost, naive_split_cost(in, dim, bf->val));
        std::uniform_real_distribution<double> u(in.s.rect.lo(dim), in.s.rect.hi(dim));
        for (int i = 0; i < 100; ++i) EXPECT_LE(bf->cost, naive_split_cost(in, dim, u(rng)));
    }
    const auto one = make_dataset({{1, 1, {"a"}}, {1, 2, {"a"}}});
    Workload w;
    w.queries.push_back(make_query(0, {0, 0, 3, 3}, {0}));
    EXPECT_FALSE(brute_force_best_split(SubSpace{one.space(), {0, 1}, {0}}, Axis::X, one.objects(), w));
}

TEST(SplitSearch, LearnedCostNearBruteForce) {
    for (std::uint64_t seed = 10; seed < 15; ++seed) {
        const auto in = random_instance(seed);
        const ExactCountEstimator est(in.ds.objects());
        for (Axis dim : {Axis::X, Axis::Y}) {
            const auto sgd = find_optimal_split(in.s, dim, in.ds.objects(), in.w, est, SgdConfig{});
            const auto bf = brute_force_best_split(in.s, dim, in.ds.objects(), in.w);
            ASSERT_TRUE(sgd && bf);
            EXPECT_DOUBLE_EQ(sgd->cost, naive_split_cost(in, dim, sgd->val));
            EXPECT_LE(sgd->cost, 1.10 * bf->cost) << "seed " << seed;
        }
    }
}
