#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <thread>

#include <nlohmann/json.hpp>

#include "support.hpp"
#include "wisk/index.hpp"
#include "wisk/pipeline.hpp"
#include "wisk/synthetic.hpp"

using namespace wisk;
using namespace wisk::testing;

namespace {

BuildConfig small_config(std::uint64_t seed = 3) {
    BuildConfig cfg;
    cfg.estimator = EstimatorKind::Exact;
    cfg.packer.rl.min_total_steps = 300;
    cfg.packer.rl.epochs = 5;
    cfg.seed = seed;
    return cfg;
}

struct Built {
    Dataset ds;
    Workload train;
    Workload test;
    BuildResult r;
};

Built build_small(std::size_t n = 3000, std::uint64_t seed = 5) {
    Built b;
    SyntheticSpec ss;
    ss.num_objects = n;
    ss.seed = seed;
    b.ds = generate_dataset(ss);
    WorkloadSpec ws;
    ws.count = 150;
    ws.distribution = Distribution::Lap;
    ws.region_fraction = 0.01;
    ws.rng_seed = seed + 1;
    b.train = generate_workload(b.ds, ws);
    ws.rng_seed = seed + 2;
    ws.count = 100;
    b.test = generate_workload(b.ds, ws);
    b.r = build_wisk(b.ds, b.train, small_config(seed));
    return b;
}

const Built& shared_build() {
    static const Built b = build_small();
    return b;
}

// Oracle over whatever objects the index currently stores.
std::vector<ObjectId> scan_objects(const std::vector<GeoObject>& objs, const Query& q) {
    std::vector<ObjectId> out;
    for (const auto& o : objs) {
        if (o.loc.x < q.area.xb || o.loc.x > q.area.xu || o.loc.y < q.area.yb || o.loc.y > q.area.yu) continue;
        if (std::any_of(o.kws.begin(), o.kws.end(),
                        [&](KeywordId k) { return std::find(q.keys.begin(), q.keys.end(), k) != q.keys.end(); }))
            out.push_back(o.id);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<Neighbor> knn_oracle(const std::vector<GeoObject>& objs, GeoPoint c, const KeywordSet& keys,
                                 std::size_t k) {
    std::vector<Neighbor> all;
    for (const auto& o : objs) {
        bool hit = false;
        for (auto a : o.kws)
            for (auto b : keys) hit = hit || a == b;
        if (hit) all.push_back({o.id, std::hypot(o.loc.x - c.x, o.loc.y - c.y)});
    }
    std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
        return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
    });
    if (all.size() > k) all.resize(k);
    return all;
}

BottomCluster cluster_of(std::uint32_t id, const Dataset& ds, std::vector<ObjectId> ids) {
    BottomCluster c;
    c.id = id;
    c.object_ids = std::move(ids);
    for (auto o : c.object_ids) c.mbr.expand(ds.objects()[o].loc);
    return c;
}

}  // namespace

TEST(KeywordBitmap, SetTestMerge) {
    KeywordBitmap a, b;
    a.set(3);
    a.set(130);
    b.set(64);
    EXPECT_TRUE(a.test(130));
    EXPECT_FALSE(a.test(64));
    const KeywordSet probe{1, 64};
    EXPECT_FALSE(a.any_of(probe));
    a.merge(b);
    EXPECT_TRUE(a.any_of(probe));
    EXPECT_EQ(a.keywords(), (std::vector<KeywordId>{3, 64, 130}));
}

TEST(WiskIndex, RangeQueriesMatchScan) {
    const auto& b = shared_build();
    const auto& idx = *b.r.index;
    EXPECT_TRUE(idx.check_invariants().empty());
    for (const Workload* w : {&b.train, &b.test})
        for (const auto& q : w->queries) {
            const auto res = idx.query_range(q);
            EXPECT_EQ(res.ids, scan(b.ds, q)) << "query " << q.id;
            EXPECT_EQ(res.stats.results, res.ids.size());
            EXPECT_GE(res.stats.objects_checked, res.ids.size());
        }
}

TEST(WiskIndex, RootPrunesDisjointQuery) {
    const auto& b = shared_build();
    const auto& idx = *b.r.index;
    const Rect root = idx.nodes()[idx.root()].mbr;
    const auto q = make_query(0, {root.xu + 10, root.yu + 10, root.xu + 20, root.yu + 20}, {0});
    const auto res = idx.query_range(q);
    EXPECT_TRUE(res.ids.empty());
    EXPECT_EQ(res.stats.nodes_accessed, 1u);
    EXPECT_EQ(res.stats.objects_checked, 0u);

    // Inside the space but with a keyword no object has.
    const auto q2 = make_query(1, root, {static_cast<KeywordId>(b.ds.dict().size() + 7)});
    EXPECT_EQ(idx.query_range(q2).stats.nodes_accessed, 1u);
}

TEST(WiskIndex, AssembleNodeCountAndBitmaps) {
    const auto ds = random_dataset(40, 6, 9);
    std::vector<BottomCluster> clusters;
    for (std::uint32_t c = 0; c < 4; ++c) {
        std::vector<ObjectId> ids;
        for (ObjectId i = c * 10; i < c * 10 + 10; ++i) ids.push_back(i);
        clusters.push_back(cluster_of(c, ds, ids));
    }
    Level lvl(2);
    lvl[0].child_ids = {0, 1};
    lvl[1].child_ids = {2, 3};
    std::vector<Level> levels{lvl};
    const auto idx = assemble_index(clusters, levels, ds);
    // 4 leaves + 2 upper + 1 synthetic root.
    EXPECT_EQ(idx.nodes().size(), 7u);
    EXPECT_EQ(idx.height(), 3u);
    EXPECT_EQ(idx.num_leaves(), 4u);
    EXPECT_TRUE(idx.check_invariants().empty());

    KeywordBitmap all;
    for (const auto& o : ds.objects())
        for (auto k : o.kws) all.set(k);
    EXPECT_EQ(idx.nodes()[idx.root()].bitmap.keywords(), all.keywords());
    for (const auto& n : idx.nodes()) {
        if (n.leaf) continue;
        KeywordBitmap u;
        for (auto c : n.children) u.merge(idx.nodes()[c].bitmap);
        EXPECT_EQ(n.bitmap.keywords(), u.keywords());
        for (auto c : n.children) {
            const Rect& cm = idx.nodes()[c].mbr;
            EXPECT_TRUE(n.mbr.contains(GeoPoint{cm.xb, cm.yb}) && n.mbr.contains(GeoPoint{cm.xu, cm.yu}));
        }
    }

    const auto parts = idx.leaf_partition();
    std::vector<ObjectId> flat;
    for (const auto& p : parts) flat.insert(flat.end(), p.begin(), p.end());
    std::sort(flat.begin(), flat.end());
    ASSERT_EQ(flat.size(), 40u);
    for (ObjectId i = 0; i < 40; ++i) EXPECT_EQ(flat[i], i);
}

TEST(WiskIndex, AssembleRejectsBadLevels) {
    const auto ds = random_dataset(20, 4, 2);
    std::vector<BottomCluster> clusters{cluster_of(0, ds, {0, 1, 2}), cluster_of(1, ds, {3, 4})};
    Level lvl(1);
    lvl[0].child_ids = {0, 0};
    std::vector<Level> levels{lvl};
    EXPECT_THROW(assemble_index(clusters, levels, ds), std::invalid_argument);
    lvl[0].child_ids = {0};
    levels = {lvl};
    EXPECT_THROW(assemble_index(clusters, levels, ds), std::invalid_argument);
    EXPECT_THROW(assemble_index({}, {}, ds), std::invalid_argument);
    std::vector<BottomCluster> unknown{cluster_of(0, ds, {0}), cluster_of(1, ds, {1})};
    unknown[1].object_ids.push_back(999);
    EXPECT_THROW(assemble_index(unknown, {}, ds), std::invalid_argument);
}

TEST(WiskIndex, SingleLeafRoot) {
    const auto ds = random_dataset(30, 5, 4);
    std::vector<ObjectId> ids(30);
    for (ObjectId i = 0; i < 30; ++i) ids[i] = i;
    std::vector<BottomCluster> one{cluster_of(0, ds, ids)};
    const auto idx = assemble_index(one, {}, ds);
    EXPECT_EQ(idx.nodes().size(), 1u);
    EXPECT_EQ(idx.height(), 1u);
    const auto q = make_query(0, {0, 0, 100, 100}, {kw(ds, "w0")});
    const auto res = idx.query_range(q);
    EXPECT_EQ(res.ids, scan(ds, q));
    EXPECT_EQ(res.stats.nodes_accessed, 1u);
}

TEST(WiskIndex, KnnMatchesOracle) {
    const auto& b = shared_build();
    const auto& idx = *b.r.index;
    std::mt19937_64 rng(17);
    const Rect sp = idx.nodes()[idx.root()].mbr;
    std::uniform_real_distribution<double> ux(sp.xb, sp.xu), uy(sp.yb, sp.yu);
    for (int t = 0; t < 40; ++t) {
        const GeoPoint c{ux(rng), uy(rng)};
        const auto& keys = b.test.queries[static_cast<std::size_t>(t) % b.test.size()].keys;
        for (std::size_t k : {1u, 5u, 25u}) {
            const auto got = idx.query_bknn(c, keys, k);
            const auto want = knn_oracle(idx.objects(), c, keys, k);
            ASSERT_EQ(got.size(), want.size());
            for (std::size_t i = 0; i < got.size(); ++i) {
                EXPECT_EQ(got[i].id, want[i].id) << "probe " << t << " k " << k << " rank " << i;
                EXPECT_DOUBLE_EQ(got[i].distance, want[i].distance);
            }
        }
    }
}

TEST(WiskIndex, KnnTiesZeroDistanceAndShortfall) {
    const auto ds = make_dataset({{1, 1, {"a"}}, {1, 1, {"a"}}, {2, 1, {"a"}}, {0, 1, {"a"}}, {5, 5, {"b"}}});
    std::vector<BottomCluster> cl{cluster_of(0, ds, {0, 1, 2}), cluster_of(1, ds, {3, 4})};
    const auto idx = assemble_index(cl, {}, ds);
    const KeywordSet a{kw(ds, "a")};
    const auto got = idx.query_bknn({1, 1}, a, 10);
    ASSERT_EQ(got.size(), 4u);  // only four objects carry "a"
    EXPECT_EQ(got[0], (Neighbor{0, 0.0}));
    EXPECT_EQ(got[1], (Neighbor{1, 0.0}));
    // Objects 2 and 3 are both at distance 1; lower id first.
    EXPECT_EQ(got[2].id, 2u);
    EXPECT_EQ(got[3].id, 3u);
    EXPECT_THROW(idx.query_bknn({0, 0}, a, 0), std::invalid_argument);
    const KeywordSet none{static_cast<KeywordId>(50)};
    EXPECT_TRUE(idx.query_bknn({0, 0}, none, 3).empty());
}

TEST(WiskIndex, InsertVisibleAndPropagated) {
    auto b = build_small(1500, 21);
    auto& idx = *b.r.index;
    const auto fresh_kw = static_cast<KeywordId>(b.ds.dict().size() + 3);
    const Rect sp = idx.nodes()[idx.root()].mbr;
    GeoObject o{900000, {(sp.xb + sp.xu) / 2, (sp.yb + sp.yu) / 2}, {fresh_kw}};
    idx.insert_object(o);
    EXPECT_EQ(idx.insert_buffer().size(), 1u);
    const auto q = make_query(0, sp, {fresh_kw});
    EXPECT_EQ(idx.query_range(q).ids, std::vector<ObjectId>{900000});
    EXPECT_TRUE(idx.nodes()[idx.root()].bitmap.test(fresh_kw));
    EXPECT_TRUE(idx.check_invariants().empty());

    // Outside every leaf: the nearest leaf and every ancestor MBR grow.
    GeoObject far{900001, {sp.xu + 50, sp.yu + 50}, {fresh_kw}};
    idx.insert_object(far);
    EXPECT_TRUE(idx.nodes()[idx.root()].mbr.contains(far.loc));
    const auto q2 = make_query(1, {sp.xu + 49, sp.yu + 49, sp.xu + 51, sp.yu + 51}, {fresh_kw});
    EXPECT_EQ(idx.query_range(q2).ids, std::vector<ObjectId>{900001});
    EXPECT_TRUE(idx.check_invariants().empty());

    EXPECT_THROW(idx.insert_object(o), std::invalid_argument);
    EXPECT_THROW(idx.insert_object(GeoObject{900002, {1, 1}, {}}), std::invalid_argument);
    EXPECT_THROW(idx.insert_object(GeoObject{900003, {NAN, 1}, {fresh_kw}}), std::invalid_argument);
}

TEST(WiskIndex, BufferFullTriggersOneRetrain) {
    const auto ds = random_dataset(400, 8, 31);
    WorkloadSpec ws;
    ws.count = 60;
    ws.distribution = Distribution::Uni;
    ws.region_fraction = 0.02;
    ws.rng_seed = 3;
    const auto w = generate_workload(ds, ws);
    auto cfg = small_config();
    cfg.buffer_capacity = 3;
    auto r = build_wisk(ds, w, cfg);
    auto& idx = *r.index;
    EXPECT_EQ(idx.retrain_count(), 0u);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 100);
    for (ObjectId i = 0; i < 3; ++i) {
        idx.insert_object(GeoObject{10000 + i, {u(rng), u(rng)}, {kw(ds, "w0")}});
        EXPECT_EQ(idx.retrain_count(), i == 2 ? 1u : 0u);
    }
    EXPECT_TRUE(idx.insert_buffer().empty());
    EXPECT_TRUE(idx.check_invariants().empty());
    for (const auto& q : w.queries) EXPECT_EQ(idx.query_range(q).ids, scan_objects(idx.objects(), q));
}

TEST(WiskIndex, RetrainNoOpKeepsHash) {
    auto b = build_small(1500, 22);
    auto& idx = *b.r.index;
    const auto h = idx.structural_hash();
    EXPECT_EQ(idx.retrain_affected(), 0u);
    EXPECT_EQ(idx.structural_hash(), h);

    // New queries that touch nothing.
    Workload none;
    none.queries.push_back(make_query(0, {1e6, 1e6, 1e6 + 1, 1e6 + 1}, {0}));
    EXPECT_EQ(idx.retrain_affected(none), 0u);
    EXPECT_EQ(idx.structural_hash(), h);
}

TEST(WiskIndex, RetrainWithNewQueriesStaysCorrect) {
    auto b = build_small(2000, 23);
    auto& idx = *b.r.index;
    WorkloadSpec ws;
    ws.count = 60;
    ws.distribution = Distribution::Gau;
    ws.region_fraction = 0.005;
    ws.rng_seed = 99;
    const auto extra = generate_workload(b.ds, ws);
    const auto before = idx.num_leaves();
    const auto splits = idx.retrain_affected(extra);
    EXPECT_GE(idx.num_leaves(), before + splits);
    EXPECT_EQ(idx.workload().size(), b.train.size() + extra.size());
    EXPECT_TRUE(idx.check_invariants().empty());
    for (const Workload* w : std::initializer_list<const Workload*>{&b.test, &extra})
        for (const auto& q : w->queries) EXPECT_EQ(idx.query_range(q).ids, scan(b.ds, q));
}

TEST(WiskIndex, SerializeRoundTrip) {
    const auto& b = shared_build();
    const auto& idx = *b.r.index;
    const auto path = std::filesystem::temp_directory_path() / "wisk_index_test.bin";
    idx.serialize(path);
    const auto back = WiskIndex::deserialize(path, b.ds);
    std::filesystem::remove(path);
    EXPECT_EQ(back.structural_hash(), idx.structural_hash());
    EXPECT_EQ(back.serialize_bytes(), idx.serialize_bytes());
    for (const auto& q : b.test.queries) {
        const auto x = idx.query_range(q);
        const auto y = back.query_range(q);
        EXPECT_EQ(x.ids, y.ids);
        EXPECT_EQ(x.stats.nodes_accessed, y.stats.nodes_accessed);
        EXPECT_EQ(x.stats.objects_checked, y.stats.objects_checked);
    }
}

TEST(WiskIndex, SerializeSingleLeafAndBuffer) {
    const auto ds = random_dataset(30, 5, 4);
    std::vector<ObjectId> ids(30);
    for (ObjectId i = 0; i < 30; ++i) ids[i] = i;
    std::vector<BottomCluster> one{cluster_of(0, ds, ids)};
    auto idx = assemble_index(one, {}, ds);
    idx.insert_object(GeoObject{500, {3, 3}, {kw(ds, "w1")}});
    const auto back = WiskIndex::deserialize_bytes(idx.serialize_bytes(), ds);
    EXPECT_EQ(back.structural_hash(), idx.structural_hash());
    EXPECT_EQ(back.insert_buffer(), idx.insert_buffer());
    EXPECT_EQ(back.num_objects(), 31u);
}

TEST(WiskIndex, LoadErrors) {
    const auto& b = shared_build();
    const auto bytes = b.r.index->serialize_bytes();
    const auto other = random_dataset(50, 5, 1);
    EXPECT_THROW(WiskIndex::deserialize_bytes(bytes, other), IndexLoadError);
    EXPECT_THROW(WiskIndex::deserialize_bytes(bytes.substr(0, bytes.size() / 2), b.ds), IndexLoadError);
    EXPECT_THROW(WiskIndex::deserialize_bytes(bytes + "x", b.ds), IndexLoadError);
    EXPECT_THROW(WiskIndex::deserialize_bytes("nope", b.ds), IndexLoadError);
    EXPECT_THROW(WiskIndex::deserialize("/nonexistent/dir/index.bin", b.ds), IndexLoadError);
}

TEST(IndexHandle, QueriesDuringRetrainStayCorrect) {
    auto b = build_small(1500, 24);
    IndexHandle h(b.r.index);
    const auto ds = std::make_shared<Dataset>(b.ds);
    std::atomic<bool> release{false};
    auto fut = h.swap_retrain(b.test, [&, ds](const Workload& w) {
        while (!release.load()) std::this_thread::yield();
        return build_wisk(*ds, w, small_config(7)).index;
    });
    for (const auto& q : b.test.queries) EXPECT_EQ(h.query_range(q).ids, scan(b.ds, q));
    EXPECT_EQ(h.generation(), 0u);
    release = true;
    EXPECT_TRUE(fut.get());
    EXPECT_EQ(h.generation(), 1u);
    EXPECT_NE(h.snapshot().get(), b.r.index.get());
    for (const auto& q : b.test.queries) EXPECT_EQ(h.query_range(q).ids, scan(b.ds, q));
}

TEST(IndexHandle, LaterRequestWins) {
    auto b = build_small(1000, 25);
    IndexHandle h(b.r.index);
    auto first = std::make_shared<WiskIndex>(*b.r.index);
    auto second = std::make_shared<WiskIndex>(*b.r.index);
    std::atomic<bool> release_first{false};
    auto f1 = h.swap_retrain(b.train, [&](const Workload&) {
        while (!release_first.load()) std::this_thread::yield();
        return first;
    });
    auto f2 = h.swap_retrain(b.test, [&](const Workload&) { return second; });
    EXPECT_TRUE(f2.get());
    release_first = true;
    EXPECT_FALSE(f1.get());
    h.wait_idle();
    EXPECT_EQ(h.snapshot().get(), second.get());
    EXPECT_EQ(h.generation(), 2u);
}

TEST(IndexHandle, BuilderFailureKeepsOldIndex) {
    auto b = build_small(800, 26);
    IndexHandle h(b.r.index);
    auto f = h.swap_retrain(b.train, [](const Workload&) -> std::shared_ptr<WiskIndex> {
        throw std::runtime_error("boom");
    });
    EXPECT_THROW(f.get(), std::runtime_error);
    EXPECT_EQ(h.snapshot().get(), b.r.index.get());
    EXPECT_EQ(h.generation(), 0u);
}

TEST(IndexHandle, InsertThroughHandle) {
    auto b = build_small(800, 27);
    IndexHandle h(b.r.index);
    const auto k = kw(b.ds, "kw0000");
    h.insert_object(GeoObject{777777, {1e4, 1e4}, {k}});
    const auto q = make_query(0, {1e4 - 1, 1e4 - 1, 1e4 + 1, 1e4 + 1}, {k});
    EXPECT_EQ(h.query_range(q).ids, std::vector<ObjectId>{777777});
}
