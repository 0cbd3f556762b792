// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "support.hpp"
#include "wisk/bench.hpp"
#include "wisk/cdf_models.hpp"
#include "wisk/packer.hpp"
#include "wisk/partitioner.hpp"
#include "wisk/pipeline.hpp"
#include "wisk/synthetic.hpp"

using namespace wisk;
using namespace wisk::testing;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Dataset synth(std::size_t n, std::uint64_t seed) {
    SyntheticSpec ss;
    ss.num_objects = n;
    ss.seed = seed;
    return generate_dataset(ss);
}

Workload make_workload(const Dataset& ds, Distribution d, std::size_t n, std::uint64_t seed) {
    WorkloadSpec ws;
    ws.count = n;
    ws.distribution = d;
    ws.rng_seed = seed;
    return generate_workload(ds, ws);
}

constexpr Distribution kDists[] = {Distribution::Uni, Distribution::Lap, Distribution::Gau, Distribution::Mix};

// ---------------------------------------------------------------------------
// 1 and 10: oracle correctness for range and kNN queries

struct Built {
    Dataset ds;
    std::shared_ptr<WiskIndex> index;
};

std::vector<Built>& corpus() {
    static std::vector<Built> c;
    return c;
}

Outcome oracle_correctness() {
    const auto t0 = Clock::now();
    std::size_t queries = 0;
    std::size_t wrong = 0;
    for (const auto& [n, seed] : std::vector<std::pair<std::size_t, std::uint64_t>>{{1000, 1}, {10000, 2}, {30000, 3}}) {
        Built b{synth(n, seed), nullptr};
        BuildConfig cfg;
        cfg.seed = seed;
        b.index = build_wisk(b.ds, make_workload(b.ds, Distribution::Mix, 500, seed + 10), cfg).index;
        for (std::size_t d = 0; d < 4; ++d) {
            const auto test = make_workload(b.ds, kDists[d], 1000, seed * 100 + d);
            for (const auto& q : test.queries) {
                ++queries;
                if (b.index->query_range(q).ids != query_bruteforce(b.ds, q)) ++wrong;
            }
        }
        corpus().push_back(std::move(b));
    }
    const double secs = since(t0);
    return {wrong == 0 && secs < 300.0,
            fmt("%zu queries over 3 datasets x 4 distributions, %zu mismatches, %.1f s", queries, wrong, secs)};
}

Outcome knn_correctness() {
    std::size_t probes = 0;
    std::size_t wrong = 0;
    for (const auto& b : corpus()) {
        std::mt19937_64 rng(b.ds.size());
        const Rect sp = b.ds.space();
        std::uniform_real_distribution<double> ux(sp.xb, sp.xu), uy(sp.yb, sp.yu);
        const auto w = make_workload(b.ds, Distribution::Uni, 50, 77);
        for (std::size_t i = 0; i < 50; ++i) {
            const GeoPoint c{ux(rng), uy(rng)};
            const auto& keys = w.queries[i].keys;
            const std::size_t k = 1 + rng() % 20;
            std::vector<Neighbor> all;
            for (const auto& o : b.ds.objects())
                if (intersects(o.kws, keys)) {
                    const double dx = o.loc.x - c.x, dy = o.loc.y - c.y;
                    all.push_back({o.id, std::sqrt(dx * dx + dy * dy)});
                }
            std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& z) {
                return a.distance != z.distance ? a.distance < z.distance : a.id < z.id;
            });
            if (all.size() > k) all.resize(k);
            ++probes;
            if (b.index->query_bknn(c, keys, k) != all) ++wrong;
        }
    }
    return {probes == 150 && wrong == 0, fmt("%zu probes over 3 datasets, %zu mismatches", probes, wrong)};
}

// ---------------------------------------------------------------------------
// 2 and 3: toy layouts

Outcome two_color_costs() {
    const auto ds = make_dataset({{0.1, 0.5, {"k1"}},
                                  {0.2, 0.5, {"k1"}},
                                  {0.3, 0.5, {"k1"}},
                                  {2.5, 0.5, {"k1"}},
                                  {0.15, 0.5, {"k2"}},
                                  {0.25, 0.5, {"k2"}},
                                  {2.2, 0.5, {"k2"}},
                                  {2.8, 0.5, {"k2"}}});
    Workload w;
    w.queries.push_back(make_query(0, {0, 0, 3, 1}, {kw(ds, "k1")}));
    w.queries.push_back(make_query(1, {2, 0, 3, 1}, {kw(ds, "k2")}));
    const std::vector<std::uint32_t> all{0, 1, 2, 3, 4, 5, 6, 7}, left{0, 1, 2, 4, 5}, right{3, 6, 7};
    const std::vector<BottomCluster> one{make_cluster(0, ds.objects(), all, w)};
    const std::vector<BottomCluster> two{make_cluster(0, ds.objects(), left, w), make_cluster(1, ds.objects(), right, w)};
    bool ok = true;
    const CostWeights unit{1.0, 1.0};
    const CostWeights odd{0.3, 1.7};
    for (const auto& cw : {unit, odd}) {
        ok = ok && workload_cost(one, w, cw) == 2 * cw.w1 + 8 * cw.w2;
        ok = ok && workload_cost(two, w, cw) == 4 * cw.w1 + 6 * cw.w2;
    }
    const ExactCountEstimator est(ds.objects());
    std::string sweep;
    for (double r : {0.5, 1.0, 2.0}) {
        const CostWeights cw{r, 1.0};
        const auto c = generate_bottom_clusters(ds, w, est, cw, PartitionLimits{1, 2});
        const bool split = c.size() > 1;
        ok = ok && split == (2 * cw.w2 > 2 * cw.w1);
        sweep += fmt(" w1=%.1fw2:%s", r, split ? "split" : "kept");
    }
    return {ok, "costs 2w1+8w2 and 4w1+6w2 exact;" + sweep};
}

Outcome store_food() {
    const auto ds = make_dataset({{1, 1, {"Store"}},
                                  {2, 1, {"Store"}},
                                  {3, 1, {"Store"}},
                                  {4, 1, {"Food"}},
                                  {5, 1, {"Food"}},
                                  {6, 1, {"Food"}},
                                  {7, 1, {"Food"}},
                                  {6.5, 1, {"Hotel"}}});
    Workload w;
    w.queries.push_back(make_query(0, {0.5, 0, 3.5, 2}, {kw(ds, "Store")}));
    w.queries.push_back(make_query(1, {0.5, 0, 3.5, 2}, {kw(ds, "Store")}));
    w.queries.push_back(make_query(2, {5.5, 0, 7.5, 2}, {kw(ds, "Food")}));
    const auto checks = [&](const std::vector<BottomCluster>& cs) {
        std::size_t total = 0;
        for (const auto& q : w.queries)
            for (const auto& c : cs)
                if (q.area.intersects(c.mbr))
                    for (auto id : c.object_ids) total += intersects(ds.object(id).kws, q.keys) ? 1 : 0;
        return total;
    };
    const CostWeights cw{0.1, 1.0};
    const PartitionLimits limits{1, 6};
    const auto aware = generate_bottom_clusters(ds, w, ExactCountEstimator(ds.objects()), cw, limits);
    const auto blind = generate_bottom_clusters(ds, w, ExactCountEstimator(ds.objects(), true), cw, limits);
    const auto a = checks(aware);
    const auto b = checks(blind);
    return {a == 8 && b == 10, fmt("keyword-aware %zu checks, keyword-blind %zu checks", a, b)};
}

// ---------------------------------------------------------------------------
// 4: split quality and gradients

Outcome split_quality() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    double worst_grad = 0.0;
    bool ok = true;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto ds = random_dataset(1000, 30, 500 + seed);
        WorkloadSpec spec;
        spec.count = 40;
        spec.region_fraction = 0.02;
        spec.num_keywords = 2;
        spec.distribution = Distribution::Uni;
        spec.rng_seed = seed;
        const auto w = generate_workload(ds, spec);
        SubSpace s;
        s.rect = ds.space();
        for (std::uint32_t i = 0; i < ds.size(); ++i) s.members.push_back(i);
        std::vector<std::uint32_t> all(w.size());
        for (std::uint32_t i = 0; i < all.size(); ++i) all[i] = i;
        s.queries = subspace_queries(s.rect, ds.objects(), s.members, w, all);

        const ExactCountEstimator exact(ds.objects());
        double best_sgd = HUGE_VAL;
        double best_bf = HUGE_VAL;
        for (Axis dim : {Axis::X, Axis::Y}) {
            const auto sgd = find_optimal_split(s, dim, ds.objects(), w, exact, SgdConfig{});
            const auto bf = brute_force_best_split(s, dim, ds.objects(), w);
            if (sgd) best_sgd = std::min(best_sgd, sgd->cost);
            if (bf) best_bf = std::min(best_bf, bf->cost);
        }
        const double ratio = best_sgd / best_bf;
        worst = std::max(worst, ratio);
        ok = ok && ratio <= 1.10;

        CdfConfig cfg;
        cfg.epochs = 40;
        const auto models = build_keyword_models(ds, ItemsetTable{}, cfg);
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(5, 95);
        const SplitLoss loss(s, seed % 2 ? Axis::Y : Axis::X, w, models);
        for (int i = 0; i < 5; ++i) {
            const double v = u(rng);
            double g = 0.0;
            loss.value(v, 1.0, &g);
            const double h = 1e-5;
            const double fd = (loss.value(v + h, 1.0) - loss.value(v - h, 1.0)) / (2 * h);
            const double rel = std::abs(g - fd) / std::max(1.0, std::abs(fd));
            worst_grad = std::max(worst_grad, rel);
            ok = ok && rel <= 1e-3;
        }
    }
    const double secs = since(t0);
    return {ok && secs < 120.0,
            fmt("worst learned/brute-force cost %.4f over 20 instances, worst gradient rel. error %.2e, %.1f s", worst,
                worst_grad, secs)};
}

// ---------------------------------------------------------------------------
// 5: CDF fidelity

Outcome cdf_fidelity() {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 100);
    std::normal_distribution<double> m1(25, 6), m2(70, 9);
    std::vector<Row> uni, bi;
    for (int i = 0; i < 10000; ++i) uni.push_back({u(rng), u(rng), {"k"}});
    const auto bimodal = [&] { return std::clamp(rng() % 2 ? m1(rng) : m2(rng), 0.0, 100.0); };
    for (int i = 0; i < 10000; ++i) bi.push_back({bimodal(), bimodal(), {"k"}});

    bool ok = true;
    std::string detail;
    for (const auto* rows : {&uni, &bi}) {
        const auto ds = make_dataset(*rows);
        const auto models = build_keyword_models(ds, ItemsetTable{}, CdfConfig{});
        const auto* model = models.find(0);
        if (!model || model->fx.kind() != MarginalCDF::Kind::MLP) return {false, "expected an MLP model"};
        double worst = 0.0;
        int checked = 0;
        while (checked < 20) {
            const double x0 = u(rng), y0 = u(rng), x1 = u(rng), y1 = u(rng);
            const Rect r{std::min(x0, x1), std::min(y0, y1), std::max(x0, x1), std::max(y0, y1)};
            std::size_t exact = 0;
            for (const auto& o : ds.objects()) exact += r.contains(o.loc) ? 1 : 0;
            if (exact < ds.size() / 100) continue;
            ++checked;
            worst = std::max(worst, std::abs(estimate_count_in_rect(*model, r) - double(exact)) / double(exact));
        }
        // Monotonicity of both marginals on a fine grid.
        double drop = 0.0;
        for (const MarginalCDF* f : {&model->fx, &model->fy}) {
            double prev = (*f)(-1.0);
            for (int i = 0; i <= 4000; ++i) {
                const double y = (*f)(-1.0 + 102.0 * i / 4000.0);
                drop = std::max(drop, prev - y);
                prev = y;
            }
        }
        std::vector<double> xs, ys;
        for (const auto& o : ds.objects()) {
            xs.push_back(o.loc.x);
            ys.push_back(o.loc.y);
        }
        const KeywordModel gauss{ds.size(), fit_gaussian(xs), fit_gaussian(ys)};
        const double full = estimate_count_in_rect(gauss, ds.space()) / double(ds.size());
        ok = ok && worst <= 0.15 && drop <= 1e-3 && std::abs(full - 1.0) <= 0.10;
        detail += fmt("%s: worst rect error %.1f%%, max CDF drop %.1e, Gaussian full range %.3f x count; ",
                      rows == &uni ? "uniform" : "bimodal", 100 * worst, drop, full);
    }
    detail.resize(detail.size() - 2);
    return {ok, detail};
}

// ---------------------------------------------------------------------------
// 6: RL invariants

double partition_accesses(const std::vector<std::vector<QueryId>>& labels, const std::vector<int>& part, int groups,
                          std::size_t m) {
    double total = 0.0;
    for (int g = 0; g < groups; ++g) {
        std::set<QueryId> qs;
        int kids = 0;
        for (std::size_t i = 0; i < part.size(); ++i)
            if (part[i] == g) {
                ++kids;
                qs.insert(labels[i].begin(), labels[i].end());
            }
        total += static_cast<double>(qs.size()) * (1.0 + kids);
    }
    return total / static_cast<double>(m);
}

double exhaustive_optimum(const std::vector<std::vector<QueryId>>& labels, std::size_t m) {
    const int n = static_cast<int>(labels.size());
    double best = HUGE_VAL;
    std::vector<int> part(n);
    std::function<void(int, int)> rec = [&](int i, int groups) {
        if (i == n) {
            best = std::min(best, partition_accesses(labels, part, groups, m));
            return;
        }
        for (int g = 0; g <= groups; ++g) {
            part[i] = g;
            rec(i + 1, std::max(groups, g + 1));
        }
    };
    rec(0, 0);
    return best;
}

Outcome rl_invariants() {
    std::mt19937_64 rng(6);
    double worst_tel = 0.0;
    std::size_t masked_taken = 0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 2 + rng() % 12;
        const std::size_t m = 1 + rng() % 8;
        std::vector<std::vector<QueryId>> labels(n);
        for (auto& l : labels)
            for (QueryId q = 0; q < m; ++q)
                if (rng() % 2) l.push_back(q);
        PackingEnv env(labels, m);
        const double start = env.avg_accesses();
        double sum = 0.0;
        while (!env.done()) {
            const auto mask = env.mask();
            std::vector<std::size_t> ok;
            for (std::size_t a = 0; a < mask.size(); ++a)
                if (mask[a]) ok.push_back(a);
            sum += env.step(ok[rng() % ok.size()]);
        }
        worst_tel = std::max(worst_tel, std::abs(sum - (start - env.avg_accesses())));
    }

    std::size_t instances = 0;
    std::size_t within = 0;
    double worst_ratio = 0.0;
    while (instances < 100) {
        const std::size_t n = 2 + rng() % 5;
        const std::size_t m = 1 + rng() % 4;
        std::vector<LevelNode> nodes;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<QueryId> l;
            for (QueryId q = 0; q < m; ++q)
                if (rng() % 2) l.push_back(q);
            nodes.push_back(LevelNode{l, Rect{0, 0, 1, 1}, 1 + rng() % 100});
        }
        const auto order = packing_order(nodes);
        const auto dense = densify_labels(nodes, order);
        if (dense.m == 0) continue;
        ++instances;
        const auto res = pack_level(nodes, train_dqn(nodes, RlConfig{}, 1000 + instances));
        // Replay the chosen slots and confirm each was allowed when taken.
        PackingEnv env(dense.labels, dense.m);
        for (auto a : res.slots) {
            if (!env.mask()[a]) ++masked_taken;
            env.step(a);
        }
        const double ratio = res.final_accesses / exhaustive_optimum(dense.labels, dense.m);
        worst_ratio = std::max(worst_ratio, ratio);
        within += ratio <= 1.10 + 1e-12 ? 1 : 0;
    }

    const Mlp p({6, 16, 4}, OutputActivation::Identity, 1);
    Mlp target({6, 16, 4}, OutputActivation::Identity, 2);
    const Mlp before = target;
    soft_update(p, target, 0.001);
    bool bitwise = true;
    for (std::size_t i = 0; i < target.num_params(); ++i)
        bitwise = bitwise && target.params()[i] == 0.001 * p.params()[i] + (1.0 - 0.001) * before.params()[i];

    const bool ok = worst_tel <= 1e-9 && masked_taken == 0 && within == instances && bitwise;
    return {ok, fmt("telescoping max error %.1e over 100 rollouts; masked actions taken %zu; %zu/%zu exhaustive "
                    "instances within 10%% (worst %.3f); soft update bitwise %s",
                    worst_tel, masked_taken, within, instances, worst_ratio, bitwise ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 7 and 11: hierarchy benefit and acceleration

struct SeedResult {
    bool nodes_ok = false;
    bool grid_ok = false;
    double hier = 0, flat = 0, wisk_obj = 0, grid_obj = 0;
    double build_seconds = 0;
};

SeedResult hierarchy_seed(int seed, double sampling, double clustering) {
    const auto ds = synth(10000, 100 + seed);
    const auto w = make_workload(ds, Distribution::Lap, 200, 200 + seed);
    BuildConfig cfg;
    cfg.seed = seed;
    cfg.sampling_ratio = sampling;
    cfg.packer.clustering_ratio = clustering;
    const auto t0 = Clock::now();
    const auto r = build_wisk(ds, w, cfg);
    SeedResult s;
    s.build_seconds = since(t0);
    const auto flat = build_flat(ds, r.clusters, cfg);
    const auto cells = std::max<std::size_t>(1, std::lround(std::sqrt(double(r.clusters.size()))));
    const auto grid = build_uniform_grid(ds, cells);
    for (const auto& q : w.queries) {
        const auto a = r.index->query_range(q);
        s.hier += double(a.stats.nodes_accessed);
        s.wisk_obj += double(a.stats.objects_checked);
        s.flat += double(flat.query_range(q).stats.nodes_accessed);
        s.grid_obj += double(grid->query(q).stats.objects_checked);
    }
    const double n = double(w.size());
    s.hier /= n;
    s.flat /= n;
    s.wisk_obj /= n;
    s.grid_obj /= n;
    s.nodes_ok = s.hier <= s.flat;
    s.grid_ok = s.wisk_obj <= s.grid_obj;
    return s;
}

struct HierarchyRun {
    int nodes_wins = 0;
    int grid_wins = 0;
    int both = 0;
    double seconds = 0;
    std::string per_seed;
};

HierarchyRun hierarchy_run(double sampling, double clustering) {
    HierarchyRun run;
    for (int seed = 0; seed < 10; ++seed) {
        const auto s = hierarchy_seed(seed, sampling, clustering);
        run.nodes_wins += s.nodes_ok;
        run.grid_wins += s.grid_ok;
        run.both += s.nodes_ok && s.grid_ok;
        run.seconds += s.build_seconds;
        run.per_seed += fmt(" %.1f/%.1f", s.hier, s.flat);
    }
    return run;
}

HierarchyRun& full_run() {
    static HierarchyRun r = hierarchy_run(1.0, 1.0);
    return r;
}

Outcome hierarchy_benefit() {
    const auto& r = full_run();
    return {r.both >= 8, fmt("full build: hierarchy<=flat nodes on %d/10 seeds, WISK<=grid objects on %d/10, both on "
                             "%d/10; hier/flat nodes per seed:%s",
                             r.nodes_wins, r.grid_wins, r.both, r.per_seed.c_str())};
}

Outcome acceleration() {
    const auto& full = full_run();
    const auto fast = hierarchy_run(0.3, 0.2);
    const double cut = 1.0 - fast.seconds / full.seconds;
    return {cut >= 0.30 && fast.both >= 8,
            fmt("build time %.1f s -> %.1f s (%.0f%% less); accelerated hierarchy<=flat on %d/10, WISK<=grid on %d/10, "
                "both on %d/10; hier/flat nodes per seed:%s",
                full.seconds, fast.seconds, 100 * cut, fast.nodes_wins, fast.grid_wins, fast.both,
                fast.per_seed.c_str())};
}

// ---------------------------------------------------------------------------
// 8: frequent-itemset effect

Outcome itemset_effect() {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0, 100);
    std::normal_distribution<double> hot(30, 5);
    std::vector<Row> rows;
    // "a" and "b" always together, in a blob; filler keywords everywhere.
    const std::size_t c = 2000;
    for (std::size_t i = 0; i < c; ++i) rows.push_back({std::clamp(hot(rng), 0.0, 100.0), u(rng), {"a", "b"}});
    const char* filler[] = {"c", "d", "e", "f", "g", "h"};
    for (int i = 0; i < 6000; ++i) rows.push_back({u(rng), u(rng), {filler[rng() % 6]}});
    const auto ds = make_dataset(rows);
    const auto itemsets = mine_frequent_itemsets(ds, 0.01, 3);
    const auto on = build_keyword_models(ds, itemsets, CdfConfig{});
    KeywordModels off = on;
    off.set_itemset_correction(false);
    const KeywordSet ab{kw(ds, "a"), kw(ds, "b")};
    const double e_on = estimate_query_objects(on, ab, ds.space());
    const double e_off = estimate_query_objects(off, ab, ds.space());

    Workload w;
    for (QueryId i = 0; i < 60; ++i) {
        const double x = u(rng), y = u(rng), side = 5 + u(rng) / 5;
        KeywordSet keys{kw(ds, "a"), kw(ds, "b")};
        while (keys.size() < 5) {
            keys.push_back(kw(ds, filler[rng() % 6]));
            normalize(keys);
        }
        w.queries.push_back(make_query(i, {x, y, std::min(100.0, x + side), std::min(100.0, y + side)}, keys));
    }
    const double five_on = estimate_query_objects(on, w.queries[0].keys, ds.space());
    const double five_off = estimate_query_objects(off, w.queries[0].keys, ds.space());
    const double five_exact = double(query_bruteforce(ds, make_query(0, ds.space(), w.queries[0].keys)).size());
    const CostWeights cw;
    const PartitionLimits limits;
    const double cost_on = workload_cost(generate_bottom_clusters(ds, w, on, cw, limits), w, cw);
    const double cost_off = workload_cost(generate_bottom_clusters(ds, w, off, cw, limits), w, cw);
    const bool ok = std::abs(e_on - double(c)) <= 0.1 * double(c) && std::abs(e_off - 2.0 * double(c)) <= 0.2 * double(c) &&
                    cost_on <= cost_off;
    return {ok, fmt("{a,b} over the full space: %.0f with correction, %.0f without (c = %zu); one 5-keyword query: "
                    "%.0f / %.0f vs exact %.0f; workload cost %.1f with vs %.1f without",
                    e_on, e_off, c, five_on, five_off, five_exact, cost_on, cost_off)};
}

// ---------------------------------------------------------------------------
// 9: update semantics

Outcome update_semantics() {
    const auto ds = synth(10000, 9);
    BuildConfig cfg;
    cfg.seed = 9;
    cfg.buffer_capacity = 1000;
    auto r = build_wisk(ds, make_workload(ds, Distribution::Mix, 500, 90), cfg);
    auto& idx = *r.index;
    std::mt19937_64 rng(9);
    std::normal_distribution<double> jitter(0, 1.0);
    std::vector<GeoObject> all = ds.objects();
    for (ObjectId i = 0; i < 5000; ++i) {
        const auto& src = ds.objects()[rng() % ds.size()];
        GeoObject o{static_cast<ObjectId>(ds.size() + i), {src.loc.x + jitter(rng), src.loc.y + jitter(rng)}, src.kws};
        idx.insert_object(o);
        all.push_back(o);
    }
    const Dataset grown(all, ds.dict());
    std::size_t queries = 0;
    std::size_t wrong = 0;
    for (std::size_t d = 0; d < 4; ++d)
        for (const auto& q : make_workload(grown, kDists[d], 1000, 900 + d).queries) {
            ++queries;
            if (idx.query_range(q).ids != query_bruteforce(grown, q)) ++wrong;
        }
    std::vector<std::size_t> seen(all.size(), 0);
    for (const auto& leaf : idx.leaf_partition())
        for (auto id : leaf) ++seen[id];
    const auto once = static_cast<std::size_t>(std::count(seen.begin(), seen.end(), 1));
    const bool ok = idx.retrain_count() == 5 && wrong == 0 && once == all.size() && idx.check_invariants().empty();
    return {ok, fmt("%zu retrains, %zu objects, %zu in exactly one leaf, %zu/%zu queries wrong", idx.retrain_count(),
                    all.size(), once, wrong, queries)};
}

}  // namespace

int main() {
    const struct {
        int id;
        Outcome (*run)();
    } criteria[] = {{1, oracle_correctness}, {2, two_color_costs}, {3, store_food},         {4, split_quality},
                    {5, cdf_fidelity},       {6, rl_invariants},   {7, hierarchy_benefit}, {8, itemset_effect},
                    {9, update_semantics},   {10, knn_correctness}, {11, acceleration}};
    int failed = 0;
    const auto t0 = Clock::now();
    for (const auto& c : criteria) {
        const auto tc = Clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::printf("%s criterion %d: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, o.detail.c_str(), since(tc));
        std::fflush(stdout);
    }
    std::printf("%d/11 criteria passed in %.1f s\n", 11 - failed, since(t0));
    return failed == 0 ? 0 : 1;
}
