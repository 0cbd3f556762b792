#include "wisk/partitioner.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "wisk/mlp.hpp"

namespace wisk {

using json = nlohmann::json;

InvertedFile build_inverted_file(std::span<const GeoObject> objects, std::span<const std::uint32_t> members) {
    InvertedFile inv;
    for (auto i : members)
        for (KeywordId k : objects[i].kws) inv[k].push_back(objects[i].id);
    for (auto& [k, ids] : inv) std::sort(ids.begin(), ids.end());
    return inv;
}

bool BottomCluster::has_keyword(std::span<const KeywordId> keys) const {
    return std::any_of(keys.begin(), keys.end(), [&](KeywordId k) { return inverted_file.contains(k); });
}

std::size_t BottomCluster::matching_objects(std::span<const KeywordId> keys) const {
    const std::vector<ObjectId>* single = nullptr;
    std::size_t lists = 0;
    for (KeywordId k : keys) {
        auto it = inverted_file.find(k);
        if (it == inverted_file.end()) continue;
        single = &it->second;
        ++lists;
    }
    if (lists <= 1) return single ? single->size() : 0;
    std::vector<ObjectId> ids;
    for (KeywordId k : keys) {
        auto it = inverted_file.find(k);
        if (it != inverted_file.end()) ids.insert(ids.end(), it->second.begin(), it->second.end());
    }
    std::sort(ids.begin(), ids.end());
    return static_cast<std::size_t>(std::unique(ids.begin(), ids.end()) - ids.begin());
}

std::vector<QueryId> compute_labels(const BottomCluster& c, const Workload& w) {
    std::vector<QueryId> labels;
    for (const auto& q : w.queries)
        if (q.area.intersects(c.mbr) && c.has_keyword(q.keys)) labels.push_back(q.id);
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    return labels;
}

BottomCluster make_cluster(std::uint32_t id, std::span<const GeoObject> objects,
                           std::span<const std::uint32_t> members, const Workload& w) {
    BottomCluster c;
    c.id = id;
    for (auto i : members) {
        c.mbr.expand(objects[i].loc);
        c.object_ids.push_back(objects[i].id);
    }
    std::sort(c.object_ids.begin(), c.object_ids.end());
    c.inverted_file = build_inverted_file(objects, members);
    c.labels = compute_labels(c, w);
    return c;
}

double workload_cost(std::span<const BottomCluster> clusters, const Workload& w, const CostWeights& cw) {
    double total = 0.0;
    for (const auto& q : w.queries) {
        double checks = 0.0;
        for (const auto& c : clusters)
            if (q.area.intersects(c.mbr) && c.has_keyword(q.keys))
                checks += static_cast<double>(c.matching_objects(q.keys));
        total += cw.w1 * static_cast<double>(clusters.size()) + cw.w2 * checks;
    }
    return total;
}

bool profit_loss_check(double c_s, double best_cost, std::size_t w_size, const CostWeights& cw) {
    return c_s - cw.w2 * best_cost > cw.w1 * static_cast<double>(w_size);
}

std::vector<std::uint32_t> subspace_queries(const Rect& rect, std::span<const GeoObject> objects,
                                            std::span<const std::uint32_t> members, const Workload& w,
                                            std::span<const std::uint32_t> candidates) {
    KeywordSet kws;
    for (auto i : members) kws.insert(kws.end(), objects[i].kws.begin(), objects[i].kws.end());
    normalize(kws);
    std::vector<std::uint32_t> out;
    for (auto qi : candidates) {
        const auto& q = w.queries[qi];
        if (q.area.intersects(rect) && intersects(q.keys, kws)) out.push_back(qi);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Split loss

SplitLoss::SplitLoss(const SubSpace& s, Axis dim, const Workload& w, const SelectivityEstimator& est, double beta)
    : dim_(dim), beta_(beta) {
    std::vector<const Query*> qs;
    qs.reserve(s.queries.size());
    for (auto qi : s.queries) {
        const auto& q = w.queries[qi];
        qs.push_back(&q);
        bounds_.emplace_back(q.area.lo(dim), q.area.hi(dim));
    }
    all_.resize(qs.size());
    for (std::size_t i = 0; i < all_.size(); ++i) all_[i] = i;
    profile_ = est.split_profile(s.rect, dim, s.members, qs);
}

double SplitLoss::value(double v, double unit, double* grad, std::span<const std::size_t> which) const {
    if (which.empty()) which = all_;
    thread_local std::vector<SideCounts> sides;
    sides.resize(which.size());
    profile_->evaluate(v, which, sides);
    const double k = beta_ / unit;
    double loss = 0.0;
    double g = 0.0;
    for (std::size_t i = 0; i < which.size(); ++i) {
        const auto [lo, hi] = bounds_[which[i]];
        const SideCounts& sc = sides[i];
        const double sl = sigmoid(k * (v - lo));
        const double sr = sigmoid(k * (hi - v));
        loss += sl * sc.left + sr * sc.right;
        g += k * sl * (1.0 - sl) * sc.left + sl * sc.d_left - k * sr * (1.0 - sr) * sc.right + sr * sc.d_right;
    }
    if (grad) *grad = g;
    return loss;
}

double SplitLoss::hard_cost(double v) const {
    thread_local std::vector<SideCounts> sides;
    sides.resize(all_.size());
    profile_->evaluate(v, all_, sides);
    double cost = 0.0;
    for (std::size_t i = 0; i < all_.size(); ++i) {
        const auto [lo, hi] = bounds_[i];
        if (lo <= v) cost += sides[i].left;
        if (v < hi) cost += sides[i].right;
    }
    return cost;
}

double split_loss(const SubSpace& s, Axis dim, double split_val, const Workload& w, const SelectivityEstimator& est,
                  double* grad) {
    return SplitLoss(s, dim, w, est).value(split_val, 1.0, grad);
}

namespace {

std::vector<double> member_coords(const SubSpace& s, Axis dim, std::span<const GeoObject> objects) {
    std::vector<double> c;
    c.reserve(s.members.size());
    for (auto i : s.members) c.push_back(objects[i].loc[dim]);
    std::sort(c.begin(), c.end());
    return c;
}

}  // namespace

std::optional<SplitCandidate> find_optimal_split(const SubSpace& s, Axis dim, std::span<const GeoObject> objects,
                                                 const Workload& w, const SelectivityEstimator& est,
                                                 const SgdConfig& cfg) {
    if (s.queries.empty()) return std::nullopt;
    const auto coords = member_coords(s, dim, objects);
    if (coords.empty() || coords.front() == coords.back()) return std::nullopt;

    const double lo = coords.front();
    const double hi = coords.back();
    const double range = hi - lo;
    // Split values stay strictly inside the member range so both sides are non-empty.
    double v_min = std::nextafter(lo, hi);
    double v_max = std::nextafter(hi, lo);
    if (v_min > v_max) v_min = v_max = lo;  // adjacent doubles
    const auto to_value = [&](double t) { return std::clamp(lo + t * range, v_min, v_max); };

    const SplitLoss loss(s, dim, w, est, cfg.beta);
    std::mt19937_64 rng(cfg.seed ^ (dim == Axis::X ? 0x51ULL : 0xa7ULL));
    const std::size_t nq = loss.num_queries();
    const std::size_t batch = std::min(std::max<std::size_t>(cfg.batch_size, 1), nq);
    std::vector<std::size_t> all(nq);
    for (std::size_t i = 0; i < nq; ++i) all[i] = i;
    std::vector<std::size_t> pick(batch);

    std::optional<SplitCandidate> best;
    const auto consider = [&](double v) {
        const double c = loss.hard_cost(v);
        if (!best || c < best->cost) best = SplitCandidate{dim, v, c};
    };

    const std::size_t restarts = std::max<std::size_t>(cfg.restarts, 1);
    const std::size_t stages = std::max<std::size_t>(cfg.stages, 1);
    for (std::size_t r = 0; r < restarts; ++r) {
        const double pct = static_cast<double>(r + 1) / static_cast<double>(restarts + 1);
        const auto idx = static_cast<std::size_t>(std::llround(pct * static_cast<double>(coords.size() - 1)));
        double t = (coords[idx] - lo) / range;
        consider(to_value(t));
        for (std::size_t st = 0; st < stages; ++st) {
            const double frac = stages == 1 ? 1.0 : static_cast<double>(st) / static_cast<double>(stages - 1);
            const double sharp = cfg.sharpness_start * std::pow(cfg.sharpness_end / cfg.sharpness_start, frac);
            const double unit = range / sharp;
            Adam opt(1, cfg.learning_rate * cfg.sharpness_start / sharp);
            double param[1] = {t};
            for (std::size_t step = 0; step < cfg.steps_per_stage; ++step) {
                std::span<const std::size_t> which = all;
                if (batch < nq) {
                    std::sample(all.begin(), all.end(), pick.begin(), batch, rng);
                    which = pick;
                }
                double g = 0.0;
                loss.value(to_value(param[0]), unit, &g, which);
                const double gt[1] = {g * range};
                if (!std::isfinite(gt[0])) break;
                opt.step(param, gt);
                param[0] = std::clamp(param[0], 0.0, 1.0);
            }
            t = param[0];
            consider(to_value(t));
        }
    }

    // The hard cost only changes at member coordinates and query bounds, so
    // walk the nearby breakpoints from the best value while that helps.
    std::vector<double> breaks(coords.begin(), coords.end());
    for (auto qi : s.queries) {
        breaks.push_back(w.queries[qi].area.lo(dim));
        breaks.push_back(w.queries[qi].area.hi(dim));
    }
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
    constexpr std::ptrdiff_t kWindow = 4;
    for (int round = 0; round < 64; ++round) {
        const double from = best->cost;
        const auto at = std::lower_bound(breaks.begin(), breaks.end(), best->val) - breaks.begin();
        const auto n = static_cast<std::ptrdiff_t>(breaks.size());
        for (auto i = std::max<std::ptrdiff_t>(0, at - kWindow); i < std::min(n, at + kWindow); ++i) {
            const double b = breaks[static_cast<std::size_t>(i)];
            if (b < lo || b > hi) continue;
            consider(std::clamp(b, v_min, v_max));
            consider(std::clamp(std::nextafter(b, hi + 1.0), v_min, v_max));
        }
        if (!(best->cost < from)) break;
    }
    return best;
}

std::optional<SplitCandidate> brute_force_best_split(const SubSpace& s, Axis dim, std::span<const GeoObject> objects,
                                                     const Workload& w) {
    auto coords = member_coords(s, dim, objects);
    coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    if (coords.size() < 2) return std::nullopt;
    const ExactCountEstimator exact(objects);
    const SplitLoss loss(s, dim, w, exact);
    std::optional<SplitCandidate> best;
    for (std::size_t i = 0; i + 1 < coords.size(); ++i) {
        const double c = loss.hard_cost(coords[i]);
        if (!best || c < best->cost) best = SplitCandidate{dim, coords[i], c};
    }
    return best;
}

// ---------------------------------------------------------------------------
// Bottom clusters

std::vector<BottomCluster> generate_bottom_clusters(std::span<const GeoObject> objects,
                                                    std::span<const std::uint32_t> members, const Rect& space,
                                                    const Workload& w, const SelectivityEstimator& est,
                                                    const CostWeights& cw, const PartitionLimits& limits,
                                                    const SgdConfig& sgd, PartitionReport* report) {
    std::vector<BottomCluster> out;
    if (members.empty()) return out;

    struct Entry {
        std::size_t nq;
        std::size_t seq;
        SubSpace s;
    };
    const auto cmp = [](const Entry& a, const Entry& b) { return a.nq != b.nq ? a.nq < b.nq : a.seq > b.seq; };
    std::priority_queue<Entry, std::vector<Entry>, decltype(cmp)> pq(cmp);
    std::size_t seq = 0;

    std::vector<std::uint32_t> all_queries(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) all_queries[i] = static_cast<std::uint32_t>(i);
    SubSpace root{space, std::vector<std::uint32_t>(members.begin(), members.end()), {}};
    for (auto i : members) root.rect.expand(objects[i].loc);
    root.queries = subspace_queries(root.rect, objects, root.members, w, all_queries);
    pq.push({root.queries.size(), seq++, std::move(root)});

    PartitionReport rep;
    std::vector<SubSpace> done;
    while (!pq.empty()) {
        SubSpace s = std::move(const_cast<Entry&>(pq.top()).s);
        pq.pop();
        ++rep.subspaces_examined;
        if (s.queries.size() < std::max<std::size_t>(limits.min_queries, 1) || s.members.size() < limits.min_objects) {
            done.push_back(std::move(s));
            continue;
        }
        double c_s = 0.0;
        for (auto qi : s.queries) c_s += est.count(w.queries[qi].keys, s.rect, s.members);
        c_s *= cw.w2;

        const auto bx = find_optimal_split(s, Axis::X, objects, w, est, sgd);
        const auto by = find_optimal_split(s, Axis::Y, objects, w, est, sgd);
        std::optional<SplitCandidate> best = bx;
        if (by && (!best || by->cost < best->cost)) best = by;
        if (!best || !profit_loss_check(c_s, best->cost, w.size(), cw)) {
            done.push_back(std::move(s));
            continue;
        }

        ++rep.splits_accepted;
        SubSpace left{s.rect, {}, {}};
        SubSpace right{s.rect, {}, {}};
        left.rect.set_hi(best->dim, best->val);
        right.rect.set_lo(best->dim, best->val);
        for (auto i : s.members) (objects[i].loc[best->dim] <= best->val ? left : right).members.push_back(i);
        for (SubSpace* child : {&left, &right}) {
            child->queries = subspace_queries(child->rect, objects, child->members, w, s.queries);
            pq.push({child->queries.size(), seq++, std::move(*child)});
        }
    }

    // Emit in spatial order of the subspaces for stable ids.
    std::stable_sort(done.begin(), done.end(), [](const SubSpace& a, const SubSpace& b) {
        return std::pair(a.rect.xb, a.rect.yb) < std::pair(b.rect.xb, b.rect.yb);
    });
    out.reserve(done.size());
    for (const auto& s : done) out.push_back(make_cluster(static_cast<std::uint32_t>(out.size()), objects, s.members, w));
    if (report) *report = rep;
    return out;
}

std::vector<BottomCluster> generate_bottom_clusters(const Dataset& ds, const Workload& w,
                                                    const SelectivityEstimator& est, const CostWeights& cw,
                                                    const PartitionLimits& limits, const SgdConfig& sgd) {
    std::vector<std::uint32_t> members(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) members[i] = static_cast<std::uint32_t>(i);
    return generate_bottom_clusters(ds.objects(), members, ds.space(), w, est, cw, limits, sgd);
}

json clusters_to_json(std::span<const BottomCluster> clusters) {
    json arr = json::array();
    for (const auto& c : clusters)
        arr.push_back({{"id", c.id},
                       {"mbr", {c.mbr.xb, c.mbr.yb, c.mbr.xu, c.mbr.yu}},
                       {"object_ids", c.object_ids},
                       {"labels", c.labels}});
    return arr;
}

std::vector<BottomCluster> clusters_from_json(const json& j, const Dataset& ds) {
    std::vector<BottomCluster> out;
    for (const auto& cj : j) {
        BottomCluster c;
        c.id = cj.at("id").get<std::uint32_t>();
        const auto m = cj.at("mbr").get<std::vector<double>>();
        if (m.size() != 4) throw std::runtime_error("cluster mbr must have 4 numbers");
        c.mbr = {m[0], m[1], m[2], m[3]};
        c.object_ids = cj.at("object_ids").get<std::vector<ObjectId>>();
        c.labels = cj.at("labels").get<std::vector<QueryId>>();
        for (ObjectId id : c.object_ids) {
            if (!ds.has_object(id)) throw std::runtime_error("cluster references unknown object " + std::to_string(id));
            for (KeywordId k : ds.object(id).kws) c.inverted_file[k].push_back(id);
        }
        for (auto& [k, ids] : c.inverted_file) std::sort(ids.begin(), ids.end());
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace wisk
