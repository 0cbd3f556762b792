#pragma once

#include <random>
#include <string>
#include <vector>

#include "wisk/geotext.hpp"

namespace wisk::testing {

struct Row {
    double x;
    double y;
    std::vector<std::string> words;
};

inline Dataset make_dataset(const std::vector<Row>& rows) {
    Dictionary dict;
    std::vector<GeoObject> objs;
    for (const auto& r : rows) {
        GeoObject o;
        o.id = static_cast<ObjectId>(objs.size());
        o.loc = {r.x, r.y};
        for (const auto& w : r.words) o.kws.push_back(dict.intern(w));
        normalize(o.kws);
        objs.push_back(std::move(o));
    }
    return Dataset(std::move(objs), std::move(dict));
}

// Uniform points on [0, side]^2, 1..3 keywords from a vocabulary of `vocab`
// words with a skew toward low ids.
inline Dataset random_dataset(std::size_t n, std::size_t vocab, std::uint64_t seed, double side = 100.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, side);
    std::uniform_int_distribution<int> nk(1, 3);
    std::vector<Row> rows;
    for (std::size_t i = 0; i < n; ++i) {
        Row r{u(rng), u(rng), {}};
        const int k = nk(rng);
        for (int j = 0; j < k; ++j) {
            const double z = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
            r.words.push_back("w" + std::to_string(static_cast<std::size_t>(z * z * static_cast<double>(vocab))));
        }
        rows.push_back(std::move(r));
    }
    return make_dataset(rows);
}

inline KeywordId kw(const Dataset& ds, const std::string& w) { return *ds.dict().find(w); }

inline Query make_query(QueryId id, Rect area, KeywordSet keys) {
    Query q;
    q.id = id;
    q.area = area;
    normalize(keys);
    q.keys = std::move(keys);
    return q;
}

// Straight loop over the objects, independent of query_bruteforce.
inline std::vector<ObjectId> scan(const Dataset& ds, const Query& q) {
    std::vector<ObjectId> out;
    for (const auto& o : ds.objects()) {
        if (o.loc.x < q.area.xb || o.loc.x > q.area.xu || o.loc.y < q.area.yb || o.loc.y > q.area.yu) continue;
        bool hit = false;
        for (auto a : o.kws)
            for (auto b : q.keys) hit = hit || a == b;
        if (hit) out.push_back(o.id);
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace wisk::testing
