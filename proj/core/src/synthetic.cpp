#include "wisk/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace wisk {

Dataset generate_dataset(const SyntheticSpec& spec) {
    if (spec.num_objects == 0) throw std::invalid_argument("generate_dataset: num_objects must be positive");
    if (spec.vocabulary == 0 || spec.min_keywords == 0 || spec.max_keywords < spec.min_keywords)
        throw std::invalid_argument("generate_dataset: bad keyword settings");
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Dictionary dict;
    for (std::size_t k = 0; k < spec.vocabulary; ++k) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "kw%04zu", k);
        dict.intern(buf);
    }

    std::vector<double> zipf(spec.vocabulary);
    for (std::size_t r = 0; r < spec.vocabulary; ++r) zipf[r] = 1.0 / std::pow(static_cast<double>(r + 1), spec.zipf_exponent);
    std::discrete_distribution<std::size_t> rank_dist(zipf.begin(), zipf.end());

    const std::size_t hs = std::max<std::size_t>(spec.hotspots, 1);
    std::vector<GeoPoint> centers(hs);
    std::vector<std::vector<KeywordId>> local_rank(hs);
    std::vector<KeywordId> global_rank(spec.vocabulary);
    std::iota(global_rank.begin(), global_rank.end(), 0);
    for (std::size_t h = 0; h < hs; ++h) {
        centers[h] = {spec.side * (0.1 + 0.8 * unit(rng)), spec.side * (0.1 + 0.8 * unit(rng))};
        local_rank[h] = global_rank;
        std::shuffle(local_rank[h].begin(), local_rank[h].end(), rng);
    }
    std::normal_distribution<double> offset(0.0, spec.hotspot_sigma * spec.side);
    std::uniform_int_distribution<std::size_t> nkw(spec.min_keywords, std::min(spec.max_keywords, spec.vocabulary));
    std::uniform_int_distribution<std::size_t> pick_h(0, hs - 1);

    std::vector<GeoObject> objects;
    objects.reserve(spec.num_objects);
    for (std::size_t i = 0; i < spec.num_objects; ++i) {
        GeoObject o;
        o.id = static_cast<ObjectId>(i);
        const std::vector<KeywordId>* ranking = &global_rank;
        if (unit(rng) < spec.hotspot_share) {
            const auto h = pick_h(rng);
            ranking = &local_rank[h];
            o.loc = {std::clamp(centers[h].x + offset(rng), 0.0, spec.side),
                     std::clamp(centers[h].y + offset(rng), 0.0, spec.side)};
        } else {
            o.loc = {spec.side * unit(rng), spec.side * unit(rng)};
        }
        const std::size_t want = nkw(rng);
        o.kws.push_back((*ranking)[rank_dist(rng)]);
        while (o.kws.size() < want) {
            const KeywordId k = global_rank[rank_dist(rng)];
            if (std::find(o.kws.begin(), o.kws.end(), k) == o.kws.end()) o.kws.push_back(k);
        }
        normalize(o.kws);
        objects.push_back(std::move(o));
    }
    return Dataset(std::move(objects), std::move(dict));
}

nlohmann::json to_json(const SyntheticSpec& s) {
    return {{"num_objects", s.num_objects}, {"vocabulary", s.vocabulary},     {"min_keywords", s.min_keywords},
            {"max_keywords", s.max_keywords}, {"hotspots", s.hotspots},       {"hotspot_share", s.hotspot_share},
            {"hotspot_sigma", s.hotspot_sigma}, {"zipf_exponent", s.zipf_exponent}, {"side", s.side},
            {"seed", s.seed}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    s.num_objects = j.value("num_objects", s.num_objects);
    s.vocabulary = j.value("vocabulary", s.vocabulary);
    s.min_keywords = j.value("min_keywords", s.min_keywords);
    s.max_keywords = j.value("max_keywords", s.max_keywords);
    s.hotspots = j.value("hotspots", s.hotspots);
    s.hotspot_share = j.value("hotspot_share", s.hotspot_share);
    s.hotspot_sigma = j.value("hotspot_sigma", s.hotspot_sigma);
    s.zipf_exponent = j.value("zipf_exponent", s.zipf_exponent);
    s.side = j.value("side", s.side);
    s.seed = j.value("seed", s.seed);
    return s;
}

}  // namespace wisk
