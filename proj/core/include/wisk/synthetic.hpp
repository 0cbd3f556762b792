#pragma once

#include <cstdint>

#include <nlohmann/json_fwd.hpp>

#include "wisk/geotext.hpp"

namespace wisk {

// Clustered points whose keywords are spatially correlated: each hotspot
// draws its first keyword from its own Zipf ranking of the vocabulary.
struct SyntheticSpec {
    std::size_t num_objects = 10000;
    std::size_t vocabulary = 200;
    std::size_t min_keywords = 1;
    std::size_t max_keywords = 4;
    std::size_t hotspots = 12;
    double hotspot_share = 0.8;  // the rest is uniform background
    double hotspot_sigma = 0.04;  // fraction of the side length
    double zipf_exponent = 1.0;
    double side = 100.0;
    std::uint64_t seed = 1;
};

Dataset generate_dataset(const SyntheticSpec& spec);

nlohmann::json to_json(const SyntheticSpec& s);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

}  // namespace wisk
