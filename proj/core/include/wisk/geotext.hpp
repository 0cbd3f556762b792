#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "wisk/geometry.hpp"

namespace wisk {

using KeywordId = std::uint32_t;
using ObjectId = std::uint32_t;
using QueryId = std::uint32_t;

// Sorted, duplicate-free keyword set.
using KeywordSet = std::vector<KeywordId>;

void normalize(KeywordSet& kws);
bool intersects(std::span<const KeywordId> a, std::span<const KeywordId> b);

struct GeoObject {
    ObjectId id = 0;
    GeoPoint loc;
    KeywordSet kws;
};

enum class Distribution : std::uint8_t { Uni, Lap, Gau, Mix };

std::string_view to_string(Distribution d);
Distribution parse_distribution(std::string_view s);

struct Query {
    QueryId id = 0;
    Rect area;
    KeywordSet keys;
    // Which generator produced the query; the default stratum for sampling.
    Distribution dist = Distribution::Uni;
};

struct Workload {
    std::vector<Query> queries;

    std::size_t size() const { return queries.size(); }
    bool empty() const { return queries.empty(); }
};

class ParseError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class EmptyDatasetError : public ParseError {
  public:
    EmptyDatasetError() : ParseError("dataset contains no records") {}
};

// Bidirectional keyword string <-> id map.
class Dictionary {
  public:
    KeywordId intern(std::string_view word);
    std::optional<KeywordId> find(std::string_view word) const;
    const std::string& word(KeywordId id) const { return words_.at(id); }
    std::size_t size() const { return words_.size(); }
    const std::vector<std::string>& words() const { return words_; }
    // FNV-1a over the words in id order.
    std::uint64_t hash() const;

  private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, KeywordId> ids_;
};

// The indexed corpus. Immutable once built; freq and space are derived.
class Dataset {
  public:
    Dataset() = default;
    Dataset(std::vector<GeoObject> objects, Dictionary dict);

    const std::vector<GeoObject>& objects() const { return objects_; }
    const GeoObject& object(ObjectId id) const;
    bool has_object(ObjectId id) const;
    const Dictionary& dict() const { return dict_; }
    std::uint64_t freq(KeywordId k) const { return freq_.at(k); }
    const std::vector<std::uint64_t>& freqs() const { return freq_; }
    const Rect& space() const { return space_; }
    std::size_t size() const { return objects_.size(); }
    bool empty() const { return objects_.empty(); }

    // Object positions ordered by (x, y); the axis LAP/GAU sampling runs over.
    std::vector<std::size_t> spatial_order() const;

  private:
    std::vector<GeoObject> objects_;
    Dictionary dict_;
    std::vector<std::uint64_t> freq_;
    Rect space_ = Rect::empty();
    // id -> position; empty when ids are exactly 0..n-1 in order
    std::unordered_map<ObjectId, std::size_t> sparse_ids_;
};

enum class DatasetFormat { Csv, Jsonl };

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format);
Dataset parse_dataset(std::string_view text, DatasetFormat format);
void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path);

enum class FrequencyClass { Low, Medium, High };

struct FrequencyThresholds {
    double low = 1e-6;   // ratio <= low -> Low
    double high = 1e-4;  // ratio >= high -> High
};

FrequencyClass keyword_frequency_class(const Dataset& ds, KeywordId k,
                                       const FrequencyThresholds& t = {});
std::string_view to_string(FrequencyClass c);

struct WorkloadSpec {
    std::size_t count = 2000;
    Distribution distribution = Distribution::Mix;
    double region_fraction = 0.0005;
    std::size_t num_keywords = 5;
    double mix_ratio = 0.5;
    std::uint64_t rng_seed = 42;
};

Workload generate_workload(const Dataset& ds, const WorkloadSpec& spec);

std::vector<ObjectId> query_bruteforce(const Dataset& ds, const Query& q);

using StrataKey = std::function<std::uint64_t(const Query&)>;
std::uint64_t default_strata_key(const Query& q);

Workload stratified_sample(const Workload& w, double ratio, const StrataKey& strata_key,
                           std::uint64_t seed);
inline Workload stratified_sample(const Workload& w, double ratio, std::uint64_t seed) {
    return stratified_sample(w, ratio, default_strata_key, seed);
}

// Workload JSON: array of {id, xb, yb, xu, yu, keys:[string], dist}.
std::string workload_to_json(const Workload& w, const Dictionary& dict);
Workload workload_from_json(std::string_view text, const Dictionary& dict);
void save_workload(const Workload& w, const Dictionary& dict, const std::filesystem::path& path);
Workload load_workload(const std::filesystem::path& path, const Dictionary& dict);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace wisk
