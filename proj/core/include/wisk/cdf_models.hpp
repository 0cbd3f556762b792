#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "wisk/estimator.hpp"
#include "wisk/geotext.hpp"
#include "wisk/mlp.hpp"

namespace wisk {

struct CdfConfig {
    std::size_t hidden_layers = 2;
    std::size_t hidden_units = 16;
    std::size_t epochs = 300;
    double learning_rate = 0.01;
    std::size_t batch_size = 16;
    // Empirical-CDF pairs are taken at this many quantiles at most.
    std::size_t max_train_points = 256;
    double min_support = 1e-5;
    std::size_t max_itemset_size = 3;
    // Mined itemsets backed by fewer objects than this get no model.
    std::size_t min_itemset_objects = 32;
    FrequencyThresholds thresholds;
    std::uint64_t seed = 1;
};

// One-dimensional cumulative distribution estimate, output in [0, 1].
class MarginalCDF {
  public:
    enum class Kind : std::uint8_t { Gaussian, MLP };

    // With lo < hi the normal is truncated to [lo, hi].
    static MarginalCDF gaussian(double mu, double sigma, double lo = -HUGE_VAL, double hi = HUGE_VAL);
    static MarginalCDF mlp(Mlp net, double lo, double hi);

    Kind kind() const { return kind_; }
    double mu() const { return mu_; }
    double sigma() const { return sigma_; }
    double lo() const { return lo_; }
    double hi() const { return hi_; }
    const Mlp& net() const { return net_; }

    double operator()(double v) const { return evaluate(v, nullptr); }
    // density receives dF/dv when non-null
    double evaluate(double v, double* density) const;

    nlohmann::json to_json() const;
    static MarginalCDF from_json(const nlohmann::json& j);

  private:
    Kind kind_ = Kind::Gaussian;
    double mu_ = 0.0;
    double sigma_ = 1.0;
    double lo_ = 0.0;
    double hi_ = 1.0;
    // Network outputs at the range ends; MLP values are rescaled so that
    // F(lo) = 0 and F(hi) = 1.
    double y0_ = 0.0;
    double y1_ = 1.0;
    bool truncated_ = false;
    Mlp net_;
};

inline constexpr double kMinSigma = 1e-9;

MarginalCDF fit_gaussian(std::span<const double> values);

struct MlpFitReport {
    double final_mse = 0.0;
    std::size_t epochs = 0;
};

MarginalCDF fit_mlp_cdf(std::span<const double> values, const CdfConfig& cfg, std::uint64_t seed,
                        MlpFitReport* report = nullptr);

struct KeywordModel {
    std::uint64_t count = 0;
    MarginalCDF fx;
    MarginalCDF fy;
};

double estimate_count_in_rect(const KeywordModel& model, const Rect& r);

struct Itemset {
    KeywordSet items;
    std::uint64_t support = 0;  // objects containing every item
};

class ItemsetTable {
  public:
    ItemsetTable() = default;
    ItemsetTable(std::vector<Itemset> itemsets, std::size_t num_objects, double min_support, std::size_t max_size);

    const std::vector<Itemset>& itemsets() const { return itemsets_; }
    std::size_t size() const { return itemsets_.size(); }
    std::optional<std::size_t> find(std::span<const KeywordId> items) const;
    std::size_t num_objects() const { return num_objects_; }
    double min_support() const { return min_support_; }
    std::size_t max_size() const { return max_size_; }

    nlohmann::json to_json() const;
    static ItemsetTable from_json(const nlohmann::json& j);

  private:
    std::vector<Itemset> itemsets_;
    std::map<KeywordSet, std::size_t> index_;
    std::size_t num_objects_ = 0;
    double min_support_ = 0.0;
    std::size_t max_size_ = 0;
};

bool meets_support(std::uint64_t count, std::size_t num_objects, double min_support);

// FP-growth over the objects' keyword sets; itemsets of size 2..max_size.
ItemsetTable mine_frequent_itemsets(const Dataset& ds, double min_support, std::size_t max_size);

// Per-keyword and per-itemset CDF models; the learned selectivity estimator.
class KeywordModels final : public SelectivityEstimator {
  public:
    struct Term {
        const KeywordModel* model;
        double sign;  // +1 single keyword, then alternating by itemset size
        bool single;
    };

    KeywordModels() = default;
    KeywordModels(std::map<KeywordId, KeywordModel> keyword_models, ItemsetTable itemsets,
                  std::map<std::size_t, KeywordModel> itemset_models);

    const std::map<KeywordId, KeywordModel>& keyword_models() const { return keyword_models_; }
    const std::map<std::size_t, KeywordModel>& itemset_models() const { return itemset_models_; }
    const ItemsetTable& itemsets() const { return itemsets_; }
    const KeywordModel* find(KeywordId k) const;

    // Inclusion-exclusion terms for a query keyword set.
    std::vector<Term> terms(std::span<const KeywordId> keys, bool use_itemsets = true) const;

    void set_itemset_correction(bool on) { use_itemsets_ = on; }
    bool itemset_correction() const { return use_itemsets_; }

    double count(std::span<const KeywordId> keys, const Rect& region,
                 std::span<const std::uint32_t> members) const override;

    std::unique_ptr<SplitProfile> split_profile(const Rect& region, Axis axis,
                                                std::span<const std::uint32_t> members,
                                                std::span<const Query* const> queries) const override;

    // Models whose full-space estimate falls outside [0.8, 1.2] x count.
    std::vector<std::string> fit_violations(const Rect& space) const;

    nlohmann::json to_json() const;
    static KeywordModels from_json(const nlohmann::json& j);

  private:
    std::map<KeywordId, KeywordModel> keyword_models_;
    ItemsetTable itemsets_;
    std::map<std::size_t, KeywordModel> itemset_models_;
    bool use_itemsets_ = true;
};

KeywordModels build_keyword_models(const Dataset& ds, const ItemsetTable& itemsets, const CdfConfig& cfg);

double estimate_query_objects(const KeywordModels& models, std::span<const KeywordId> q_keys, const Rect& r);

}  // namespace wisk
