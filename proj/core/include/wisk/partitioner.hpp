#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "wisk/estimator.hpp"
#include "wisk/geotext.hpp"

namespace wisk {

struct CostWeights {
    double w1 = 0.1;  // per relevant-cluster check
    double w2 = 1.0;  // per object check
};

struct PartitionLimits {
    std::size_t min_queries = 1;
    std::size_t min_objects = 32;
};

struct SgdConfig {
    std::size_t restarts = 4;  // initial values at evenly spaced percentiles
    // The sigmoid width shrinks geometrically across stages, from
    // range / sharpness_start to range / sharpness_end.
    std::size_t stages = 6;
    std::size_t steps_per_stage = 25;
    double sharpness_start = 4.0;
    double sharpness_end = 256.0;
    double learning_rate = 0.05;  // on the normalized [0, 1] split coordinate
    std::size_t batch_size = 64;
    double beta = 3.0;
    std::uint64_t seed = 7;
};

using InvertedFile = std::map<KeywordId, std::vector<ObjectId>>;

InvertedFile build_inverted_file(std::span<const GeoObject> objects, std::span<const std::uint32_t> members);

// A region being considered for splitting. `members` are positions into the
// object span; `queries` are positions into the workload.
struct SubSpace {
    Rect rect;
    std::vector<std::uint32_t> members;
    std::vector<std::uint32_t> queries;
};

struct SplitCandidate {
    Axis dim = Axis::X;
    double val = 0.0;
    double cost = 0.0;  // estimated object checks after the split
};

struct BottomCluster {
    std::uint32_t id = 0;
    Rect mbr = Rect::empty();
    std::vector<ObjectId> object_ids;
    InvertedFile inverted_file;
    std::vector<QueryId> labels;  // sorted

    bool has_keyword(std::span<const KeywordId> keys) const;
    // Members containing at least one of keys.
    std::size_t matching_objects(std::span<const KeywordId> keys) const;
};

BottomCluster make_cluster(std::uint32_t id, std::span<const GeoObject> objects,
                           std::span<const std::uint32_t> members, const Workload& w);

// Labels of a cluster: queries overlapping its MBR and sharing a keyword.
std::vector<QueryId> compute_labels(const BottomCluster& c, const Workload& w);

double workload_cost(std::span<const BottomCluster> clusters, const Workload& w, const CostWeights& cw);

bool profit_loss_check(double c_s, double best_cost, std::size_t w_size, const CostWeights& cw);

// Queries that overlap rect and share a keyword with some member.
std::vector<std::uint32_t> subspace_queries(const Rect& rect, std::span<const GeoObject> objects,
                                            std::span<const std::uint32_t> members, const Workload& w,
                                            std::span<const std::uint32_t> candidates);

// Relaxed post-split cost of a subspace along one axis:
//   sum_q sigmoid(beta (v - q.lo) / unit) * left_q(v) + sigmoid(beta (q.hi - v) / unit) * right_q(v)
// where left_q / right_q are the estimated keyword-matching objects on each
// side. unit = 1 is the raw form.
class SplitLoss {
  public:
    SplitLoss(const SubSpace& s, Axis dim, const Workload& w, const SelectivityEstimator& est, double beta = 3.0);

    Axis dim() const { return dim_; }
    std::size_t num_queries() const { return bounds_.size(); }

    // Relaxed loss over the listed queries (all when which is empty); the
    // derivative with respect to v goes to grad when non-null.
    double value(double v, double unit, double* grad = nullptr, std::span<const std::size_t> which = {}) const;

    // Indicator version: a query pays for a side iff it reaches that side.
    double hard_cost(double v) const;

  private:
    Axis dim_;
    double beta_;
    std::vector<std::pair<double, double>> bounds_;  // per query: [lo, hi] on dim
    std::vector<std::size_t> all_;
    std::unique_ptr<SplitProfile> profile_;
};

double split_loss(const SubSpace& s, Axis dim, double split_val, const Workload& w, const SelectivityEstimator& est,
                  double* grad = nullptr);

// Objects with coordinate <= val go to the lower side.
std::optional<SplitCandidate> find_optimal_split(const SubSpace& s, Axis dim, std::span<const GeoObject> objects,
                                                 const Workload& w, const SelectivityEstimator& est,
                                                 const SgdConfig& cfg);

// Exact exhaustive search over distinct member coordinates; a test oracle.
std::optional<SplitCandidate> brute_force_best_split(const SubSpace& s, Axis dim, std::span<const GeoObject> objects,
                                                     const Workload& w);

struct PartitionReport {
    std::size_t subspaces_examined = 0;
    std::size_t splits_accepted = 0;
};

std::vector<BottomCluster> generate_bottom_clusters(std::span<const GeoObject> objects,
                                                    std::span<const std::uint32_t> members, const Rect& space,
                                                    const Workload& w, const SelectivityEstimator& est,
                                                    const CostWeights& cw, const PartitionLimits& limits,
                                                    const SgdConfig& sgd, PartitionReport* report = nullptr);

std::vector<BottomCluster> generate_bottom_clusters(const Dataset& ds, const Workload& w,
                                                    const SelectivityEstimator& est, const CostWeights& cw,
                                                    const PartitionLimits& limits, const SgdConfig& sgd = {});

nlohmann::json clusters_to_json(std::span<const BottomCluster> clusters);
std::vector<BottomCluster> clusters_from_json(const nlohmann::json& j, const Dataset& ds);

}  // namespace wisk
