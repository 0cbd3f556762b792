#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

#include "wisk/cdf_models.hpp"
#include "wisk/index.hpp"
#include "wisk/packer.hpp"
#include "wisk/partitioner.hpp"

namespace wisk {

enum class EstimatorKind : std::uint8_t { Cdf, Exact };

struct BuildConfig {
    CdfConfig cdf;
    CostWeights cw;
    PartitionLimits limits;
    SgdConfig sgd;
    PackerConfig packer;
    EstimatorKind estimator = EstimatorKind::Cdf;
    bool itemset_correction = true;
    double sampling_ratio = 1.0;  // stratified workload sample used for training
    std::size_t buffer_capacity = 100000;
    std::uint64_t seed = 42;
};

struct StageTimings {
    double models = 0.0;
    double clusters = 0.0;
    double packing = 0.0;
    double assemble = 0.0;
    double total() const { return models + clusters + packing + assemble; }
};

struct BuildResult {
    std::shared_ptr<WiskIndex> index;
    std::shared_ptr<const KeywordModels> models;  // null with the exact estimator
    std::vector<BottomCluster> clusters;
    Hierarchy hierarchy;
    Workload training;  // after sampling
    StageTimings timings;
};

class BuildStageError : public std::runtime_error {
  public:
    BuildStageError(std::string stage, const std::string& what)
        : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

  private:
    std::string stage_;
};

// Called after each stage ("models", "clusters", "packing", "assemble") with
// what has been built so far.
using StageCallback = std::function<void(std::string_view stage, const BuildResult& partial)>;

// Keyword models -> bottom clusters -> packed hierarchy -> index. A failing
// stage throws BuildStageError naming it.
BuildResult build_wisk(const Dataset& ds, const Workload& w, const BuildConfig& cfg,
                       const StageCallback& on_stage = {});

// Clusters under a single synthetic root, with no learned hierarchy.
WiskIndex build_flat(const Dataset& ds, std::span<const BottomCluster> clusters, const BuildConfig& cfg);

nlohmann::json to_json(const BuildConfig& c);
BuildConfig build_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StageTimings& t);

}  // namespace wisk
