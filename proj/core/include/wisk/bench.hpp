#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "wisk/index.hpp"
#include "wisk/pipeline.hpp"
#include "wisk/synthetic.hpp"

namespace wisk {

enum class BaselineKind : std::uint8_t { BruteForce, UniformGridIF, FlatClusters };

std::string_view to_string(BaselineKind k);

// Anything the harness can time: answers range queries with the same stats
// the learned index reports.
class SearchIndex {
  public:
    virtual ~SearchIndex() = default;
    virtual std::string name() const = 0;
    virtual QueryResult query(const Query& q) const = 0;
    virtual std::size_t bytes() const = 0;
    double build_seconds = 0.0;
};

// Scans every object; no structure.
class BruteForceIndex : public SearchIndex {
  public:
    explicit BruteForceIndex(std::shared_ptr<const Dataset> ds) : ds_(std::move(ds)) {}
    std::string name() const override { return "BruteForce"; }
    QueryResult query(const Query& q) const override;
    std::size_t bytes() const override { return 0; }

  private:
    std::shared_ptr<const Dataset> ds_;
};

// cells_per_dim^2 equal cells over the data space, one inverted file each.
class UniformGridIndex : public SearchIndex {
  public:
    UniformGridIndex(const Dataset& ds, std::size_t cells_per_dim);
    std::string name() const override { return "UniformGridIF"; }
    QueryResult query(const Query& q) const override;
    std::size_t bytes() const override;
    std::size_t cells_per_dim() const { return per_dim_; }
    std::size_t num_cells() const { return cells_.size(); }

  private:
    struct Cell {
        Rect rect;
        std::map<KeywordId, std::vector<std::uint32_t>> postings;  // keyword -> object positions
    };
    std::vector<GeoObject> objects_;
    std::vector<Cell> cells_;
    Rect space_;
    std::size_t per_dim_;
};

// A WiskIndex behind the harness interface (used for WISK and FlatClusters).
class WiskSearch : public SearchIndex {
  public:
    WiskSearch(std::string name, std::shared_ptr<const WiskIndex> index) : name_(std::move(name)), index_(std::move(index)) {}
    std::string name() const override { return name_; }
    QueryResult query(const Query& q) const override { return index_->query_range(q); }
    std::size_t bytes() const override { return index_->serialize_bytes().size(); }
    const WiskIndex& index() const { return *index_; }

  private:
    std::string name_;
    std::shared_ptr<const WiskIndex> index_;
};

std::unique_ptr<UniformGridIndex> build_uniform_grid(const Dataset& ds, std::size_t cells_per_dim);

class BenchMismatch : public std::runtime_error {
  public:
    BenchMismatch(QueryId query, std::string index);
    QueryId query_id;
    std::string index_name;
};

struct IndexMetrics {
    std::string index;
    double mean_us = 0.0;
    double median_us = 0.0;
    double p99_us = 0.0;
    double mean_nodes = 0.0;
    double mean_objects = 0.0;
    double mean_results = 0.0;
    std::size_t bytes = 0;
    double build_seconds = 0.0;
};

struct BenchReport {
    std::uint64_t seed = 0;
    std::string config_hash;
    std::size_t repetitions = 1;
    std::size_t queries = 0;
    std::vector<IndexMetrics> indexes;

    const IndexMetrics& at(const std::string& index) const;
};

// Checks every index against brute force on every query (throws
// BenchMismatch), then a warm-up pass, then `repetitions` timed passes.
BenchReport run_bench(std::span<const SearchIndex* const> indexes, const Dataset& ds, const Workload& test,
                      std::size_t repetitions);

nlohmann::json to_json(const BenchReport& r);
// Long format: index,metric,value, one row per (index, metric).
std::string to_csv(const BenchReport& r);

// FNV-1a 64 of the compact dump (keys sorted), as 16 hex digits.
std::string config_hash(const nlohmann::json& resolved);

// Everything a command needs; one JSON file, CLI flags override.
struct RunConfig {
    // Dataset: a file, or synthetic when dataset_path is empty.
    std::string dataset_path;
    DatasetFormat dataset_format = DatasetFormat::Csv;
    SyntheticSpec synthetic;
    // Workloads: files, or generated from workload when the paths are empty.
    std::string train_workload_path;
    std::string test_workload_path;
    WorkloadSpec workload;
    std::size_t train_queries = 1000;
    std::size_t test_queries = 1000;
    BuildConfig build;
    std::size_t repetitions = 100;
    std::size_t grid_cells_per_dim = 0;  // 0: about one cell per bottom cluster
    // Workload shift: phase distributions and queries per window.
    std::vector<Distribution> shift_phases{Distribution::Uni, Distribution::Lap, Distribution::Gau};
    std::size_t shift_queries_per_phase = 400;
    std::size_t shift_window = 50;
    std::uint64_t seed = 42;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

Dataset load_or_generate_dataset(const RunConfig& c);
// Disjoint train and test workloads (different generator seeds and ids).
std::pair<Workload, Workload> load_or_generate_workloads(const RunConfig& c, const Dataset& ds);

struct ShiftPoint {
    std::size_t window = 0;
    std::size_t phase = 0;
    std::string distribution;
    double mean_us = 0.0;
    double mean_nodes = 0.0;
    double mean_objects = 0.0;
    std::uint64_t generation = 0;  // index generation serving the window's last query
};

struct ShiftReport {
    std::vector<ShiftPoint> points;
    std::size_t queries = 0;
    std::size_t published = 0;  // retrains that replaced the serving index
};

// Replays the phases in order through the handle. At each phase boundary a
// retrain for the new phase's training sample starts in the background and
// queries keep running against whatever index is published. Each later phase
// is replayed twice: during its retrain and after the swap.
ShiftReport run_workload_shift(IndexHandle& handle, const Dataset& ds, std::span<const Workload> phase_train,
                               std::span<const Workload> phase_test, std::span<const std::string> phase_names,
                               std::size_t window, const IndexHandle::Builder& builder);

nlohmann::json to_json(const ShiftReport& r);
std::string to_csv(const ShiftReport& r);

}  // namespace wisk
