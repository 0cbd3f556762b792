#pragma once

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "wisk/estimator.hpp"
#include "wisk/geotext.hpp"
#include "wisk/packer.hpp"
#include "wisk/partitioner.hpp"

namespace wisk {

struct QueryStats {
    std::size_t nodes_accessed = 0;
    std::size_t objects_checked = 0;
    std::size_t results = 0;
};

struct QueryResult {
    std::vector<ObjectId> ids;  // sorted
    QueryStats stats;
};

struct Neighbor {
    ObjectId id;
    double distance;
    bool operator==(const Neighbor&) const = default;
};

// Growable keyword bitset.
class KeywordBitmap {
  public:
    void set(KeywordId k);
    bool test(KeywordId k) const;
    bool any_of(std::span<const KeywordId> keys) const;
    void merge(const KeywordBitmap& o);
    void clear() { words_.clear(); }
    std::vector<KeywordId> keywords() const;
    const std::vector<std::uint64_t>& words() const { return words_; }
    bool operator==(const KeywordBitmap& o) const;

  private:
    std::vector<std::uint64_t> words_;
};

struct IndexConfig {
    std::size_t buffer_capacity = 100000;
    CostWeights cw;
    PartitionLimits limits;
    SgdConfig sgd;
};

class IndexLoadError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Builds the estimator local retraining uses, over the index's current object store.
using EstimatorFactory =
    std::function<std::shared_ptr<const SelectivityEstimator>(std::span<const GeoObject> objects)>;

class WiskIndex {
  public:
    static constexpr std::uint32_t kFormatVersion = 1;

    struct Node {
        Rect mbr = Rect::empty();
        std::int32_t parent = -1;
        bool leaf = false;
        std::vector<std::uint32_t> children;  // internal
        KeywordBitmap bitmap;                 // keywords anywhere below (leaves too)
        std::vector<std::uint32_t> members;   // leaf: object store positions
        std::map<KeywordId, std::vector<std::uint32_t>> postings;  // leaf: keyword -> positions
    };

    WiskIndex() = default;

    const std::vector<Node>& nodes() const { return nodes_; }
    std::uint32_t root() const { return root_; }
    std::size_t height() const;
    std::size_t num_leaves() const;
    const std::vector<GeoObject>& objects() const { return objects_; }
    const GeoObject& object_by_id(ObjectId id) const { return objects_[pos_.at(id)]; }
    std::size_t num_objects() const { return objects_.size(); }
    const Workload& workload() const { return workload_; }
    const IndexConfig& config() const { return cfg_; }
    std::uint64_t dict_hash() const { return dict_hash_; }
    const std::vector<ObjectId>& insert_buffer() const { return buffer_; }
    std::size_t retrain_count() const { return retrains_; }

    void set_workload(Workload w) { workload_ = std::move(w); }
    void set_estimator_factory(EstimatorFactory f) { factory_ = std::move(f); }

    QueryResult query_range(const Query& q) const;
    std::vector<Neighbor> query_bknn(const GeoPoint& center, std::span<const KeywordId> keys, std::size_t k) const;

    void insert_object(const GeoObject& o);
    // Re-partitions leaves touched by new queries, or by buffered inserts when
    // new_queries is empty. Returns the number of leaves split.
    std::size_t retrain_affected(const std::optional<Workload>& new_queries = std::nullopt);

    std::uint64_t structural_hash() const;
    // Empty when every structural invariant holds.
    std::vector<std::string> check_invariants() const;

    // Leaves in pre-order, as object id lists.
    std::vector<std::vector<ObjectId>> leaf_partition() const;

    void serialize(const std::filesystem::path& path) const;
    std::string serialize_bytes() const;
    static WiskIndex deserialize(const std::filesystem::path& path, const Dataset& ds);
    static WiskIndex deserialize_bytes(const std::string& bytes, const Dataset& ds);

    friend WiskIndex assemble_index(std::span<const BottomCluster> clusters, std::span<const Level> levels,
                                    const Dataset& ds, const IndexConfig& cfg);

  private:
    std::uint32_t add_leaf(std::span<const std::uint32_t> members);
    void refresh_leaf(std::uint32_t leaf);
    void refresh_upwards(std::int32_t node);
    void recompute_internal(std::uint32_t node);
    std::vector<std::uint32_t> preorder() const;
    bool node_matches(const Node& n, std::span<const KeywordId> keys) const { return n.bitmap.any_of(keys); }

    std::vector<GeoObject> objects_;
    std::unordered_map<ObjectId, std::uint32_t> pos_;
    std::vector<Node> nodes_;
    std::uint32_t root_ = 0;
    Workload workload_;
    IndexConfig cfg_;
    std::uint64_t dict_hash_ = 0;
    std::vector<ObjectId> buffer_;
    std::vector<std::uint32_t> buffer_leaves_;
    std::size_t retrains_ = 0;
    EstimatorFactory factory_;
};

// Leaves from clusters, internal nodes from levels (bottom-up); a synthetic
// root spans the top when it has more than one node.
WiskIndex assemble_index(std::span<const BottomCluster> clusters, std::span<const Level> levels, const Dataset& ds,
                         const IndexConfig& cfg = {});

nlohmann::json query_stats_json(QueryId id, const QueryStats& s, double micros);

// Serves queries from the current index while replacements are built on a
// background thread. Readers share the current snapshot; inserts are writers.
class IndexHandle {
  public:
    using Builder = std::function<std::shared_ptr<WiskIndex>(const Workload&)>;

    explicit IndexHandle(std::shared_ptr<WiskIndex> index);
    ~IndexHandle();
    IndexHandle(const IndexHandle&) = delete;
    IndexHandle& operator=(const IndexHandle&) = delete;

    std::shared_ptr<const WiskIndex> snapshot() const;
    std::uint64_t generation() const;

    QueryResult query_range(const Query& q) const;
    void insert_object(const GeoObject& o);

    // Builds a new index for new_workload off the serving path and publishes
    // it when done, unless a later request has already published. The future
    // reports whether this build was published; build errors keep the old
    // index and surface through the future.
    std::shared_future<bool> swap_retrain(Workload new_workload, Builder builder);

    void wait_idle();

  private:
    mutable std::mutex ptr_mu_;
    mutable std::shared_mutex rw_;
    std::shared_ptr<WiskIndex> current_;
    std::uint64_t generation_ = 0;      // of the published index
    std::uint64_t next_request_ = 0;
    std::mutex threads_mu_;
    std::vector<std::thread> threads_;
};

}  // namespace wisk
