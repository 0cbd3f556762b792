#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "wisk/geometry.hpp"
#include "wisk/geotext.hpp"
#include "wisk/mlp.hpp"
#include "wisk/partitioner.hpp"

namespace wisk {

// A node of one level as the packer sees it.
struct LevelNode {
    std::vector<QueryId> labels;  // sorted
    Rect mbr = Rect::empty();
    std::size_t objects = 0;
};

struct UpperNode {
    std::vector<std::uint32_t> child_ids;  // positions in the level below
    std::vector<QueryId> labels;           // union of the children's labels
    std::size_t count = 0;                 // == child_ids.size()
    Rect mbr = Rect::empty();
    std::size_t objects = 0;
};

using Level = std::vector<UpperNode>;

std::vector<LevelNode> level_nodes(std::span<const BottomCluster> clusters);
std::vector<LevelNode> level_nodes(std::span<const UpperNode> uppers);

// Per query: 1 for every upper node it labels plus that node's children.
// Averaged over m; 1 when nothing has been packed.
double avg_node_accesses(std::span<const UpperNode> upper, std::size_t m);

inline double reward(double before, double after) { return before - after; }

// Slot-major: m label bits and one child count per slot, then the incoming
// node's m label bits. Labels are dense indices in [0, m).
std::vector<double> encode_state(std::span<const UpperNode> upper, std::span<const QueryId> next_labels,
                                 std::size_t m, std::size_t n, bool normalize_counts = true);

// Non-empty slots plus the lowest-indexed empty slot.
std::vector<std::uint8_t> action_mask(std::span<const UpperNode> upper);

// One level's packing episode. Nodes arrive in the given order; labels are
// dense query indices in [0, m).
class PackingEnv {
  public:
    PackingEnv(std::vector<std::vector<QueryId>> node_labels, std::size_t m);

    void reset();
    std::size_t num_nodes() const { return labels_.size(); }
    std::size_t slots() const { return labels_.size(); }
    std::size_t m() const { return m_; }
    std::size_t position() const { return pos_; }
    bool done() const { return pos_ == labels_.size(); }

    double avg_accesses() const;
    // Packs the next node into slot `action`; returns the reward.
    double step(std::size_t action);

    const std::vector<UpperNode>& upper() const { return upper_; }
    std::vector<std::uint8_t> mask() const;
    // Sparse encoding of the current state (indices into the dense vector).
    void encode(std::vector<std::uint32_t>& idx, std::vector<double>& val, bool normalize_counts = false) const;
    std::size_t state_size() const { return (m_ + 1) * labels_.size() + m_; }
    const std::vector<std::uint32_t>& assignment() const { return assign_; }

  private:
    std::vector<std::vector<QueryId>> labels_;
    std::size_t m_;
    std::size_t pos_ = 0;
    std::vector<UpperNode> upper_;
    std::vector<std::vector<std::uint8_t>> bits_;
    std::vector<std::uint32_t> assign_;
    double total_ = 0.0;  // sum over slots of |labels| * (1 + children)
    std::size_t nonempty_ = 0;
};

struct SparseState {
    std::vector<std::uint32_t> idx;
    std::vector<double> val;
};

struct Transition {
    SparseState state;
    std::uint32_t action = 0;
    double reward = 0.0;
    SparseState next_state;
    std::vector<std::uint8_t> next_mask;
    bool terminal = false;
};

class ReplayBuffer {
  public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}
    void push(Transition t);
    void clear() { items_.clear(); }
    std::size_t size() const { return items_.size(); }
    std::size_t capacity() const { return capacity_; }
    const Transition& operator[](std::size_t i) const { return items_[i]; }
    // Indices without replacement (all of them when fewer than n).
    std::vector<std::size_t> sample(std::size_t n, std::mt19937_64& rng) const;

  private:
    std::size_t capacity_;
    std::deque<Transition> items_;
};

enum class TdLoss : std::uint8_t { SmoothL1, Squared };

struct RlConfig {
    std::size_t replay_capacity = 256;
    double gamma = 0.99;
    double tau = 0.001;
    std::size_t epochs = 30;
    // Epochs are raised until the run has at least this many steps.
    std::size_t min_total_steps = 3000;
    std::size_t batch_size = 32;
    double epsilon_start = 1.0;
    double epsilon_decay = 0.995;  // per step
    double epsilon_floor = 0.05;
    std::size_t sync_period = 5;  // steps between soft updates
    double learning_rate = 1e-3;
    std::vector<std::size_t> hidden{64, 64};
    TdLoss loss = TdLoss::SmoothL1;
    bool use_mask = true;
    bool normalize_counts = false;  // child counts divided by N in the network input
    // Return the policy whose end-of-epoch greedy rollout had the lowest
    // final N_a instead of the last one.
    bool keep_best = true;
};

struct QNetwork {
    Mlp policy;
    Mlp target;
    std::size_t m = 0;
    std::size_t n = 0;
    bool normalize_counts = false;

    nlohmann::json to_json() const;
    static QNetwork from_json(const nlohmann::json& j);
};

// target <- tau * policy + (1 - tau) * target
void soft_update(const Mlp& policy, Mlp& target, double tau);

struct EpochMetrics {
    std::size_t epoch = 0;
    double loss = 0.0;  // mean TD loss per gradient step
    double reward = 0.0;
    double final_accesses = 0.0;
    double epsilon = 0.0;
    double greedy_accesses = 0.0;  // epsilon = 0 rollout after the epoch
};

// Nodes in the order the episode visits them: descending object count, then position.
std::vector<std::uint32_t> packing_order(std::span<const LevelNode> nodes);

// Dense query indices for a level; m = number of distinct labels.
struct DenseLabels {
    std::vector<std::vector<QueryId>> labels;
    std::size_t m = 0;
};
DenseLabels densify_labels(std::span<const LevelNode> nodes, std::span<const std::uint32_t> order);

QNetwork train_dqn(std::span<const LevelNode> nodes, const RlConfig& cfg, std::uint64_t seed,
                   std::vector<EpochMetrics>* metrics = nullptr);

struct PackResult {
    Level upper;
    std::vector<std::uint32_t> slots;  // slot chosen at each arrival, in packing order
    double reward_sum = 0.0;
    double final_accesses = 0.0;
};

// Greedy masked rollout.
PackResult pack_level(std::span<const LevelNode> nodes, const QNetwork& policy);

struct PackerConfig {
    RlConfig rl;
    double clustering_ratio = 1.0;
    bool spectral = true;  // false: plain k-means on the rectangle features
    std::uint64_t seed = 11;
};

struct LevelReport {
    std::size_t nodes_in = 0;
    std::size_t nodes_out = 0;
    double reward_sum = 0.0;
    bool kept = false;
    bool grouping = false;
    std::vector<EpochMetrics> metrics;
};

struct Hierarchy {
    std::vector<Level> levels;  // bottom-up
    std::vector<LevelReport> reports;
};

Hierarchy build_hierarchy(std::span<const BottomCluster> clusters, const PackerConfig& cfg);

// Groups clusters by their (xb, yb, xu, yu) corners into round(ratio * |G|) groups.
std::vector<std::vector<std::uint32_t>> group_clusters(std::span<const Rect> mbrs, double ratio, bool spectral,
                                                       std::uint64_t seed);

std::string metrics_csv(std::span<const LevelReport> reports);

}  // namespace wisk
