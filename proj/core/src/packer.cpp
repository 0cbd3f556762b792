#include "wisk/packer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace wisk {

using json = nlohmann::json;

std::vector<LevelNode> level_nodes(std::span<const BottomCluster> clusters) {
    std::vector<LevelNode> out;
    out.reserve(clusters.size());
    for (const auto& c : clusters) out.push_back({c.labels, c.mbr, c.object_ids.size()});
    return out;
}

std::vector<LevelNode> level_nodes(std::span<const UpperNode> uppers) {
    std::vector<LevelNode> out;
    out.reserve(uppers.size());
    for (const auto& u : uppers) out.push_back({u.labels, u.mbr, u.objects});
    return out;
}

double avg_node_accesses(std::span<const UpperNode> upper, std::size_t m) {
    if (m == 0) throw std::invalid_argument("avg_node_accesses: m must be positive");
    double total = 0.0;
    bool any = false;
    for (const auto& u : upper) {
        if (u.count == 0) continue;
        any = true;
        total += static_cast<double>(u.labels.size()) * static_cast<double>(1 + u.count);
    }
    return any ? total / static_cast<double>(m) : 1.0;
}

std::vector<double> encode_state(std::span<const UpperNode> upper, std::span<const QueryId> next_labels,
                                 std::size_t m, std::size_t n, bool normalize_counts) {
    if (upper.size() != n) throw std::invalid_argument("encode_state: expected one entry per slot");
    std::vector<double> s((m + 1) * n + m, 0.0);
    for (std::size_t slot = 0; slot < n; ++slot) {
        const std::size_t base = slot * (m + 1);
        for (QueryId q : upper[slot].labels) s.at(base + q) = 1.0;
        s[base + m] = normalize_counts ? static_cast<double>(upper[slot].count) / static_cast<double>(n)
                                       : static_cast<double>(upper[slot].count);
    }
    for (QueryId q : next_labels) s.at(n * (m + 1) + q) = 1.0;
    return s;
}

std::vector<std::uint8_t> action_mask(std::span<const UpperNode> upper) {
    std::vector<std::uint8_t> mask(upper.size(), 0);
    bool empty_seen = false;
    for (std::size_t i = 0; i < upper.size(); ++i) {
        if (upper[i].count > 0) {
            mask[i] = 1;
        } else if (!empty_seen) {
            mask[i] = 1;
            empty_seen = true;
        }
    }
    return mask;
}

// ---------------------------------------------------------------------------
// PackingEnv

PackingEnv::PackingEnv(std::vector<std::vector<QueryId>> node_labels, std::size_t m)
    : labels_(std::move(node_labels)), m_(m) {
    for (const auto& l : labels_)
        for (QueryId q : l)
            if (q >= m_) throw std::invalid_argument("PackingEnv: label outside [0, m)");
    reset();
}

void PackingEnv::reset() {
    pos_ = 0;
    upper_.assign(labels_.size(), UpperNode{});
    bits_.assign(labels_.size(), std::vector<std::uint8_t>(m_, 0));
    assign_.assign(labels_.size(), 0);
    total_ = 0.0;
    nonempty_ = 0;
}

double PackingEnv::avg_accesses() const {
    if (nonempty_ == 0) return 1.0;
    return m_ == 0 ? 0.0 : total_ / static_cast<double>(m_);
}

double PackingEnv::step(std::size_t action) {
    if (done()) throw std::logic_error("PackingEnv::step: episode finished");
    if (action >= upper_.size()) throw std::out_of_range("PackingEnv::step: action out of range");
    const double before = avg_accesses();
    UpperNode& u = upper_[action];
    total_ -= static_cast<double>(u.labels.size()) * static_cast<double>(1 + u.count);
    if (u.count == 0) ++nonempty_;
    auto& bits = bits_[action];
    for (QueryId q : labels_[pos_]) {
        if (bits[q]) continue;
        bits[q] = 1;
        u.labels.insert(std::upper_bound(u.labels.begin(), u.labels.end(), q), q);
    }
    u.child_ids.push_back(static_cast<std::uint32_t>(pos_));
    ++u.count;
    total_ += static_cast<double>(u.labels.size()) * static_cast<double>(1 + u.count);
    assign_[pos_] = static_cast<std::uint32_t>(action);
    ++pos_;
    return reward(before, avg_accesses());
}

std::vector<std::uint8_t> PackingEnv::mask() const { return action_mask(upper_); }

void PackingEnv::encode(std::vector<std::uint32_t>& idx, std::vector<double>& val, bool normalize_counts) const {
    idx.clear();
    val.clear();
    const std::size_t n = labels_.size();
    for (std::size_t slot = 0; slot < n; ++slot) {
        const auto& u = upper_[slot];
        if (u.count == 0) continue;
        const std::size_t base = slot * (m_ + 1);
        for (QueryId q : u.labels) {
            idx.push_back(static_cast<std::uint32_t>(base + q));
            val.push_back(1.0);
        }
        idx.push_back(static_cast<std::uint32_t>(base + m_));
        val.push_back(normalize_counts ? static_cast<double>(u.count) / static_cast<double>(n)
                                       : static_cast<double>(u.count));
    }
    if (!done()) {
        for (QueryId q : labels_[pos_]) {
            idx.push_back(static_cast<std::uint32_t>(n * (m_ + 1) + q));
            val.push_back(1.0);
        }
    }
}

// ---------------------------------------------------------------------------
// Replay

void ReplayBuffer::push(Transition t) {
    if (capacity_ == 0) return;
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(std::move(t));
}

std::vector<std::size_t> ReplayBuffer::sample(std::size_t n, std::mt19937_64& rng) const {
    std::vector<std::size_t> all(items_.size());
    std::iota(all.begin(), all.end(), 0);
    if (n >= all.size()) return all;
    std::vector<std::size_t> out(n);
    std::sample(all.begin(), all.end(), out.begin(), n, rng);
    return out;
}

// ---------------------------------------------------------------------------
// Q-network

void soft_update(const Mlp& policy, Mlp& target, double tau) {
    if (policy.widths() != target.widths()) throw std::invalid_argument("soft_update: network shapes differ");
    auto p = policy.params();
    auto t = target.params();
    for (std::size_t i = 0; i < p.size(); ++i) t[i] = tau * p[i] + (1.0 - tau) * t[i];
}

json QNetwork::to_json() const {
    return {{"m", m},
            {"n", n},
            {"normalize_counts", normalize_counts},
            {"policy", policy.to_json()},
            {"target", target.to_json()}};
}

QNetwork QNetwork::from_json(const json& j) {
    QNetwork q;
    q.m = j.at("m").get<std::size_t>();
    q.n = j.at("n").get<std::size_t>();
    q.normalize_counts = j.value("normalize_counts", false);
    q.policy = Mlp::from_json(j.at("policy"));
    q.target = Mlp::from_json(j.at("target"));
    if (q.policy.widths() != q.target.widths()) throw std::runtime_error("QNetwork: policy/target shapes differ");
    return q;
}

std::vector<std::uint32_t> packing_order(std::span<const LevelNode> nodes) {
    std::vector<std::uint32_t> order(nodes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return nodes[a].objects > nodes[b].objects; });
    return order;
}

DenseLabels densify_labels(std::span<const LevelNode> nodes, std::span<const std::uint32_t> order) {
    std::vector<QueryId> ids;
    for (const auto& n : nodes) ids.insert(ids.end(), n.labels.begin(), n.labels.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    DenseLabels out;
    out.m = ids.size();
    for (auto i : order) {
        std::vector<QueryId> dense;
        for (QueryId q : nodes[i].labels)
            dense.push_back(static_cast<QueryId>(std::lower_bound(ids.begin(), ids.end(), q) - ids.begin()));
        out.labels.push_back(std::move(dense));
    }
    return out;
}

namespace {

// Adam that touches only the first-layer rows of nonzero inputs plus every
// later parameter. States are sparse, so most first-layer rows are idle.
class RowSparseAdam {
  public:
    RowSparseAdam(std::size_t params, std::size_t row_width, std::size_t rows, double lr)
        : lr_(lr), row_width_(row_width), dense_begin_(row_width * rows), m_(params, 0.0), v_(params, 0.0) {}

    void step(std::span<double> p, std::span<double> g, std::span<const std::uint32_t> rows) {
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        const double a = lr_ * std::sqrt(c2) / c1;
        const auto upd = [&](std::size_t i) {
            m_[i] = b1_ * m_[i] + (1.0 - b1_) * g[i];
            v_[i] = b2_ * v_[i] + (1.0 - b2_) * g[i] * g[i];
            p[i] -= a * m_[i] / (std::sqrt(v_[i]) + 1e-8);
            g[i] = 0.0;
        };
        for (auto r : rows)
            for (std::size_t j = 0; j < row_width_; ++j) upd(r * row_width_ + j);
        for (std::size_t i = dense_begin_; i < p.size(); ++i) upd(i);
    }

  private:
    double lr_;
    double b1_ = 0.9;
    double b2_ = 0.999;
    std::uint64_t t_ = 0;
    std::size_t row_width_;
    std::size_t dense_begin_;
    std::vector<double> m_;
    std::vector<double> v_;
};

std::size_t masked_argmax(std::span<const double> q, std::span<const std::uint8_t> mask) {
    std::size_t best = q.size();
    for (std::size_t a = 0; a < q.size(); ++a) {
        if (!mask.empty() && !mask[a]) continue;
        if (best == q.size() || q[a] > q[best]) best = a;
    }
    return best;
}

Mlp make_qnet(std::size_t d, std::size_t n, const std::vector<std::size_t>& hidden, std::uint64_t seed) {
    std::vector<std::size_t> widths{d};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(n);
    Mlp net(widths, OutputActivation::Identity, seed);
    // Zero output layer: Q starts at 0, so early targets are the rewards themselves.
    const std::size_t last = widths[widths.size() - 2] * n + n;
    auto p = net.params();
    std::fill(p.end() - static_cast<std::ptrdiff_t>(last), p.end(), 0.0);
    return net;
}

// Greedy masked rollout from a reset env; leaves the env in its final state.
double greedy_rollout(PackingEnv& env, const Mlp& net, bool normalize_counts, Mlp::Workspace& ws) {
    env.reset();
    double reward_sum = 0.0;
    SparseState s;
    while (!env.done()) {
        std::size_t action = 0;
        if (env.num_nodes() > 1) {
            env.encode(s.idx, s.val, normalize_counts);
            action = masked_argmax(net.forward_sparse(s.idx, s.val, ws), env.mask());
        }
        reward_sum += env.step(action);
    }
    return reward_sum;
}

}  // namespace

QNetwork train_dqn(std::span<const LevelNode> nodes, const RlConfig& cfg, std::uint64_t seed,
                   std::vector<EpochMetrics>* metrics) {
    if (nodes.size() < 2) throw std::invalid_argument("train_dqn: needs at least two nodes");
    if (!(cfg.gamma > 0.0 && cfg.gamma < 1.0)) throw std::invalid_argument("train_dqn: gamma must be in (0, 1)");
    const auto order = packing_order(nodes);
    const auto dense = densify_labels(nodes, order);
    const std::size_t n = nodes.size();
    PackingEnv env(dense.labels, dense.m);
    const std::size_t d = env.state_size();

    QNetwork q;
    q.m = dense.m;
    q.n = n;
    q.normalize_counts = cfg.normalize_counts;
    q.policy = make_qnet(d, n, cfg.hidden, seed);
    q.target = q.policy;
    const std::size_t h1 = q.policy.widths()[1];
    RowSparseAdam opt(q.policy.num_params(), h1, d, cfg.learning_rate);
    std::vector<double> grad(q.policy.num_params(), 0.0);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    ReplayBuffer replay(cfg.replay_capacity);
    Mlp::Workspace ws;
    Mlp::Workspace ws_target;
    std::vector<double> qv(n);
    std::vector<std::uint32_t> rows;
    std::vector<std::uint8_t> row_seen(d, 0);

    const std::size_t epochs = std::max(cfg.epochs, (cfg.min_total_steps + n - 1) / n);
    double epsilon = cfg.epsilon_start;
    Mlp best = q.policy;
    double best_accesses = std::numeric_limits<double>::infinity();
    std::size_t steps = 0;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        env.reset();
        replay.clear();
        double loss_sum = 0.0;
        double reward_sum = 0.0;
        std::size_t grad_steps = 0;
        SparseState state;
        env.encode(state.idx, state.val, cfg.normalize_counts);
        while (!env.done()) {
            const auto mask = cfg.use_mask ? env.mask() : std::vector<std::uint8_t>(n, 1);
            std::size_t action;
            if (unit(rng) < epsilon) {
                std::vector<std::size_t> allowed;
                for (std::size_t a = 0; a < n; ++a)
                    if (mask[a]) allowed.push_back(a);
                action = allowed[std::uniform_int_distribution<std::size_t>(0, allowed.size() - 1)(rng)];
            } else {
                const auto out = q.policy.forward_sparse(state.idx, state.val, ws);
                action = masked_argmax(out, mask);
            }
            const double r = env.step(action);
            reward_sum += r;
            Transition t;
            t.state = std::move(state);
            t.action = static_cast<std::uint32_t>(action);
            t.reward = r;
            t.terminal = env.done();
            env.encode(t.next_state.idx, t.next_state.val, cfg.normalize_counts);
            t.next_mask = cfg.use_mask ? env.mask() : std::vector<std::uint8_t>(n, 1);
            state = t.next_state;
            replay.push(std::move(t));

            // One gradient step on a sampled batch.
            const auto batch = replay.sample(cfg.batch_size, rng);
            double loss = 0.0;
            rows.clear();
            for (auto bi : batch) {
                const Transition& tr = replay[bi];
                double y = tr.reward;
                if (!tr.terminal) {
                    const auto tq = q.target.forward_sparse(tr.next_state.idx, tr.next_state.val, ws_target);
                    y += cfg.gamma * tq[masked_argmax(tq, tr.next_mask)];
                }
                const auto out = q.policy.forward_sparse(tr.state.idx, tr.state.val, ws);
                const double diff = out[tr.action] - y;
                std::fill(qv.begin(), qv.end(), 0.0);
                if (cfg.loss == TdLoss::SmoothL1) {
                    const double ad = std::abs(diff);
                    loss += ad < 1.0 ? 0.5 * diff * diff : ad - 0.5;
                    qv[tr.action] = std::clamp(diff, -1.0, 1.0);
                } else {
                    loss += diff * diff;
                    qv[tr.action] = 2.0 * diff;
                }
                q.policy.backward(qv, ws, grad);
                for (auto i : tr.state.idx)
                    if (!row_seen[i]) {
                        row_seen[i] = 1;
                        rows.push_back(i);
                    }
            }
            if (!std::isfinite(loss)) {
                std::ostringstream msg;
                msg << "train_dqn: non-finite loss at epoch " << epoch << ", step " << steps
                    << " (learning rate " << cfg.learning_rate << ")";
                throw std::runtime_error(msg.str());
            }
            opt.step(q.policy.params(), grad, rows);
            for (auto i : rows) row_seen[i] = 0;
            loss_sum += loss;
            ++grad_steps;

            ++steps;
            if (cfg.sync_period > 0 && steps % cfg.sync_period == 0) soft_update(q.policy, q.target, cfg.tau);
            epsilon = std::max(cfg.epsilon_floor, epsilon * cfg.epsilon_decay);
        }
        const double explored = env.avg_accesses();
        greedy_rollout(env, q.policy, cfg.normalize_counts, ws);
        const double greedy = env.avg_accesses();
        if (greedy < best_accesses) {
            best_accesses = greedy;
            best = q.policy;
        }
        if (metrics)
            metrics->push_back({epoch, grad_steps ? loss_sum / static_cast<double>(grad_steps) : 0.0, reward_sum,
                                explored, epsilon, greedy});
    }
    if (cfg.keep_best) q.policy = std::move(best);
    return q;
}

PackResult pack_level(std::span<const LevelNode> nodes, const QNetwork& policy) {
    PackResult res;
    if (nodes.empty()) return res;
    const auto order = packing_order(nodes);
    const auto dense = densify_labels(nodes, order);
    PackingEnv env(dense.labels, dense.m);
    if (nodes.size() > 1 && (policy.n != nodes.size() || policy.m != dense.m))
        throw std::invalid_argument("pack_level: policy was trained for a different level shape");

    Mlp::Workspace ws;
    res.reward_sum = greedy_rollout(env, policy.policy, policy.normalize_counts, ws);
    res.final_accesses = env.avg_accesses();
    res.slots = env.assignment();
    for (const auto& slot : env.upper()) {
        if (slot.count == 0) continue;
        UpperNode u;
        for (auto arrival : slot.child_ids) {
            const auto pos = order[arrival];
            u.child_ids.push_back(pos);
            u.labels.insert(u.labels.end(), nodes[pos].labels.begin(), nodes[pos].labels.end());
            u.mbr.expand(nodes[pos].mbr);
            u.objects += nodes[pos].objects;
        }
        normalize(u.labels);
        u.count = u.child_ids.size();
        res.upper.push_back(std::move(u));
    }
    return res;
}

// ---------------------------------------------------------------------------
// Grouping

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<std::uint32_t> kmeans(const RowMatrix& pts, std::size_t k, std::uint64_t seed, std::size_t restarts = 5) {
    const auto n = static_cast<std::size_t>(pts.rows());
    std::mt19937_64 rng(seed);
    std::vector<std::uint32_t> best_assign(n, 0);
    double best_inertia = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < restarts; ++r) {
        // k-means++ seeding
        RowMatrix centers(static_cast<Eigen::Index>(k), pts.cols());
        std::vector<double> d2(n, std::numeric_limits<double>::infinity());
        std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
        centers.row(0) = pts.row(static_cast<Eigen::Index>(first));
        for (std::size_t c = 1; c < k; ++c) {
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                d2[i] = std::min(d2[i], (pts.row(static_cast<Eigen::Index>(i)) - centers.row(static_cast<Eigen::Index>(c - 1))).squaredNorm());
                sum += d2[i];
            }
            std::size_t pick = 0;
            if (sum > 0.0) {
                double u = std::uniform_real_distribution<double>(0.0, sum)(rng);
                for (pick = 0; pick + 1 < n; ++pick) {
                    u -= d2[pick];
                    if (u <= 0.0) break;
                }
            } else {
                pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
            }
            centers.row(static_cast<Eigen::Index>(c)) = pts.row(static_cast<Eigen::Index>(pick));
        }

        std::vector<std::uint32_t> assign(n, 0);
        double inertia = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            bool changed = false;
            inertia = 0.0;
            std::vector<double> dist(n);
            for (std::size_t i = 0; i < n; ++i) {
                double bd = std::numeric_limits<double>::infinity();
                std::uint32_t bc = 0;
                for (std::size_t c = 0; c < k; ++c) {
                    const double dd = (pts.row(static_cast<Eigen::Index>(i)) - centers.row(static_cast<Eigen::Index>(c))).squaredNorm();
                    if (dd < bd) {
                        bd = dd;
                        bc = static_cast<std::uint32_t>(c);
                    }
                }
                if (iter == 0 || assign[i] != bc) changed = true;
                assign[i] = bc;
                dist[i] = bd;
                inertia += bd;
            }
            // Refill empty clusters with the points farthest from their centers.
            std::vector<std::size_t> sizes(k, 0);
            for (auto a : assign) ++sizes[a];
            for (std::size_t c = 0; c < k; ++c) {
                if (sizes[c] > 0) continue;
                std::size_t far = 0;
                for (std::size_t i = 1; i < n; ++i)
                    if (sizes[assign[i]] > 1 && (sizes[assign[far]] <= 1 || dist[i] > dist[far])) far = i;
                --sizes[assign[far]];
                assign[far] = static_cast<std::uint32_t>(c);
                ++sizes[c];
                dist[far] = 0.0;
                changed = true;
            }
            centers.setZero();
            for (std::size_t i = 0; i < n; ++i) centers.row(assign[i]) += pts.row(static_cast<Eigen::Index>(i));
            for (std::size_t c = 0; c < k; ++c) centers.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(sizes[c]);
            if (!changed) break;
        }
        if (inertia < best_inertia) {
            best_inertia = inertia;
            best_assign = assign;
        }
    }
    return best_assign;
}

}  // namespace

std::vector<std::vector<std::uint32_t>> group_clusters(std::span<const Rect> mbrs, double ratio, bool spectral,
                                                       std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("group_clusters: ratio must be in (0, 1]");
    const std::size_t n = mbrs.size();
    std::vector<std::vector<std::uint32_t>> groups;
    if (n == 0) return groups;
    const std::size_t k =
        std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n))), 1, n);
    if (k == n) {
        for (std::uint32_t i = 0; i < n; ++i) groups.push_back({i});
        return groups;
    }
    if (k == 1) {
        groups.emplace_back(n);
        std::iota(groups[0].begin(), groups[0].end(), 0);
        return groups;
    }

    RowMatrix feat(static_cast<Eigen::Index>(n), 4);
    for (std::size_t i = 0; i < n; ++i) feat.row(static_cast<Eigen::Index>(i)) << mbrs[i].xb, mbrs[i].yb, mbrs[i].xu, mbrs[i].yu;
    for (Eigen::Index c = 0; c < 4; ++c) {
        const double mean = feat.col(c).mean();
        const double sd = std::sqrt((feat.col(c).array() - mean).square().mean());
        feat.col(c) = (feat.col(c).array() - mean) / (sd > 0.0 ? sd : 1.0);
    }

    RowMatrix points = feat;
    if (spectral) {
        // Self-tuning Gaussian affinities on a symmetric kNN graph.
        const std::size_t knn = std::min<std::size_t>(n - 1, 10);
        RowMatrix dist(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    (feat.row(static_cast<Eigen::Index>(i)) - feat.row(static_cast<Eigen::Index>(j))).norm();
        std::vector<double> sigma(n);
        std::vector<std::vector<std::size_t>> nbrs(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<std::size_t> idx;
            for (std::size_t j = 0; j < n; ++j)
                if (j != i) idx.push_back(j);
            const auto di = [&](std::size_t j) { return dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)); };
            std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(knn), idx.end(),
                              [&](std::size_t a, std::size_t b) { return std::pair(di(a), a) < std::pair(di(b), b); });
            nbrs[i].assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(knn));
            sigma[i] = std::max(dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(nbrs[i].back())), 1e-9);
        }
        Eigen::MatrixXd w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i)
            for (auto j : nbrs[i]) {
                const double dd = dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                const double a = std::exp(-dd * dd / (sigma[i] * sigma[j]));
                const auto ii = static_cast<Eigen::Index>(i);
                const auto jj = static_cast<Eigen::Index>(j);
                w(ii, jj) = std::max(w(ii, jj), a);
                w(jj, ii) = w(ii, jj);
            }
        Eigen::VectorXd dinv = w.rowwise().sum().array().max(1e-12).rsqrt();
        Eigen::MatrixXd lap = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)) -
                              dinv.asDiagonal() * w * dinv.asDiagonal();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(lap);
        if (eig.info() == Eigen::Success) {
            points = eig.eigenvectors().leftCols(static_cast<Eigen::Index>(k));
            for (Eigen::Index i = 0; i < points.rows(); ++i) {
                const double norm = points.row(i).norm();
                if (norm > 0.0) points.row(i) /= norm;
            }
        }
    }

    const auto assign = kmeans(points, k, seed);
    std::vector<std::vector<std::uint32_t>> by_label(k);
    for (std::uint32_t i = 0; i < n; ++i) by_label[assign[i]].push_back(i);
    for (auto& g : by_label)
        if (!g.empty()) groups.push_back(std::move(g));
    std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
    return groups;
}

// ---------------------------------------------------------------------------
// Hierarchy

Hierarchy build_hierarchy(std::span<const BottomCluster> clusters, const PackerConfig& cfg) {
    Hierarchy h;
    if (clusters.size() <= 1) return h;
    auto nodes = level_nodes(clusters);

    if (cfg.clustering_ratio < 1.0) {
        std::vector<Rect> mbrs;
        for (const auto& c : clusters) mbrs.push_back(c.mbr);
        const auto groups = group_clusters(mbrs, cfg.clustering_ratio, cfg.spectral, cfg.seed);
        if (groups.size() < nodes.size()) {
            Level level;
            for (const auto& g : groups) {
                UpperNode u;
                for (auto i : g) {
                    u.child_ids.push_back(i);
                    u.labels.insert(u.labels.end(), nodes[i].labels.begin(), nodes[i].labels.end());
                    u.mbr.expand(nodes[i].mbr);
                    u.objects += nodes[i].objects;
                }
                normalize(u.labels);
                u.count = u.child_ids.size();
                level.push_back(std::move(u));
            }
            LevelReport rep;
            rep.nodes_in = nodes.size();
            rep.nodes_out = level.size();
            rep.kept = true;
            rep.grouping = true;
            h.reports.push_back(std::move(rep));
            nodes = level_nodes(level);
            h.levels.push_back(std::move(level));
        }
    }

    while (nodes.size() > 1) {
        const std::size_t n = nodes.size();
        LevelReport rep;
        rep.nodes_in = n;
        const auto net = train_dqn(nodes, cfg.rl, cfg.seed + 7919ULL * (h.levels.size() + 1), &rep.metrics);
        auto res = pack_level(nodes, net);
        rep.nodes_out = res.upper.size();
        rep.reward_sum = res.reward_sum;
        rep.kept = res.reward_sum > -static_cast<double>(n) && res.upper.size() < n;
        h.reports.push_back(std::move(rep));
        if (!h.reports.back().kept) break;
        nodes = level_nodes(res.upper);
        h.levels.push_back(std::move(res.upper));
    }
    return h;
}

std::string metrics_csv(std::span<const LevelReport> reports) {
    std::ostringstream out;
    out << "level,grouping,kept,nodes_in,nodes_out,epoch,loss,reward,final_accesses,epsilon,greedy_accesses\n";
    for (std::size_t l = 0; l < reports.size(); ++l) {
        const auto& r = reports[l];
        if (r.metrics.empty()) {
            out << l << ',' << r.grouping << ',' << r.kept << ',' << r.nodes_in << ',' << r.nodes_out << ",,,,,,\n";
            continue;
        }
        for (const auto& m : r.metrics)
            out << l << ',' << r.grouping << ',' << r.kept << ',' << r.nodes_in << ',' << r.nodes_out << ',' << m.epoch
                << ',' << m.loss << ',' << m.reward << ',' << m.final_accesses << ',' << m.epsilon << ','
                << m.greedy_accesses << '\n';
    }
    return out.str();
}

}  // namespace wisk
