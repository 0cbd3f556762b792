#include "wisk/index.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <deque>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include <nlohmann/json.hpp>

namespace wisk {

// ---------------------------------------------------------------------------
// KeywordBitmap

void KeywordBitmap::set(KeywordId k) {
    const std::size_t w = k / 64;
    if (w >= words_.size()) words_.resize(w + 1, 0);
    words_[w] |= 1ULL << (k % 64);
}

bool KeywordBitmap::test(KeywordId k) const {
    const std::size_t w = k / 64;
    return w < words_.size() && ((words_[w] >> (k % 64)) & 1ULL);
}

bool KeywordBitmap::any_of(std::span<const KeywordId> keys) const {
    return std::any_of(keys.begin(), keys.end(), [&](KeywordId k) { return test(k); });
}

void KeywordBitmap::merge(const KeywordBitmap& o) {
    if (o.words_.size() > words_.size()) words_.resize(o.words_.size(), 0);
    for (std::size_t i = 0; i < o.words_.size(); ++i) words_[i] |= o.words_[i];
}

std::vector<KeywordId> KeywordBitmap::keywords() const {
    std::vector<KeywordId> out;
    for (std::size_t w = 0; w < words_.size(); ++w)
        for (std::uint64_t bits = words_[w]; bits; bits &= bits - 1)
            out.push_back(static_cast<KeywordId>(w * 64 + static_cast<std::size_t>(std::countr_zero(bits))));
    return out;
}

bool KeywordBitmap::operator==(const KeywordBitmap& o) const {
    const std::size_t n = std::max(words_.size(), o.words_.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto a = i < words_.size() ? words_[i] : 0;
        const auto b = i < o.words_.size() ? o.words_[i] : 0;
        if (a != b) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Construction

std::uint32_t WiskIndex::add_leaf(std::span<const std::uint32_t> members) {
    Node n;
    n.leaf = true;
    n.members.assign(members.begin(), members.end());
    nodes_.push_back(std::move(n));
    const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
    refresh_leaf(id);
    return id;
}

void WiskIndex::refresh_leaf(std::uint32_t leaf) {
    Node& n = nodes_[leaf];
    std::sort(n.members.begin(), n.members.end());
    n.mbr = Rect::empty();
    n.postings.clear();
    n.bitmap.clear();
    for (auto p : n.members) {
        const auto& o = objects_[p];
        n.mbr.expand(o.loc);
        for (KeywordId k : o.kws) {
            n.postings[k].push_back(p);
            n.bitmap.set(k);
        }
    }
}

void WiskIndex::recompute_internal(std::uint32_t node) {
    Node& n = nodes_[node];
    n.mbr = Rect::empty();
    n.bitmap.clear();
    for (auto c : n.children) {
        n.mbr.expand(nodes_[c].mbr);
        n.bitmap.merge(nodes_[c].bitmap);
    }
}

void WiskIndex::refresh_upwards(std::int32_t node) {
    for (; node >= 0; node = nodes_[static_cast<std::size_t>(node)].parent)
        recompute_internal(static_cast<std::uint32_t>(node));
}

WiskIndex assemble_index(std::span<const BottomCluster> clusters, std::span<const Level> levels, const Dataset& ds,
                         const IndexConfig& cfg) {
    if (clusters.empty()) throw std::invalid_argument("assemble_index: no clusters");
    WiskIndex idx;
    idx.cfg_ = cfg;
    idx.dict_hash_ = ds.dict().hash();
    idx.objects_ = ds.objects();
    for (std::size_t i = 0; i < idx.objects_.size(); ++i)
        idx.pos_.emplace(idx.objects_[i].id, static_cast<std::uint32_t>(i));

    std::vector<std::uint32_t> below;
    for (const auto& c : clusters) {
        std::vector<std::uint32_t> members;
        members.reserve(c.object_ids.size());
        for (ObjectId id : c.object_ids) {
            auto it = idx.pos_.find(id);
            if (it == idx.pos_.end())
                throw std::invalid_argument("assemble_index: cluster references unknown object " + std::to_string(id));
            members.push_back(it->second);
        }
        below.push_back(idx.add_leaf(members));
    }

    for (std::size_t l = 0; l < levels.size(); ++l) {
        std::vector<std::uint8_t> used(below.size(), 0);
        std::vector<std::uint32_t> current;
        for (const auto& u : levels[l]) {
            WiskIndex::Node n;
            for (auto c : u.child_ids) {
                if (c >= below.size() || used[c])
                    throw std::invalid_argument("assemble_index: level " + std::to_string(l) +
                                                " has an invalid or repeated child reference " + std::to_string(c));
                used[c] = 1;
                n.children.push_back(below[c]);
            }
            if (n.children.empty()) throw std::invalid_argument("assemble_index: empty upper node");
            idx.nodes_.push_back(std::move(n));
            const auto id = static_cast<std::uint32_t>(idx.nodes_.size() - 1);
            for (auto c : idx.nodes_[id].children) idx.nodes_[c].parent = static_cast<std::int32_t>(id);
            idx.recompute_internal(id);
            current.push_back(id);
        }
        if (std::find(used.begin(), used.end(), 0) != used.end())
            throw std::invalid_argument("assemble_index: level " + std::to_string(l) + " leaves nodes unreferenced");
        below = std::move(current);
    }

    if (below.size() == 1) {
        idx.root_ = below.front();
    } else {
        WiskIndex::Node root;
        root.children = below;
        idx.nodes_.push_back(std::move(root));
        idx.root_ = static_cast<std::uint32_t>(idx.nodes_.size() - 1);
        for (auto c : below) idx.nodes_[c].parent = static_cast<std::int32_t>(idx.root_);
        idx.recompute_internal(idx.root_);
    }
    return idx;
}

std::size_t WiskIndex::height() const {
    std::size_t best = 0;
    std::vector<std::pair<std::uint32_t, std::size_t>> stack{{root_, 1}};
    while (!stack.empty()) {
        auto [n, d] = stack.back();
        stack.pop_back();
        best = std::max(best, d);
        for (auto c : nodes_[n].children) stack.emplace_back(c, d + 1);
    }
    return best;
}

std::size_t WiskIndex::num_leaves() const {
    return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.leaf; }));
}

// ---------------------------------------------------------------------------
// Queries

QueryResult WiskIndex::query_range(const Query& q) const {
    QueryResult res;
    auto& st = res.stats;
    const auto passes = [&](const Node& n) { return n.mbr.intersects(q.area) && node_matches(n, q.keys); };
    ++st.nodes_accessed;
    if (!passes(nodes_[root_])) return res;

    std::deque<std::uint32_t> bfs{root_};
    while (!bfs.empty()) {
        const Node& n = nodes_[bfs.front()];
        bfs.pop_front();
        if (n.leaf) {
            for (KeywordId k : q.keys) {
                auto it = n.postings.find(k);
                if (it == n.postings.end()) continue;
                for (auto p : it->second) {
                    ++st.objects_checked;
                    if (q.area.contains(objects_[p].loc)) res.ids.push_back(objects_[p].id);
                }
            }
            continue;
        }
        for (auto c : n.children) {
            ++st.nodes_accessed;
            if (passes(nodes_[c])) bfs.push_back(c);
        }
    }
    std::sort(res.ids.begin(), res.ids.end());
    res.ids.erase(std::unique(res.ids.begin(), res.ids.end()), res.ids.end());
    st.results = res.ids.size();
    return res;
}

std::vector<Neighbor> WiskIndex::query_bknn(const GeoPoint& center, std::span<const KeywordId> keys,
                                            std::size_t k) const {
    if (k == 0) throw std::invalid_argument("query_bknn: k must be >= 1");
    std::vector<Neighbor> out;
    // (distance, 0 = node / 1 = object, id)
    using Item = std::tuple<double, int, std::uint32_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    if (!node_matches(nodes_[root_], keys)) return out;
    pq.emplace(nodes_[root_].mbr.min_distance(center), 0, root_);
    std::vector<std::uint32_t> cand;
    while (!pq.empty() && out.size() < k) {
        const auto [d, kind, id] = pq.top();
        pq.pop();
        if (kind == 1) {
            out.push_back({id, d});
            continue;
        }
        const Node& n = nodes_[id];
        if (n.leaf) {
            cand.clear();
            for (KeywordId key : keys) {
                auto it = n.postings.find(key);
                if (it != n.postings.end()) cand.insert(cand.end(), it->second.begin(), it->second.end());
            }
            std::sort(cand.begin(), cand.end());
            cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
            for (auto p : cand) pq.emplace(distance(center, objects_[p].loc), 1, objects_[p].id);
            continue;
        }
        for (auto c : n.children)
            if (node_matches(nodes_[c], keys)) pq.emplace(nodes_[c].mbr.min_distance(center), 0, c);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Updates

void WiskIndex::insert_object(const GeoObject& o) {
    if (pos_.contains(o.id)) throw std::invalid_argument("insert_object: duplicate object id " + std::to_string(o.id));
    if (o.kws.empty()) throw std::invalid_argument("insert_object: object has no keywords");
    if (!std::isfinite(o.loc.x) || !std::isfinite(o.loc.y))
        throw std::invalid_argument("insert_object: non-finite location");
    GeoObject obj = o;
    normalize(obj.kws);
    const auto p = static_cast<std::uint32_t>(objects_.size());

    // Smallest containing leaf, else the nearest one.
    std::int64_t best = -1;
    double best_area = 0.0;
    std::vector<std::uint32_t> stack{root_};
    while (!stack.empty()) {
        const auto n = stack.back();
        stack.pop_back();
        if (!nodes_[n].mbr.contains(obj.loc)) continue;
        if (nodes_[n].leaf) {
            const double a = nodes_[n].mbr.area();
            if (best < 0 || a < best_area || (a == best_area && n < best)) {
                best = n;
                best_area = a;
            }
            continue;
        }
        for (auto c : nodes_[n].children) stack.push_back(c);
    }
    if (best < 0) {
        double best_d = 0.0;
        for (std::uint32_t n = 0; n < nodes_.size(); ++n) {
            if (!nodes_[n].leaf) continue;
            const double d = nodes_[n].mbr.min_distance(obj.loc);
            if (best < 0 || d < best_d) {
                best = n;
                best_d = d;
            }
        }
    }
    const auto leaf = static_cast<std::uint32_t>(best);

    objects_.push_back(std::move(obj));
    pos_.emplace(o.id, p);
    const GeoObject& stored = objects_.back();
    Node& ln = nodes_[leaf];
    ln.members.push_back(p);
    ln.mbr.expand(stored.loc);
    for (KeywordId k : stored.kws) {
        ln.postings[k].push_back(p);
        ln.bitmap.set(k);
    }
    for (auto a = ln.parent; a >= 0; a = nodes_[static_cast<std::size_t>(a)].parent) {
        Node& an = nodes_[static_cast<std::size_t>(a)];
        an.mbr.expand(stored.loc);
        for (KeywordId k : stored.kws) an.bitmap.set(k);
    }

    buffer_.push_back(o.id);
    buffer_leaves_.push_back(leaf);
    if (buffer_.size() >= std::max<std::size_t>(cfg_.buffer_capacity, 1)) {
        retrain_affected();
        buffer_.clear();
        buffer_leaves_.clear();
    }
}

std::size_t WiskIndex::retrain_affected(const std::optional<Workload>& new_queries) {
    ++retrains_;
    std::vector<std::uint32_t> affected;
    if (new_queries) {
        QueryId next_id = 0;
        for (const auto& q : workload_.queries) next_id = std::max<QueryId>(next_id, q.id + 1);
        for (auto q : new_queries->queries) {
            for (std::uint32_t n = 0; n < nodes_.size(); ++n)
                if (nodes_[n].leaf && nodes_[n].mbr.intersects(q.area) && nodes_[n].bitmap.any_of(q.keys))
                    affected.push_back(n);
            q.id = next_id++;
            workload_.queries.push_back(std::move(q));
        }
    } else {
        affected = buffer_leaves_;
    }
    std::sort(affected.begin(), affected.end());
    affected.erase(std::unique(affected.begin(), affected.end()), affected.end());
    if (affected.empty() || workload_.empty()) return 0;

    const auto est = factory_ ? factory_(objects_) : std::make_shared<ExactCountEstimator>(objects_);
    std::size_t splits = 0;
    for (auto leaf : affected) {
        const auto members = nodes_[leaf].members;
        const auto clusters = generate_bottom_clusters(objects_, members, nodes_[leaf].mbr, workload_, *est, cfg_.cw,
                                                       cfg_.limits, cfg_.sgd);
        if (clusters.size() <= 1) continue;
        ++splits;
        std::vector<std::uint32_t> leaves;
        for (std::size_t i = 0; i < clusters.size(); ++i) {
            std::vector<std::uint32_t> pos;
            for (ObjectId id : clusters[i].object_ids) pos.push_back(pos_.at(id));
            if (i == 0) {
                nodes_[leaf].members = std::move(pos);
                refresh_leaf(leaf);
                leaves.push_back(leaf);
            } else {
                leaves.push_back(add_leaf(pos));
            }
        }
        std::int32_t parent = nodes_[leaf].parent;
        if (parent < 0) {
            Node root;
            nodes_.push_back(std::move(root));
            root_ = static_cast<std::uint32_t>(nodes_.size() - 1);
            nodes_[root_].children.push_back(leaf);
            nodes_[leaf].parent = static_cast<std::int32_t>(root_);
            parent = static_cast<std::int32_t>(root_);
        }
        for (std::size_t i = 1; i < leaves.size(); ++i) {
            nodes_[static_cast<std::size_t>(parent)].children.push_back(leaves[i]);
            nodes_[leaves[i]].parent = parent;
        }
        refresh_upwards(parent);
    }
    return splits;
}

// ---------------------------------------------------------------------------
// Inspection

std::vector<std::uint32_t> WiskIndex::preorder() const {
    std::vector<std::uint32_t> out;
    std::vector<std::uint32_t> stack{root_};
    while (!stack.empty()) {
        const auto n = stack.back();
        stack.pop_back();
        out.push_back(n);
        const auto& ch = nodes_[n].children;
        for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
    }
    return out;
}

std::uint64_t WiskIndex::structural_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    const auto mix = [&](const void* data, std::size_t len) {
        const auto* b = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    };
    const auto mix64 = [&](std::uint64_t v) { mix(&v, sizeof v); };
    for (auto id : preorder()) {
        const Node& n = nodes_[id];
        mix64(n.leaf);
        for (double v : {n.mbr.xb, n.mbr.yb, n.mbr.xu, n.mbr.yu}) mix64(std::bit_cast<std::uint64_t>(v));
        mix64(n.children.size());
        for (auto k : n.bitmap.keywords()) mix64(k);
        if (n.leaf) {
            std::vector<ObjectId> ids;
            for (auto p : n.members) ids.push_back(objects_[p].id);
            std::sort(ids.begin(), ids.end());
            mix64(ids.size());
            for (auto i : ids) mix64(i);
        }
    }
    return h;
}

std::vector<std::vector<ObjectId>> WiskIndex::leaf_partition() const {
    std::vector<std::vector<ObjectId>> out;
    for (auto id : preorder()) {
        if (!nodes_[id].leaf) continue;
        std::vector<ObjectId> ids;
        for (auto p : nodes_[id].members) ids.push_back(objects_[p].id);
        std::sort(ids.begin(), ids.end());
        out.push_back(std::move(ids));
    }
    return out;
}

std::vector<std::string> WiskIndex::check_invariants() const {
    std::vector<std::string> errs;
    std::vector<std::uint32_t> seen(objects_.size(), 0);
    const auto order = preorder();
    if (order.size() != nodes_.size()) errs.push_back("unreachable nodes in the arena");
    for (auto id : order) {
        const Node& n = nodes_[id];
        KeywordBitmap expect;
        if (n.leaf) {
            std::map<KeywordId, std::vector<std::uint32_t>> postings;
            for (auto p : n.members) {
                ++seen.at(p);
                if (!n.mbr.contains(objects_[p].loc)) errs.push_back("leaf " + std::to_string(id) + " MBR misses an object");
                for (KeywordId k : objects_[p].kws) {
                    expect.set(k);
                    postings[k].push_back(p);
                }
            }
            for (auto& [k, v] : postings) std::sort(v.begin(), v.end());
            auto actual = n.postings;
            for (auto& [k, v] : actual) std::sort(v.begin(), v.end());
            if (actual != postings) errs.push_back("leaf " + std::to_string(id) + " inverted file mismatch");
        } else {
            if (n.children.empty()) errs.push_back("internal node " + std::to_string(id) + " has no children");
            for (auto c : n.children) {
                if (nodes_[c].parent != static_cast<std::int32_t>(id))
                    errs.push_back("node " + std::to_string(c) + " has a stale parent link");
                if (!n.mbr.contains(nodes_[c].mbr))
                    errs.push_back("node " + std::to_string(id) + " MBR does not cover child " + std::to_string(c));
                expect.merge(nodes_[c].bitmap);
            }
        }
        if (!(expect == n.bitmap)) errs.push_back("node " + std::to_string(id) + " bitmap mismatch");
    }
    for (std::size_t p = 0; p < seen.size(); ++p)
        if (seen[p] != 1)
            errs.push_back("object " + std::to_string(objects_[p].id) + " is in " + std::to_string(seen[p]) + " leaves");
    if (buffer_.size() > std::max<std::size_t>(cfg_.buffer_capacity, 1)) errs.push_back("insert buffer over capacity");
    return errs;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr char kMagic[8] = {'W', 'I', 'S', 'K', 'I', 'D', 'X', '\0'};

class Writer {
  public:
    template <typename T>
    void put(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        const auto* b = reinterpret_cast<const char*>(&v);
        buf_.append(b, sizeof(T));
    }
    void raw(const char* p, std::size_t n) { buf_.append(p, n); }
    std::string& str() { return buf_; }

  private:
    std::string buf_;
};

class Reader {
  public:
    explicit Reader(const std::string& s) : s_(s) {}
    template <typename T>
    T get() {
        if (pos_ + sizeof(T) > s_.size()) throw IndexLoadError("index file is truncated");
        T v;
        std::memcpy(&v, s_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    void raw(char* p, std::size_t n) {
        if (pos_ + n > s_.size()) throw IndexLoadError("index file is truncated");
        std::memcpy(p, s_.data() + pos_, n);
        pos_ += n;
    }
    // Bounds a count read from the file by the bytes left.
    std::uint64_t count(std::size_t min_item_bytes) {
        const auto n = get<std::uint64_t>();
        if (min_item_bytes > 0 && n > (s_.size() - pos_) / min_item_bytes) throw IndexLoadError("index file is corrupt");
        return n;
    }
    bool at_end() const { return pos_ == s_.size(); }

  private:
    const std::string& s_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string WiskIndex::serialize_bytes() const {
    Writer w;
    w.raw(kMagic, sizeof kMagic);
    w.put<std::uint32_t>(kFormatVersion);
    w.put<std::uint64_t>(objects_.size());
    w.put<std::uint64_t>(dict_hash_);

    w.put<std::uint64_t>(cfg_.buffer_capacity);
    w.put<double>(cfg_.cw.w1);
    w.put<double>(cfg_.cw.w2);
    w.put<std::uint64_t>(cfg_.limits.min_queries);
    w.put<std::uint64_t>(cfg_.limits.min_objects);
    w.put<std::uint64_t>(cfg_.sgd.restarts);
    w.put<std::uint64_t>(cfg_.sgd.stages);
    w.put<std::uint64_t>(cfg_.sgd.steps_per_stage);
    w.put<double>(cfg_.sgd.sharpness_start);
    w.put<double>(cfg_.sgd.sharpness_end);
    w.put<double>(cfg_.sgd.learning_rate);
    w.put<std::uint64_t>(cfg_.sgd.batch_size);
    w.put<double>(cfg_.sgd.beta);
    w.put<std::uint64_t>(cfg_.sgd.seed);
    w.put<std::uint64_t>(retrains_);

    for (const auto& o : objects_) {
        w.put<std::uint32_t>(o.id);
        w.put<double>(o.loc.x);
        w.put<double>(o.loc.y);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(o.kws.size()));
        for (auto k : o.kws) w.put<std::uint32_t>(k);
    }

    w.put<std::uint64_t>(workload_.size());
    for (const auto& q : workload_.queries) {
        w.put<std::uint32_t>(q.id);
        for (double v : {q.area.xb, q.area.yb, q.area.xu, q.area.yu}) w.put<double>(v);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(q.dist));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(q.keys.size()));
        for (auto k : q.keys) w.put<std::uint32_t>(k);
    }

    const auto order = preorder();
    w.put<std::uint64_t>(order.size());
    for (auto id : order) {
        const Node& n = nodes_[id];
        w.put<std::uint8_t>(n.leaf ? 1 : 0);
        for (double v : {n.mbr.xb, n.mbr.yb, n.mbr.xu, n.mbr.yu}) w.put<double>(v);
        if (n.leaf) {
            w.put<std::uint32_t>(static_cast<std::uint32_t>(n.members.size()));
            for (auto p : n.members) w.put<std::uint32_t>(p);
        } else {
            w.put<std::uint32_t>(static_cast<std::uint32_t>(n.children.size()));
        }
    }

    w.put<std::uint64_t>(buffer_.size());
    for (auto id : buffer_) w.put<std::uint32_t>(id);
    for (auto l : buffer_leaves_) w.put<std::uint32_t>(l);
    return std::move(w.str());
}

WiskIndex WiskIndex::deserialize_bytes(const std::string& bytes, const Dataset& ds) {
    Reader r(bytes);
    char magic[8];
    r.raw(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw IndexLoadError("not a wisk index file");
    const auto version = r.get<std::uint32_t>();
    if (version != kFormatVersion)
        throw IndexLoadError("unsupported index format version " + std::to_string(version) + " (expected " +
                             std::to_string(kFormatVersion) + ")");
    WiskIndex idx;
    const auto n_objects = r.get<std::uint64_t>();
    idx.dict_hash_ = r.get<std::uint64_t>();
    if (idx.dict_hash_ != ds.dict().hash()) throw IndexLoadError("index was built against a different dictionary");

    auto& c = idx.cfg_;
    c.buffer_capacity = r.get<std::uint64_t>();
    c.cw.w1 = r.get<double>();
    c.cw.w2 = r.get<double>();
    c.limits.min_queries = r.get<std::uint64_t>();
    c.limits.min_objects = r.get<std::uint64_t>();
    c.sgd.restarts = r.get<std::uint64_t>();
    c.sgd.stages = r.get<std::uint64_t>();
    c.sgd.steps_per_stage = r.get<std::uint64_t>();
    c.sgd.sharpness_start = r.get<double>();
    c.sgd.sharpness_end = r.get<double>();
    c.sgd.learning_rate = r.get<double>();
    c.sgd.batch_size = r.get<std::uint64_t>();
    c.sgd.beta = r.get<double>();
    c.sgd.seed = r.get<std::uint64_t>();
    idx.retrains_ = r.get<std::uint64_t>();

    if (n_objects > bytes.size() / 24) throw IndexLoadError("index file is corrupt");
    idx.objects_.reserve(n_objects);
    for (std::uint64_t i = 0; i < n_objects; ++i) {
        GeoObject o;
        o.id = r.get<std::uint32_t>();
        o.loc.x = r.get<double>();
        o.loc.y = r.get<double>();
        const auto nk = r.get<std::uint32_t>();
        if (nk > bytes.size()) throw IndexLoadError("index file is corrupt");
        for (std::uint32_t k = 0; k < nk; ++k) o.kws.push_back(r.get<std::uint32_t>());
        if (!idx.pos_.emplace(o.id, static_cast<std::uint32_t>(i)).second)
            throw IndexLoadError("index file has duplicate object ids");
        idx.objects_.push_back(std::move(o));
    }

    const auto nq = r.count(45);
    for (std::uint64_t i = 0; i < nq; ++i) {
        Query q;
        q.id = r.get<std::uint32_t>();
        q.area.xb = r.get<double>();
        q.area.yb = r.get<double>();
        q.area.xu = r.get<double>();
        q.area.yu = r.get<double>();
        const auto dist = r.get<std::uint8_t>();
        if (dist > 3) throw IndexLoadError("index file is corrupt");
        q.dist = static_cast<Distribution>(dist);
        const auto nk = r.get<std::uint32_t>();
        if (nk > bytes.size()) throw IndexLoadError("index file is corrupt");
        for (std::uint32_t k = 0; k < nk; ++k) q.keys.push_back(r.get<std::uint32_t>());
        idx.workload_.queries.push_back(std::move(q));
    }

    const auto nn = r.count(37);
    if (nn == 0) throw IndexLoadError("index file has no nodes");
    // Pre-order rebuild: a stack of (node, children still expected).
    std::vector<std::pair<std::uint32_t, std::uint32_t>> stack;
    for (std::uint64_t i = 0; i < nn; ++i) {
        Node n;
        n.leaf = r.get<std::uint8_t>() != 0;
        n.mbr.xb = r.get<double>();
        n.mbr.yb = r.get<double>();
        n.mbr.xu = r.get<double>();
        n.mbr.yu = r.get<double>();
        const auto cnt = r.get<std::uint32_t>();
        if (n.leaf) {
            for (std::uint32_t k = 0; k < cnt; ++k) {
                const auto p = r.get<std::uint32_t>();
                if (p >= idx.objects_.size()) throw IndexLoadError("index file is corrupt");
                n.members.push_back(p);
            }
        }
        const auto id = static_cast<std::uint32_t>(idx.nodes_.size());
        if (stack.empty()) {
            if (i != 0) throw IndexLoadError("index file has a malformed node table");
            idx.root_ = id;
        } else {
            auto& [parent, left] = stack.back();
            n.parent = static_cast<std::int32_t>(parent);
            idx.nodes_[parent].children.push_back(id);
            if (--left == 0) stack.pop_back();
        }
        idx.nodes_.push_back(std::move(n));
        if (!idx.nodes_.back().leaf) {
            if (cnt == 0) throw IndexLoadError("index file has an empty internal node");
            stack.emplace_back(id, cnt);
        }
    }
    if (!stack.empty()) throw IndexLoadError("index file has a malformed node table");

    // Inverted files and bitmaps are derived; MBRs are kept as stored.
    for (std::uint32_t id = 0; id < idx.nodes_.size(); ++id) {
        Node& n = idx.nodes_[id];
        if (!n.leaf) continue;
        std::sort(n.members.begin(), n.members.end());
        for (auto p : n.members)
            for (KeywordId k : idx.objects_[p].kws) {
                n.postings[k].push_back(p);
                n.bitmap.set(k);
            }
    }
    for (std::uint32_t id = static_cast<std::uint32_t>(idx.nodes_.size()); id-- > 0;) {
        Node& n = idx.nodes_[id];
        if (n.leaf) continue;
        for (auto ch : n.children) n.bitmap.merge(idx.nodes_[ch].bitmap);
    }

    const auto nb = r.count(8);
    for (std::uint64_t i = 0; i < nb; ++i) idx.buffer_.push_back(r.get<std::uint32_t>());
    for (std::uint64_t i = 0; i < nb; ++i) {
        const auto l = r.get<std::uint32_t>();
        if (l >= idx.nodes_.size()) throw IndexLoadError("index file is corrupt");
        idx.buffer_leaves_.push_back(l);
    }
    if (!r.at_end()) throw IndexLoadError("index file has trailing bytes");
    return idx;
}

void WiskIndex::serialize(const std::filesystem::path& path) const { write_file(path, serialize_bytes()); }

WiskIndex WiskIndex::deserialize(const std::filesystem::path& path, const Dataset& ds) {
    std::string bytes;
    try {
        bytes = read_file(path);
    } catch (const std::exception& e) {
        throw IndexLoadError(e.what());
    }
    return deserialize_bytes(bytes, ds);
}

nlohmann::json query_stats_json(QueryId id, const QueryStats& s, double micros) {
    return {{"query_id", id},
            {"nodes_accessed", s.nodes_accessed},
            {"objects_checked", s.objects_checked},
            {"result_count", s.results},
            {"micros", micros}};
}

// ---------------------------------------------------------------------------
// IndexHandle

IndexHandle::IndexHandle(std::shared_ptr<WiskIndex> index) : current_(std::move(index)) {
    if (!current_) throw std::invalid_argument("IndexHandle: null index");
}

IndexHandle::~IndexHandle() { wait_idle(); }

std::shared_ptr<const WiskIndex> IndexHandle::snapshot() const {
    std::lock_guard lock(ptr_mu_);
    return current_;
}

std::uint64_t IndexHandle::generation() const {
    std::lock_guard lock(ptr_mu_);
    return generation_;
}

QueryResult IndexHandle::query_range(const Query& q) const {
    std::shared_lock rd(rw_);
    return snapshot()->query_range(q);
}

void IndexHandle::insert_object(const GeoObject& o) {
    std::unique_lock wr(rw_);
    std::shared_ptr<WiskIndex> idx;
    {
        std::lock_guard lock(ptr_mu_);
        idx = current_;
    }
    idx->insert_object(o);
}

std::shared_future<bool> IndexHandle::swap_retrain(Workload new_workload, Builder builder) {
    std::uint64_t request;
    {
        std::lock_guard lock(ptr_mu_);
        request = ++next_request_;
    }
    auto promise = std::make_shared<std::promise<bool>>();
    std::shared_future<bool> fut = promise->get_future().share();
    std::thread t([this, request, promise, w = std::move(new_workload), b = std::move(builder)]() mutable {
        try {
            auto fresh = b(w);
            if (!fresh) throw std::runtime_error("swap_retrain: builder returned no index");
            bool published = false;
            {
                std::unique_lock wr(rw_);
                std::lock_guard lock(ptr_mu_);
                if (request > generation_) {
                    current_ = std::move(fresh);
                    generation_ = request;
                    published = true;
                }
            }
            promise->set_value(published);
        } catch (...) {
            promise->set_exception(std::current_exception());
        }
    });
    std::lock_guard lock(threads_mu_);
    threads_.push_back(std::move(t));
    return fut;
}

void IndexHandle::wait_idle() {
    std::vector<std::thread> pending;
    {
        std::lock_guard lock(threads_mu_);
        pending.swap(threads_);
    }
    for (auto& t : pending)
        if (t.joinable()) t.join();
}

}  // namespace wisk
