#include "wisk/cdf_models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace wisk {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// MarginalCDF

namespace {

double normal_cdf(double v, double mu, double sigma) { return 0.5 * std::erfc(-(v - mu) / (sigma * std::sqrt(2.0))); }

}  // namespace

MarginalCDF MarginalCDF::gaussian(double mu, double sigma, double lo, double hi) {
    MarginalCDF c;
    c.kind_ = Kind::Gaussian;
    c.mu_ = mu;
    c.sigma_ = std::max(sigma, kMinSigma);
    if (std::isfinite(lo) && std::isfinite(hi) && hi > lo) {
        const double y0 = normal_cdf(lo, c.mu_, c.sigma_);
        const double y1 = normal_cdf(hi, c.mu_, c.sigma_);
        if (y1 - y0 > 1e-9) {
            c.truncated_ = true;
            c.lo_ = lo;
            c.hi_ = hi;
            c.y0_ = y0;
            c.y1_ = y1;
        }
    }
    return c;
}

MarginalCDF MarginalCDF::mlp(Mlp net, double lo, double hi) {
    if (!(hi > lo)) throw std::invalid_argument("MarginalCDF::mlp: needs hi > lo");
    MarginalCDF c;
    c.kind_ = Kind::MLP;
    c.net_ = std::move(net);
    c.lo_ = lo;
    c.hi_ = hi;
    const double y0 = c.net_.eval_scalar(0.0);
    const double y1 = c.net_.eval_scalar(1.0);
    if (y1 - y0 > 1e-9) {
        c.y0_ = y0;
        c.y1_ = y1;
    }
    return c;
}

double MarginalCDF::evaluate(double v, double* density) const {
    if (kind_ == Kind::Gaussian) {
        if (truncated_ && (v <= lo_ || v >= hi_)) {
            if (density) *density = 0.0;
            return v <= lo_ ? 0.0 : 1.0;
        }
        const double z = (v - mu_) / sigma_;
        const double span = truncated_ ? y1_ - y0_ : 1.0;
        if (density) *density = std::exp(-0.5 * z * z) / (sigma_ * std::sqrt(2.0 * M_PI)) / span;
        const double y = 0.5 * std::erfc(-z / std::sqrt(2.0));
        return truncated_ ? std::clamp((y - y0_) / span, 0.0, 1.0) : y;
    }
    const double span = y1_ - y0_;
    if (v <= lo_ || v >= hi_) {
        if (density) *density = 0.0;
        return std::clamp((net_.eval_scalar(v <= lo_ ? 0.0 : 1.0) - y0_) / span, 0.0, 1.0);
    }
    const double width = hi_ - lo_;
    double dy = 0.0;
    const double y = (net_.eval_scalar((v - lo_) / width, density ? &dy : nullptr) - y0_) / span;
    if (density) *density = dy / width / span;
    return std::clamp(y, 0.0, 1.0);
}

json MarginalCDF::to_json() const {
    if (kind_ == Kind::Gaussian) {
        json j{{"kind", "gaussian"}, {"mu", mu_}, {"sigma", sigma_}};
        if (truncated_) {
            j["lo"] = lo_;
            j["hi"] = hi_;
        }
        return j;
    }
    return {{"kind", "mlp"}, {"lo", lo_}, {"hi", hi_}, {"net", net_.to_json()}};
}

MarginalCDF MarginalCDF::from_json(const json& j) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "gaussian")
        return gaussian(j.at("mu").get<double>(), j.at("sigma").get<double>(), j.value("lo", -HUGE_VAL),
                        j.value("hi", HUGE_VAL));
    if (kind == "mlp") return mlp(Mlp::from_json(j.at("net")), j.at("lo").get<double>(), j.at("hi").get<double>());
    throw std::runtime_error("unknown CDF kind: " + kind);
}

// ---------------------------------------------------------------------------
// Fitting

MarginalCDF fit_gaussian(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("fit_gaussian: no values");
    if (values.size() == 1) return MarginalCDF::gaussian(values[0], kMinSigma);  // step at the value
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    return MarginalCDF::gaussian(mean, std::sqrt(ss / (n - 1.0)), *lo, *hi);
}

MarginalCDF fit_mlp_cdf(std::span<const double> values, const CdfConfig& cfg, std::uint64_t seed,
                        MlpFitReport* report) {
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    if (sorted.size() < 2 || sorted.front() == sorted.back())
        throw std::invalid_argument("fit_mlp_cdf: needs at least two distinct values");
    const double lo = sorted.front();
    const double hi = sorted.back();
    const double n = static_cast<double>(sorted.size());

    // Empirical CDF pairs (value, rank / n), half at evenly spaced ranks and
    // half at evenly spaced values so sparse tails and gaps get points too.
    const std::size_t k_total = std::min(sorted.size(), std::max<std::size_t>(cfg.max_train_points, 4));
    const std::size_t k_rank = (k_total + 1) / 2;
    const std::size_t k_value = k_total - k_rank;
    std::vector<double> xs;
    std::vector<double> ts;
    const auto add = [&](double v) {
        const auto rank = std::upper_bound(sorted.begin(), sorted.end(), v) - sorted.begin();
        xs.push_back((v - lo) / (hi - lo));
        ts.push_back(static_cast<double>(rank) / n);
    };
    for (std::size_t i = 0; i < k_rank; ++i)
        add(sorted[static_cast<std::size_t>(std::llround(static_cast<double>(i) * static_cast<double>(sorted.size() - 1) /
                                                         static_cast<double>(k_rank - 1)))]);
    for (std::size_t i = 0; i < k_value; ++i)
        add(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(k_value - 1, 1)));
    const std::size_t k = xs.size();

    std::vector<std::size_t> widths{1};
    for (std::size_t l = 0; l < cfg.hidden_layers; ++l) widths.push_back(cfg.hidden_units);
    widths.push_back(1);
    Mlp net(widths, OutputActivation::Identity, seed);
    Adam opt(net.num_params(), cfg.learning_rate);
    std::vector<double> grad(net.num_params());
    Mlp::Workspace ws;
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    const std::size_t batch = std::max<std::size_t>(1, std::min(cfg.batch_size, k));

    double mse = 0.0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double frac = static_cast<double>(epoch) / static_cast<double>(std::max<std::size_t>(1, cfg.epochs));
        opt.set_learning_rate(cfg.learning_rate * (1.0 - 0.9 * frac));
        std::shuffle(order.begin(), order.end(), rng);
        double sum_sq = 0.0;
        for (std::size_t start = 0; start < k; start += batch) {
            const std::size_t end = std::min(k, start + batch);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t b = start; b < end; ++b) {
                const std::size_t i = order[b];
                const double in[1] = {xs[i]};
                const double err = net.forward(in, ws)[0] - ts[i];
                sum_sq += err * err;
                const double d[1] = {2.0 * err / static_cast<double>(end - start)};
                net.backward(d, ws, grad);
            }
            opt.step(net.params(), grad);
        }
        mse = sum_sq / static_cast<double>(k);
        if (!std::isfinite(mse)) {
            std::ostringstream msg;
            msg << "fit_mlp_cdf: non-finite loss at epoch " << epoch << " (learning rate " << opt.learning_rate() << ")";
            throw std::runtime_error(msg.str());
        }
    }

    double final_sq = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double err = net.eval_scalar(xs[i]) - ts[i];
        final_sq += err * err;
    }
    if (report) {
        report->final_mse = final_sq / static_cast<double>(k);
        report->epochs = cfg.epochs;
    }
    return MarginalCDF::mlp(std::move(net), lo, hi);
}

double estimate_count_in_rect(const KeywordModel& model, const Rect& r) {
    const double px = model.fx(r.xu) - model.fx(r.xb);
    const double py = model.fy(r.yu) - model.fy(r.yb);
    const double c = static_cast<double>(model.count);
    return std::clamp(c * px * py, 0.0, c);
}

// ---------------------------------------------------------------------------
// Frequent itemsets

bool meets_support(std::uint64_t count, std::size_t num_objects, double min_support) {
    return static_cast<double>(count) / static_cast<double>(num_objects) >= min_support;
}

ItemsetTable::ItemsetTable(std::vector<Itemset> itemsets, std::size_t num_objects, double min_support,
                           std::size_t max_size)
    : itemsets_(std::move(itemsets)), num_objects_(num_objects), min_support_(min_support), max_size_(max_size) {
    std::sort(itemsets_.begin(), itemsets_.end(), [](const Itemset& a, const Itemset& b) {
        return a.items.size() != b.items.size() ? a.items.size() < b.items.size() : a.items < b.items;
    });
    for (std::size_t i = 0; i < itemsets_.size(); ++i) index_.emplace(itemsets_[i].items, i);
}

std::optional<std::size_t> ItemsetTable::find(std::span<const KeywordId> items) const {
    auto it = index_.find(KeywordSet(items.begin(), items.end()));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

json ItemsetTable::to_json() const {
    json sets = json::array();
    for (const auto& s : itemsets_) sets.push_back({{"items", s.items}, {"support", s.support}});
    return {{"num_objects", num_objects_}, {"min_support", min_support_}, {"max_size", max_size_}, {"itemsets", sets}};
}

ItemsetTable ItemsetTable::from_json(const json& j) {
    std::vector<Itemset> sets;
    for (const auto& s : j.at("itemsets"))
        sets.push_back({s.at("items").get<KeywordSet>(), s.at("support").get<std::uint64_t>()});
    return ItemsetTable(std::move(sets), j.at("num_objects").get<std::size_t>(), j.at("min_support").get<double>(),
                        j.at("max_size").get<std::size_t>());
}

namespace {

struct Transaction {
    std::vector<KeywordId> items;
    std::uint64_t count;
};

class FpTree {
  public:
    struct Node {
        KeywordId item;
        std::uint64_t count;
        std::int32_t parent;
        std::int32_t next;  // next node carrying the same item
        std::vector<std::int32_t> children;
    };
    struct Header {
        KeywordId item;
        std::uint64_t support;
        std::int32_t head;
    };

    FpTree(const std::vector<Transaction>& txs, std::uint64_t min_count) {
        std::map<KeywordId, std::uint64_t> counts;
        for (const auto& t : txs)
            for (KeywordId k : t.items) counts[k] += t.count;
        for (const auto& [k, c] : counts)
            if (c >= min_count) headers_.push_back({k, c, -1});
        // Most frequent first along each path.
        std::sort(headers_.begin(), headers_.end(), [](const Header& a, const Header& b) {
            return a.support != b.support ? a.support > b.support : a.item < b.item;
        });
        for (std::size_t i = 0; i < headers_.size(); ++i) rank_[headers_[i].item] = i;

        nodes_.push_back({0, 0, -1, -1, {}});
        std::vector<std::pair<std::size_t, KeywordId>> path;
        for (const auto& t : txs) {
            path.clear();
            for (KeywordId k : t.items) {
                auto it = rank_.find(k);
                if (it != rank_.end()) path.emplace_back(it->second, k);
            }
            std::sort(path.begin(), path.end());
            std::int32_t cur = 0;
            for (const auto& [r, k] : path) {
                std::int32_t child = -1;
                for (auto c : nodes_[cur].children)
                    if (nodes_[c].item == k) {
                        child = c;
                        break;
                    }
                if (child < 0) {
                    child = static_cast<std::int32_t>(nodes_.size());
                    nodes_.push_back({k, 0, cur, headers_[r].head, {}});
                    headers_[r].head = child;
                    nodes_[cur].children.push_back(child);
                }
                nodes_[child].count += t.count;
                cur = child;
            }
        }
    }

    bool empty() const { return headers_.empty(); }

    void mine(const std::vector<KeywordId>& suffix, std::uint64_t min_count, std::size_t max_size,
              std::vector<Itemset>& out) const {
        // Least frequent first, so conditional bases stay small.
        for (auto h = headers_.rbegin(); h != headers_.rend(); ++h) {
            std::vector<KeywordId> set = suffix;
            set.push_back(h->item);
            if (set.size() >= 2) {
                KeywordSet sorted = set;
                normalize(sorted);
                out.push_back({std::move(sorted), h->support});
            }
            if (set.size() >= max_size) continue;
            std::vector<Transaction> base;
            for (std::int32_t n = h->head; n >= 0; n = nodes_[n].next) {
                Transaction t{{}, nodes_[n].count};
                for (std::int32_t p = nodes_[n].parent; p > 0; p = nodes_[p].parent) t.items.push_back(nodes_[p].item);
                if (!t.items.empty()) base.push_back(std::move(t));
            }
            if (base.empty()) continue;
            FpTree cond(base, min_count);
            if (!cond.empty()) cond.mine(set, min_count, max_size, out);
        }
    }

  private:
    std::vector<Node> nodes_;
    std::vector<Header> headers_;
    std::map<KeywordId, std::size_t> rank_;
};

}  // namespace

ItemsetTable mine_frequent_itemsets(const Dataset& ds, double min_support, std::size_t max_size) {
    if (!(min_support > 0.0 && min_support <= 1.0))
        throw std::invalid_argument("mine_frequent_itemsets: min_support must be in (0, 1]");
    if (max_size < 2) throw std::invalid_argument("mine_frequent_itemsets: max_size must be >= 2");
    const std::size_t n = ds.size();
    if (n == 0) return ItemsetTable({}, 0, min_support, max_size);

    auto min_count = static_cast<std::uint64_t>(std::ceil(min_support * static_cast<double>(n)));
    while (min_count > 1 && meets_support(min_count - 1, n, min_support)) --min_count;
    while (!meets_support(min_count, n, min_support)) ++min_count;
    min_count = std::max<std::uint64_t>(min_count, 1);

    std::vector<Transaction> txs;
    txs.reserve(n);
    for (const auto& o : ds.objects()) txs.push_back({o.kws, 1});
    FpTree tree(txs, min_count);
    std::vector<Itemset> out;
    tree.mine({}, min_count, max_size, out);
    return ItemsetTable(std::move(out), n, min_support, max_size);
}

// ---------------------------------------------------------------------------
// KeywordModels

KeywordModels::KeywordModels(std::map<KeywordId, KeywordModel> keyword_models, ItemsetTable itemsets,
                             std::map<std::size_t, KeywordModel> itemset_models)
    : keyword_models_(std::move(keyword_models)),
      itemsets_(std::move(itemsets)),
      itemset_models_(std::move(itemset_models)) {}

const KeywordModel* KeywordModels::find(KeywordId k) const {
    auto it = keyword_models_.find(k);
    return it == keyword_models_.end() ? nullptr : &it->second;
}

std::vector<KeywordModels::Term> KeywordModels::terms(std::span<const KeywordId> keys, bool use_itemsets) const {
    std::vector<Term> out;
    KeywordSet modeled;
    for (KeywordId k : keys) {
        if (const auto* m = find(k)) {
            out.push_back({m, 1.0, true});
            modeled.push_back(k);
        }
    }
    if (!use_itemsets || modeled.size() < 2 || itemset_models_.empty()) return out;

    // Subsets of the modeled keys, sizes 2..max_size, that were mined and fitted.
    const std::size_t max_size = std::min(itemsets_.max_size(), modeled.size());
    KeywordSet subset;
    const auto visit = [&](auto&& self, std::size_t start) -> void {
        if (subset.size() >= 2) {
            if (auto id = itemsets_.find(subset)) {
                auto it = itemset_models_.find(*id);
                if (it != itemset_models_.end()) out.push_back({&it->second, subset.size() % 2 == 0 ? -1.0 : 1.0, false});
            }
        }
        if (subset.size() == max_size) return;
        for (std::size_t i = start; i < modeled.size(); ++i) {
            subset.push_back(modeled[i]);
            self(self, i + 1);
            subset.pop_back();
        }
    };
    visit(visit, 0);
    return out;
}

namespace {

double combine_terms(std::span<const KeywordModels::Term> terms, std::span<const double> values) {
    double raw = 0.0;
    double upper = 0.0;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        raw += terms[i].sign * values[i];
        if (terms[i].single) upper += values[i];
    }
    return std::clamp(raw, 0.0, upper);
}

}  // namespace

double KeywordModels::count(std::span<const KeywordId> keys, const Rect& region,
                            std::span<const std::uint32_t>) const {
    const auto ts = terms(keys, use_itemsets_);
    std::vector<double> values(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) values[i] = estimate_count_in_rect(*ts[i].model, region);
    return combine_terms(ts, values);
}

namespace {

class CdfSplitProfile final : public SplitProfile {
  public:
    CdfSplitProfile(const KeywordModels& models, const Rect& region, Axis axis, std::span<const Query* const> queries)
        : axis_(axis) {
        std::map<const KeywordModel*, std::size_t> slot;
        per_query_.resize(queries.size());
        for (std::size_t qi = 0; qi < queries.size(); ++qi) {
            for (const auto& t : models.terms(queries[qi]->keys, models.itemset_correction())) {
                auto [it, fresh] = slot.emplace(t.model, models_.size());
                if (fresh) {
                    const auto& m = *t.model;
                    const Axis o = other(axis);
                    const auto& f_axis = axis == Axis::X ? m.fx : m.fy;
                    const auto& f_other = o == Axis::X ? m.fx : m.fy;
                    const double c = static_cast<double>(m.count);
                    models_.push_back({&f_axis, c, c * (f_other(region.hi(o)) - f_other(region.lo(o))),
                                       f_axis(region.lo(axis)), f_axis(region.hi(axis))});
                }
                per_query_[qi].push_back({it->second, t.sign, t.single});
            }
        }
    }

    std::size_t num_queries() const override { return per_query_.size(); }

    void evaluate(double v, std::span<const std::size_t> which, std::span<SideCounts> out) const override {
        thread_local std::vector<SideCounts> per_model;
        per_model.resize(models_.size());
        for (std::size_t m = 0; m < models_.size(); ++m) {
            const auto& pm = models_[m];
            double dens = 0.0;
            const double fv = pm.cdf->evaluate(v, &dens);
            SideCounts& s = per_model[m];
            const double left = pm.mass * (fv - pm.f_lo);
            const double right = pm.mass * (pm.f_hi - fv);
            s.left = std::clamp(left, 0.0, pm.count);
            s.right = std::clamp(right, 0.0, pm.count);
            s.d_left = (left > 0.0 && left < pm.count) ? pm.mass * dens : 0.0;
            s.d_right = (right > 0.0 && right < pm.count) ? -pm.mass * dens : 0.0;
        }
        for (std::size_t w = 0; w < which.size(); ++w) {
            const auto& ts = per_query_[which[w]];
            double raw_l = 0, up_l = 0, draw_l = 0, dup_l = 0;
            double raw_r = 0, up_r = 0, draw_r = 0, dup_r = 0;
            for (const auto& t : ts) {
                const SideCounts& s = per_model[t.model];
                raw_l += t.sign * s.left;
                draw_l += t.sign * s.d_left;
                raw_r += t.sign * s.right;
                draw_r += t.sign * s.d_right;
                if (t.single) {
                    up_l += s.left;
                    dup_l += s.d_left;
                    up_r += s.right;
                    dup_r += s.d_right;
                }
            }
            SideCounts& o = out[w];
            const auto pick = [](double raw, double up, double draw, double dup, double& val, double& d) {
                if (raw <= 0.0) {
                    val = 0.0;
                    d = 0.0;
                } else if (raw >= up) {
                    val = up;
                    d = dup;
                } else {
                    val = raw;
                    d = draw;
                }
            };
            pick(raw_l, up_l, draw_l, dup_l, o.left, o.d_left);
            pick(raw_r, up_r, draw_r, dup_r, o.right, o.d_right);
        }
    }

  private:
    struct ModelSlot {
        const MarginalCDF* cdf;
        double count;
        double mass;  // count times the probability mass of the region along the other axis
        double f_lo;
        double f_hi;
    };
    struct QueryTerm {
        std::size_t model;
        double sign;
        bool single;
    };
    Axis axis_;
    std::vector<ModelSlot> models_;
    std::vector<std::vector<QueryTerm>> per_query_;
};

}  // namespace

std::unique_ptr<SplitProfile> KeywordModels::split_profile(const Rect& region, Axis axis,
                                                           std::span<const std::uint32_t>,
                                                           std::span<const Query* const> queries) const {
    return std::make_unique<CdfSplitProfile>(*this, region, axis, queries);
}

std::vector<std::string> KeywordModels::fit_violations(const Rect& space) const {
    std::vector<std::string> out;
    const auto check = [&](const KeywordModel& m, const std::string& name) {
        const double est = estimate_count_in_rect(m, space);
        const double c = static_cast<double>(m.count);
        if (est < 0.8 * c || est > 1.2 * c) out.push_back(name);
    };
    for (const auto& [k, m] : keyword_models_) check(m, "keyword " + std::to_string(k));
    for (const auto& [id, m] : itemset_models_) check(m, "itemset " + std::to_string(id));
    return out;
}

json KeywordModels::to_json() const {
    const auto model_json = [](const KeywordModel& m) {
        return json{{"count", m.count}, {"fx", m.fx.to_json()}, {"fy", m.fy.to_json()}};
    };
    json kws = json::array();
    for (const auto& [k, m] : keyword_models_) {
        auto j = model_json(m);
        j["key"] = k;
        kws.push_back(std::move(j));
    }
    json sets = json::array();
    for (const auto& [id, m] : itemset_models_) {
        auto j = model_json(m);
        j["itemset"] = id;
        sets.push_back(std::move(j));
    }
    return {{"keywords", kws}, {"itemset_models", sets}, {"itemsets", itemsets_.to_json()},
            {"itemset_correction", use_itemsets_}};
}

KeywordModels KeywordModels::from_json(const json& j) {
    const auto model = [](const json& m) {
        return KeywordModel{m.at("count").get<std::uint64_t>(), MarginalCDF::from_json(m.at("fx")),
                            MarginalCDF::from_json(m.at("fy"))};
    };
    std::map<KeywordId, KeywordModel> kws;
    for (const auto& m : j.at("keywords")) kws.emplace(m.at("key").get<KeywordId>(), model(m));
    std::map<std::size_t, KeywordModel> sets;
    for (const auto& m : j.at("itemset_models")) sets.emplace(m.at("itemset").get<std::size_t>(), model(m));
    KeywordModels out(std::move(kws), ItemsetTable::from_json(j.at("itemsets")), std::move(sets));
    out.use_itemsets_ = j.value("itemset_correction", true);
    return out;
}

namespace {

KeywordModel fit_model(std::span<const double> xs, std::span<const double> ys, bool use_mlp, const CdfConfig& cfg,
                       std::uint64_t seed, const Rect& space) {
    const auto distinct = [](std::span<const double> v) {
        return std::any_of(v.begin(), v.end(), [&](double x) { return x != v.front(); });
    };
    const auto fit_dim = [&](std::span<const double> v, std::uint64_t s, std::size_t epochs) {
        if (use_mlp && v.size() >= 2 && distinct(v)) {
            CdfConfig c = cfg;
            c.epochs = epochs;
            return fit_mlp_cdf(v, c, s);
        }
        return fit_gaussian(v);
    };
    KeywordModel m{xs.size(), fit_dim(xs, seed, cfg.epochs), fit_dim(ys, seed + 1, cfg.epochs)};
    if (use_mlp) {
        // Full-range mass must be close to the count; one retry with a longer schedule.
        const double est = estimate_count_in_rect(m, space);
        const double c = static_cast<double>(m.count);
        if (est < 0.8 * c || est > 1.2 * c)
            m = KeywordModel{xs.size(), fit_dim(xs, seed + 7, cfg.epochs * 2), fit_dim(ys, seed + 8, cfg.epochs * 2)};
    }
    return m;
}

}  // namespace

KeywordModels build_keyword_models(const Dataset& ds, const ItemsetTable& itemsets, const CdfConfig& cfg) {
    const std::size_t nk = ds.dict().size();
    std::vector<std::vector<std::uint32_t>> postings(nk);
    for (std::size_t i = 0; i < ds.size(); ++i)
        for (KeywordId k : ds.objects()[i].kws) postings[k].push_back(static_cast<std::uint32_t>(i));

    std::vector<FrequencyClass> cls(nk);
    for (KeywordId k = 0; k < nk; ++k) cls[k] = keyword_frequency_class(ds, k, cfg.thresholds);

    std::vector<double> xs, ys;
    const auto gather = [&](const std::vector<std::uint32_t>& members) {
        xs.clear();
        ys.clear();
        for (auto i : members) {
            xs.push_back(ds.objects()[i].loc.x);
            ys.push_back(ds.objects()[i].loc.y);
        }
    };

    std::map<KeywordId, KeywordModel> kw_models;
    for (KeywordId k = 0; k < nk; ++k) {
        if (postings[k].empty() || cls[k] == FrequencyClass::Low) continue;
        gather(postings[k]);
        kw_models.emplace(k, fit_model(xs, ys, cls[k] == FrequencyClass::High, cfg, cfg.seed * 1000003ULL + 2 * k,
                                       ds.space()));
    }

    std::map<std::size_t, KeywordModel> set_models;
    for (std::size_t id = 0; id < itemsets.size(); ++id) {
        const auto& set = itemsets.itemsets()[id];
        if (set.support < cfg.min_itemset_objects) continue;
        // Model kind follows the most frequent member.
        KeywordId top = set.items.front();
        for (KeywordId k : set.items)
            if (ds.freq(k) > ds.freq(top)) top = k;
        if (cls[top] == FrequencyClass::Low) continue;
        bool all_modeled = true;
        for (KeywordId k : set.items) all_modeled &= kw_models.contains(k);
        if (!all_modeled) continue;

        std::vector<std::uint32_t> members = postings[set.items.front()];
        for (std::size_t i = 1; i < set.items.size(); ++i) {
            const auto& other_list = postings[set.items[i]];
            std::vector<std::uint32_t> both;
            std::set_intersection(members.begin(), members.end(), other_list.begin(), other_list.end(),
                                  std::back_inserter(both));
            members = std::move(both);
        }
        if (members.empty()) continue;
        gather(members);
        set_models.emplace(id, fit_model(xs, ys, cls[top] == FrequencyClass::High, cfg,
                                         cfg.seed * 1000003ULL + 2 * (nk + id), ds.space()));
    }
    return KeywordModels(std::move(kw_models), itemsets, std::move(set_models));
}

double estimate_query_objects(const KeywordModels& models, std::span<const KeywordId> q_keys, const Rect& r) {
    return models.count(q_keys, r, {});
}

// ---------------------------------------------------------------------------
// ExactCountEstimator

double ExactCountEstimator::count(std::span<const KeywordId> keys, const Rect& region,
                                  std::span<const std::uint32_t> members) const {
    std::size_t c = 0;
    for (auto i : members) {
        const auto& o = objects_[i];
        if (region.contains(o.loc) && matches(o, keys)) ++c;
    }
    return static_cast<double>(c);
}

namespace {

class ExactSplitProfile final : public SplitProfile {
  public:
    explicit ExactSplitProfile(std::vector<std::vector<double>> coords) : coords_(std::move(coords)) {}

    std::size_t num_queries() const override { return coords_.size(); }

    void evaluate(double v, std::span<const std::size_t> which, std::span<SideCounts> out) const override {
        for (std::size_t w = 0; w < which.size(); ++w) {
            const auto& c = coords_[which[w]];
            const auto left = static_cast<double>(std::upper_bound(c.begin(), c.end(), v) - c.begin());
            out[w] = {left, static_cast<double>(c.size()) - left, 0.0, 0.0};
        }
    }

  private:
    std::vector<std::vector<double>> coords_;  // per query: sorted coordinates of matching members
};

}  // namespace

std::unique_ptr<SplitProfile> ExactCountEstimator::split_profile(const Rect& region, Axis axis,
                                                                 std::span<const std::uint32_t> members,
                                                                 std::span<const Query* const> queries) const {
    std::vector<std::vector<double>> coords(queries.size());
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        for (auto i : members) {
            const auto& o = objects_[i];
            if (region.contains(o.loc) && matches(o, queries[qi]->keys)) coords[qi].push_back(o.loc[axis]);
        }
        std::sort(coords[qi].begin(), coords[qi].end());
    }
    return std::make_unique<ExactSplitProfile>(std::move(coords));
}

}  // namespace wisk
