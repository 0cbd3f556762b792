#include "wisk/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace wisk {

using json = nlohmann::json;

std::string_view to_string(BaselineKind k) {
    switch (k) {
        case BaselineKind::BruteForce: return "BruteForce";
        case BaselineKind::UniformGridIF: return "UniformGridIF";
        case BaselineKind::FlatClusters: return "FlatClusters";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Baselines

QueryResult BruteForceIndex::query(const Query& q) const {
    QueryResult r;
    r.ids = query_bruteforce(*ds_, q);
    r.stats.objects_checked = ds_->size();
    r.stats.results = r.ids.size();
    return r;
}

UniformGridIndex::UniformGridIndex(const Dataset& ds, std::size_t cells_per_dim)
    : objects_(ds.objects()), space_(ds.space()), per_dim_(cells_per_dim) {
    if (cells_per_dim == 0) throw std::invalid_argument("build_uniform_grid: cells_per_dim must be >= 1");
    const double cw = space_.width() / static_cast<double>(per_dim_);
    const double ch = space_.height() / static_cast<double>(per_dim_);
    cells_.resize(per_dim_ * per_dim_);
    for (std::size_t j = 0; j < per_dim_; ++j)
        for (std::size_t i = 0; i < per_dim_; ++i) {
            // The last row and column end exactly on the space edge.
            Rect r{space_.xb + cw * static_cast<double>(i), space_.yb + ch * static_cast<double>(j),
                   i + 1 == per_dim_ ? space_.xu : space_.xb + cw * static_cast<double>(i + 1),
                   j + 1 == per_dim_ ? space_.yu : space_.yb + ch * static_cast<double>(j + 1)};
            cells_[j * per_dim_ + i].rect = r;
        }
    const auto cell_of = [&](double v, double lo, double step) {
        if (!(step > 0.0)) return std::size_t{0};
        const auto c = static_cast<std::ptrdiff_t>(std::floor((v - lo) / step));
        return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(c, 0, static_cast<std::ptrdiff_t>(per_dim_) - 1));
    };
    for (std::uint32_t p = 0; p < objects_.size(); ++p) {
        const auto& o = objects_[p];
        auto& cell = cells_[cell_of(o.loc.y, space_.yb, ch) * per_dim_ + cell_of(o.loc.x, space_.xb, cw)];
        for (KeywordId k : o.kws) cell.postings[k].push_back(p);
    }
    // Floating point can put a point on the wrong side of a computed cell
    // edge; widen each rect to cover what it holds.
    for (auto& cell : cells_)
        for (const auto& [k, list] : cell.postings)
            for (auto p : list) cell.rect.expand(objects_[p].loc);
}

QueryResult UniformGridIndex::query(const Query& q) const {
    QueryResult r;
    for (const auto& cell : cells_) {
        ++r.stats.nodes_accessed;
        if (!cell.rect.intersects(q.area)) continue;
        for (KeywordId k : q.keys) {
            const auto it = cell.postings.find(k);
            if (it == cell.postings.end()) continue;
            for (auto p : it->second) {
                ++r.stats.objects_checked;
                if (q.area.contains(objects_[p].loc)) r.ids.push_back(objects_[p].id);
            }
        }
    }
    std::sort(r.ids.begin(), r.ids.end());
    r.ids.erase(std::unique(r.ids.begin(), r.ids.end()), r.ids.end());
    r.stats.results = r.ids.size();
    return r;
}

std::size_t UniformGridIndex::bytes() const {
    // Cell rects plus (keyword, length) headers and 4-byte postings.
    std::size_t b = cells_.size() * 4 * sizeof(double);
    for (const auto& cell : cells_)
        for (const auto& [k, list] : cell.postings) b += 8 + 4 * list.size();
    return b;
}

std::unique_ptr<UniformGridIndex> build_uniform_grid(const Dataset& ds, std::size_t cells_per_dim) {
    return std::make_unique<UniformGridIndex>(ds, cells_per_dim);
}

// ---------------------------------------------------------------------------
// Harness

BenchMismatch::BenchMismatch(QueryId query, std::string index)
    : std::runtime_error("result mismatch on query " + std::to_string(query) + " for index " + index),
      query_id(query),
      index_name(std::move(index)) {}

const IndexMetrics& BenchReport::at(const std::string& index) const {
    for (const auto& m : indexes)
        if (m.index == index) return m;
    throw std::out_of_range("BenchReport: no index named " + index);
}

namespace {

double percentile(std::vector<double> v, double p) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    // Nearest rank.
    const auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(v.size())));
    return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

BenchReport run_bench(std::span<const SearchIndex* const> indexes, const Dataset& ds, const Workload& test,
                      std::size_t repetitions) {
    if (repetitions == 0) throw std::invalid_argument("run_bench: repetitions must be >= 1");
    BenchReport rep;
    rep.repetitions = repetitions;
    rep.queries = test.size();

    std::vector<std::vector<ObjectId>> truth;
    truth.reserve(test.size());
    for (const auto& q : test.queries) truth.push_back(query_bruteforce(ds, q));

    for (const SearchIndex* idx : indexes) {
        IndexMetrics m;
        m.index = idx->name();
        m.bytes = idx->bytes();
        m.build_seconds = idx->build_seconds;

        double nodes = 0.0;
        double objects = 0.0;
        double results = 0.0;
        for (std::size_t i = 0; i < test.size(); ++i) {
            const auto r = idx->query(test.queries[i]);
            if (r.ids != truth[i]) throw BenchMismatch(test.queries[i].id, m.index);
            nodes += static_cast<double>(r.stats.nodes_accessed);
            objects += static_cast<double>(r.stats.objects_checked);
            results += static_cast<double>(r.stats.results);
        }
        const double nq = std::max<double>(1.0, static_cast<double>(test.size()));
        m.mean_nodes = nodes / nq;
        m.mean_objects = objects / nq;
        m.mean_results = results / nq;

        // Warm-up pass above doubled as verification; timing starts here.
        std::vector<double> micros(test.size(), 0.0);
        volatile std::size_t sink = 0;  // keeps the timed calls from being dropped
        for (std::size_t rpt = 0; rpt < repetitions; ++rpt)
            for (std::size_t i = 0; i < test.size(); ++i) {
                const auto t0 = std::chrono::steady_clock::now();
                const auto r = idx->query(test.queries[i]);
                const auto t1 = std::chrono::steady_clock::now();
                sink = sink + r.ids.size();
                micros[i] += std::chrono::duration<double, std::micro>(t1 - t0).count();
            }
        for (auto& v : micros) v /= static_cast<double>(repetitions);
        m.mean_us = micros.empty() ? 0.0 : std::accumulate(micros.begin(), micros.end(), 0.0) / nq;
        m.median_us = median(micros);
        m.p99_us = percentile(micros, 0.99);
        rep.indexes.push_back(std::move(m));
    }
    return rep;
}

json to_json(const BenchReport& r) {
    json idx = json::array();
    for (const auto& m : r.indexes)
        idx.push_back({{"index", m.index},
                       {"mean_us", m.mean_us},
                       {"median_us", m.median_us},
                       {"p99_us", m.p99_us},
                       {"mean_nodes_accessed", m.mean_nodes},
                       {"mean_objects_checked", m.mean_objects},
                       {"mean_results", m.mean_results},
                       {"index_bytes", m.bytes},
                       {"build_seconds", m.build_seconds}});
    return {{"seed", r.seed},
            {"config_hash", r.config_hash},
            {"repetitions", r.repetitions},
            {"queries", r.queries},
            {"indexes", std::move(idx)}};
}

std::string to_csv(const BenchReport& r) {
    std::ostringstream out;
    out.precision(10);
    out << "index,metric,value\n";
    for (const auto& m : r.indexes) {
        const std::pair<const char*, double> rows[] = {
            {"mean_us", m.mean_us},
            {"median_us", m.median_us},
            {"p99_us", m.p99_us},
            {"mean_nodes_accessed", m.mean_nodes},
            {"mean_objects_checked", m.mean_objects},
            {"mean_results", m.mean_results},
            {"index_bytes", static_cast<double>(m.bytes)},
            {"build_seconds", m.build_seconds},
        };
        for (const auto& [metric, value] : rows) out << m.index << ',' << metric << ',' << value << '\n';
    }
    return out.str();
}

std::string config_hash(const json& resolved) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : resolved.dump()) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// RunConfig

json to_json(const RunConfig& c) {
    json phases = json::array();
    for (auto d : c.shift_phases) phases.push_back(std::string(to_string(d)));
    return {
        {"dataset",
         {{"path", c.dataset_path},
          {"format", c.dataset_format == DatasetFormat::Csv ? "csv" : "jsonl"},
          {"synthetic", to_json(c.synthetic)}}},
        {"workload",
         {{"train_path", c.train_workload_path},
          {"test_path", c.test_workload_path},
          {"distribution", std::string(to_string(c.workload.distribution))},
          {"region_fraction", c.workload.region_fraction},
          {"num_keywords", c.workload.num_keywords},
          {"mix_ratio", c.workload.mix_ratio},
          {"train_queries", c.train_queries},
          {"test_queries", c.test_queries}}},
        {"build", to_json(c.build)},
        {"repetitions", c.repetitions},
        {"grid_cells_per_dim", c.grid_cells_per_dim},
        {"shift", {{"phases", phases}, {"queries_per_phase", c.shift_queries_per_phase}, {"window", c.shift_window}}},
        {"seed", c.seed},
    };
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        c.dataset_path = d.value("path", c.dataset_path);
        const auto fmt = d.value("format", std::string("csv"));
        if (fmt == "csv") {
            c.dataset_format = DatasetFormat::Csv;
        } else if (fmt == "jsonl") {
            c.dataset_format = DatasetFormat::Jsonl;
        } else {
            throw std::invalid_argument("dataset.format must be csv or jsonl");
        }
        if (d.contains("synthetic")) c.synthetic = synthetic_spec_from_json(d["synthetic"]);
    }
    if (j.contains("workload")) {
        const auto& w = j["workload"];
        c.train_workload_path = w.value("train_path", c.train_workload_path);
        c.test_workload_path = w.value("test_path", c.test_workload_path);
        if (w.contains("distribution")) c.workload.distribution = parse_distribution(w["distribution"].get<std::string>());
        c.workload.region_fraction = w.value("region_fraction", c.workload.region_fraction);
        c.workload.num_keywords = w.value("num_keywords", c.workload.num_keywords);
        c.workload.mix_ratio = w.value("mix_ratio", c.workload.mix_ratio);
        c.train_queries = w.value("train_queries", c.train_queries);
        c.test_queries = w.value("test_queries", c.test_queries);
    }
    if (j.contains("build")) c.build = build_config_from_json(j["build"]);
    c.repetitions = j.value("repetitions", c.repetitions);
    c.grid_cells_per_dim = j.value("grid_cells_per_dim", c.grid_cells_per_dim);
    if (j.contains("shift")) {
        const auto& s = j["shift"];
        if (s.contains("phases")) {
            c.shift_phases.clear();
            for (const auto& p : s["phases"]) c.shift_phases.push_back(parse_distribution(p.get<std::string>()));
        }
        c.shift_queries_per_phase = s.value("queries_per_phase", c.shift_queries_per_phase);
        c.shift_window = s.value("window", c.shift_window);
    }
    c.seed = j.value("seed", c.seed);
    if (c.repetitions == 0) throw std::invalid_argument("repetitions must be >= 1");
    return c;
}

Dataset load_or_generate_dataset(const RunConfig& c) {
    if (!c.dataset_path.empty()) return load_dataset(c.dataset_path, c.dataset_format);
    return generate_dataset(c.synthetic);
}

std::pair<Workload, Workload> load_or_generate_workloads(const RunConfig& c, const Dataset& ds) {
    Workload train;
    Workload test;
    if (!c.train_workload_path.empty()) {
        train = load_workload(c.train_workload_path, ds.dict());
    } else {
        WorkloadSpec s = c.workload;
        s.count = c.train_queries;
        s.rng_seed = c.seed;
        train = generate_workload(ds, s);
    }
    if (!c.test_workload_path.empty()) {
        test = load_workload(c.test_workload_path, ds.dict());
    } else {
        WorkloadSpec s = c.workload;
        s.count = c.test_queries;
        s.rng_seed = c.seed ^ 0x9e3779b97f4a7c15ULL;
        test = generate_workload(ds, s);
        // Ids continue after the training queries.
        for (auto& q : test.queries) q.id += static_cast<QueryId>(train.size());
    }
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Workload shift

ShiftReport run_workload_shift(IndexHandle& handle, const Dataset& ds, std::span<const Workload> phase_train,
                               std::span<const Workload> phase_test, std::span<const std::string> phase_names,
                               std::size_t window, const IndexHandle::Builder& builder) {
    if (phase_train.size() != phase_test.size() || phase_names.size() != phase_test.size())
        throw std::invalid_argument("run_workload_shift: one train sample, test set and name per phase");
    if (window == 0) throw std::invalid_argument("run_workload_shift: window must be >= 1");
    ShiftReport rep;
    std::vector<std::shared_future<bool>> pending;
    std::size_t w = 0;
    const auto replay = [&](std::size_t p) {
        const auto& qs = phase_test[p].queries;
        for (std::size_t begin = 0; begin < qs.size(); begin += window) {
            const std::size_t end = std::min(qs.size(), begin + window);
            ShiftPoint pt;
            pt.window = w++;
            pt.phase = p;
            pt.distribution = phase_names[p];
            for (std::size_t i = begin; i < end; ++i) {
                const auto t0 = std::chrono::steady_clock::now();
                const auto r = handle.query_range(qs[i]);
                const auto t1 = std::chrono::steady_clock::now();
                if (r.ids != query_bruteforce(ds, qs[i])) throw BenchMismatch(qs[i].id, "WISK (shift)");
                pt.mean_us += std::chrono::duration<double, std::micro>(t1 - t0).count();
                pt.mean_nodes += static_cast<double>(r.stats.nodes_accessed);
                pt.mean_objects += static_cast<double>(r.stats.objects_checked);
            }
            const double n = static_cast<double>(end - begin);
            pt.mean_us /= n;
            pt.mean_nodes /= n;
            pt.mean_objects /= n;
            pt.generation = handle.generation();
            rep.points.push_back(std::move(pt));
            rep.queries += end - begin;
        }
    };
    // Phase 0 runs once. Later phases run once on whatever is serving while
    // their retrain is in flight, then once more after it lands.
    for (std::size_t p = 0; p < phase_test.size(); ++p) {
        if (p == 0) {
            replay(p);
            continue;
        }
        pending.push_back(handle.swap_retrain(phase_train[p], builder));
        replay(p);
        pending.back().wait();
        replay(p);
    }
    handle.wait_idle();
    for (auto& f : pending)
        if (f.get()) ++rep.published;
    return rep;
}

json to_json(const ShiftReport& r) {
    json pts = json::array();
    for (const auto& p : r.points)
        pts.push_back({{"window", p.window},
                       {"phase", p.phase},
                       {"distribution", p.distribution},
                       {"mean_us", p.mean_us},
                       {"mean_nodes_accessed", p.mean_nodes},
                       {"mean_objects_checked", p.mean_objects},
                       {"generation", p.generation}});
    return {{"queries", r.queries}, {"published", r.published}, {"points", std::move(pts)}};
}

std::string to_csv(const ShiftReport& r) {
    std::ostringstream out;
    out.precision(10);
    out << "window,phase,distribution,mean_us,mean_nodes_accessed,mean_objects_checked,generation\n";
    for (const auto& p : r.points)
        out << p.window << ',' << p.phase << ',' << p.distribution << ',' << p.mean_us << ',' << p.mean_nodes << ','
            << p.mean_objects << ',' << p.generation << '\n';
    return out.str();
}

}  // namespace wisk
