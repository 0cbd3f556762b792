// wisk: build, query and benchmark the learned spatial keyword index.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "wisk/bench.hpp"
#include "wisk/pipeline.hpp"
#include "wisk/synthetic.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace wisk;

namespace {

// Flags that override the config file. Unset optionals leave it alone.
struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "out";
    std::string dataset;
    std::string format;
    std::optional<double> w1, w2;
    std::optional<std::size_t> sgd_stages, sgd_steps;
    std::optional<double> sgd_lr;
    std::optional<std::size_t> min_objects, min_queries;
    std::optional<double> sampling_ratio, clustering_ratio;
    std::optional<std::size_t> repetitions;
    std::optional<std::size_t> rl_epochs;
    std::string estimator;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "JSON run config")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "Seed for data, workloads and training");
    cmd->add_option("--out-dir", o.out_dir, "Directory for artifacts")->capture_default_str();
    cmd->add_option("--dataset", o.dataset, "Dataset file (default: synthetic from the config)");
    cmd->add_option("--format", o.format, "Dataset format: csv or jsonl");
}

void add_build_flags(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--w1", o.w1, "Cost weight per bottom cluster");
    cmd->add_option("--w2", o.w2, "Cost weight per object check");
    cmd->add_option("--sgd-stages", o.sgd_stages, "Annealing stages per split search");
    cmd->add_option("--sgd-steps", o.sgd_steps, "SGD steps per stage");
    cmd->add_option("--sgd-lr", o.sgd_lr, "SGD learning rate");
    cmd->add_option("--min-objects", o.min_objects, "Smallest subspace that may be split");
    cmd->add_option("--min-queries", o.min_queries, "Fewest intersecting queries for a split");
    cmd->add_option("--sampling-ratio", o.sampling_ratio, "Stratified training-workload sample ratio");
    cmd->add_option("--clustering-ratio", o.clustering_ratio, "Spectral pre-grouping ratio (1 disables)");
    cmd->add_option("--rl-epochs", o.rl_epochs, "DQN epochs per level");
    cmd->add_option("--estimator", o.estimator, "Selectivity estimator: cdf or exact");
}

RunConfig resolve(const Overrides& o) {
    RunConfig c;
    if (!o.config.empty()) c = run_config_from_json(json::parse(read_file(o.config)));
    if (o.seed) {
        c.seed = *o.seed;
        c.synthetic.seed = *o.seed;
        c.build.seed = *o.seed;
    }
    if (!o.dataset.empty()) c.dataset_path = o.dataset;
    if (o.format == "jsonl") c.dataset_format = DatasetFormat::Jsonl;
    else if (o.format == "csv") c.dataset_format = DatasetFormat::Csv;
    else if (!o.format.empty()) throw std::invalid_argument("--format must be csv or jsonl");
    if (o.w1) c.build.cw.w1 = *o.w1;
    if (o.w2) c.build.cw.w2 = *o.w2;
    if (o.sgd_stages) c.build.sgd.stages = *o.sgd_stages;
    if (o.sgd_steps) c.build.sgd.steps_per_stage = *o.sgd_steps;
    if (o.sgd_lr) c.build.sgd.learning_rate = *o.sgd_lr;
    if (o.min_objects) c.build.limits.min_objects = *o.min_objects;
    if (o.min_queries) c.build.limits.min_queries = *o.min_queries;
    if (o.sampling_ratio) c.build.sampling_ratio = *o.sampling_ratio;
    if (o.clustering_ratio) c.build.packer.clustering_ratio = *o.clustering_ratio;
    if (o.repetitions) c.repetitions = *o.repetitions;
    if (o.rl_epochs) c.build.packer.rl.epochs = *o.rl_epochs;
    if (o.estimator == "exact") c.build.estimator = EstimatorKind::Exact;
    else if (o.estimator == "cdf") c.build.estimator = EstimatorKind::Cdf;
    else if (!o.estimator.empty()) throw std::invalid_argument("--estimator must be cdf or exact");
    return c;
}

void write_json(const fs::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

std::size_t grid_cells(const RunConfig& c, std::size_t clusters) {
    if (c.grid_cells_per_dim > 0) return c.grid_cells_per_dim;
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(clusters)))));
}

// Builds and writes every artifact as soon as its stage finishes.
BuildResult build_with_artifacts(const RunConfig& c, const Dataset& ds, const Workload& train, const fs::path& dir) {
    fs::create_directories(dir);
    write_json(dir / "config.json", to_json(c));
    const auto on_stage = [&](std::string_view stage, const BuildResult& r) {
        if (stage == "models" && r.models) write_json(dir / "models.json", r.models->to_json());
        if (stage == "clusters") write_json(dir / "clusters.json", clusters_to_json(r.clusters));
        if (stage == "packing") write_file(dir / "dqn_metrics.csv", metrics_csv(r.hierarchy.reports));
        if (stage == "assemble") r.index->serialize(dir / "index.bin");
        std::cerr << "  " << stage << " done\n";
    };
    auto res = build_wisk(ds, train, c.build, on_stage);
    json levels = json::array();
    for (const auto& l : res.hierarchy.levels) levels.push_back(l.size());
    write_json(dir / "build_metrics.json", {{"timings", to_json(res.timings)},
                                            {"clusters", res.clusters.size()},
                                            {"levels", levels},
                                            {"height", res.index->height()},
                                            {"nodes", res.index->nodes().size()},
                                            {"index_bytes", res.index->serialize_bytes().size()},
                                            {"training_queries", res.training.size()},
                                            {"config_hash", config_hash(to_json(c))}});
    return res;
}

int cmd_gen_data(const RunConfig& c, const std::string& out) {
    const auto ds = generate_dataset(c.synthetic);
    write_dataset_csv(ds, out);
    std::cout << "wrote " << ds.size() << " objects, " << ds.dict().size() << " keywords to " << out << "\n";
    return 0;
}

int cmd_ingest(const RunConfig& c, const fs::path& dir) {
    const auto ds = load_or_generate_dataset(c);
    fs::create_directories(dir);
    write_dataset_csv(ds, dir / "dataset.csv");
    std::size_t cls[3] = {0, 0, 0};
    for (KeywordId k = 0; k < ds.dict().size(); ++k) ++cls[static_cast<int>(keyword_frequency_class(ds, k, c.build.cdf.thresholds))];
    const auto& s = ds.space();
    const json stats = {{"objects", ds.size()},
                        {"keywords", ds.dict().size()},
                        {"space", {s.xb, s.yb, s.xu, s.yu}},
                        {"low_keywords", cls[0]},
                        {"medium_keywords", cls[1]},
                        {"high_keywords", cls[2]},
                        {"dict_hash", ds.dict().hash()}};
    write_json(dir / "dataset_stats.json", stats);
    std::cout << stats.dump(2) << "\n";
    return 0;
}

int cmd_gen_workload(const RunConfig& c, const fs::path& dir) {
    const auto ds = load_or_generate_dataset(c);
    const auto [train, test] = load_or_generate_workloads(c, ds);
    fs::create_directories(dir);
    save_workload(train, ds.dict(), dir / "train_workload.json");
    save_workload(test, ds.dict(), dir / "test_workload.json");
    std::cout << "wrote " << train.size() << " training and " << test.size() << " test queries to " << dir << "\n";
    return 0;
}

int cmd_build(const RunConfig& c, const fs::path& dir) {
    const auto ds = load_or_generate_dataset(c);
    const auto [train, test] = load_or_generate_workloads(c, ds);
    fs::create_directories(dir);
    save_workload(train, ds.dict(), dir / "train_workload.json");
    save_workload(test, ds.dict(), dir / "test_workload.json");
    const auto res = build_with_artifacts(c, ds, train, dir);
    std::cout << to_json(res.timings).dump(2) << "\n";
    return 0;
}

int cmd_query(const RunConfig& c, const fs::path& index_path, const fs::path& workload_path, const fs::path& out) {
    const auto ds = load_or_generate_dataset(c);
    const auto idx = WiskIndex::deserialize(index_path, ds);
    const auto w = load_workload(workload_path, ds.dict());
    std::ofstream file;
    if (!out.empty()) file.open(out);
    std::ostream& os = out.empty() ? std::cout : file;
    std::size_t bad = 0;
    for (const auto& q : w.queries) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto r = idx.query_range(q);
        const double us = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
        os << query_stats_json(q.id, r.stats, us).dump() << "\n";
        if (r.ids != query_bruteforce(ds, q)) {
            std::cerr << "mismatch on query " << q.id << "\n";
            ++bad;
        }
    }
    return bad == 0 ? 0 : 1;
}

int cmd_bench(const RunConfig& c, const fs::path& dir) {
    const auto ds = std::make_shared<Dataset>(load_or_generate_dataset(c));
    const auto [train, test] = load_or_generate_workloads(c, *ds);
    const auto res = build_with_artifacts(c, *ds, train, dir);

    WiskSearch wisk_idx("WISK", res.index);
    wisk_idx.build_seconds = res.timings.total();
    const auto t0 = std::chrono::steady_clock::now();
    auto flat = std::make_shared<WiskIndex>(build_flat(*ds, res.clusters, c.build));
    WiskSearch flat_idx(std::string(to_string(BaselineKind::FlatClusters)), flat);
    // The flat layout reuses WISK's clusters, so it pays for them too.
    flat_idx.build_seconds = res.timings.models + res.timings.clusters +
                             std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto t1 = std::chrono::steady_clock::now();
    auto grid = build_uniform_grid(*ds, grid_cells(c, res.clusters.size()));
    grid->build_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
    BruteForceIndex brute(ds);

    const SearchIndex* all[] = {&wisk_idx, &flat_idx, grid.get(), &brute};
    auto rep = run_bench(all, *ds, test, c.repetitions);
    rep.seed = c.seed;
    rep.config_hash = config_hash(to_json(c));
    write_json(dir / "bench.json", to_json(rep));
    write_file(dir / "bench.csv", to_csv(rep));
    std::cout << to_csv(rep);
    return 0;
}

int cmd_insert(const RunConfig& c, const fs::path& index_path, const fs::path& objects_path, const fs::path& models_path,
               const fs::path& out) {
    const auto ds = load_or_generate_dataset(c);
    auto idx = WiskIndex::deserialize(index_path, ds);
    if (!models_path.empty()) {
        auto models = std::make_shared<KeywordModels>(KeywordModels::from_json(json::parse(read_file(models_path))));
        idx.set_estimator_factory([models](std::span<const GeoObject>) { return models; });
    }
    // New records use the base dictionary; unknown keywords are rejected.
    const auto extra = load_dataset(objects_path, c.dataset_format);
    ObjectId next = 0;
    for (const auto& o : idx.objects()) next = std::max(next, o.id + 1);
    const std::size_t retrains_before = idx.retrain_count();
    for (const auto& o : extra.objects()) {
        GeoObject g;
        g.id = next++;
        g.loc = o.loc;
        for (KeywordId k : o.kws) {
            const auto& word = extra.dict().word(k);
            const auto id = ds.dict().find(word);
            if (!id) throw std::invalid_argument("keyword not in the index dictionary: " + word);
            g.kws.push_back(*id);
        }
        normalize(g.kws);
        idx.insert_object(g);
    }
    idx.serialize(out);
    const json summary = {{"inserted", extra.size()},
                          {"objects", idx.num_objects()},
                          {"buffered", idx.insert_buffer().size()},
                          {"retrains", idx.retrain_count() - retrains_before},
                          {"leaves", idx.num_leaves()}};
    std::cout << summary.dump(2) << "\n";
    const auto problems = idx.check_invariants();
    for (const auto& p : problems) std::cerr << "invariant: " << p << "\n";
    return problems.empty() ? 0 : 1;
}

int cmd_shift(const RunConfig& c, const fs::path& dir) {
    const auto ds = load_or_generate_dataset(c);
    fs::create_directories(dir);
    std::vector<Workload> phase_train;
    std::vector<Workload> phase_test;
    std::vector<std::string> names;
    for (std::size_t p = 0; p < c.shift_phases.size(); ++p) {
        RunConfig pc = c;
        pc.workload.distribution = c.shift_phases[p];
        pc.train_queries = c.train_queries;
        pc.test_queries = c.shift_queries_per_phase;
        pc.train_workload_path.clear();
        pc.test_workload_path.clear();
        pc.seed = c.seed + 1000 * (p + 1);
        auto [tr, te] = load_or_generate_workloads(pc, ds);
        phase_train.push_back(std::move(tr));
        phase_test.push_back(std::move(te));
        names.emplace_back(to_string(c.shift_phases[p]));
    }
    if (phase_train.empty()) throw std::invalid_argument("shift needs at least one phase");
    auto first = build_wisk(ds, phase_train[0], c.build);
    IndexHandle handle(first.index);
    const BuildConfig bc = c.build;
    const auto builder = [&ds, bc](const Workload& w) { return build_wisk(ds, w, bc).index; };
    const auto rep = run_workload_shift(handle, ds, phase_train, phase_test, names, c.shift_window, builder);
    write_json(dir / "shift.json", to_json(rep));
    write_file(dir / "shift.csv", to_csv(rep));
    std::cout << to_csv(rep);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Workload-aware learned index for spatial keyword range queries"};
    app.require_subcommand(1);
    Overrides o;
    std::string out_file;
    std::string index_path;
    std::string workload_path;
    std::string objects_path;
    std::string models_path;

    auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset as CSV");
    add_common(gen, o);
    gen->add_option("--out", out_file, "Output CSV")->required();
    std::optional<std::size_t> objects, vocab;
    gen->add_option("--objects", objects, "Object count");
    gen->add_option("--vocabulary", vocab, "Keyword vocabulary size");

    auto* ingest = app.add_subcommand("ingest", "Parse and validate a dataset; write it normalized with stats");
    add_common(ingest, o);

    auto* gw = app.add_subcommand("gen-workload", "Generate disjoint training and test workloads");
    add_common(gw, o);
    std::string dist;
    std::optional<std::size_t> train_n, test_n;
    gw->add_option("--distribution", dist, "UNI, LAP, GAU or MIX");
    gw->add_option("--train-queries", train_n, "Training query count");
    gw->add_option("--test-queries", test_n, "Test query count");

    auto* build = app.add_subcommand("build", "Run the full pipeline and write the index and metrics");
    add_common(build, o);
    add_build_flags(build, o);

    auto* query = app.add_subcommand("query", "Run a workload against a saved index; per-query stats as JSON lines");
    add_common(query, o);
    query->add_option("--index", index_path, "Index file")->required()->check(CLI::ExistingFile);
    query->add_option("--workload", workload_path, "Workload JSON")->required()->check(CLI::ExistingFile);
    query->add_option("--out", out_file, "Output file (default stdout)");

    auto* bench = app.add_subcommand("bench", "Build WISK and the baselines, verify, and time them");
    add_common(bench, o);
    add_build_flags(bench, o);
    bench->add_option("--repetitions", o.repetitions, "Timed passes over the test workload");

    auto* insert = app.add_subcommand("insert", "Insert objects into a saved index (retrains when the buffer fills)");
    add_common(insert, o);
    insert->add_option("--index", index_path, "Index file")->required()->check(CLI::ExistingFile);
    insert->add_option("--objects", objects_path, "New objects in the dataset format")->required()->check(CLI::ExistingFile);
    insert->add_option("--models", models_path, "Keyword models JSON for retraining (default: exact counts)");
    insert->add_option("--out", out_file, "Output index file")->required();

    auto* shift = app.add_subcommand("shift", "Replay workload phases with background retraining");
    add_common(shift, o);
    add_build_flags(shift, o);

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig c = resolve(o);
        if (objects) c.synthetic.num_objects = *objects;
        if (vocab) c.synthetic.vocabulary = *vocab;
        if (!dist.empty()) c.workload.distribution = parse_distribution(dist);
        if (train_n) c.train_queries = *train_n;
        if (test_n) c.test_queries = *test_n;

        if (*gen) return cmd_gen_data(c, out_file);
        if (*ingest) return cmd_ingest(c, o.out_dir);
        if (*gw) return cmd_gen_workload(c, o.out_dir);
        if (*build) return cmd_build(c, o.out_dir);
        if (*query) return cmd_query(c, index_path, workload_path, out_file);
        if (*bench) return cmd_bench(c, o.out_dir);
        if (*insert) return cmd_insert(c, index_path, objects_path, models_path, out_file);
        if (*shift) return cmd_shift(c, o.out_dir);
    } catch (const BuildStageError& e) {
        std::cerr << "build failed in stage " << e.stage() << ": " << e.what() << "\n";
        return 2;
    } catch (const BenchMismatch& e) {
        std::cerr << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
