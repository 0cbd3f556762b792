#include "wisk/pipeline.hpp"

#include <chrono>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace wisk {

using json = nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

IndexConfig index_config(const BuildConfig& cfg) {
    IndexConfig ic;
    ic.buffer_capacity = cfg.buffer_capacity;
    ic.cw = cfg.cw;
    ic.limits = cfg.limits;
    ic.sgd = cfg.sgd;
    return ic;
}

}  // namespace

BuildResult build_wisk(const Dataset& ds, const Workload& w, const BuildConfig& cfg, const StageCallback& on_stage) {
    if (ds.empty()) throw std::invalid_argument("build_wisk: empty dataset");
    if (w.empty()) throw std::invalid_argument("build_wisk: empty training workload");
    BuildResult res;
    res.training = cfg.sampling_ratio < 1.0 ? stratified_sample(w, cfg.sampling_ratio, cfg.seed) : w;

    const auto stage = [&](const char* name, double& seconds, auto&& body) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            body();
        } catch (const std::exception& e) {
            throw BuildStageError(name, e.what());
        }
        seconds = seconds_since(t0);
        if (on_stage) on_stage(name, res);
    };

    std::shared_ptr<const SelectivityEstimator> est;
    stage("models", res.timings.models, [&] {
        if (cfg.estimator == EstimatorKind::Cdf) {
            const auto itemsets = mine_frequent_itemsets(ds, cfg.cdf.min_support, cfg.cdf.max_itemset_size);
            auto models = std::make_shared<KeywordModels>(build_keyword_models(ds, itemsets, cfg.cdf));
            models->set_itemset_correction(cfg.itemset_correction);
            res.models = models;
            est = models;
        } else {
            est = std::make_shared<ExactCountEstimator>(ds.objects());
        }
    });
    stage("clusters", res.timings.clusters,
          [&] { res.clusters = generate_bottom_clusters(ds, res.training, *est, cfg.cw, cfg.limits, cfg.sgd); });
    stage("packing", res.timings.packing, [&] {
        PackerConfig pc = cfg.packer;
        pc.seed ^= cfg.seed;
        res.hierarchy = build_hierarchy(res.clusters, pc);
    });
    stage("assemble", res.timings.assemble, [&] {
        res.index = std::make_shared<WiskIndex>(assemble_index(res.clusters, res.hierarchy.levels, ds, index_config(cfg)));
        res.index->set_workload(res.training);
        if (res.models) {
            auto models = res.models;
            res.index->set_estimator_factory([models](std::span<const GeoObject>) { return models; });
        }
    });
    return res;
}

WiskIndex build_flat(const Dataset& ds, std::span<const BottomCluster> clusters, const BuildConfig& cfg) {
    return assemble_index(clusters, {}, ds, index_config(cfg));
}

// ---------------------------------------------------------------------------
// JSON

json to_json(const BuildConfig& c) {
    return {
        {"cdf",
         {{"hidden_layers", c.cdf.hidden_layers},
          {"hidden_units", c.cdf.hidden_units},
          {"epochs", c.cdf.epochs},
          {"learning_rate", c.cdf.learning_rate},
          {"batch_size", c.cdf.batch_size},
          {"max_train_points", c.cdf.max_train_points},
          {"min_support", c.cdf.min_support},
          {"max_itemset_size", c.cdf.max_itemset_size},
          {"min_itemset_objects", c.cdf.min_itemset_objects},
          {"low_threshold", c.cdf.thresholds.low},
          {"high_threshold", c.cdf.thresholds.high},
          {"seed", c.cdf.seed}}},
        {"cost", {{"w1", c.cw.w1}, {"w2", c.cw.w2}}},
        {"limits", {{"min_queries", c.limits.min_queries}, {"min_objects", c.limits.min_objects}}},
        {"sgd",
         {{"restarts", c.sgd.restarts},
          {"stages", c.sgd.stages},
          {"steps_per_stage", c.sgd.steps_per_stage},
          {"sharpness_start", c.sgd.sharpness_start},
          {"sharpness_end", c.sgd.sharpness_end},
          {"learning_rate", c.sgd.learning_rate},
          {"batch_size", c.sgd.batch_size},
          {"beta", c.sgd.beta},
          {"seed", c.sgd.seed}}},
        {"rl",
         {{"replay_capacity", c.packer.rl.replay_capacity},
          {"gamma", c.packer.rl.gamma},
          {"tau", c.packer.rl.tau},
          {"epochs", c.packer.rl.epochs},
          {"min_total_steps", c.packer.rl.min_total_steps},
          {"batch_size", c.packer.rl.batch_size},
          {"epsilon_start", c.packer.rl.epsilon_start},
          {"epsilon_decay", c.packer.rl.epsilon_decay},
          {"epsilon_floor", c.packer.rl.epsilon_floor},
          {"sync_period", c.packer.rl.sync_period},
          {"learning_rate", c.packer.rl.learning_rate},
          {"hidden", c.packer.rl.hidden},
          {"loss", c.packer.rl.loss == TdLoss::SmoothL1 ? "smooth_l1" : "squared"},
          {"use_mask", c.packer.rl.use_mask},
          {"normalize_counts", c.packer.rl.normalize_counts}}},
        {"clustering_ratio", c.packer.clustering_ratio},
        {"spectral", c.packer.spectral},
        {"packer_seed", c.packer.seed},
        {"estimator", c.estimator == EstimatorKind::Cdf ? "cdf" : "exact"},
        {"itemset_correction", c.itemset_correction},
        {"sampling_ratio", c.sampling_ratio},
        {"buffer_capacity", c.buffer_capacity},
        {"seed", c.seed},
    };
}

BuildConfig build_config_from_json(const json& j) {
    BuildConfig c;
    if (j.contains("cdf")) {
        const auto& d = j["cdf"];
        c.cdf.hidden_layers = d.value("hidden_layers", c.cdf.hidden_layers);
        c.cdf.hidden_units = d.value("hidden_units", c.cdf.hidden_units);
        c.cdf.epochs = d.value("epochs", c.cdf.epochs);
        c.cdf.learning_rate = d.value("learning_rate", c.cdf.learning_rate);
        c.cdf.batch_size = d.value("batch_size", c.cdf.batch_size);
        c.cdf.max_train_points = d.value("max_train_points", c.cdf.max_train_points);
        c.cdf.min_support = d.value("min_support", c.cdf.min_support);
        c.cdf.max_itemset_size = d.value("max_itemset_size", c.cdf.max_itemset_size);
        c.cdf.min_itemset_objects = d.value("min_itemset_objects", c.cdf.min_itemset_objects);
        c.cdf.thresholds.low = d.value("low_threshold", c.cdf.thresholds.low);
        c.cdf.thresholds.high = d.value("high_threshold", c.cdf.thresholds.high);
        c.cdf.seed = d.value("seed", c.cdf.seed);
    }
    if (j.contains("cost")) {
        c.cw.w1 = j["cost"].value("w1", c.cw.w1);
        c.cw.w2 = j["cost"].value("w2", c.cw.w2);
    }
    if (j.contains("limits")) {
        c.limits.min_queries = j["limits"].value("min_queries", c.limits.min_queries);
        c.limits.min_objects = j["limits"].value("min_objects", c.limits.min_objects);
    }
    if (j.contains("sgd")) {
        const auto& d = j["sgd"];
        c.sgd.restarts = d.value("restarts", c.sgd.restarts);
        c.sgd.stages = d.value("stages", c.sgd.stages);
        c.sgd.steps_per_stage = d.value("steps_per_stage", c.sgd.steps_per_stage);
        c.sgd.sharpness_start = d.value("sharpness_start", c.sgd.sharpness_start);
        c.sgd.sharpness_end = d.value("sharpness_end", c.sgd.sharpness_end);
        c.sgd.learning_rate = d.value("learning_rate", c.sgd.learning_rate);
        c.sgd.batch_size = d.value("batch_size", c.sgd.batch_size);
        c.sgd.beta = d.value("beta", c.sgd.beta);
        c.sgd.seed = d.value("seed", c.sgd.seed);
    }
    if (j.contains("rl")) {
        const auto& d = j["rl"];
        auto& r = c.packer.rl;
        r.replay_capacity = d.value("replay_capacity", r.replay_capacity);
        r.gamma = d.value("gamma", r.gamma);
        r.tau = d.value("tau", r.tau);
        r.epochs = d.value("epochs", r.epochs);
        r.min_total_steps = d.value("min_total_steps", r.min_total_steps);
        r.batch_size = d.value("batch_size", r.batch_size);
        r.epsilon_start = d.value("epsilon_start", r.epsilon_start);
        r.epsilon_decay = d.value("epsilon_decay", r.epsilon_decay);
        r.epsilon_floor = d.value("epsilon_floor", r.epsilon_floor);
        r.sync_period = d.value("sync_period", r.sync_period);
        r.learning_rate = d.value("learning_rate", r.learning_rate);
        r.hidden = d.value("hidden", r.hidden);
        const auto loss = d.value("loss", std::string("smooth_l1"));
        if (loss == "smooth_l1") {
            r.loss = TdLoss::SmoothL1;
        } else if (loss == "squared") {
            r.loss = TdLoss::Squared;
        } else {
            throw std::invalid_argument("rl.loss must be smooth_l1 or squared");
        }
        r.use_mask = d.value("use_mask", r.use_mask);
        r.normalize_counts = d.value("normalize_counts", r.normalize_counts);
    }
    c.packer.clustering_ratio = j.value("clustering_ratio", c.packer.clustering_ratio);
    c.packer.spectral = j.value("spectral", c.packer.spectral);
    c.packer.seed = j.value("packer_seed", c.packer.seed);
    const auto est = j.value("estimator", std::string("cdf"));
    if (est == "cdf") {
        c.estimator = EstimatorKind::Cdf;
    } else if (est == "exact") {
        c.estimator = EstimatorKind::Exact;
    } else {
        throw std::invalid_argument("estimator must be cdf or exact");
    }
    c.itemset_correction = j.value("itemset_correction", c.itemset_correction);
    c.sampling_ratio = j.value("sampling_ratio", c.sampling_ratio);
    c.buffer_capacity = j.value("buffer_capacity", c.buffer_capacity);
    c.seed = j.value("seed", c.seed);
    return c;
}

json to_json(const StageTimings& t) {
    return {{"models_seconds", t.models},
            {"clusters_seconds", t.clusters},
            {"packing_seconds", t.packing},
            {"assemble_seconds", t.assemble},
            {"total_seconds", t.total()}};
}

}  // namespace wisk
