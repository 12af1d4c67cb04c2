#include "stgcl/config.hpp"

#include <fstream>
#include <set>

namespace stgcl {

using nlohmann::json;

namespace {

// Collects unknown keys instead of failing one at a time.
void check_keys(const json& obj, const std::string& prefix,
                const std::set<std::string>& allowed, std::vector<std::string>& offending) {
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.count(key)) offending.push_back(prefix + key);
    }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    return obj.at(key).get<T>();
}

std::vector<AugmentSpec> parse_augment_list(const json& arr, std::vector<std::string>& offending) {
    std::vector<AugmentSpec> specs;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const json& item = arr.at(i);
        check_keys(item, "train.augment[" + std::to_string(i) + "].",
                   {"method", "rate", "keep_low"}, offending);
        AugmentSpec spec;
        spec.method = parse_augment_method(item.at("method").get<std::string>());
        spec.rate = get_or(item, "rate", spec.method == AugmentMethod::kInputMask ? 0.01 : 0.1);
        spec.keep_low = get_or<i64>(item, "keep_low", 20);
        specs.push_back(spec);
    }
    return specs;
}

}  // namespace

ExperimentConfig parse_experiment_config(const json& doc) {
    std::vector<std::string> offending;
    check_keys(doc, "", {"dataset", "split", "window", "graph", "model", "train", "output"},
               offending);

    ExperimentConfig cfg;

    if (doc.contains("dataset")) {
        const json& d = doc["dataset"];
        check_keys(d, "dataset.",
                   {"series", "format", "edges", "steps_per_day", "interval_min", "synth"},
                   offending);
        if (d.contains("series")) cfg.dataset.series_path = d["series"].get<std::string>();
        cfg.dataset.format = get_or<std::string>(d, "format", "stgs");
        if (d.contains("edges")) cfg.dataset.edges_path = d["edges"].get<std::string>();
        cfg.dataset.csv_steps_per_day = get_or<i64>(d, "steps_per_day", 288);
        cfg.dataset.csv_interval_min = get_or<i64>(d, "interval_min", 5);
        if (d.contains("synth")) {
            const json& s = d["synth"];
            check_keys(s, "dataset.synth.",
                       {"nodes", "days", "steps_per_day", "seed", "noise_sigma"}, offending);
            SynthConfig sc;
            sc.nodes = get_or<i64>(s, "nodes", 15);
            sc.days = get_or<i64>(s, "days", 30);
            sc.steps_per_day = get_or<i64>(s, "steps_per_day", 48);
            sc.seed = get_or<u64>(s, "seed", 1);
            sc.noise_sigma = get_or<double>(s, "noise_sigma", 8.0);
            cfg.dataset.synth = sc;
        }
    }

    if (doc.contains("split")) {
        const json& s = doc["split"];
        check_keys(s, "split.", {"train", "val", "test"}, offending);
        cfg.split.train = get_or<double>(s, "train", 0.6);
        cfg.split.val = get_or<double>(s, "val", 0.2);
        cfg.split.test = get_or<double>(s, "test", 0.2);
    }

    if (doc.contains("window")) {
        const json& w = doc["window"];
        check_keys(w, "window.", {"input_steps", "output_steps"}, offending);
        cfg.input_steps = get_or<i64>(w, "input_steps", 12);
        cfg.output_steps = get_or<i64>(w, "output_steps", 12);
    }

    if (doc.contains("graph")) {
        const json& g = doc["graph"];
        check_keys(g, "graph.", {"threshold"}, offending);
        cfg.graph_threshold = get_or<double>(g, "threshold", 0.1);
    }

    if (doc.contains("model")) {
        const json& m = doc["model"];
        check_keys(m, "model.", {"preset", "dilations", "hidden", "diffusion_steps", "dropout"},
                   offending);
        const std::string preset = get_or<std::string>(m, "preset", "desk");
        if (preset == "desk") {
            cfg.encoder = EncoderConfig::desk();
        } else if (preset == "paper") {
            cfg.encoder = EncoderConfig::paper();
        } else {
            throw ConfigError("model.preset must be 'desk' or 'paper', got '" + preset + "'");
        }
        if (m.contains("dilations")) cfg.encoder.dilations = m["dilations"].get<std::vector<i64>>();
        cfg.encoder.hidden = get_or<i64>(m, "hidden", cfg.encoder.hidden);
        cfg.encoder.diffusion_steps = get_or<i64>(m, "diffusion_steps", cfg.encoder.diffusion_steps);
        cfg.encoder.dropout = get_or<double>(m, "dropout", cfg.encoder.dropout);
    }

    if (doc.contains("train")) {
        const json& t = doc["train"];
        check_keys(t, "train.",
                   {"scheme", "level", "lambda", "tau", "r_f_min", "spatial_filter", "augment",
                    "epochs", "batch", "lr", "clip_norm", "patience", "seed", "pretrain_epochs",
                    "pretrain_patience", "finetune_encoder_lr", "finetune_decoder_lr",
                    "freeze_encoder", "report_horizons"},
                   offending);
        TrainConfig& tc = cfg.train;
        if (t.contains("scheme")) tc.scheme = parse_scheme(t["scheme"].get<std::string>());
        if (t.contains("level")) tc.level = parse_level(t["level"].get<std::string>());
        tc.lambda = get_or<double>(t, "lambda", tc.lambda);
        tc.tau = get_or<double>(t, "tau", tc.tau);
        tc.r_f_minutes = get_or<double>(t, "r_f_min", tc.r_f_minutes);
        tc.spatial_filter = get_or<bool>(t, "spatial_filter", tc.spatial_filter);
        if (t.contains("augment")) tc.augment = parse_augment_list(t["augment"], offending);
        tc.epochs = get_or<i64>(t, "epochs", tc.epochs);
        tc.batch = get_or<i64>(t, "batch", tc.batch);
        tc.lr = get_or<double>(t, "lr", tc.lr);
        tc.clip_norm = get_or<double>(t, "clip_norm", tc.clip_norm);
        tc.patience = get_or<i64>(t, "patience", tc.patience);
        tc.seed = get_or<u64>(t, "seed", tc.seed);
        tc.pretrain_epochs = get_or<i64>(t, "pretrain_epochs", tc.pretrain_epochs);
        tc.pretrain_patience = get_or<i64>(t, "pretrain_patience", tc.pretrain_patience);
        tc.finetune_encoder_lr = get_or<double>(t, "finetune_encoder_lr", tc.finetune_encoder_lr);
        tc.finetune_decoder_lr = get_or<double>(t, "finetune_decoder_lr", tc.finetune_decoder_lr);
        tc.freeze_encoder = get_or<bool>(t, "freeze_encoder", tc.freeze_encoder);
        if (t.contains("report_horizons")) {
            tc.report_horizons = t["report_horizons"].get<std::vector<i64>>();
        }
    }

    cfg.output_dir = get_or<std::string>(doc, "output", "");

    if (!offending.empty()) {
        std::string msg = "unknown configuration keys:";
        for (const std::string& k : offending) msg += " " + k;
        throw ConfigError(msg);
    }

    // value checks
    if (!cfg.dataset.series_path.has_value() && !cfg.dataset.synth.has_value()) {
        throw ConfigError("dataset: provide either 'series' or 'synth'");
    }
    if (cfg.dataset.series_path.has_value() && !cfg.dataset.edges_path.has_value()) {
        throw ConfigError("dataset: a series file needs an 'edges' file for the sensor graph");
    }
    if (cfg.dataset.format != "stgs" && cfg.dataset.format != "csv") {
        throw ConfigError("dataset.format must be 'stgs' or 'csv'");
    }
    if (cfg.train.lambda < 0.0) throw ConfigError("train.lambda must be >= 0");
    if (cfg.train.tau <= 0.0) throw ConfigError("train.tau must be > 0");
    if (cfg.train.epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (cfg.train.batch < 1) throw ConfigError("train.batch must be >= 1");
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return parse_experiment_config(doc);
}

json ExperimentConfig::echo() const {
    json d;
    if (dataset.series_path.has_value()) {
        d["series"] = *dataset.series_path;
        d["format"] = dataset.format;
        if (dataset.edges_path.has_value()) d["edges"] = *dataset.edges_path;
        if (dataset.format == "csv") {
            d["steps_per_day"] = dataset.csv_steps_per_day;
            d["interval_min"] = dataset.csv_interval_min;
        }
    }
    if (dataset.synth.has_value()) {
        d["synth"] = {{"nodes", dataset.synth->nodes},
                      {"days", dataset.synth->days},
                      {"steps_per_day", dataset.synth->steps_per_day},
                      {"seed", dataset.synth->seed},
                      {"noise_sigma", dataset.synth->noise_sigma}};
    }

    json aug = json::array();
    for (const AugmentSpec& spec : train.augment) {
        json item = {{"method", augment_method_name(spec.method)}, {"rate", spec.rate}};
        if (spec.method == AugmentMethod::kInputSmooth) item["keep_low"] = spec.keep_low;
        aug.push_back(item);
    }

    return json{
        {"dataset", d},
        {"split", {{"train", split.train}, {"val", split.val}, {"test", split.test}}},
        {"window", {{"input_steps", input_steps}, {"output_steps", output_steps}}},
        {"graph", {{"threshold", graph_threshold}}},
        {"model",
         {{"dilations", encoder.dilations},
          {"hidden", encoder.hidden},
          {"diffusion_steps", encoder.diffusion_steps},
          {"dropout", encoder.dropout}}},
        {"train",
         {{"scheme", scheme_name(train.scheme)},
          {"level", level_name(train.level)},
          {"lambda", train.lambda},
          {"tau", train.tau},
          {"r_f_min", train.r_f_minutes},
          {"spatial_filter", train.spatial_filter},
          {"augment", aug},
          {"epochs", train.epochs},
          {"batch", train.batch},
          {"lr", train.lr},
          {"clip_norm", train.clip_norm},
          {"patience", train.patience},
          {"seed", train.seed},
          {"pretrain_epochs", train.pretrain_epochs},
          {"pretrain_patience", train.pretrain_patience},
          {"finetune_encoder_lr", train.finetune_encoder_lr},
          {"finetune_decoder_lr", train.finetune_decoder_lr},
          {"freeze_encoder", train.freeze_encoder},
          {"report_horizons", train.report_horizons}}},
        {"output", output_dir}};
}

PreparedExperiment prepare_experiment(const ExperimentConfig& config) {
    if (config.dataset.synth.has_value()) {
        SynthResult synth = synth_generate(*config.dataset.synth);
        const i64 spd = config.dataset.synth->steps_per_day;
        TimeSeriesDataset dataset(std::move(synth.series), spd, 1440 / spd);
        dataset.prepare(config.split, config.input_steps, config.output_steps);
        return PreparedExperiment{std::move(dataset), std::move(synth.graph)};
    }

    TimeSeriesDataset dataset =
        config.dataset.format == "csv"
            ? load_series_csv(*config.dataset.series_path, config.dataset.csv_steps_per_day,
                              config.dataset.csv_interval_min)
            : load_series(*config.dataset.series_path);
    dataset.prepare(config.split, config.input_steps, config.output_steps);
    const auto edges = load_edge_list(*config.dataset.edges_path);
    SensorGraph graph = build_adjacency(dataset.nodes(), edges, config.graph_threshold);
    return PreparedExperiment{std::move(dataset), std::move(graph)};
}

}  // namespace stgcl
