#include "fewtab/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace fewtab {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.count(key)) {
            throw ConfigError("config: unknown key '" + where + "." + key + "'");
        }
    }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

std::string rank_mode_name(FeatureRankMode m) {
    return m == FeatureRankMode::Distance ? "distance" : "one_minus_distance";
}

FeatureRankMode rank_mode_from_name(const std::string& s) {
    if (s == "distance") return FeatureRankMode::Distance;
    if (s == "one_minus_distance") return FeatureRankMode::OneMinusDistance;
    throw ConfigError("config: unknown rank_mode '" + s + "'");
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: top level must be an object");

    ExperimentConfig cfg;
    try {
        check_keys(j, "", {"dataset", "layout", "backbone", "head", "episodes", "train", "out",
                           "weights", "diagnose", "dump_episodes"});
        if (j.contains("dataset")) {
            const json& d = j.at("dataset");
            check_keys(d, "dataset", {"path", "label", "synthetic"});
            read_field(d, "path", cfg.dataset_path);
            read_field(d, "label", cfg.label_column);
            if (d.contains("synthetic")) {
                const json& s = d.at("synthetic");
                check_keys(s, "dataset.synthetic",
                           {"classes", "rows_per_class", "features", "informative", "separation",
                            "seed"});
                read_field(s, "classes", cfg.synthetic.classes);
                read_field(s, "rows_per_class", cfg.synthetic.rows_per_class);
                read_field(s, "features", cfg.synthetic.features);
                read_field(s, "informative", cfg.synthetic.informative);
                read_field(s, "separation", cfg.synthetic.separation);
                read_field(s, "seed", cfg.synthetic.seed);
            }
        }
        if (j.contains("layout")) {
            const json& l = j.at("layout");
            check_keys(l, "layout", {"seed", "max_sweeps", "rank_mode"});
            read_field(l, "seed", cfg.layout_seed);
            read_field(l, "max_sweeps", cfg.max_sweeps);
            if (l.contains("rank_mode")) {
                cfg.rank_mode = rank_mode_from_name(l.at("rank_mode").get<std::string>());
            }
        }
        if (j.contains("backbone")) {
            const json& b = j.at("backbone");
            check_keys(b, "backbone", {"arch", "channels", "latent", "init_seed"});
            if (b.contains("arch")) cfg.backbone.arch = arch_from_name(b.at("arch").get<std::string>());
            read_field(b, "channels", cfg.backbone.channels);
            if (b.contains("latent")) {
                const std::string m = b.at("latent").get<std::string>();
                if (m == "flatten") {
                    cfg.backbone.latent_mode = LatentMode::Flatten;
                } else if (m == "gap") {
                    cfg.backbone.latent_mode = LatentMode::GlobalAvgPool;
                } else {
                    throw ConfigError("config: unknown latent mode '" + m + "'");
                }
            }
            read_field(b, "init_seed", cfg.init_seed);
        }
        if (j.contains("head")) {
            const json& h = j.at("head");
            check_keys(h, "head", {"kind", "inner_steps", "inner_lr"});
            if (h.contains("kind")) cfg.head = head_from_name(h.at("kind").get<std::string>());
            read_field(h, "inner_steps", cfg.maml.inner_steps);
            read_field(h, "inner_lr", cfg.maml.inner_lr);
        }
        if (j.contains("episodes")) {
            const json& e = j.at("episodes");
            check_keys(e, "episodes", {"way", "shot", "query", "count", "seed"});
            read_field(e, "way", cfg.episode.way);
            read_field(e, "shot", cfg.episode.shot);
            read_field(e, "query", cfg.episode.query);
            read_field(e, "count", cfg.episode_count);
            read_field(e, "seed", cfg.episode.seed);
        }
        if (j.contains("train")) {
            const json& t = j.at("train");
            check_keys(t, "train", {"epochs", "episodes_per_epoch", "lr"});
            read_field(t, "epochs", cfg.epochs);
            read_field(t, "episodes_per_epoch", cfg.episodes_per_epoch);
            read_field(t, "lr", cfg.lr);
        }
        read_field(j, "out", cfg.out_dir);
        read_field(j, "weights", cfg.weights_path);
        if (j.contains("diagnose")) {
            const json& d = j.at("diagnose");
            check_keys(d, "diagnose", {"points", "natural", "tabular"});
            read_field(d, "points", cfg.points_csv);
            read_field(d, "natural", cfg.natural_path);
            read_field(d, "tabular", cfg.tabular_path);
        }
        read_field(j, "dump_episodes", cfg.dump_episodes);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string ExperimentConfig::canonical_json() const {
    json j;  // nlohmann objects keep keys sorted, which makes the dump stable
    j["dataset"]["path"] = dataset_path;
    j["dataset"]["label"] = label_column;
    j["dataset"]["synthetic"] = {{"classes", synthetic.classes},
                                 {"rows_per_class", synthetic.rows_per_class},
                                 {"features", synthetic.features},
                                 {"informative", synthetic.informative},
                                 {"separation", synthetic.separation},
                                 {"seed", synthetic.seed}};
    j["layout"] = {{"seed", layout_seed},
                   {"max_sweeps", max_sweeps},
                   {"rank_mode", rank_mode_name(rank_mode)}};
    j["backbone"] = {{"arch", arch_name(backbone.arch)},
                     {"channels", backbone.channels},
                     {"latent", backbone.latent_mode == LatentMode::Flatten ? "flatten" : "gap"},
                     {"init_seed", init_seed}};
    j["head"] = {{"kind", head_name(head)},
                 {"inner_steps", maml.inner_steps},
                 {"inner_lr", maml.inner_lr}};
    j["episodes"] = {{"way", episode.way},
                     {"shot", episode.shot},
                     {"query", episode.query},
                     {"count", episode_count},
                     {"seed", episode.seed}};
    j["train"] = {{"epochs", epochs}, {"episodes_per_epoch", episodes_per_epoch}, {"lr", lr}};
    j["out"] = out_dir;
    j["weights"] = weights_path;
    j["diagnose"] = {{"points", points_csv}, {"natural", natural_path}, {"tabular", tabular_path}};
    j["dump_episodes"] = dump_episodes;
    return j.dump();
}

std::string ExperimentConfig::hash() const { return to_hex(fnv1a64(canonical_json())); }

void apply_overrides(ExperimentConfig& cfg, const ConfigOverrides& ov) {
    if (ov.label) cfg.label_column = *ov.label;
    if (ov.seed) cfg.episode.seed = *ov.seed;
    if (ov.way) cfg.episode.way = *ov.way;
    if (ov.shot) cfg.episode.shot = *ov.shot;
    if (ov.query) cfg.episode.query = *ov.query;
    if (ov.episodes) cfg.episode_count = *ov.episodes;
    if (ov.arch) cfg.backbone.arch = arch_from_name(*ov.arch);
    if (ov.head) cfg.head = head_from_name(*ov.head);
    if (ov.out) cfg.out_dir = *ov.out;
}

}  // namespace fewtab
