#pragma once

#include <optional>
#include <string>

#include "fewtab/backbone.hpp"
#include "fewtab/fewshot.hpp"
#include "fewtab/synthetic.hpp"
#include "fewtab/transform.hpp"

namespace fewtab {

/// One config drives every command. Loaded from a JSON file, overridable by
/// CLI flags; the canonical dump (sorted keys) is hashed into every artifact
/// so reruns can be matched to their exact settings.
struct ExperimentConfig {
    // dataset: a CSV path, a transform output directory, a directory of
    // class-named subdirectories with PNGs, or "synthetic"
    std::string dataset_path;
    std::string label_column;
    SyntheticSpec synthetic;

    // layout
    uint64_t layout_seed = 0;
    int max_sweeps = 50;
    FeatureRankMode rank_mode = FeatureRankMode::Distance;

    // backbone
    BackboneSpec backbone;
    uint64_t init_seed = 0;

    // head
    HeadKind head = HeadKind::Proto;
    MamlParams maml;

    // episodes
    EpisodeSpec episode;
    int episode_count = 100;

    // training
    int epochs = 5;
    int episodes_per_epoch = 50;
    double lr = 0.01;

    // io
    std::string out_dir = "out";
    std::string weights_path;  // eval input; defaults to <out_dir>/weights.bin
    std::string points_csv;    // diagnose: precomputed 2-D points
    std::string natural_path;  // diagnose: natural image corpus
    std::string tabular_path;  // diagnose: tabular image corpus
    bool dump_episodes = false;

    std::string canonical_json() const;
    std::string hash() const;
};

ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& json_text);

/// CLI flag overrides; only fields the user set are applied.
struct ConfigOverrides {
    std::optional<std::string> label;
    std::optional<uint64_t> seed;
    std::optional<int> way, shot, query, episodes;
    std::optional<std::string> arch, head, out;
};

void apply_overrides(ExperimentConfig& cfg, const ConfigOverrides& ov);

}  // namespace fewtab
