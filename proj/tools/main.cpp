#include <iostream>

#include <CLI11.hpp>

#include "fewtab/commands.hpp"

namespace {

struct FlagValues {
    std::string config;
    std::string label, arch, head, out;
    uint64_t seed = 0;
    int way = 0, shot = 0, query = 0, episodes = 0;
};

void add_common_flags(CLI::App* cmd, FlagValues& v) {
    cmd->add_option("--config", v.config, "experiment config JSON")->required();
    cmd->add_option("--label", v.label, "label column name");
    cmd->add_option("--seed", v.seed, "episode master seed");
    cmd->add_option("--way", v.way, "classes per episode");
    cmd->add_option("--shot", v.shot, "supports per class");
    cmd->add_option("--query", v.query, "queries per class");
    cmd->add_option("--episodes", v.episodes, "evaluation episode count");
    cmd->add_option("--arch", v.arch, "backbone architecture")
        ->check(CLI::IsMember({"conv2", "conv3", "conv4"}));
    cmd->add_option("--head", v.head, "classifier head")->check(CLI::IsMember({"proto", "maml"}));
    cmd->add_option("--out", v.out, "output directory");
}

fewtab::ConfigOverrides overrides_from(const CLI::App* cmd, const FlagValues& v) {
    fewtab::ConfigOverrides ov;
    if (cmd->count("--label")) ov.label = v.label;
    if (cmd->count("--seed")) ov.seed = v.seed;
    if (cmd->count("--way")) ov.way = v.way;
    if (cmd->count("--shot")) ov.shot = v.shot;
    if (cmd->count("--query")) ov.query = v.query;
    if (cmd->count("--episodes")) ov.episodes = v.episodes;
    if (cmd->count("--arch")) ov.arch = v.arch;
    if (cmd->count("--head")) ov.head = v.head;
    if (cmd->count("--out")) ov.out = v.out;
    return ov;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"few-shot classification of small tables through tiled feature images"};
    app.require_subcommand(1);

    FlagValues flags;
    CLI::App* transform = app.add_subcommand("transform", "convert a table into an image corpus");
    CLI::App* train = app.add_subcommand("train", "meta-train a backbone on an image corpus");
    CLI::App* eval = app.add_subcommand("eval", "episodic evaluation of trained weights");
    CLI::App* diagnose = app.add_subcommand("diagnose", "2-D coverage diagnostic");
    for (CLI::App* cmd : {transform, train, eval, diagnose}) add_common_flags(cmd, flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    const CLI::App* cmd = app.get_subcommands().front();
    fewtab::ExperimentConfig cfg;
    try {
        cfg = fewtab::load_config(flags.config);
        fewtab::apply_overrides(cfg, overrides_from(cmd, flags));
    } catch (const fewtab::Error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }

    if (cmd == transform) return fewtab::cmd_transform(cfg, std::cout, std::cerr);
    if (cmd == train) return fewtab::cmd_train(cfg, std::cout, std::cerr);
    if (cmd == eval) return fewtab::cmd_eval(cfg, std::cout, std::cerr);
    return fewtab::cmd_diagnose(cfg, std::cout, std::cerr);
}
