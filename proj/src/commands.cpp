#include "fewtab/commands.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "fewtab/image_io.hpp"
#include "fewtab/metrics.hpp"
#include "fewtab/weights_io.hpp"

namespace fewtab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_guarded(std::ostream& err, const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Dataset prepared_dataset(const ExperimentConfig& cfg) {
    Dataset ds;
    if (cfg.dataset_path == "synthetic") {
        ds = make_synthetic_dataset(cfg.synthetic);
    } else {
        if (cfg.label_column.empty()) {
            throw ConfigError("transform: no label column configured");
        }
        CsvOptions opts;
        opts.label_column = cfg.label_column;
        ds = load_csv(cfg.dataset_path, opts);
    }
    ds = encode_labels(ds);
    ds = impute(ds);
    return normalize(ds);
}

std::string row_stem(size_t row) {
    std::ostringstream ss;
    ss << "row_" << std::setw(5) << std::setfill('0') << row;
    return ss.str();
}

ImagePool pool_from_dataset(const Dataset& ds, const FeatureLayout& layout) {
    ImagePool pool;
    pool.class_names = ds.class_names;
    pool.labels = ds.labels;
    pool.images.reserve(ds.n_rows());
    for (size_t r = 0; r < ds.n_rows(); ++r) {
        pool.images.push_back(transform_row(ds, r, layout).pixels);
    }
    return pool;
}

ImagePool pool_from_manifest(const fs::path& dir) {
    json m;
    try {
        m = json::parse(read_text(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw FormatError("corpus: invalid manifest.json: " + std::string(e.what()));
    }
    ImagePool pool;
    try {
        pool.class_names = m.at("classes").get<std::vector<std::string>>();
        for (const json& row : m.at("rows")) {
            pool.labels.push_back(row.at("label").get<int>());
            pool.images.push_back(read_tensor((dir / row.at("tensor").get<std::string>()).string()));
        }
    } catch (const json::exception& e) {
        throw FormatError("corpus: manifest.json missing fields: " + std::string(e.what()));
    }
    return pool;
}

ImagePool pool_from_class_dirs(const fs::path& dir) {
    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_directory()) class_dirs.push_back(entry.path());
    }
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) {
        throw ConfigError("corpus: " + dir.string() + " has no class subdirectories");
    }
    ImagePool pool;
    for (const fs::path& cd : class_dirs) {
        const int cls = static_cast<int>(pool.class_names.size());
        pool.class_names.push_back(cd.filename().string());
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(cd)) {
            if (entry.path().extension() == ".png") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const fs::path& f : files) {
            pool.images.push_back(read_png(f.string()));
            pool.labels.push_back(cls);
        }
    }
    if (pool.images.empty()) throw ConfigError("corpus: no PNG files under " + dir.string());
    return pool;
}

struct PointSets {
    std::vector<Point2> natural;
    std::vector<Point2> tabular;
};

PointSets parse_points_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("points: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "x,y,set") throw FormatError("points: header must be 'x,y,set'");
    PointSets out;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string xs, ys, set;
        if (!std::getline(ls, xs, ',') || !std::getline(ls, ys, ',') || !std::getline(ls, set)) {
            throw FormatError("points: line " + std::to_string(lineno) + " needs 3 fields");
        }
        Point2 p;
        try {
            size_t used = 0;
            p[0] = std::stod(xs, &used);
            if (used != xs.size()) throw std::invalid_argument(xs);
            p[1] = std::stod(ys, &used);
            if (used != ys.size()) throw std::invalid_argument(ys);
        } catch (const std::exception&) {
            throw FormatError("points: line " + std::to_string(lineno) + " has non-numeric coordinates");
        }
        if (set == "natural") {
            out.natural.push_back(p);
        } else if (set == "tabular") {
            out.tabular.push_back(p);
        } else {
            throw FormatError("points: line " + std::to_string(lineno) +
                              " set must be natural or tabular");
        }
    }
    return out;
}

std::string points_csv_text(const PointSets& pts) {
    std::ostringstream ss;
    ss << "x,y,set\n";
    ss << std::setprecision(17);
    for (const auto& p : pts.natural) ss << p[0] << "," << p[1] << ",natural\n";
    for (const auto& p : pts.tabular) ss << p[0] << "," << p[1] << ",tabular\n";
    return ss.str();
}

void write_timings(const fs::path& out_dir, const std::string& command, double seconds) {
    json t;
    t["command"] = command;
    t["wall_seconds"] = seconds;
    write_text(out_dir / "timings.json", t.dump(2) + "\n");
}

class WallClock {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace

ImagePool load_corpus(const ExperimentConfig& cfg) {
    if (cfg.dataset_path == "synthetic") {
        Dataset ds = prepared_dataset(cfg);
        const FeatureLayout layout = build_layout(ds, cfg.layout_seed, cfg.max_sweeps, cfg.rank_mode);
        return pool_from_dataset(ds, layout);
    }
    const fs::path dir(cfg.dataset_path);
    if (!fs::exists(dir)) throw ConfigError("corpus: " + dir.string() + " does not exist");
    if (fs::is_regular_file(dir / "manifest.json")) return pool_from_manifest(dir);
    if (fs::is_directory(dir)) return pool_from_class_dirs(dir);
    throw ConfigError("corpus: " + dir.string() + " is neither a corpus directory nor synthetic");
}

int cmd_transform(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
    return run_guarded(err, [&] {
        const WallClock clock;
        const Dataset ds = prepared_dataset(cfg);
        const FeatureLayout layout = build_layout(ds, cfg.layout_seed, cfg.max_sweeps, cfg.rank_mode);

        const fs::path out_dir(cfg.out_dir);
        fs::create_directories(out_dir / "images");
        write_text(out_dir / "layout.json", layout_to_json(layout));

        json rows = json::array();
        for (size_t r = 0; r < ds.n_rows(); ++r) {
            const TabularImage img = transform_row(ds, r, layout);
            const std::string stem = row_stem(r);
            write_png(img.pixels, (out_dir / "images" / (stem + ".png")).string());
            write_tensor(img.pixels, (out_dir / "images" / (stem + ".f32")).string());
            json row;
            row["row"] = r;
            row["label"] = ds.labels[r];
            row["class"] = ds.class_names[static_cast<size_t>(ds.labels[r])];
            row["png"] = "images/" + stem + ".png";
            row["tensor"] = "images/" + stem + ".f32";
            rows.push_back(std::move(row));
        }

        json m;
        m["format"] = "fewtab-corpus/1";
        m["config_hash"] = cfg.hash();
        m["layout"] = "layout.json";
        m["layout_id"] = to_hex(layout.id());
        m["shape"] = {kImageChannels, kImageSide, kImageSide};
        m["classes"] = ds.class_names;
        m["rows"] = std::move(rows);
        write_text(out_dir / "manifest.json", m.dump(2) + "\n");
        write_timings(out_dir, "transform", clock.seconds());

        out << "transformed " << ds.n_rows() << " rows onto a " << layout.grid.n_rows << "x"
            << layout.grid.n_cols << " grid (loss " << layout.loss << ", " << layout.sweeps_run
            << " sweeps) -> " << out_dir.string() << "\n";
    });
}

int cmd_train(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
    return run_guarded(err, [&] {
        const WallClock clock;
        const ImagePool pool = load_corpus(cfg);
        Backbone<float> net(cfg.backbone, cfg.init_seed);

        const fs::path out_dir(cfg.out_dir);
        fs::create_directories(out_dir);

        std::vector<double> trace;
        auto dump_trace = [&] {
            json t;
            t["config_hash"] = cfg.hash();
            t["episodes"] = trace.size();
            t["losses"] = trace;
            write_text(out_dir / "loss_trace.json", t.dump(2) + "\n");
        };
        try {
            meta_train(net, pool, cfg.episode, cfg.head, cfg.epochs, cfg.episodes_per_epoch,
                       cfg.lr, cfg.maml, trace);
        } catch (...) {
            dump_trace();  // keep the partial trace next to the failure
            throw;
        }
        dump_trace();
        save_weights(net, out_dir / "weights.bin");
        write_timings(out_dir, "train", clock.seconds());

        out << "trained " << arch_name(cfg.backbone.arch) << " (" << net.param_count()
            << " params) for " << trace.size() << " episodes";
        if (!trace.empty()) out << ", final loss " << trace.back();
        out << " -> " << (out_dir / "weights.bin").string() << "\n";
    });
}

int cmd_eval(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
    return run_guarded(err, [&] {
        const WallClock clock;
        const ImagePool pool = load_corpus(cfg);
        const fs::path out_dir(cfg.out_dir);
        const fs::path wpath =
            cfg.weights_path.empty() ? out_dir / "weights.bin" : fs::path(cfg.weights_path);
        const Backbone<float> net = load_weights(wpath);

        const std::vector<Episode> episodes = make_episodes(pool, cfg.episode, cfg.episode_count);
        EvalReport rep = evaluate(net, pool, cfg.head, episodes, cfg.maml);
        rep.master_seed = cfg.episode.seed;
        rep.config_hash = cfg.hash();

        fs::create_directories(out_dir);
        json r;
        r["format"] = "fewtab-report/1";
        r["config_hash"] = rep.config_hash;
        r["arch"] = rep.arch;
        r["head"] = rep.head;
        r["way"] = rep.way;
        r["shot"] = rep.shot;
        r["query"] = rep.query;
        r["episodes"] = rep.episodes;
        r["master_seed"] = rep.master_seed;
        json seeds = json::array();
        for (const Episode& ep : episodes) seeds.push_back(ep.spec.seed);
        r["episode_seeds"] = std::move(seeds);
        r["mean_accuracy"] = rep.mean_accuracy;
        r["mean_auc"] = rep.mean_auc;
        r["episode_accuracy"] = rep.episode_accuracy;
        r["episode_auc"] = rep.episode_auc;
        write_text(out_dir / "report.json", r.dump(2) + "\n");

        if (cfg.dump_episodes) {
            json eps = json::array();
            for (const Episode& ep : episodes) {
                json e;
                e["seed"] = ep.spec.seed;
                e["classes"] = ep.class_map;
                json sup = json::array();
                for (const auto& it : ep.support) sup.push_back(it.pool_index);
                json qry = json::array();
                for (const auto& it : ep.query) qry.push_back(it.pool_index);
                e["support_rows"] = std::move(sup);
                e["query_rows"] = std::move(qry);
                eps.push_back(std::move(e));
            }
            write_text(out_dir / "episodes.json", eps.dump(2) + "\n");
        }
        write_timings(out_dir, "eval", clock.seconds());

        out << rep.way << "-way " << rep.shot << "-shot " << rep.head << ": mean accuracy "
            << rep.mean_accuracy << ", mean auc " << rep.mean_auc << " over " << rep.episodes
            << " episodes -> " << (out_dir / "report.json").string() << "\n";
    });
}

int cmd_diagnose(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
    return run_guarded(err, [&] {
        const WallClock clock;
        PointSets pts;
        if (!cfg.points_csv.empty()) {
            pts = parse_points_csv(read_text(cfg.points_csv));
        } else {
            if (cfg.natural_path.empty() || cfg.tabular_path.empty()) {
                throw ConfigError("diagnose: need either a points file or natural+tabular corpora");
            }
            const fs::path wpath = cfg.weights_path.empty()
                                       ? fs::path(cfg.out_dir) / "weights.bin"
                                       : fs::path(cfg.weights_path);
            const Backbone<float> net = load_weights(wpath);

            ExperimentConfig sub = cfg;
            sub.dataset_path = cfg.natural_path;
            const ImagePool natural = load_corpus(sub);
            sub.dataset_path = cfg.tabular_path;
            const ImagePool tabular = load_corpus(sub);

            std::vector<std::vector<double>> latents;
            for (const ImagePool* pool : {&natural, &tabular}) {
                for (const Image& img : pool->images) {
                    const std::vector<float> v = net.embed(img);
                    latents.emplace_back(v.begin(), v.end());
                }
            }
            const std::vector<Point2> proj = project_2d(latents);
            pts.natural.assign(proj.begin(), proj.begin() + static_cast<long>(natural.images.size()));
            pts.tabular.assign(proj.begin() + static_cast<long>(natural.images.size()), proj.end());
        }

        const CoverageResult cov = domain_coverage(pts.natural, pts.tabular);
        const fs::path out_dir(cfg.out_dir);
        fs::create_directories(out_dir);
        json c;
        c["format"] = "fewtab-coverage/1";
        c["config_hash"] = cfg.hash();
        c["center"] = {cov.center[0], cov.center[1]};
        c["distance_max"] = cov.distance_max;
        c["frac_inside_c1"] = cov.frac_inside_c1;
        c["frac_inside_c2"] = cov.frac_inside_c2;
        write_text(out_dir / "coverage.json", c.dump(2) + "\n");
        write_text(out_dir / "points.csv", points_csv_text(pts));
        write_timings(out_dir, "diagnose", clock.seconds());

        out << "coverage: " << pts.tabular.size() << " tabular points, frac inside c1 "
            << cov.frac_inside_c1 << ", inside c2 " << cov.frac_inside_c2 << " -> "
            << (out_dir / "coverage.json").string() << "\n";
    });
}

}  // namespace fewtab
