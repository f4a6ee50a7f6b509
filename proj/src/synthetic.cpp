#include "fewtab/synthetic.hpp"

namespace fewtab {

Dataset make_synthetic_dataset(const SyntheticSpec& spec) {
    if (spec.classes < 2) throw ConfigError("synthetic: need at least 2 classes");
    if (spec.rows_per_class < 1) throw ConfigError("synthetic: rows_per_class must be positive");
    if (spec.features < 1) throw ConfigError("synthetic: features must be positive");
    if (spec.informative < 0 || spec.informative > spec.features) {
        throw ConfigError("synthetic: informative count out of range");
    }

    Dataset ds;
    for (int f = 0; f < spec.features; ++f) {
        FeatureSpec fs;
        fs.name = "f" + std::to_string(f);
        ds.features.push_back(std::move(fs));
    }
    ds.raw_text.resize(static_cast<size_t>(spec.features));
    for (int c = 0; c < spec.classes; ++c) ds.class_names.push_back("c" + std::to_string(c));

    Rng rng(spec.seed);
    ds.values.reserve(static_cast<size_t>(spec.classes) * spec.rows_per_class * spec.features);
    for (int c = 0; c < spec.classes; ++c) {
        for (int r = 0; r < spec.rows_per_class; ++r) {
            ds.labels.push_back(c);
            for (int f = 0; f < spec.features; ++f) {
                const double mean = f < spec.informative ? spec.separation * c : 0.0;
                ds.values.push_back(mean + rng.normal());
            }
        }
    }
    return ds;
}

}  // namespace fewtab
