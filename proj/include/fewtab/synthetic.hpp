#pragma once

#include "fewtab/dataset.hpp"

namespace fewtab {

struct SyntheticSpec {
    int classes = 2;
    int rows_per_class = 200;
    int features = 6;
    int informative = 2;   // leading columns carry the class signal
    double separation = 3.0;  // class mean gap in column sigmas
    uint64_t seed = 0;
};

/// Gaussian class-blob dataset: informative columns have unit-sigma blobs
/// whose means step by `separation` per class, the rest are pure noise.
/// Labels are "c0", "c1", ... and the result is already encoded.
Dataset make_synthetic_dataset(const SyntheticSpec& spec);

}  // namespace fewtab
