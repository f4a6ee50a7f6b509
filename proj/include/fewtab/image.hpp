#pragma once

#include <vector>

#include "fewtab/common.hpp"

namespace fewtab {

inline constexpr int kImageSide = 84;
inline constexpr int kImageChannels = 3;

/// CHW float image, values in [0, 1].
struct Image {
    int channels = kImageChannels;
    int height = kImageSide;
    int width = kImageSide;
    std::vector<float> data;  // channels * height * width

    Image() : data(static_cast<size_t>(kImageChannels) * kImageSide * kImageSide, 0.0f) {}
    Image(int c, int h, int w) : channels(c), height(h), width(w),
        data(static_cast<size_t>(c) * h * w, 0.0f) {}

    float at(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
    float& at(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
};

}  // namespace fewtab
