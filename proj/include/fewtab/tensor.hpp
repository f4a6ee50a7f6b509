#pragma once

#include <cstddef>
#include <vector>

namespace fewtab {

/// NCHW batch tensor.
template <typename T>
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_), v(static_cast<size_t>(n_) * c_ * h_ * w_, T(0)) {}

    size_t plane_size() const { return static_cast<size_t>(h) * w; }
    T* plane(int in, int ic) { return v.data() + (static_cast<size_t>(in) * c + ic) * plane_size(); }
    const T* plane(int in, int ic) const {
        return v.data() + (static_cast<size_t>(in) * c + ic) * plane_size();
    }
    T at(int in, int ic, int y, int x) const { return plane(in, ic)[static_cast<size_t>(y) * w + x]; }
    T& at(int in, int ic, int y, int x) { return plane(in, ic)[static_cast<size_t>(y) * w + x]; }
};

/// Row-major rows x cols matrix (latent batches, score tables).
template <typename T>
struct Matrix2 {
    int rows = 0, cols = 0;
    std::vector<T> v;

    Matrix2() = default;
    Matrix2(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, T(0)) {}

    T* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
    const T* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }
    T at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
    T& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
};

}  // namespace fewtab
