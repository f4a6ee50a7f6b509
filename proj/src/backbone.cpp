#include "fewtab/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <Eigen/Dense>

namespace fewtab {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapRM = Eigen::Map<const RowMat<T>>;

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.9;

// 3x3 same-padded patch matrix, row (ci*9 + ky*3 + kx) holds the shifted
// plane; rows are contiguous across pixels.
template <typename T>
void im2col(const T* x, int in_ch, int h, int w, T* col) {
    const size_t npix = static_cast<size_t>(h) * w;
    for (int ci = 0; ci < in_ch; ++ci) {
        const T* plane = x + static_cast<size_t>(ci) * npix;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                T* dst = col + (static_cast<size_t>(ci) * 9 + ky * 3 + kx) * npix;
                const int dy = ky - 1;
                const int dx = kx - 1;
                for (int y = 0; y < h; ++y) {
                    T* drow = dst + static_cast<size_t>(y) * w;
                    const int sy = y + dy;
                    if (sy < 0 || sy >= h) {
                        std::fill(drow, drow + w, T(0));
                        continue;
                    }
                    const T* srow = plane + static_cast<size_t>(sy) * w;
                    const int x0 = std::max(0, -dx);
                    const int x1 = std::min(w, w - dx);
                    if (x0 > 0) std::fill(drow, drow + x0, T(0));
                    if (x1 > x0) std::copy(srow + x0 + dx, srow + x1 + dx, drow + x0);
                    if (x1 < w) std::fill(drow + x1, drow + w, T(0));
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, int in_ch, int h, int w, T* x) {
    const size_t npix = static_cast<size_t>(h) * w;
    for (int ci = 0; ci < in_ch; ++ci) {
        T* plane = x + static_cast<size_t>(ci) * npix;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const T* src = col + (static_cast<size_t>(ci) * 9 + ky * 3 + kx) * npix;
                const int dy = ky - 1;
                const int dx = kx - 1;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= h) continue;
                    const T* srow = src + static_cast<size_t>(y) * w;
                    T* drow = plane + static_cast<size_t>(sy) * w;
                    const int x0 = std::max(0, -dx);
                    const int x1 = std::min(w, w - dx);
                    for (int xx = x0; xx < x1; ++xx) drow[xx + dx] += srow[xx];
                }
            }
        }
    }
}

template <typename T>
bool all_finite(const std::vector<T>& v) {
    for (const T x : v) {
        if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
}

}  // namespace

int spatial_after(int side, int blocks) {
    for (int b = 0; b < blocks; ++b) side /= 2;
    return side;
}

std::string arch_name(Arch a) {
    switch (a) {
        case Arch::Conv2: return "conv2";
        case Arch::Conv3: return "conv3";
        case Arch::Conv4: return "conv4";
    }
    throw ConfigError("arch_name: unknown arch");
}

Arch arch_from_name(const std::string& name) {
    if (name == "conv2") return Arch::Conv2;
    if (name == "conv3") return Arch::Conv3;
    if (name == "conv4") return Arch::Conv4;
    throw ConfigError("unknown backbone arch '" + name + "'");
}

template <typename T>
Backbone<T>::Backbone(const BackboneSpec& spec, uint64_t seed) : spec_(spec), seed_(seed) {
    if (spec.channels < 1 || spec.in_channels < 1) {
        throw ConfigError("backbone: channel counts must be positive");
    }
    Rng rng(seed);
    int in = spec.in_channels;
    for (int b = 0; b < block_count(spec.arch); ++b) {
        ConvBlock<T> blk;
        blk.in_ch = in;
        blk.out_ch = spec.channels;
        const size_t ksize = static_cast<size_t>(blk.out_ch) * blk.in_ch * 9;
        blk.kernel.resize(ksize);
        const double he_std = std::sqrt(2.0 / (static_cast<double>(blk.in_ch) * 9.0));
        for (auto& k : blk.kernel) k = static_cast<T>(rng.normal() * he_std);
        blk.bias.assign(static_cast<size_t>(blk.out_ch), T(0));
        blk.bn_scale.assign(static_cast<size_t>(blk.out_ch), T(1));
        blk.bn_shift.assign(static_cast<size_t>(blk.out_ch), T(0));
        blk.run_mean.assign(static_cast<size_t>(blk.out_ch), T(0));
        blk.run_var.assign(static_cast<size_t>(blk.out_ch), T(1));
        blk.d_kernel.assign(ksize, T(0));
        blk.d_bias.assign(static_cast<size_t>(blk.out_ch), T(0));
        blk.d_scale.assign(static_cast<size_t>(blk.out_ch), T(0));
        blk.d_shift.assign(static_cast<size_t>(blk.out_ch), T(0));
        blocks_.push_back(std::move(blk));
        in = spec.channels;
    }
}

template <typename T>
int Backbone<T>::latent_dim(int side) const {
    const int s = spatial_after(side, block_count(spec_.arch));
    if (s < 1) throw DimensionError("backbone: input side too small for the block count");
    return spec_.latent_mode == LatentMode::Flatten ? spec_.channels * s * s : spec_.channels;
}

template <typename T>
long long Backbone<T>::param_count() const {
    long long total = 0;
    for (const auto* t : param_tensors()) total += static_cast<long long>(t->size());
    return total;
}

template <typename T>
std::vector<ParamInfo> Backbone<T>::param_breakdown() const {
    std::vector<ParamInfo> out;
    for (size_t b = 0; b < blocks_.size(); ++b) {
        const auto& blk = blocks_[b];
        const std::string prefix = "block" + std::to_string(b + 1);
        out.push_back({prefix + ".conv.kernel", {blk.out_ch, blk.in_ch, 3, 3}, true});
        out.push_back({prefix + ".conv.bias", {blk.out_ch}, true});
        out.push_back({prefix + ".norm.scale", {blk.out_ch}, false});
        out.push_back({prefix + ".norm.shift", {blk.out_ch}, false});
    }
    return out;
}

template <typename T>
std::vector<typename Backbone<T>::ParamRef> Backbone<T>::param_refs() {
    std::vector<ParamRef> refs;
    for (auto& blk : blocks_) {
        refs.push_back({&blk.kernel, &blk.d_kernel});
        refs.push_back({&blk.bias, &blk.d_bias});
        refs.push_back({&blk.bn_scale, &blk.d_scale});
        refs.push_back({&blk.bn_shift, &blk.d_shift});
    }
    return refs;
}

template <typename T>
std::vector<const std::vector<T>*> Backbone<T>::param_tensors() const {
    std::vector<const std::vector<T>*> out;
    for (const auto& blk : blocks_) {
        out.push_back(&blk.kernel);
        out.push_back(&blk.bias);
        out.push_back(&blk.bn_scale);
        out.push_back(&blk.bn_shift);
    }
    return out;
}

template <typename T>
size_t Backbone<T>::n_param_scalars() const {
    return static_cast<size_t>(param_count());
}

template <typename T>
T Backbone<T>::get_param(size_t i) const {
    for (const auto* t : param_tensors()) {
        if (i < t->size()) return (*t)[i];
        i -= t->size();
    }
    throw DimensionError("get_param: index out of range");
}

template <typename T>
void Backbone<T>::set_param(size_t i, T value) {
    for (auto& ref : param_refs()) {
        if (i < ref.tensor->size()) {
            (*ref.tensor)[i] = value;
            return;
        }
        i -= ref.tensor->size();
    }
    throw DimensionError("set_param: index out of range");
}

template <typename T>
T Backbone<T>::get_grad(size_t i) const {
    for (const auto& blk : blocks_) {
        for (const auto* g : {&blk.d_kernel, &blk.d_bias, &blk.d_scale, &blk.d_shift}) {
            if (i < g->size()) return (*g)[i];
            i -= g->size();
        }
    }
    throw DimensionError("get_grad: index out of range");
}

template <typename T>
void Backbone<T>::zero_grad() {
    for (auto& ref : param_refs()) std::fill(ref.grad->begin(), ref.grad->end(), T(0));
}

template <typename T>
void Backbone<T>::sgd_step(T lr) {
    for (auto& ref : param_refs()) {
        for (size_t i = 0; i < ref.tensor->size(); ++i) {
            (*ref.tensor)[i] -= lr * (*ref.grad)[i];
        }
    }
}

namespace {

// z = conv3x3(x) + bias, same padding
template <typename T>
Tensor4<T> conv_forward(const Tensor4<T>& x, const std::vector<T>& kernel,
                        const std::vector<T>& bias, int out_ch, std::vector<T>& colbuf) {
    const int in_ch = x.c;
    const size_t npix = x.plane_size();
    Tensor4<T> z(x.n, out_ch, x.h, x.w);
    colbuf.resize(static_cast<size_t>(in_ch) * 9 * npix);
    CMapRM<T> wmap(kernel.data(), out_ch, in_ch * 9);
    for (int i = 0; i < x.n; ++i) {
        im2col(x.plane(i, 0), in_ch, x.h, x.w, colbuf.data());
        CMapRM<T> colmap(colbuf.data(), in_ch * 9, static_cast<Eigen::Index>(npix));
        MapRM<T> out(z.plane(i, 0), out_ch, static_cast<Eigen::Index>(npix));
        out.noalias() = wmap * colmap;
        for (int oc = 0; oc < out_ch; ++oc) out.row(oc).array() += bias[static_cast<size_t>(oc)];
    }
    return z;
}

// 2x2 max pool, stride 2, floor division (odd trailing row/col dropped)
template <typename T>
Tensor4<T> pool_forward(const Tensor4<T>& x, std::vector<int>* argmax) {
    const int ph = x.h / 2;
    const int pw = x.w / 2;
    if (ph < 1 || pw < 1) throw DimensionError("backbone: spatial size collapsed in max pool");
    Tensor4<T> out(x.n, x.c, ph, pw);
    if (argmax) argmax->assign(out.v.size(), 0);
    size_t o = 0;
    for (int i = 0; i < x.n; ++i) {
        for (int c = 0; c < x.c; ++c) {
            const T* plane = x.plane(i, c);
            for (int y = 0; y < ph; ++y) {
                for (int xx = 0; xx < pw; ++xx) {
                    const int base = 2 * y * x.w + 2 * xx;
                    T best = plane[base];
                    int best_idx = base;
                    const int candidates[3] = {base + 1, base + x.w, base + x.w + 1};
                    for (const int idx : candidates) {
                        if (plane[idx] > best) {
                            best = plane[idx];
                            best_idx = idx;
                        }
                    }
                    out.v[o] = best;
                    if (argmax) (*argmax)[o] = best_idx;
                    ++o;
                }
            }
        }
    }
    return out;
}

template <typename T>
Matrix2<T> to_latent(const Tensor4<T>& x, LatentMode mode) {
    if (mode == LatentMode::Flatten) {
        Matrix2<T> lat(x.n, x.c * x.h * x.w);
        std::copy(x.v.begin(), x.v.end(), lat.v.begin());
        return lat;
    }
    Matrix2<T> lat(x.n, x.c);
    const size_t npix = x.plane_size();
    for (int i = 0; i < x.n; ++i) {
        for (int c = 0; c < x.c; ++c) {
            const T* plane = x.plane(i, c);
            T sum = T(0);
            for (size_t k = 0; k < npix; ++k) sum += plane[k];
            lat.at(i, c) = sum / static_cast<T>(npix);
        }
    }
    return lat;
}

}  // namespace

template <typename T>
Matrix2<T> Backbone<T>::forward(const Tensor4<T>& input, bool train) {
    if (!train) return forward_eval(input);
    if (input.c != spec_.in_channels) throw DimensionError("backbone: channel count mismatch");
    if (!all_finite(input.v)) throw NumericError("backbone: non-finite input");

    std::vector<T> colbuf;
    Tensor4<T> cur = input;
    for (auto& blk : blocks_) {
        blk.x = std::move(cur);
        Tensor4<T> z = conv_forward(blk.x, blk.kernel, blk.bias, blk.out_ch, colbuf);

        // batch statistics over (N, H, W) per channel
        const size_t npix = z.plane_size();
        const double m = static_cast<double>(z.n) * static_cast<double>(npix);
        blk.batch_mean.assign(static_cast<size_t>(blk.out_ch), T(0));
        blk.batch_var.assign(static_cast<size_t>(blk.out_ch), T(0));
        for (int c = 0; c < blk.out_ch; ++c) {
            double sum = 0.0;
            for (int i = 0; i < z.n; ++i) {
                const T* plane = z.plane(i, c);
                for (size_t k = 0; k < npix; ++k) sum += static_cast<double>(plane[k]);
            }
            const double mean = sum / m;
            double ss = 0.0;
            for (int i = 0; i < z.n; ++i) {
                const T* plane = z.plane(i, c);
                for (size_t k = 0; k < npix; ++k) {
                    const double d = static_cast<double>(plane[k]) - mean;
                    ss += d * d;
                }
            }
            blk.batch_mean[static_cast<size_t>(c)] = static_cast<T>(mean);
            blk.batch_var[static_cast<size_t>(c)] = static_cast<T>(ss / m);
            blk.run_mean[static_cast<size_t>(c)] = static_cast<T>(
                kBnMomentum * static_cast<double>(blk.run_mean[static_cast<size_t>(c)]) +
                (1.0 - kBnMomentum) * mean);
            blk.run_var[static_cast<size_t>(c)] = static_cast<T>(
                kBnMomentum * static_cast<double>(blk.run_var[static_cast<size_t>(c)]) +
                (1.0 - kBnMomentum) * (ss / m));
        }

        // normalize in place, then affine + ReLU into the pool input
        blk.relu_out = Tensor4<T>(z.n, z.c, z.h, z.w);
        for (int c = 0; c < blk.out_ch; ++c) {
            const T mean = blk.batch_mean[static_cast<size_t>(c)];
            const T inv_std = T(1) / std::sqrt(blk.batch_var[static_cast<size_t>(c)] + T(kBnEps));
            const T scale = blk.bn_scale[static_cast<size_t>(c)];
            const T shift = blk.bn_shift[static_cast<size_t>(c)];
            for (int i = 0; i < z.n; ++i) {
                T* zp = z.plane(i, c);
                T* rp = blk.relu_out.plane(i, c);
                for (size_t k = 0; k < npix; ++k) {
                    const T xh = (zp[k] - mean) * inv_std;
                    zp[k] = xh;
                    rp[k] = std::max(scale * xh + shift, T(0));
                }
            }
        }
        blk.xhat = std::move(z);

        cur = pool_forward(blk.relu_out, &blk.pool_argmax);
        blk.pooled_h = cur.h;
        blk.pooled_w = cur.w;
    }
    has_cache_ = true;
    cached_n_ = input.n;
    return to_latent(cur, spec_.latent_mode);
}

template <typename T>
Matrix2<T> Backbone<T>::forward_eval(const Tensor4<T>& input) const {
    if (input.c != spec_.in_channels) throw DimensionError("backbone: channel count mismatch");
    if (!all_finite(input.v)) throw NumericError("backbone: non-finite input");

    std::vector<T> colbuf;
    Tensor4<T> cur = input;
    for (const auto& blk : blocks_) {
        Tensor4<T> z = conv_forward(cur, blk.kernel, blk.bias, blk.out_ch, colbuf);
        const size_t npix = z.plane_size();
        for (int c = 0; c < blk.out_ch; ++c) {
            const T mean = blk.run_mean[static_cast<size_t>(c)];
            const T inv_std = T(1) / std::sqrt(blk.run_var[static_cast<size_t>(c)] + T(kBnEps));
            const T scale = blk.bn_scale[static_cast<size_t>(c)];
            const T shift = blk.bn_shift[static_cast<size_t>(c)];
            for (int i = 0; i < z.n; ++i) {
                T* zp = z.plane(i, c);
                for (size_t k = 0; k < npix; ++k) {
                    zp[k] = std::max(scale * (zp[k] - mean) * inv_std + shift, T(0));
                }
            }
        }
        cur = pool_forward(z, nullptr);
    }
    return to_latent(cur, spec_.latent_mode);
}

template <typename T>
void Backbone<T>::backward(const Matrix2<T>& dlatent) {
    if (!has_cache_) throw StateError("backbone: backward without a cached training forward");
    if (dlatent.rows != cached_n_) throw DimensionError("backbone: latent gradient batch mismatch");

    const auto& last = blocks_.back();
    const int lh = last.pooled_h;
    const int lw = last.pooled_w;
    if (dlatent.cols != (spec_.latent_mode == LatentMode::Flatten ? last.out_ch * lh * lw
                                                                  : last.out_ch)) {
        throw DimensionError("backbone: latent gradient width mismatch");
    }

    // latent -> pooled map gradient
    Tensor4<T> dpool(cached_n_, last.out_ch, lh, lw);
    if (spec_.latent_mode == LatentMode::Flatten) {
        std::copy(dlatent.v.begin(), dlatent.v.end(), dpool.v.begin());
    } else {
        const T inv = T(1) / static_cast<T>(lh * lw);
        for (int i = 0; i < cached_n_; ++i) {
            for (int c = 0; c < last.out_ch; ++c) {
                T* plane = dpool.plane(i, c);
                const T g = dlatent.at(i, c) * inv;
                for (size_t k = 0; k < dpool.plane_size(); ++k) plane[k] = g;
            }
        }
    }

    std::vector<T> colbuf;
    std::vector<T> dcolbuf;
    for (int b = static_cast<int>(blocks_.size()) - 1; b >= 0; --b) {
        auto& blk = blocks_[static_cast<size_t>(b)];
        const int h = blk.xhat.h;
        const int w = blk.xhat.w;
        const size_t npix = blk.xhat.plane_size();

        // max pool: route gradients to the argmax positions
        Tensor4<T> dy(cached_n_, blk.out_ch, h, w);
        size_t o = 0;
        for (int i = 0; i < cached_n_; ++i) {
            for (int c = 0; c < blk.out_ch; ++c) {
                T* plane = dy.plane(i, c);
                for (int y = 0; y < blk.pooled_h; ++y) {
                    for (int xx = 0; xx < blk.pooled_w; ++xx) {
                        plane[blk.pool_argmax[o]] += dpool.v[o];
                        ++o;
                    }
                }
            }
        }

        // ReLU mask
        for (size_t k = 0; k < dy.v.size(); ++k) {
            if (blk.relu_out.v[k] <= T(0)) dy.v[k] = T(0);
        }

        // batch norm, exact through the batch statistics
        const double m = static_cast<double>(cached_n_) * static_cast<double>(npix);
        for (int c = 0; c < blk.out_ch; ++c) {
            double s1 = 0.0;  // sum dy
            double s2 = 0.0;  // sum dy * xhat
            for (int i = 0; i < cached_n_; ++i) {
                const T* dyp = dy.plane(i, c);
                const T* xh = blk.xhat.plane(i, c);
                for (size_t k = 0; k < npix; ++k) {
                    s1 += static_cast<double>(dyp[k]);
                    s2 += static_cast<double>(dyp[k]) * static_cast<double>(xh[k]);
                }
            }
            blk.d_shift[static_cast<size_t>(c)] += static_cast<T>(s1);
            blk.d_scale[static_cast<size_t>(c)] += static_cast<T>(s2);

            const double inv_std =
                1.0 / std::sqrt(static_cast<double>(blk.batch_var[static_cast<size_t>(c)]) + kBnEps);
            const double scale = static_cast<double>(blk.bn_scale[static_cast<size_t>(c)]);
            const double mean_dxhat = scale * s1 / m;
            const double mean_dxhat_xhat = scale * s2 / m;
            for (int i = 0; i < cached_n_; ++i) {
                T* dyp = dy.plane(i, c);
                const T* xh = blk.xhat.plane(i, c);
                for (size_t k = 0; k < npix; ++k) {
                    const double dxhat = scale * static_cast<double>(dyp[k]);
                    dyp[k] = static_cast<T>(
                        inv_std * (dxhat - mean_dxhat -
                                   static_cast<double>(xh[k]) * mean_dxhat_xhat));
                }
            }
        }

        // convolution: bias, kernel, input gradients
        Tensor4<T> dx(cached_n_, blk.in_ch, blk.x.h, blk.x.w);
        colbuf.resize(static_cast<size_t>(blk.in_ch) * 9 * npix);
        dcolbuf.resize(colbuf.size());
        CMapRM<T> wmap(blk.kernel.data(), blk.out_ch, blk.in_ch * 9);
        MapRM<T> dwmap(blk.d_kernel.data(), blk.out_ch, blk.in_ch * 9);
        for (int i = 0; i < cached_n_; ++i) {
            CMapRM<T> dzmap(dy.plane(i, 0), blk.out_ch, static_cast<Eigen::Index>(npix));
            im2col(blk.x.plane(i, 0), blk.in_ch, blk.x.h, blk.x.w, colbuf.data());
            CMapRM<T> colmap(colbuf.data(), blk.in_ch * 9, static_cast<Eigen::Index>(npix));
            dwmap.noalias() += dzmap * colmap.transpose();
            // scalar reduction: Eigen's vectorized sum groups lanes by buffer
            // alignment, which varies run to run and breaks bit reproducibility
            for (int oc = 0; oc < blk.out_ch; ++oc) {
                const T* dyp = dy.plane(i, oc);
                double s = 0.0;
                for (size_t k = 0; k < npix; ++k) s += static_cast<double>(dyp[k]);
                blk.d_bias[static_cast<size_t>(oc)] += static_cast<T>(s);
            }
            MapRM<T> dcolmap(dcolbuf.data(), blk.in_ch * 9, static_cast<Eigen::Index>(npix));
            dcolmap.noalias() = wmap.transpose() * dzmap;
            col2im_add(dcolbuf.data(), blk.in_ch, blk.x.h, blk.x.w, dx.plane(i, 0));
        }
        dpool = std::move(dx);
    }
}

template <typename T>
std::vector<T> Backbone<T>::embed(const Image& img) const {
    const Matrix2<T> lat = embed_batch({&img});
    return lat.v;
}

template <typename T>
Matrix2<T> Backbone<T>::embed_batch(const std::vector<const Image*>& imgs) const {
    if (imgs.empty()) throw DimensionError("embed_batch: empty batch");
    Tensor4<T> x(static_cast<int>(imgs.size()), kImageChannels, kImageSide, kImageSide);
    const size_t per = static_cast<size_t>(kImageChannels) * kImageSide * kImageSide;
    for (size_t i = 0; i < imgs.size(); ++i) {
        const Image& img = *imgs[i];
        if (img.channels != kImageChannels || img.height != kImageSide ||
            img.width != kImageSide) {
            throw DimensionError("embed_batch: images must be 3x84x84");
        }
        for (size_t k = 0; k < per; ++k) x.v[i * per + k] = static_cast<T>(img.data[k]);
    }
    return forward_eval(x);
}

template class Backbone<float>;
template class Backbone<double>;

}  // namespace fewtab
