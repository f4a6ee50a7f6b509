#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fewtab/common.hpp"
#include "fewtab/image.hpp"
#include "fewtab/tensor.hpp"

namespace fewtab {

enum class Arch { Conv2 = 2, Conv3 = 3, Conv4 = 4 };
enum class LatentMode { Flatten, GlobalAvgPool };

struct BackboneSpec {
    Arch arch = Arch::Conv2;
    int channels = 64;
    LatentMode latent_mode = LatentMode::Flatten;
    int in_channels = kImageChannels;
};

inline int block_count(Arch a) { return static_cast<int>(a); }

/// Side length after `blocks` conv blocks: each 2x2 max pool halves it
/// (floor), so 84 -> 42 -> 21 -> 10 -> 5.
int spatial_after(int side, int blocks);

std::string arch_name(Arch a);
Arch arch_from_name(const std::string& name);

struct ParamInfo {
    std::string name;
    std::vector<int> shape;
    bool conv = false;  // convolution kernel or bias (as opposed to norm affine)
};

/// One conv block: 3x3 same-padded convolution, batch norm, ReLU, 2x2 max
/// pool. Weights, gradients and the training-forward cache live together.
template <typename T>
struct ConvBlock {
    int in_ch = 0, out_ch = 0;

    std::vector<T> kernel;  // out_ch * in_ch * 3 * 3
    std::vector<T> bias;    // out_ch
    std::vector<T> bn_scale, bn_shift;      // out_ch, trainable affine
    std::vector<T> run_mean, run_var;       // out_ch, eval-mode statistics

    std::vector<T> d_kernel, d_bias, d_scale, d_shift;

    // training-forward cache
    Tensor4<T> x;         // block input
    Tensor4<T> xhat;      // normalized pre-affine activations
    Tensor4<T> relu_out;  // pool input
    std::vector<int> pool_argmax;
    std::vector<T> batch_mean, batch_var;
    int pooled_h = 0, pooled_w = 0;
};

/// Small convolutional embedding network. Training-mode forward caches
/// activations for an exact analytic backward; eval-mode forward is const
/// and uses running batch-norm statistics.
template <typename T>
class Backbone {
public:
    Backbone(const BackboneSpec& spec, uint64_t seed);

    const BackboneSpec& spec() const { return spec_; }
    uint64_t seed() const { return seed_; }
    int latent_dim(int side = kImageSide) const;

    /// Count of trainable scalars (kernels, biases, norm scale/shift;
    /// running statistics excluded).
    long long param_count() const;
    std::vector<ParamInfo> param_breakdown() const;

    /// Batched forward to latents. train=true caches activations, uses batch
    /// statistics and updates the running ones; train=false is pure.
    Matrix2<T> forward(const Tensor4<T>& x, bool train);
    Matrix2<T> forward_eval(const Tensor4<T>& x) const;

    /// Exact gradients of all trainable scalars given d(loss)/d(latent).
    /// Accumulates into the grad buffers; requires a cached training forward.
    void backward(const Matrix2<T>& dlatent);
    void zero_grad();
    void sgd_step(T lr);

    /// Eval-mode embedding of one 3x84x84 image.
    std::vector<T> embed(const Image& img) const;
    Matrix2<T> embed_batch(const std::vector<const Image*>& imgs) const;

    // flat parameter/gradient access (serialization, finite differences)
    size_t n_param_scalars() const;
    T get_param(size_t i) const;
    void set_param(size_t i, T value);
    T get_grad(size_t i) const;

    std::vector<ConvBlock<T>>& blocks() { return blocks_; }
    const std::vector<ConvBlock<T>>& blocks() const { return blocks_; }

private:
    struct ParamRef {
        std::vector<T>* tensor;
        std::vector<T>* grad;
    };
    std::vector<ParamRef> param_refs();
    std::vector<const std::vector<T>*> param_tensors() const;

    BackboneSpec spec_;
    uint64_t seed_ = 0;
    std::vector<ConvBlock<T>> blocks_;
    bool has_cache_ = false;
    int cached_n_ = 0;
};

extern template class Backbone<float>;
extern template class Backbone<double>;

}  // namespace fewtab
