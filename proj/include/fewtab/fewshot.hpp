#pragma once

#include <string>
#include <vector>

#include "fewtab/backbone.hpp"
#include "fewtab/image.hpp"
#include "fewtab/tensor.hpp"

namespace fewtab {

struct EpisodeSpec {
    int way = 2;
    int shot = 1;
    int query = 15;
    uint64_t seed = 0;
};

enum class HeadKind { Proto, Maml };

std::string head_name(HeadKind k);
HeadKind head_from_name(const std::string& name);

/// Labeled image collection episodes are drawn from.
struct ImagePool {
    std::vector<Image> images;
    std::vector<int> labels;  // parallel to images
    std::vector<std::string> class_names;

    int n_classes() const { return static_cast<int>(class_names.size()); }
};

struct EpisodeItem {
    int pool_index = 0;  // source row id, also the disjointness witness
    int cls = 0;         // relabeled within the episode, 0..way-1
};

struct Episode {
    EpisodeSpec spec;
    std::vector<EpisodeItem> support;  // way*shot, grouped by class
    std::vector<EpisodeItem> query;    // way*query, grouped by class
    std::vector<int> class_map;        // episode class -> pool class
};

/// Draws `way` classes then `shot + query` items per class, all without
/// replacement and deterministic in spec.seed.
Episode sample_episode(const ImagePool& pool, const EpisodeSpec& spec);

/// Stable per-index episode seeds derived from a master seed.
uint64_t derive_seed(uint64_t master, uint64_t index);

std::vector<Episode> make_episodes(const ImagePool& pool, const EpisodeSpec& spec, int count);

/// Per-class mean prototypes; scores are negative squared Euclidean
/// distances, one row per query.
template <typename T>
Matrix2<T> proto_scores(const Matrix2<T>& support_latents, const std::vector<int>& support_classes,
                        int way, const Matrix2<T>& query_latents);

template <typename T>
Matrix2<T> softmax_rows(const Matrix2<T>& logits);

template <typename T>
std::vector<int> argmax_rows(const Matrix2<T>& scores);

template <typename T>
struct AdaptedHead {
    Matrix2<T> weight;      // way x latent_dim
    std::vector<T> bias;    // way
    int inner_steps = 0;
    T inner_lr = T(0);
};

template <typename T>
AdaptedHead<T> zero_head(int way, int latent_dim);

/// Full-batch gradient descent of softmax cross-entropy on the support set,
/// head parameters only.
template <typename T>
AdaptedHead<T> maml_adapt(const Matrix2<T>& support_latents, const std::vector<int>& support_classes,
                          const AdaptedHead<T>& init, int steps, T lr);

template <typename T>
Matrix2<T> maml_scores(const AdaptedHead<T>& head, const Matrix2<T>& query_latents);

/// Mean softmax cross-entropy of `scores` rows against integer labels, plus
/// the gradient with respect to the scores.
template <typename T>
T cross_entropy(const Matrix2<T>& scores, const std::vector<int>& labels,
                Matrix2<T>* dscores = nullptr);

struct MamlParams {
    int inner_steps = 5;
    double inner_lr = 0.01;
};

struct EvalReport {
    std::vector<double> episode_accuracy;
    std::vector<double> episode_auc;
    double mean_accuracy = 0.0;
    double mean_auc = 0.0;
    int episodes = 0;
    int way = 0, shot = 0, query = 0;
    uint64_t master_seed = 0;
    std::string head;
    std::string arch;
    std::string config_hash;
};

/// Trains the backbone episodically; appends the per-episode query loss to
/// `trace` as it goes and throws NumericError naming the episode if the loss
/// stops being finite.
void meta_train(Backbone<float>& net, const ImagePool& pool, const EpisodeSpec& spec,
                HeadKind head, int epochs, int episodes_per_epoch, double lr,
                const MamlParams& maml, std::vector<double>& trace);

/// Pure evaluation over pre-sampled episodes: eval-mode embeddings, one
/// accuracy and one AUC (binary or macro one-vs-rest) per episode.
EvalReport evaluate(const Backbone<float>& net, const ImagePool& pool, HeadKind head,
                    const std::vector<Episode>& episodes, const MamlParams& maml);

}  // namespace fewtab
