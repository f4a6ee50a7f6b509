#include "fewtab/fewshot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fewtab/metrics.hpp"

namespace fewtab {

std::string head_name(HeadKind k) { return k == HeadKind::Proto ? "proto" : "maml"; }

HeadKind head_from_name(const std::string& name) {
    if (name == "proto") return HeadKind::Proto;
    if (name == "maml") return HeadKind::Maml;
    throw ConfigError("unknown head kind '" + name + "'");
}

uint64_t derive_seed(uint64_t master, uint64_t index) {
    return Rng(master).fork(index).next_u64();
}

Episode sample_episode(const ImagePool& pool, const EpisodeSpec& spec) {
    if (spec.way < 2) throw ConfigError("episode: way must be at least 2");
    if (spec.shot < 1) throw ConfigError("episode: shot must be at least 1");
    if (spec.query < 1) throw ConfigError("episode: query must be at least 1");
    if (pool.images.size() != pool.labels.size()) {
        throw DimensionError("episode: pool image/label length mismatch");
    }

    const int n_classes = pool.n_classes();
    std::vector<std::vector<int>> by_class(static_cast<size_t>(n_classes));
    for (size_t i = 0; i < pool.labels.size(); ++i) {
        const int y = pool.labels[i];
        if (y < 0 || y >= n_classes) throw DimensionError("episode: pool label out of range");
        by_class[static_cast<size_t>(y)].push_back(static_cast<int>(i));
    }
    if (n_classes < spec.way) {
        throw CapacityError("episode: pool has " + std::to_string(n_classes) +
                            " classes, need " + std::to_string(spec.way));
    }

    Rng rng(spec.seed);
    std::vector<int> class_ids(static_cast<size_t>(n_classes));
    std::iota(class_ids.begin(), class_ids.end(), 0);
    rng.shuffle(class_ids);

    Episode ep;
    ep.spec = spec;
    ep.class_map.assign(class_ids.begin(), class_ids.begin() + spec.way);
    const int need = spec.shot + spec.query;
    for (int e = 0; e < spec.way; ++e) {
        const int c = ep.class_map[static_cast<size_t>(e)];
        std::vector<int> items = by_class[static_cast<size_t>(c)];
        if (static_cast<int>(items.size()) < need) {
            throw CapacityError("episode: class '" + pool.class_names[static_cast<size_t>(c)] +
                                "' has " + std::to_string(items.size()) + " items, need " +
                                std::to_string(need));
        }
        rng.shuffle(items);
        for (int k = 0; k < spec.shot; ++k) ep.support.push_back({items[static_cast<size_t>(k)], e});
        for (int k = 0; k < spec.query; ++k) {
            ep.query.push_back({items[static_cast<size_t>(spec.shot + k)], e});
        }
    }
    return ep;
}

std::vector<Episode> make_episodes(const ImagePool& pool, const EpisodeSpec& spec, int count) {
    if (count < 1) throw ConfigError("make_episodes: count must be positive");
    std::vector<Episode> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        EpisodeSpec s = spec;
        s.seed = derive_seed(spec.seed, static_cast<uint64_t>(i));
        out.push_back(sample_episode(pool, s));
    }
    return out;
}

namespace {

template <typename T>
Matrix2<T> class_prototypes(const Matrix2<T>& support_latents,
                            const std::vector<int>& support_classes, int way,
                            std::vector<int>* counts_out) {
    if (support_latents.rows != static_cast<int>(support_classes.size())) {
        throw DimensionError("proto: support latent/class length mismatch");
    }
    Matrix2<T> proto(way, support_latents.cols);
    std::vector<int> counts(static_cast<size_t>(way), 0);
    for (int i = 0; i < support_latents.rows; ++i) {
        const int c = support_classes[static_cast<size_t>(i)];
        if (c < 0 || c >= way) throw DimensionError("proto: support class out of range");
        ++counts[static_cast<size_t>(c)];
        const T* src = support_latents.row(i);
        T* dst = proto.row(c);
        for (int j = 0; j < proto.cols; ++j) dst[j] += src[j];
    }
    for (int c = 0; c < way; ++c) {
        if (counts[static_cast<size_t>(c)] == 0) {
            throw NumericError("proto: class " + std::to_string(c) + " has no supports");
        }
        T* dst = proto.row(c);
        const T inv = T(1) / static_cast<T>(counts[static_cast<size_t>(c)]);
        for (int j = 0; j < proto.cols; ++j) dst[j] *= inv;
    }
    if (counts_out) *counts_out = std::move(counts);
    return proto;
}

}  // namespace

template <typename T>
Matrix2<T> proto_scores(const Matrix2<T>& support_latents, const std::vector<int>& support_classes,
                        int way, const Matrix2<T>& query_latents) {
    if (query_latents.cols != support_latents.cols) {
        throw DimensionError("proto: query/support latent width mismatch");
    }
    const Matrix2<T> proto = class_prototypes(support_latents, support_classes, way, nullptr);
    Matrix2<T> scores(query_latents.rows, way);
    for (int q = 0; q < query_latents.rows; ++q) {
        const T* qv = query_latents.row(q);
        for (int c = 0; c < way; ++c) {
            const T* pv = proto.row(c);
            T acc = T(0);
            for (int j = 0; j < proto.cols; ++j) {
                const T d = qv[j] - pv[j];
                acc += d * d;
            }
            scores.at(q, c) = -acc;
        }
    }
    return scores;
}

template <typename T>
Matrix2<T> softmax_rows(const Matrix2<T>& logits) {
    Matrix2<T> out(logits.rows, logits.cols);
    for (int r = 0; r < logits.rows; ++r) {
        const T* in = logits.row(r);
        T* o = out.row(r);
        T mx = in[0];
        for (int c = 1; c < logits.cols; ++c) mx = std::max(mx, in[c]);
        T sum = T(0);
        for (int c = 0; c < logits.cols; ++c) {
            o[c] = std::exp(in[c] - mx);
            sum += o[c];
        }
        for (int c = 0; c < logits.cols; ++c) o[c] /= sum;
    }
    return out;
}

template <typename T>
std::vector<int> argmax_rows(const Matrix2<T>& scores) {
    std::vector<int> out(static_cast<size_t>(scores.rows));
    for (int r = 0; r < scores.rows; ++r) {
        const T* row = scores.row(r);
        int best = 0;
        for (int c = 1; c < scores.cols; ++c) {
            if (row[c] > row[best]) best = c;
        }
        out[static_cast<size_t>(r)] = best;
    }
    return out;
}

template <typename T>
AdaptedHead<T> zero_head(int way, int latent_dim) {
    AdaptedHead<T> h;
    h.weight = Matrix2<T>(way, latent_dim);
    h.bias.assign(static_cast<size_t>(way), T(0));
    return h;
}

template <typename T>
Matrix2<T> maml_scores(const AdaptedHead<T>& head, const Matrix2<T>& query_latents) {
    if (head.weight.cols != query_latents.cols) {
        throw DimensionError("head: latent width mismatch");
    }
    if (static_cast<int>(head.bias.size()) != head.weight.rows) {
        throw DimensionError("head: weight/bias shape mismatch");
    }
    Matrix2<T> logits(query_latents.rows, head.weight.rows);
    for (int q = 0; q < query_latents.rows; ++q) {
        const T* x = query_latents.row(q);
        for (int c = 0; c < head.weight.rows; ++c) {
            const T* w = head.weight.row(c);
            T acc = head.bias[static_cast<size_t>(c)];
            for (int j = 0; j < head.weight.cols; ++j) acc += w[j] * x[j];
            logits.at(q, c) = acc;
        }
    }
    return logits;
}

template <typename T>
T cross_entropy(const Matrix2<T>& scores, const std::vector<int>& labels, Matrix2<T>* dscores) {
    if (scores.rows != static_cast<int>(labels.size())) {
        throw DimensionError("cross_entropy: score/label length mismatch");
    }
    if (scores.rows == 0) throw DimensionError("cross_entropy: empty batch");
    const Matrix2<T> probs = softmax_rows(scores);
    T loss = T(0);
    for (int r = 0; r < scores.rows; ++r) {
        const int y = labels[static_cast<size_t>(r)];
        if (y < 0 || y >= scores.cols) throw DimensionError("cross_entropy: label out of range");
        loss -= std::log(std::max(probs.at(r, y), std::numeric_limits<T>::min()));
    }
    loss /= static_cast<T>(scores.rows);
    if (dscores) {
        *dscores = probs;
        const T inv = T(1) / static_cast<T>(scores.rows);
        for (int r = 0; r < scores.rows; ++r) {
            dscores->at(r, labels[static_cast<size_t>(r)]) -= T(1);
            for (int c = 0; c < scores.cols; ++c) dscores->at(r, c) *= inv;
        }
    }
    return loss;
}

template <typename T>
AdaptedHead<T> maml_adapt(const Matrix2<T>& support_latents, const std::vector<int>& support_classes,
                          const AdaptedHead<T>& init, int steps, T lr) {
    if (steps < 1) throw ConfigError("maml_adapt: need at least one inner step");
    if (init.weight.cols != support_latents.cols) {
        throw DimensionError("maml_adapt: head/latent width mismatch");
    }
    if (support_latents.rows != static_cast<int>(support_classes.size())) {
        throw DimensionError("maml_adapt: support latent/class length mismatch");
    }

    AdaptedHead<T> head = init;
    head.inner_steps = steps;
    head.inner_lr = lr;
    const int way = head.weight.rows;
    for (int s = 0; s < steps; ++s) {
        const Matrix2<T> logits = maml_scores(head, support_latents);
        Matrix2<T> dlogits;
        cross_entropy(logits, support_classes, &dlogits);
        // dW = dlogits^T X, db = column sums
        Matrix2<T> dw(way, head.weight.cols);
        std::vector<T> db(static_cast<size_t>(way), T(0));
        for (int i = 0; i < support_latents.rows; ++i) {
            const T* x = support_latents.row(i);
            for (int c = 0; c < way; ++c) {
                const T g = dlogits.at(i, c);
                db[static_cast<size_t>(c)] += g;
                T* dwr = dw.row(c);
                for (int j = 0; j < head.weight.cols; ++j) dwr[j] += g * x[j];
            }
        }
        for (int c = 0; c < way; ++c) {
            T* w = head.weight.row(c);
            const T* dwr = dw.row(c);
            for (int j = 0; j < head.weight.cols; ++j) w[j] -= lr * dwr[j];
            head.bias[static_cast<size_t>(c)] -= lr * db[static_cast<size_t>(c)];
        }
    }
    for (const T w : head.weight.v) {
        if (!std::isfinite(static_cast<double>(w))) {
            throw NumericError("maml_adapt: head parameters diverged");
        }
    }
    return head;
}

namespace {

Tensor4<float> batch_from_pool(const ImagePool& pool, const Episode& ep) {
    const size_t total = ep.support.size() + ep.query.size();
    Tensor4<float> x(static_cast<int>(total), kImageChannels, kImageSide, kImageSide);
    const size_t per = static_cast<size_t>(kImageChannels) * kImageSide * kImageSide;
    size_t row = 0;
    for (const auto* part : {&ep.support, &ep.query}) {
        for (const EpisodeItem& item : *part) {
            const Image& img = pool.images[static_cast<size_t>(item.pool_index)];
            if (img.channels != kImageChannels || img.height != kImageSide ||
                img.width != kImageSide) {
                throw DimensionError("episode: pool images must be 3x84x84");
            }
            std::copy(img.data.begin(), img.data.end(), x.v.begin() + static_cast<long>(row * per));
            ++row;
        }
    }
    return x;
}

template <typename T>
Matrix2<T> take_rows(const Matrix2<T>& m, int begin, int count) {
    Matrix2<T> out(count, m.cols);
    std::copy(m.row(begin), m.row(begin) + static_cast<size_t>(count) * m.cols, out.v.begin());
    return out;
}

std::vector<int> item_classes(const std::vector<EpisodeItem>& items) {
    std::vector<int> out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back(it.cls);
    return out;
}

// gradient of the query cross-entropy through prototype scores, with respect
// to both query and support latents (prototypes are class means)
void proto_backward(const Matrix2<float>& sup_lat, const std::vector<int>& sup_classes, int way,
                    const Matrix2<float>& qry_lat, const Matrix2<float>& dscores,
                    Matrix2<float>& dsup, Matrix2<float>& dqry) {
    std::vector<int> counts;
    const Matrix2<float> proto = class_prototypes(sup_lat, sup_classes, way, &counts);
    const int d = sup_lat.cols;
    Matrix2<float> dproto(way, d);
    dsup = Matrix2<float>(sup_lat.rows, d);
    dqry = Matrix2<float>(qry_lat.rows, d);
    for (int q = 0; q < qry_lat.rows; ++q) {
        const float* qv = qry_lat.row(q);
        float* dq = dqry.row(q);
        for (int c = 0; c < way; ++c) {
            const float g = dscores.at(q, c);
            if (g == 0.0f) continue;
            const float* pv = proto.row(c);
            float* dp = dproto.row(c);
            for (int j = 0; j < d; ++j) {
                const float diff = qv[j] - pv[j];
                dq[j] -= 2.0f * g * diff;
                dp[j] += 2.0f * g * diff;
            }
        }
    }
    for (int i = 0; i < sup_lat.rows; ++i) {
        const int c = sup_classes[static_cast<size_t>(i)];
        const float inv = 1.0f / static_cast<float>(counts[static_cast<size_t>(c)]);
        const float* dp = dproto.row(c);
        float* ds = dsup.row(i);
        for (int j = 0; j < d; ++j) ds[j] = dp[j] * inv;
    }
}

}  // namespace

void meta_train(Backbone<float>& net, const ImagePool& pool, const EpisodeSpec& spec,
                HeadKind head, int epochs, int episodes_per_epoch, double lr,
                const MamlParams& maml, std::vector<double>& trace) {
    if (epochs < 0) throw ConfigError("meta_train: negative epoch count");
    if (epochs > 0 && episodes_per_epoch < 1) {
        throw ConfigError("meta_train: episodes_per_epoch must be positive");
    }
    if (!std::isfinite(lr)) throw ConfigError("meta_train: learning rate must be finite");

    uint64_t g = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (int e = 0; e < episodes_per_epoch; ++e, ++g) {
            EpisodeSpec s = spec;
            s.seed = derive_seed(spec.seed, g);
            const Episode ep = sample_episode(pool, s);
            const int n_sup = static_cast<int>(ep.support.size());
            const int n_qry = static_cast<int>(ep.query.size());

            const Tensor4<float> batch = batch_from_pool(pool, ep);
            const Matrix2<float> lat = net.forward(batch, /*train=*/true);
            const Matrix2<float> sup_lat = take_rows(lat, 0, n_sup);
            const Matrix2<float> qry_lat = take_rows(lat, n_sup, n_qry);
            const std::vector<int> sup_y = item_classes(ep.support);
            const std::vector<int> qry_y = item_classes(ep.query);

            Matrix2<float> dlat(lat.rows, lat.cols);
            double loss = 0.0;
            if (head == HeadKind::Proto) {
                const Matrix2<float> scores = proto_scores(sup_lat, sup_y, spec.way, qry_lat);
                Matrix2<float> dscores;
                loss = cross_entropy(scores, qry_y, &dscores);
                Matrix2<float> dsup, dqry;
                proto_backward(sup_lat, sup_y, spec.way, qry_lat, dscores, dsup, dqry);
                std::copy(dsup.v.begin(), dsup.v.end(), dlat.v.begin());
                std::copy(dqry.v.begin(), dqry.v.end(),
                          dlat.v.begin() + static_cast<long>(static_cast<size_t>(n_sup) * lat.cols));
            } else {
                // first-order: the adapted head is a constant for the outer step
                const auto head0 = zero_head<float>(spec.way, lat.cols);
                const auto adapted = maml_adapt(sup_lat, sup_y, head0, maml.inner_steps,
                                                static_cast<float>(maml.inner_lr));
                const Matrix2<float> logits = maml_scores(adapted, qry_lat);
                Matrix2<float> dlogits;
                loss = cross_entropy(logits, qry_y, &dlogits);
                for (int q = 0; q < n_qry; ++q) {
                    float* dst = dlat.row(n_sup + q);
                    for (int c = 0; c < spec.way; ++c) {
                        const float gl = dlogits.at(q, c);
                        if (gl == 0.0f) continue;
                        const float* w = adapted.weight.row(c);
                        for (int j = 0; j < lat.cols; ++j) dst[j] += gl * w[j];
                    }
                }
            }

            if (!std::isfinite(loss)) {
                throw NumericError("meta_train: loss diverged at episode " + std::to_string(g));
            }
            trace.push_back(loss);
            net.zero_grad();
            net.backward(dlat);
            net.sgd_step(static_cast<float>(lr));
        }
    }
}

EvalReport evaluate(const Backbone<float>& net, const ImagePool& pool, HeadKind head,
                    const std::vector<Episode>& episodes, const MamlParams& maml) {
    if (episodes.empty()) throw ConfigError("evaluate: no episodes");

    EvalReport rep;
    rep.episodes = static_cast<int>(episodes.size());
    rep.way = episodes.front().spec.way;
    rep.shot = episodes.front().spec.shot;
    rep.query = episodes.front().spec.query;
    rep.head = head_name(head);
    rep.arch = arch_name(net.spec().arch);

    for (const Episode& ep : episodes) {
        std::vector<const Image*> ptrs;
        ptrs.reserve(ep.support.size() + ep.query.size());
        for (const auto* part : {&ep.support, &ep.query}) {
            for (const EpisodeItem& item : *part) {
                ptrs.push_back(&pool.images[static_cast<size_t>(item.pool_index)]);
            }
        }
        const Matrix2<float> lat = net.embed_batch(ptrs);
        const int n_sup = static_cast<int>(ep.support.size());
        const int n_qry = static_cast<int>(ep.query.size());
        const Matrix2<float> sup_lat = take_rows(lat, 0, n_sup);
        const Matrix2<float> qry_lat = take_rows(lat, n_sup, n_qry);
        const std::vector<int> sup_y = item_classes(ep.support);
        const std::vector<int> qry_y = item_classes(ep.query);

        Matrix2<float> scores;
        if (head == HeadKind::Proto) {
            scores = proto_scores(sup_lat, sup_y, ep.spec.way, qry_lat);
        } else {
            const auto adapted = maml_adapt(sup_lat, sup_y, zero_head<float>(ep.spec.way, lat.cols),
                                            maml.inner_steps, static_cast<float>(maml.inner_lr));
            scores = maml_scores(adapted, qry_lat);
        }
        const Matrix2<float> probs = softmax_rows(scores);
        rep.episode_accuracy.push_back(accuracy(argmax_rows(scores), qry_y));

        if (ep.spec.way == 2) {
            std::vector<double> pos(static_cast<size_t>(n_qry));
            for (int q = 0; q < n_qry; ++q) pos[static_cast<size_t>(q)] = probs.at(q, 1);
            rep.episode_auc.push_back(auc_binary(pos, qry_y));
        } else {
            std::vector<std::vector<double>> pr(static_cast<size_t>(n_qry));
            for (int q = 0; q < n_qry; ++q) {
                pr[static_cast<size_t>(q)].assign(probs.row(q), probs.row(q) + probs.cols);
            }
            rep.episode_auc.push_back(auc_macro_ovr(pr, qry_y));
        }
    }

    rep.mean_accuracy = std::accumulate(rep.episode_accuracy.begin(), rep.episode_accuracy.end(), 0.0) /
                        static_cast<double>(rep.episodes);
    rep.mean_auc = std::accumulate(rep.episode_auc.begin(), rep.episode_auc.end(), 0.0) /
                   static_cast<double>(rep.episodes);
    return rep;
}

template Matrix2<float> proto_scores(const Matrix2<float>&, const std::vector<int>&, int,
                                     const Matrix2<float>&);
template Matrix2<double> proto_scores(const Matrix2<double>&, const std::vector<int>&, int,
                                      const Matrix2<double>&);
template Matrix2<float> softmax_rows(const Matrix2<float>&);
template Matrix2<double> softmax_rows(const Matrix2<double>&);
template std::vector<int> argmax_rows(const Matrix2<float>&);
template std::vector<int> argmax_rows(const Matrix2<double>&);
template struct AdaptedHead<float>;
template struct AdaptedHead<double>;
template AdaptedHead<float> zero_head(int, int);
template AdaptedHead<double> zero_head(int, int);
template AdaptedHead<float> maml_adapt(const Matrix2<float>&, const std::vector<int>&,
                                       const AdaptedHead<float>&, int, float);
template AdaptedHead<double> maml_adapt(const Matrix2<double>&, const std::vector<int>&,
                                        const AdaptedHead<double>&, int, double);
template Matrix2<float> maml_scores(const AdaptedHead<float>&, const Matrix2<float>&);
template Matrix2<double> maml_scores(const AdaptedHead<double>&, const Matrix2<double>&);
template float cross_entropy(const Matrix2<float>&, const std::vector<int>&, Matrix2<float>*);
template double cross_entropy(const Matrix2<double>&, const std::vector<int>&, Matrix2<double>*);

}  // namespace fewtab
