#ifndef FSSEG_LOCALIZER_HPP
#define FSSEG_LOCALIZER_HPP

#include <algorithm>
#include <string>
#include <vector>

#include "fsseg/core.hpp"
#include "fsseg/nn.hpp"

namespace fsseg {

/// Seed-region localization settings. The literal spatial softmax spreads
/// mass over all H*W positions and can never clear a 0.7 threshold, so the
/// default rescales the shifted cosine map by its maximum instead; the
/// softmax mode is kept for fidelity experiments.
struct LocalizerConfig {
    double tau = 0.7;
    enum class Normalization { max_normalize, softmax_spatial };
    Normalization normalization = Normalization::max_normalize;
    int fallback_topk = 4;

    void validate() const {
        if (tau <= 0 || tau >= 1) throw std::invalid_argument("LocalizerConfig: tau in (0,1)");
        if (fallback_topk < 1) throw std::invalid_argument("LocalizerConfig: fallback_topk >= 1");
    }

    static Normalization parse_normalization(const std::string& s) {
        if (s == "max_normalize") return Normalization::max_normalize;
        if (s == "softmax_spatial") return Normalization::softmax_spatial;
        throw std::invalid_argument("LocalizerConfig: unknown normalization '" + s + "'");
    }
};

/// Holistic prototype: mask-weighted average of feature vectors.
template <typename T>
Tensor<T> mask_average_pool_value(const Tensor<T>& f, const Tensor<T>& m) {
    if (f.rank() != 3 || m.rank() != 2 || f.shape[0] != m.shape[0] || f.shape[1] != m.shape[1])
        throw std::invalid_argument("mask_average_pool: extent mismatch");
    const int H = f.shape[0], W = f.shape[1], C = f.shape[2];
    Tensor<T> proto({C});
    double wsum = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double w = m.at2(y, x);
            if (w == 0) continue;
            wsum += w;
            for (int c = 0; c < C; ++c) proto[c] += static_cast<T>(w * f.at3(y, x, c));
        }
    if (wsum <= 0) throw std::invalid_argument("mask_average_pool: all-zero mask");
    for (int c = 0; c < C; ++c) proto[c] = static_cast<T>(proto[c] / wsum);
    return proto;
}

inline TensorF mask_average_pool(const FeatureMap& f, const Mask& m) {
    return mask_average_pool_value(f.data, m.data);
}

/// Per-position cosine against the prototype, before any normalization.
template <typename T>
Tensor<T> cosine_map_value(const Tensor<T>& f_h, const Tensor<T>& f_q) {
    if (f_h.rank() != 1 || f_q.rank() != 3 || f_q.shape[2] != f_h.shape[0])
        throw std::invalid_argument("cosine_map: channel mismatch");
    const int H = f_q.shape[0], W = f_q.shape[1], C = f_q.shape[2];
    Tensor<T> out({H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            out.at2(y, x) = cosine(f_h.data.data(), &f_q.at3(y, x, 0), C);
    return out;
}

/// Normalize a raw cosine map to [0,1] per the configured mode.
template <typename T>
Tensor<T> normalize_similarity(const Tensor<T>& raw, LocalizerConfig::Normalization mode) {
    Tensor<T> out = raw;
    if (mode == LocalizerConfig::Normalization::max_normalize) {
        T mx = T(0);
        for (auto& v : out.data) {
            v = (v + T(1)) / T(2);
            mx = std::max(mx, v);
        }
        if (mx > T(1e-12))
            for (auto& v : out.data) v /= mx;
    } else {
        double mxr = -2, sum = 0;
        for (auto v : raw.data) mxr = std::max(mxr, static_cast<double>(v));
        for (size_t i = 0; i < out.data.size(); ++i) {
            double e = std::exp(static_cast<double>(raw.data[i]) - mxr);
            out.data[i] = static_cast<T>(e);
            sum += e;
        }
        for (auto& v : out.data) v = static_cast<T>(v / sum);
    }
    for (auto& v : out.data) v = std::clamp(v, T(0), T(1));
    return out;
}

struct SimilarityResult {
    TensorF raw_cos;  // [-1,1]
    Mask map;         // soft, normalized to [0,1]
};

inline SimilarityResult similarity_map(const TensorF& f_h, const FeatureMap& f_q,
                                       const LocalizerConfig& cfg) {
    SimilarityResult r;
    r.raw_cos = cosine_map_value(f_h, f_q.data);
    r.map = Mask(normalize_similarity(r.raw_cos, cfg.normalization), MaskKind::soft);
    return r;
}

/// sim > tau, with a top-k fallback so downstream mining always has a seed.
template <typename T>
Tensor<T> threshold_activation_value(const Tensor<T>& sim, double tau, int fallback_topk,
                                     bool* fallback_used = nullptr) {
    Tensor<T> out(sim.shape, T(0));
    int64_t set = 0;
    for (int64_t i = 0; i < sim.size(); ++i)
        if (static_cast<double>(sim[i]) > tau) {
            out[i] = T(1);
            ++set;
        }
    bool fb = set == 0;
    if (fb) {
        // top-k by value, ties broken by row-major position
        std::vector<int64_t> idx(static_cast<size_t>(sim.size()));
        for (int64_t i = 0; i < sim.size(); ++i) idx[static_cast<size_t>(i)] = i;
        int64_t k = std::min<int64_t>(fallback_topk, sim.size());
        std::stable_sort(idx.begin(), idx.end(),
                         [&](int64_t a, int64_t b) { return sim[a] > sim[b]; });
        for (int64_t i = 0; i < k; ++i) out[idx[static_cast<size_t>(i)]] = T(1);
    }
    if (fallback_used) *fallback_used = fb;
    return out;
}

inline Mask threshold_activation(const Mask& sim, const LocalizerConfig& cfg,
                                 bool* fallback_used = nullptr) {
    cfg.validate();
    return Mask(threshold_activation_value(sim.data, cfg.tau, cfg.fallback_topk, fallback_used),
                MaskKind::binary);
}

/// K-shot rule: union of the individual activation masks.
template <typename T>
Tensor<T> or_masks(const std::vector<Tensor<T>>& ms) {
    if (ms.empty()) throw std::invalid_argument("kshot_combine: empty list");
    Tensor<T> out = ms[0];
    for (size_t k = 1; k < ms.size(); ++k) {
        if (ms[k].shape != out.shape) throw std::invalid_argument("kshot_combine: extent mismatch");
        for (int64_t i = 0; i < out.size(); ++i)
            out[i] = (out[i] > T(0) || ms[k][i] > T(0)) ? T(1) : T(0);
    }
    return out;
}

inline Mask kshot_combine(const std::vector<Mask>& activations) {
    std::vector<TensorF> data;
    for (const auto& m : activations) data.push_back(m.data);
    return Mask(or_masks(data), MaskKind::binary);
}

/// Pseudo support: query features gated by the activation mask.
template <typename T>
Tensor<T> build_pseudo_support_value(const Tensor<T>& f_q, const Tensor<T>& m) {
    if (f_q.rank() != 3 || m.rank() != 2 || f_q.shape[0] != m.shape[0] || f_q.shape[1] != m.shape[1])
        throw std::invalid_argument("build_pseudo_support: extent mismatch");
    Tensor<T> out = f_q;
    const int H = f_q.shape[0], W = f_q.shape[1], C = f_q.shape[2];
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            T mv = m.at2(y, x);
            for (int c = 0; c < C; ++c) out.at3(y, x, c) *= mv;
        }
    return out;
}

inline FeatureMap build_pseudo_support(const FeatureMap& f_q, const Mask& m) {
    return FeatureMap(build_pseudo_support_value(f_q.data, m.data));
}

/// Graph form: gate a feature node with a fixed mask (gradients flow into
/// the features only).
template <typename T>
int build_pseudo_support_node(Graph<T>& g, int f_q, const Tensor<T>& m) {
    return hadamard_channels(g, f_q, g.constant(m));
}

}  // namespace fsseg

#endif
