#ifndef FSSEG_OBJECT_MINER_HPP
#define FSSEG_OBJECT_MINER_HPP

#include <string>
#include <utility>
#include <vector>

#include "fsseg/attention.hpp"
#include "fsseg/backbone.hpp"

namespace fsseg {

/// Region-expansion decoder settings: a feature pyramid built by
/// alternating self-attention and stride-2 downsampling, per-scale
/// cross-attention from the pseudo support with the softmax taken over
/// target (query) positions, top-down fusion, and a small conv head.
struct MinerConfig {
    int levels = 3;       // pyramid scales
    int attn_layers = 1;  // aggregation layers per scale
    int channels = 64;
    int heads = 4;
    int groups = 8;

    void validate() const {
        if (levels < 1) throw std::invalid_argument("MinerConfig: levels >= 1");
        if (attn_layers < 1) throw std::invalid_argument("MinerConfig: attn_layers >= 1");
        if (channels % heads != 0) throw std::invalid_argument("MinerConfig: heads must divide channels");
        if (channels % groups != 0) throw std::invalid_argument("MinerConfig: groups must divide channels");
        if (channels < 2) throw std::invalid_argument("MinerConfig: channels >= 2");
    }
};

template <typename T>
struct MinerParams {
    MinerConfig cfg;
    std::vector<AttentionParams<T>> pyr_attn;  // levels-1 self-attention layers
    struct Down {
        Tensor<T> w, b, gamma, beta;  // stride-2 3x3 conv + groupnorm
    };
    std::vector<Down> down;  // levels-1
    std::vector<std::vector<AttentionParams<T>>> agg;  // levels x attn_layers
    struct Fuse {
        Tensor<T> w1, b1, w3, b3;  // 1x1 then 3x3, both C->C
    };
    std::vector<Fuse> fuse;  // levels-1, index l fuses level l with l+1
    Tensor<T> head_w1, head_b1, head_w2, head_b2;  // 3x3 C->C/2, 3x3 C/2->1

    static MinerParams make(const MinerConfig& cfg, RngStream& rng) {
        cfg.validate();
        MinerParams p;
        p.cfg = cfg;
        const int C = cfg.channels;
        for (int l = 0; l + 1 < cfg.levels; ++l) {
            p.pyr_attn.push_back(AttentionParams<T>::make(C, cfg.heads, rng));
            Down d;
            d.w = EncoderParams<T>::he_conv(rng, 3, 3, C, C);
            d.b = Tensor<T>({C});
            d.gamma = Tensor<T>({C}, T(1));
            d.beta = Tensor<T>({C});
            p.down.push_back(std::move(d));
        }
        for (int l = 0; l < cfg.levels; ++l) {
            std::vector<AttentionParams<T>> layers;
            for (int a = 0; a < cfg.attn_layers; ++a)
                layers.push_back(AttentionParams<T>::make(C, cfg.heads, rng));
            p.agg.push_back(std::move(layers));
        }
        for (int l = 0; l + 1 < cfg.levels; ++l) {
            Fuse f;
            f.w1 = EncoderParams<T>::he_conv(rng, 1, 1, C, C);
            f.b1 = Tensor<T>({C});
            f.w3 = EncoderParams<T>::he_conv(rng, 3, 3, C, C);
            f.b3 = Tensor<T>({C});
            p.fuse.push_back(std::move(f));
        }
        const int half = C / 2;
        p.head_w1 = EncoderParams<T>::he_conv(rng, 3, 3, C, half);
        p.head_b1 = Tensor<T>({half});
        p.head_w2 = EncoderParams<T>::he_conv(rng, 3, 3, half, 1);
        p.head_b2 = Tensor<T>({1});
        return p;
    }

    /// Convolutional parameters go under conv_prefix, attention layers
    /// under attn_prefix (separate checkpoint namespaces).
    template <typename F>
    void visit(const std::string& conv_prefix, const std::string& attn_prefix, F&& f) {
        for (size_t l = 0; l < pyr_attn.size(); ++l)
            pyr_attn[l].visit(attn_prefix + "pyr" + std::to_string(l) + ".", f);
        for (size_t l = 0; l < down.size(); ++l) {
            std::string s = conv_prefix + "down" + std::to_string(l) + ".";
            f(s + "w", down[l].w);
            f(s + "b", down[l].b);
            f(s + "gamma", down[l].gamma);
            f(s + "beta", down[l].beta);
        }
        for (size_t l = 0; l < agg.size(); ++l)
            for (size_t a = 0; a < agg[l].size(); ++a)
                agg[l][a].visit(attn_prefix + "agg" + std::to_string(l) + "_" + std::to_string(a) + ".", f);
        for (size_t l = 0; l < fuse.size(); ++l) {
            std::string s = conv_prefix + "fuse" + std::to_string(l) + ".";
            f(s + "w1", fuse[l].w1);
            f(s + "b1", fuse[l].b1);
            f(s + "w3", fuse[l].w3);
            f(s + "b3", fuse[l].b3);
        }
        f(conv_prefix + "head.w1", head_w1);
        f(conv_prefix + "head.b1", head_b1);
        f(conv_prefix + "head.w2", head_w2);
        f(conv_prefix + "head.b2", head_b2);
    }
};

struct MinerNodes {
    MinerConfig cfg;
    std::vector<AttentionNodes> pyr_attn;
    struct Down {
        int w, b, gamma, beta;
    };
    std::vector<Down> down;
    std::vector<std::vector<AttentionNodes>> agg;
    struct Fuse {
        int w1, b1, w3, b3;
    };
    std::vector<Fuse> fuse;
    int head_w1 = -1, head_b1 = -1, head_w2 = -1, head_b2 = -1;
};

template <typename T>
MinerNodes bind_miner(Graph<T>& g, const MinerParams<T>& p, bool trainable) {
    auto put = [&](const Tensor<T>& t) { return trainable ? g.var(t) : g.constant(t); };
    MinerNodes n;
    n.cfg = p.cfg;
    for (const auto& a : p.pyr_attn) n.pyr_attn.push_back(bind_attention(g, a, trainable));
    for (const auto& d : p.down) n.down.push_back({put(d.w), put(d.b), put(d.gamma), put(d.beta)});
    for (const auto& layers : p.agg) {
        std::vector<AttentionNodes> bound;
        for (const auto& a : layers) bound.push_back(bind_attention(g, a, trainable));
        n.agg.push_back(std::move(bound));
    }
    for (const auto& fz : p.fuse) n.fuse.push_back({put(fz.w1), put(fz.b1), put(fz.w3), put(fz.b3)});
    n.head_w1 = put(p.head_w1);
    n.head_b1 = put(p.head_b1);
    n.head_w2 = put(p.head_w2);
    n.head_b2 = put(p.head_b2);
    return n;
}

/// Graph ids of everything the loss terms need downstream.
struct PyramidState {
    std::vector<int> levels;                  // query features per scale
    std::vector<int> pseudo;                  // gated pseudo supports
    std::vector<int> aggregated;              // cross-attended features
    std::vector<int> attn_maps;               // retained correlation maps [N_l, N_l]
    std::vector<std::pair<int, int>> extents;  // (H_l, W_l)
    int fused = -1;
    int m_e = -1;  // soft mask [H, W]
};

/// Level 1 is f_q itself; each further level is a stride-2 conv of the
/// self-attended previous level, halving the extent.
template <typename T>
std::vector<int> build_pyramid(Graph<T>& g, const MinerNodes& n, int f_q) {
    const Tensor<T>& F = g.val(f_q);
    if (F.rank() != 3 || F.shape[2] != n.cfg.channels)
        throw std::invalid_argument("build_pyramid: [H,W,C] with C == miner channels");
    int H = F.shape[0], W = F.shape[1];
    int div = 1 << (n.cfg.levels - 1);
    if (H % div != 0 || W % div != 0)
        throw std::invalid_argument("build_pyramid: extent not divisible by 2^(levels-1)");
    std::vector<int> levels = {f_q};
    for (int l = 0; l + 1 < n.cfg.levels; ++l) {
        int flat = g.reshape(levels.back(), {H * W, n.cfg.channels});
        int sa = self_attention(g, flat, n.pyr_attn[static_cast<size_t>(l)]);
        int spatial = g.reshape(sa, {H, W, n.cfg.channels});
        const auto& d = n.down[static_cast<size_t>(l)];
        int conv = conv2d(g, spatial, d.w, d.b, 2);
        int gn = groupnorm(g, conv, d.gamma, d.beta, n.cfg.groups);
        levels.push_back(g.relu(gn));
        H /= 2;
        W /= 2;
    }
    return levels;
}

struct ScaleAggregation {
    int output;
    int attn_map;  // last layer's retained weights
};

/// Cross-attention at one scale: query features are the target, the pseudo
/// support the source, softmax over target positions so support mass lands
/// on the most similar query locations.
template <typename T>
ScaleAggregation aggregate_scale(Graph<T>& g, int f_q_l, int f_psd_l,
                                 const std::vector<AttentionNodes>& layers) {
    const Tensor<T>& F = g.val(f_q_l);
    if (!F.same_shape(g.val(f_psd_l)))
        throw std::invalid_argument("aggregate_scale: extent mismatch");
    const int N = F.shape[0] * F.shape[1], C = F.shape[2];
    int target = g.reshape(f_q_l, {N, C});
    int source = g.reshape(f_psd_l, {N, C});
    int attn_map = -1;
    for (const auto& layer : layers) {
        auto r = feat_agg(g, target, source, layer, SoftmaxAxis::over_target);
        target = r.output;
        attn_map = r.attn_map;
    }
    return {g.reshape(target, {F.shape[0], F.shape[1], C}), attn_map};
}

/// Top-down fusion, coarse to fine:
/// fused_L = agg_L; fused_l = Conv3x3(Conv1x1(agg_l + R(fused_{l+1})) + R(fused_{l+1}))
/// with R a 2x bilinear upsampling.
template <typename T>
int fuse_topdown(Graph<T>& g, const MinerNodes& n, const std::vector<int>& aggregated) {
    if (aggregated.size() != static_cast<size_t>(n.cfg.levels))
        throw std::invalid_argument("fuse_topdown: need one map per level");
    int fused = aggregated.back();
    for (int l = n.cfg.levels - 2; l >= 0; --l) {
        const Tensor<T>& fine = g.val(aggregated[static_cast<size_t>(l)]);
        int up = resize_bilinear(g, fused, fine.shape[0], fine.shape[1]);
        const auto& fz = n.fuse[static_cast<size_t>(l)];
        int c1 = conv2d(g, g.add(aggregated[static_cast<size_t>(l)], up), fz.w1, fz.b1, 1);
        fused = conv2d(g, g.add(c1, up), fz.w3, fz.b3, 1);
    }
    return fused;
}

/// Conv head to a single channel plus sigmoid; the soft mask is never
/// binarized on the training path.
template <typename T>
int predict_mask(Graph<T>& g, const MinerNodes& n, int fused) {
    const Tensor<T>& F = g.val(fused);
    int h1 = g.relu(conv2d(g, fused, n.head_w1, n.head_b1, 1));
    int logits = conv2d(g, h1, n.head_w2, n.head_b2, 1);  // [H,W,1]
    return g.sigmoid(g.reshape(logits, {F.shape[0], F.shape[1]}));
}

/// Full decoder pass from backbone features and the (fixed) seed
/// activation mask. The activation is bilinearly shrunk to each scale and
/// applied as soft weights without re-thresholding.
template <typename T>
PyramidState miner_forward(Graph<T>& g, const MinerNodes& n, int f_q, const Tensor<T>& m_qtau) {
    const Tensor<T>& F = g.val(f_q);
    if (m_qtau.rank() != 2 || m_qtau.shape[0] != F.shape[0] || m_qtau.shape[1] != F.shape[1])
        throw std::invalid_argument("miner_forward: activation extent mismatch");
    PyramidState st;
    st.levels = build_pyramid(g, n, f_q);
    for (int l = 0; l < n.cfg.levels; ++l) {
        const Tensor<T>& Fl = g.val(st.levels[static_cast<size_t>(l)]);
        st.extents.push_back({Fl.shape[0], Fl.shape[1]});
        Tensor<T> m_l = l == 0 ? m_qtau : resize_bilinear_value(m_qtau, Fl.shape[0], Fl.shape[1]);
        st.pseudo.push_back(hadamard_channels(g, st.levels[static_cast<size_t>(l)], g.constant(m_l)));
        auto agg = aggregate_scale(g, st.levels[static_cast<size_t>(l)], st.pseudo[static_cast<size_t>(l)],
                                   n.agg[static_cast<size_t>(l)]);
        st.aggregated.push_back(agg.output);
        st.attn_maps.push_back(agg.attn_map);
    }
    st.fused = fuse_topdown(g, n, st.aggregated);
    st.m_e = predict_mask(g, n, st.fused);
    return st;
}

}  // namespace fsseg

#endif
