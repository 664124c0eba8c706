#ifndef FSSEG_DETAIL_MINER_HPP
#define FSSEG_DETAIL_MINER_HPP

#include <string>
#include <vector>

#include "fsseg/attention.hpp"

namespace fsseg {

/// Discriminator settings: N learnable local proxies cross-attend into
/// masked query features (predicted mask = fake, ground truth = real), the
/// most-different aligned pair is scored by a small FC head.
struct DetailConfig {
    int proxies = 10;
    int channels = 64;
    int heads = 4;
    int layers = 2;

    void validate() const {
        if (proxies < 2) throw std::invalid_argument("DetailConfig: proxies >= 2");
        if (channels % heads != 0) throw std::invalid_argument("DetailConfig: heads must divide channels");
        if (layers < 1) throw std::invalid_argument("DetailConfig: layers >= 1");
    }
};

template <typename T>
struct DetailParams {
    DetailConfig cfg;
    Tensor<T> bank;  // proxy sequence [N, C]
    std::vector<AttentionParams<T>> layers;
    Tensor<T> fc_w1, fc_b1, fc_w2, fc_b2;  // [C,C/2], [C/2], [C/2,1], [1]

    static DetailParams make(const DetailConfig& cfg, RngStream& rng) {
        cfg.validate();
        DetailParams p;
        p.cfg = cfg;
        p.bank = Tensor<T>({cfg.proxies, cfg.channels});
        for (auto& v : p.bank.data) v = static_cast<T>(0.02 * rng.next_normal());
        for (int l = 0; l < cfg.layers; ++l)
            p.layers.push_back(AttentionParams<T>::make(cfg.channels, cfg.heads, rng));
        const int half = cfg.channels / 2;
        p.fc_w1 = AttentionParams<T>::xavier(rng, cfg.channels, half);
        p.fc_b1 = Tensor<T>({half});
        p.fc_w2 = AttentionParams<T>::xavier(rng, half, 1);
        p.fc_b2 = Tensor<T>({1});
        return p;
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + "bank", bank);
        for (size_t l = 0; l < layers.size(); ++l)
            layers[l].visit(prefix + "attn" + std::to_string(l) + ".", f);
        f(prefix + "fc.w1", fc_w1);
        f(prefix + "fc.b1", fc_b1);
        f(prefix + "fc.w2", fc_w2);
        f(prefix + "fc.b2", fc_b2);
    }
};

struct DetailNodes {
    DetailConfig cfg;
    int bank = -1;
    std::vector<AttentionNodes> layers;
    int fc_w1 = -1, fc_b1 = -1, fc_w2 = -1, fc_b2 = -1;
};

template <typename T>
DetailNodes bind_detail(Graph<T>& g, const DetailParams<T>& p, bool trainable) {
    auto put = [&](const Tensor<T>& t) { return trainable ? g.var(t) : g.constant(t); };
    DetailNodes n;
    n.cfg = p.cfg;
    n.bank = put(p.bank);
    for (const auto& a : p.layers) n.layers.push_back(bind_attention(g, a, trainable));
    n.fc_w1 = put(p.fc_w1);
    n.fc_b1 = put(p.fc_b1);
    n.fc_w2 = put(p.fc_w2);
    n.fc_b2 = put(p.fc_b2);
    return n;
}

struct LocalFeatures {
    int omega = -1;              // [N, C]
    std::vector<int> attn_maps;  // per layer, [N, H*W]
};

/// Proxies attend into mask-gated query features with the standard
/// over-source softmax. The mask is a graph node so the fake path carries
/// gradients through the predicted mask.
template <typename T>
LocalFeatures extract_local_features(Graph<T>& g, const DetailNodes& n, int f_q, int mask) {
    const Tensor<T>& F = g.val(f_q);
    if (F.rank() != 3 || F.shape[2] != n.cfg.channels)
        throw std::invalid_argument("extract_local_features: [H,W,C] features expected");
    int gated = hadamard_channels(g, f_q, mask);
    int src = g.reshape(gated, {F.shape[0] * F.shape[1], n.cfg.channels});
    LocalFeatures out;
    int seq = n.bank;
    for (const auto& layer : n.layers) {
        auto r = feat_agg(g, seq, src, layer, SoftmaxAxis::over_source);
        seq = r.output;
        out.attn_maps.push_back(r.attn_map);
    }
    out.omega = seq;
    return out;
}

struct PairSelection {
    int index = 0;  // aligned proxy index, 0-based
    double cosine = 0;
    std::vector<double> all_cosines;
};

/// argmin over aligned rows of cos(omega_f^i, omega_r^i); ties go to the
/// smallest index.
template <typename T>
PairSelection select_most_different_pair(const Tensor<T>& omega_f, const Tensor<T>& omega_r) {
    if (omega_f.rank() != 2 || omega_f.shape != omega_r.shape)
        throw std::invalid_argument("select_most_different_pair: aligned [N,C] sets expected");
    const int N = omega_f.shape[0], C = omega_f.shape[1];
    PairSelection sel;
    sel.cosine = 2.0;
    for (int i = 0; i < N; ++i) {
        double c = cosine(&omega_f.at2(i, 0), &omega_r.at2(i, 0), C);
        sel.all_cosines.push_back(c);
        if (c < sel.cosine) {
            sel.cosine = c;
            sel.index = i;
        }
    }
    return sel;
}

/// FC head C -> C/2 -> 1 with sigmoid, clamped to [eps, 1-eps] before any
/// log downstream.
template <typename T>
int score_real_fake(Graph<T>& g, const DetailNodes& n, int omega_row, T eps = T(1e-6)) {
    const Tensor<T>& w = g.val(omega_row);
    if (w.rank() != 1 || w.shape[0] != n.cfg.channels)
        throw std::invalid_argument("score_real_fake: [C] vector expected");
    int x = g.reshape(omega_row, {1, n.cfg.channels});
    int h = g.relu(g.add_rowvec(g.matmul(x, n.fc_w1), n.fc_b1));
    int logit = g.add_rowvec(g.matmul(h, n.fc_w2), n.fc_b2);
    int s = g.sigmoid(g.reshape(logit, {1}));
    return g.clamp(s, eps, T(1) - eps);
}

/// Mean pairwise cosine within each feature set, summed over the two sets:
/// (1/(N(N-1))) sum_{i != j} [cos(f_i,f_j) + cos(r_i,r_j)], in [-2, 2].
template <typename T>
int diversity_loss(Graph<T>& g, int omega_f, int omega_r) {
    const Tensor<T>& F = g.val(omega_f);
    if (F.rank() != 2 || !F.same_shape(g.val(omega_r)))
        throw std::invalid_argument("diversity_loss: aligned [N,C] sets expected");
    const int N = F.shape[0];
    if (N < 2) throw std::invalid_argument("diversity_loss: need N >= 2");
    int total = -1;
    for (int i = 0; i < N; ++i)
        for (int j = i + 1; j < N; ++j) {
            int cf = cosine_node(g, g.row(omega_f, i), g.row(omega_f, j));
            int cr = cosine_node(g, g.row(omega_r, i), g.row(omega_r, j));
            int pair = g.add(cf, cr);
            total = total < 0 ? pair : g.add(total, pair);
        }
    // cosine is symmetric, so the ordered-pair average is twice the i<j sum
    // over N(N-1)
    return g.scale(total, T(2) / static_cast<T>(static_cast<double>(N) * (N - 1)));
}

}  // namespace fsseg

#endif
