#ifndef FSSEG_ATTENTION_HPP
#define FSSEG_ATTENTION_HPP

#include <string>
#include <vector>

#include "fsseg/core.hpp"
#include "fsseg/nn.hpp"

namespace fsseg {

/// Which axis of the score matrix the softmax normalizes.
///   over_source: each target position's weights over sources sum to 1
///                (the standard attention layout).
///   over_target: each source token's weights over target positions sum
///                to 1, so foreground sources distribute their mass onto
///                the target positions most similar to them.
enum class SoftmaxAxis { over_source, over_target };

/// Multi-head cross-attention layer parameters: per-head Q/K/V projections,
/// a two-layer FFN, and optional pre-norm layers around attention and FFN.
/// use_norm=false gives the bare score/softmax/aggregate core, which is
/// what the closed-form unit tests pin down.
template <typename T>
struct AttentionParams {
    int dim = 0;        // embedding dim C
    int heads = 1;
    int head_dim = 0;   // d, heads * d == C
    int ffn_hidden = 0;
    bool use_norm = true;

    std::vector<Tensor<T>> w_q, w_k, w_v;          // per head [C, d]
    Tensor<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;      // [C,h], [h], [h,C], [C]
    Tensor<T> ln_t_g, ln_t_b, ln_s_g, ln_s_b, ln_f_g, ln_f_b;  // [C] each

    static AttentionParams make(int dim, int heads, RngStream& rng, bool use_norm = true, int ffn_hidden = 0) {
        if (dim <= 0 || heads <= 0 || dim % heads != 0)
            throw std::invalid_argument("AttentionParams: heads must divide dim");
        AttentionParams p;
        p.dim = dim;
        p.heads = heads;
        p.head_dim = dim / heads;
        p.ffn_hidden = ffn_hidden > 0 ? ffn_hidden : 2 * dim;
        p.use_norm = use_norm;
        for (int h = 0; h < heads; ++h) {
            p.w_q.push_back(xavier(rng, dim, p.head_dim));
            p.w_k.push_back(xavier(rng, dim, p.head_dim));
            p.w_v.push_back(xavier(rng, dim, p.head_dim));
        }
        p.ffn_w1 = xavier(rng, dim, p.ffn_hidden);
        p.ffn_b1 = Tensor<T>({p.ffn_hidden});
        p.ffn_w2 = xavier(rng, p.ffn_hidden, dim);
        p.ffn_b2 = Tensor<T>({dim});
        p.ln_t_g = Tensor<T>({dim}, T(1));
        p.ln_t_b = Tensor<T>({dim});
        p.ln_s_g = Tensor<T>({dim}, T(1));
        p.ln_s_b = Tensor<T>({dim});
        p.ln_f_g = Tensor<T>({dim}, T(1));
        p.ln_f_b = Tensor<T>({dim});
        return p;
    }

    static Tensor<T> xavier(RngStream& rng, int fan_in, int fan_out) {
        Tensor<T> t({fan_in, fan_out});
        double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& v : t.data) v = static_cast<T>(rng.next_uniform(-limit, limit));
        return t;
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        for (int h = 0; h < heads; ++h) {
            f(prefix + "w_q" + std::to_string(h), w_q[static_cast<size_t>(h)]);
            f(prefix + "w_k" + std::to_string(h), w_k[static_cast<size_t>(h)]);
            f(prefix + "w_v" + std::to_string(h), w_v[static_cast<size_t>(h)]);
        }
        f(prefix + "ffn_w1", ffn_w1);
        f(prefix + "ffn_b1", ffn_b1);
        f(prefix + "ffn_w2", ffn_w2);
        f(prefix + "ffn_b2", ffn_b2);
        if (use_norm) {
            f(prefix + "ln_t_g", ln_t_g);
            f(prefix + "ln_t_b", ln_t_b);
            f(prefix + "ln_s_g", ln_s_g);
            f(prefix + "ln_s_b", ln_s_b);
            f(prefix + "ln_f_g", ln_f_g);
            f(prefix + "ln_f_b", ln_f_b);
        }
    }
};

/// Graph-bound attention parameters (node ids plus layer config).
struct AttentionNodes {
    int dim = 0, heads = 0, head_dim = 0;
    bool use_norm = true;
    std::vector<int> w_q, w_k, w_v;
    int ffn_w1 = -1, ffn_b1 = -1, ffn_w2 = -1, ffn_b2 = -1;
    int ln_t_g = -1, ln_t_b = -1, ln_s_g = -1, ln_s_b = -1, ln_f_g = -1, ln_f_b = -1;
};

template <typename T>
AttentionNodes bind_attention(Graph<T>& g, const AttentionParams<T>& p, bool trainable) {
    auto put = [&](const Tensor<T>& t) { return trainable ? g.var(t) : g.constant(t); };
    AttentionNodes n;
    n.dim = p.dim;
    n.heads = p.heads;
    n.head_dim = p.head_dim;
    n.use_norm = p.use_norm;
    for (int h = 0; h < p.heads; ++h) {
        n.w_q.push_back(put(p.w_q[static_cast<size_t>(h)]));
        n.w_k.push_back(put(p.w_k[static_cast<size_t>(h)]));
        n.w_v.push_back(put(p.w_v[static_cast<size_t>(h)]));
    }
    n.ffn_w1 = put(p.ffn_w1);
    n.ffn_b1 = put(p.ffn_b1);
    n.ffn_w2 = put(p.ffn_w2);
    n.ffn_b2 = put(p.ffn_b2);
    n.ln_t_g = put(p.ln_t_g);
    n.ln_t_b = put(p.ln_t_b);
    n.ln_s_g = put(p.ln_s_g);
    n.ln_s_b = put(p.ln_s_b);
    n.ln_f_g = put(p.ln_f_g);
    n.ln_f_b = put(p.ln_f_b);
    return n;
}

template <typename T>
struct FeatAggResult {
    int output;    // [N2, C]
    int attn_map;  // head-averaged post-softmax weights [N2, N1]
};

/// One feature-aggregation layer: scaled dot-product attention from source
/// into target with the softmax on the configured axis, residual, then a
/// pre-norm FFN with its own residual.
template <typename T>
FeatAggResult<T> feat_agg(Graph<T>& g, int target, int source, const AttentionNodes& p, SoftmaxAxis axis) {
    const Tensor<T>& Tv = g.val(target);
    const Tensor<T>& Sv = g.val(source);
    if (Tv.rank() != 2 || Sv.rank() != 2 || Tv.shape[1] != p.dim || Sv.shape[1] != p.dim)
        throw std::invalid_argument("feat_agg: sequences must be [N, C] with C == attention dim");
    if (Tv.shape[0] < 1 || Sv.shape[0] < 1) throw std::invalid_argument("feat_agg: empty sequence");

    int tn = p.use_norm ? layernorm_rows(g, target, p.ln_t_g, p.ln_t_b) : target;
    int sn = p.use_norm ? layernorm_rows(g, source, p.ln_s_g, p.ln_s_b) : source;

    const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(p.head_dim)));
    int softmax_axis = axis == SoftmaxAxis::over_source ? 1 : 0;

    int out_cat = -1;
    int map_sum = -1;
    for (int h = 0; h < p.heads; ++h) {
        int q = g.matmul(tn, p.w_q[static_cast<size_t>(h)]);
        int k = g.matmul(sn, p.w_k[static_cast<size_t>(h)]);
        int v = g.matmul(sn, p.w_v[static_cast<size_t>(h)]);
        int scores = g.scale(g.matmul(q, g.transpose(k)), inv_sqrt_d);
        int weights = g.softmax(scores, softmax_axis);
        int o = g.matmul(weights, v);
        out_cat = h == 0 ? o : g.concat_cols(out_cat, o);
        map_sum = h == 0 ? weights : g.add(map_sum, weights);
    }
    int attn_map = g.scale(map_sum, T(1) / static_cast<T>(p.heads));

    int y = g.add(target, out_cat);
    int fin = p.use_norm ? layernorm_rows(g, y, p.ln_f_g, p.ln_f_b) : y;
    int hidden = g.relu(g.add_rowvec(g.matmul(fin, p.ffn_w1), p.ffn_b1));
    int ffn = g.add_rowvec(g.matmul(hidden, p.ffn_w2), p.ffn_b2);
    int out = g.add(y, ffn);
    return {out, attn_map};
}

/// FeatAgg with target == source explores context within one sequence.
template <typename T>
int self_attention(Graph<T>& g, int seq, const AttentionNodes& p) {
    return feat_agg(g, seq, seq, p, SoftmaxAxis::over_source).output;
}

}  // namespace fsseg

#endif
