#ifndef FSSEG_MODEL_HPP
#define FSSEG_MODEL_HPP

#include <functional>
#include <string>
#include <vector>

#include "fsseg/backbone.hpp"
#include "fsseg/config.hpp"
#include "fsseg/core.hpp"
#include "fsseg/detail_miner.hpp"
#include "fsseg/localizer.hpp"
#include "fsseg/losses.hpp"
#include "fsseg/object_miner.hpp"
#include "fsseg/optimizer.hpp"

namespace fsseg {

/// Everything learnable plus the (parameter-free) localizer settings.
template <typename T>
struct ModelParams {
    EncoderParams<T> encoder;
    MinerParams<T> miner;
    DetailParams<T> detail;
    LocalizerConfig localizer;

    static ModelParams make(const TrainConfig& cfg, RngStream& rng) {
        cfg.validate();
        ModelParams mp;
        EncoderConfig ec;
        ec.out_channels = cfg.channels;
        ec.frozen = cfg.freeze_backbone;
        mp.encoder = EncoderParams<T>::make(ec, rng);
        MinerConfig mc;
        mc.levels = cfg.levels;
        mc.attn_layers = cfg.g_layers;
        mc.channels = cfg.channels;
        mc.heads = cfg.heads;
        mp.miner = MinerParams<T>::make(mc, rng);
        DetailConfig dc;
        dc.proxies = cfg.proxies;
        dc.channels = cfg.channels;
        dc.heads = cfg.heads;
        dc.layers = cfg.d_layers;
        mp.detail = DetailParams<T>::make(dc, rng);
        mp.localizer.tau = cfg.tau;
        mp.localizer.normalization = LocalizerConfig::parse_normalization(cfg.normalization);
        mp.localizer.validate();
        return mp;
    }
};

// ---- parameter registries ------------------------------------------------
// Checkpoint namespaces: backbone/* for the encoder, miner/* for the
// decoder's convolutions, attn/* for its attention layers, detail/* for the
// discriminator. Generator side = backbone + miner + attn.

template <typename T>
std::vector<ParamRef<T>> g_param_refs(ModelParams<T>& mp, bool include_backbone = true) {
    std::vector<ParamRef<T>> out;
    auto add = [&](const std::string& n, Tensor<T>& t) { out.push_back({n, &t}); };
    if (include_backbone) mp.encoder.visit("backbone/", add);
    mp.miner.visit("miner/", "attn/", add);
    return out;
}

template <typename T>
std::vector<ParamRef<T>> d_param_refs(ModelParams<T>& mp) {
    std::vector<ParamRef<T>> out;
    auto add = [&](const std::string& n, Tensor<T>& t) { out.push_back({n, &t}); };
    mp.detail.visit("detail/", add);
    return out;
}

template <typename T>
std::vector<ParamRef<T>> all_param_refs(ModelParams<T>& mp) {
    auto out = g_param_refs(mp, true);
    auto d = d_param_refs(mp);
    out.insert(out.end(), d.begin(), d.end());
    return out;
}

/// Order-sensitive digest over names and raw parameter bytes; used to prove
/// that one adversarial side is bit-frozen while the other trains.
template <typename T>
std::uint64_t params_hash(const std::vector<ParamRef<T>>& refs) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& r : refs) {
        h = fnv1a(r.name.data(), r.name.size(), h);
        h = fnv1a(r.tensor->data.data(), r.tensor->data.size() * sizeof(T), h);
    }
    return h;
}

// ---- graph node lists, aligned with the registries -----------------------

inline void append_attention_nodes(const AttentionNodes& a, std::vector<int>& out) {
    for (int h = 0; h < a.heads; ++h) {
        out.push_back(a.w_q[static_cast<size_t>(h)]);
        out.push_back(a.w_k[static_cast<size_t>(h)]);
        out.push_back(a.w_v[static_cast<size_t>(h)]);
    }
    out.insert(out.end(), {a.ffn_w1, a.ffn_b1, a.ffn_w2, a.ffn_b2});
    if (a.use_norm)
        out.insert(out.end(), {a.ln_t_g, a.ln_t_b, a.ln_s_g, a.ln_s_b, a.ln_f_g, a.ln_f_b});
}

inline std::vector<int> encoder_node_list(const EncoderNodes& n) {
    std::vector<int> out;
    for (const auto& s : n.stages) out.insert(out.end(), {s.w, s.b, s.gamma, s.beta});
    out.insert(out.end(), {n.proj_w, n.proj_b});
    return out;
}

inline std::vector<int> miner_node_list(const MinerNodes& n) {
    std::vector<int> out;
    for (const auto& a : n.pyr_attn) append_attention_nodes(a, out);
    for (const auto& d : n.down) out.insert(out.end(), {d.w, d.b, d.gamma, d.beta});
    for (const auto& layers : n.agg)
        for (const auto& a : layers) append_attention_nodes(a, out);
    for (const auto& f : n.fuse) out.insert(out.end(), {f.w1, f.b1, f.w3, f.b3});
    out.insert(out.end(), {n.head_w1, n.head_b1, n.head_w2, n.head_b2});
    return out;
}

inline std::vector<int> detail_node_list(const DetailNodes& n) {
    std::vector<int> out = {n.bank};
    for (const auto& a : n.layers) append_attention_nodes(a, out);
    out.insert(out.end(), {n.fc_w1, n.fc_b1, n.fc_w2, n.fc_b2});
    return out;
}

// ---- seed localization ---------------------------------------------------

/// Downsample a label to the feature extent and re-binarize at 0.5. A mask
/// so thin it vanishes falls back to its centroid cell, so pooling always
/// has at least one position.
template <typename T>
Tensor<T> feature_mask(const Mask& label, int th, int tw, double thr = 0.5) {
    TensorF soft = resize_bilinear_value(label.data, th, tw);
    Tensor<T> out({th, tw});
    std::int64_t set = 0;
    for (std::int64_t i = 0; i < soft.size(); ++i)
        if (static_cast<double>(soft[i]) >= thr) {
            out[i] = T(1);
            ++set;
        }
    if (set == 0) {
        const int H = label.height(), W = label.width();
        double cy = 0, cx = 0;
        std::int64_t n = 0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                if (label.data.at2(y, x) > 0) {
                    cy += y;
                    cx += x;
                    ++n;
                }
        if (n == 0) throw std::invalid_argument("feature_mask: empty label");
        int fy = std::min(th - 1, static_cast<int>(cy / static_cast<double>(n) * th / H));
        int fx = std::min(tw - 1, static_cast<int>(cx / static_cast<double>(n) * tw / W));
        out.at2(fy, fx) = T(1);
    }
    return out;
}

/// Optional transform applied to each support mask at feature resolution
/// before pooling (the erosion study plugs in here).
template <typename T>
using SupportMaskHook = std::function<Tensor<T>(const Tensor<T>&, int)>;

template <typename T>
struct SeedDiagnostics {
    Tensor<T> m_qtau;  // union of per-support activations, [h,w] binary
    std::vector<Tensor<T>> raw_cos, sim, activation;
    bool fallback_used = false;
};

/// Value-level seed pass: prototype from each support, cosine map on the
/// query, normalize, threshold, union over shots. No gradients flow here;
/// the activation enters the decoder as a fixed gate.
template <typename T>
SeedDiagnostics<T> localize(const ModelParams<T>& mp, const Episode& ep, const Tensor<T>& f_q,
                            const SupportMaskHook<T>& hook = {}) {
    if (ep.supports.empty()) throw std::invalid_argument("localize: episode without supports");
    const int h = f_q.shape[0], w = f_q.shape[1];
    SeedDiagnostics<T> d;
    for (size_t k = 0; k < ep.supports.size(); ++k) {
        Tensor<T> f_s = extract_features(ep.supports[k].image.template cast<T>(), mp.encoder);
        Tensor<T> m = feature_mask<T>(ep.supports[k].label, h, w);
        if (hook) m = hook(m, static_cast<int>(k));
        Tensor<T> proto = mask_average_pool_value(f_s, m);
        Tensor<T> raw = cosine_map_value(proto, f_q);
        Tensor<T> sim = normalize_similarity(raw, mp.localizer.normalization);
        bool fb = false;
        d.activation.push_back(
            threshold_activation_value(sim, mp.localizer.tau, mp.localizer.fallback_topk, &fb));
        d.fallback_used = d.fallback_used || fb;
        d.raw_cos.push_back(std::move(raw));
        d.sim.push_back(std::move(sim));
    }
    d.m_qtau = or_masks(d.activation);
    return d;
}

// ---- full episode forward ------------------------------------------------

enum class Side { generator, discriminator, inference };

struct ForwardOptions {
    Side side = Side::inference;
    bool backbone_trainable = false;  // only honoured on the generator side
    double lambda_div = 0.1;
    double lambda_kl = 1.0;
};

template <typename T>
struct EpisodeForward {
    int f_q = -1, m_e = -1;
    int loss_g = -1, loss_d = -1;
    LossReport report;
    SeedDiagnostics<T> seed;
    Tensor<T> gt_feat;  // binary query target at feature extent
    PairSelection pair;
    // node ids aligned with g_param_refs(mp, backbone_trainable) and
    // d_param_refs(mp); empty for sides that are frozen
    std::vector<int> g_nodes, d_nodes;
};

/// Build one episode's computation. The frozen side is bound as graph
/// constants, so its gradient is structurally zero; the trainable side's
/// node ids are returned aligned with the matching parameter registry.
template <typename T>
EpisodeForward<T> run_episode(Graph<T>& g, const ModelParams<T>& mp, const Episode& ep,
                              const ForwardOptions& opt, const SupportMaskHook<T>& hook = {}) {
    const bool g_train = opt.side == Side::generator;
    const bool bb_train = g_train && opt.backbone_trainable;
    const bool d_train = opt.side == Side::discriminator;

    EpisodeForward<T> fwd;
    auto enc = bind_encoder(g, mp.encoder, bb_train);
    fwd.f_q = encoder_forward(g, enc, g.constant(ep.query_image.template cast<T>()));
    Tensor<T> f_q_val = g.val(fwd.f_q);
    fwd.seed = localize(mp, ep, f_q_val, hook);

    auto miner = bind_miner(g, mp.miner, g_train);
    auto st = miner_forward(g, miner, fwd.f_q, fwd.seed.m_qtau);
    fwd.m_e = st.m_e;
    fwd.gt_feat = feature_mask<T>(ep.query_mask, f_q_val.shape[0], f_q_val.shape[1]);

    int bce = bce_mean(g, fwd.m_e, fwd.gt_feat);
    int kl = kl_distill(g, st.attn_maps, st.extents);
    fwd.report.bce = static_cast<double>(g.val(bce)[0]);
    fwd.report.kl = static_cast<double>(g.val(kl)[0]);

    if (opt.side != Side::inference) {
        auto detail = bind_detail(g, mp.detail, d_train);
        auto fake = extract_local_features(g, detail, fwd.f_q, fwd.m_e);
        auto real = extract_local_features(g, detail, fwd.f_q, g.constant(fwd.gt_feat));
        fwd.pair = select_most_different_pair(g.val(fake.omega), g.val(real.omega));
        int s_f = score_real_fake(g, detail, g.row(fake.omega, fwd.pair.index));
        int s_r = score_real_fake(g, detail, g.row(real.omega, fwd.pair.index));
        int ldiv = diversity_loss(g, fake.omega, real.omega);

        int adv_d_real = neg_log(g, s_r);
        int adv_d_fake = neg_log_one_minus(g, s_f);
        fwd.loss_d = g.add(g.add(adv_d_real, adv_d_fake),
                           g.scale(ldiv, static_cast<T>(opt.lambda_div)));
        int adv_g = neg_log(g, s_f);
        fwd.loss_g =
            g.add(g.add(adv_g, g.scale(kl, static_cast<T>(opt.lambda_kl))), bce);

        fwd.report.adv_d_real = static_cast<double>(g.val(adv_d_real)[0]);
        fwd.report.adv_d_fake = static_cast<double>(g.val(adv_d_fake)[0]);
        fwd.report.l_div = static_cast<double>(g.val(ldiv)[0]);
        fwd.report.l_d_total = static_cast<double>(g.val(fwd.loss_d)[0]);
        fwd.report.adv_g = static_cast<double>(g.val(adv_g)[0]);
        fwd.report.l_g_total = static_cast<double>(g.val(fwd.loss_g)[0]);

        if (d_train) fwd.d_nodes = detail_node_list(detail);
    }
    if (g_train) {
        if (bb_train) fwd.g_nodes = encoder_node_list(enc);
        auto mn = miner_node_list(miner);
        fwd.g_nodes.insert(fwd.g_nodes.end(), mn.begin(), mn.end());
    }
    return fwd;
}

/// Upsample the soft feature-extent mask to the image extent and threshold.
template <typename T>
Mask prediction_mask(const Tensor<T>& m_e, int H, int W, double thr = 0.5) {
    Tensor<T> up = resize_bilinear_value(m_e, H, W);
    TensorF out({H, W});
    for (std::int64_t i = 0; i < up.size(); ++i)
        out[i] = static_cast<double>(up[i]) > thr ? 1.0f : 0.0f;
    return Mask(std::move(out), MaskKind::binary);
}

template <typename T>
struct Inference {
    Mask predicted;   // binary, image extent
    Tensor<T> m_e;    // soft mask at feature extent
    SeedDiagnostics<T> seed;
};

/// Seed pass plus decoder only; the discriminator never runs at test time.
template <typename T>
Inference<T> infer_episode(const ModelParams<T>& mp, const Episode& ep,
                           const SupportMaskHook<T>& hook = {}) {
    Graph<T> g;
    ForwardOptions opt;
    auto fwd = run_episode(g, mp, ep, opt, hook);
    Inference<T> r;
    r.m_e = g.val(fwd.m_e);
    r.seed = std::move(fwd.seed);
    r.predicted =
        prediction_mask(r.m_e, ep.query_image.shape[0], ep.query_image.shape[1]);
    return r;
}

}  // namespace fsseg

#endif
