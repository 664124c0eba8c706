#ifndef FSSEG_BACKBONE_HPP
#define FSSEG_BACKBONE_HPP

#include <string>
#include <vector>

#include "fsseg/core.hpp"
#include "fsseg/nn.hpp"

namespace fsseg {

/// Small convolutional encoder producing mid-level features: four conv
/// stages (stride 2,2,2,1) with group normalization, the last two stage
/// outputs concatenated and projected to out_channels with a 1x1 conv.
struct EncoderConfig {
    std::vector<int> stage_channels = {16, 32, 48, 48};
    std::vector<int> stage_strides = {2, 2, 2, 1};
    int groups = 8;
    int out_channels = 64;
    bool frozen = false;

    int total_downsample() const {
        int f = 1;
        for (int s : stage_strides) f *= s;
        return f;
    }

    void validate() const {
        if (stage_channels.size() != stage_strides.size() || stage_channels.size() < 2)
            throw std::invalid_argument("EncoderConfig: need >= 2 aligned stages");
        if (out_channels < 8) throw std::invalid_argument("EncoderConfig: out_channels >= 8");
        if (total_downsample() < 4) throw std::invalid_argument("EncoderConfig: total downsample >= 4");
        for (int c : stage_channels)
            if (c % groups != 0) throw std::invalid_argument("EncoderConfig: stage channels must divide into groups");
        // the last two stages are concatenated, so they must share an extent
        if (stage_strides.back() != 1)
            throw std::invalid_argument("EncoderConfig: final stage must be stride 1 for concatenation");
    }
};

template <typename T>
struct EncoderParams {
    EncoderConfig cfg;
    struct Stage {
        Tensor<T> w, b, gamma, beta;  // [3,3,Cin,Cout], [Cout], [Cout], [Cout]
    };
    std::vector<Stage> stages;
    Tensor<T> proj_w, proj_b;  // [1,1,C3+C4,out], [out]

    static EncoderParams make(const EncoderConfig& cfg, RngStream& rng) {
        cfg.validate();
        EncoderParams p;
        p.cfg = cfg;
        int cin = 3;
        for (int cout : cfg.stage_channels) {
            Stage s;
            s.w = he_conv(rng, 3, 3, cin, cout);
            s.b = Tensor<T>({cout});
            s.gamma = Tensor<T>({cout}, T(1));
            s.beta = Tensor<T>({cout});
            p.stages.push_back(std::move(s));
            cin = cout;
        }
        int n = static_cast<int>(cfg.stage_channels.size());
        int cat = cfg.stage_channels[static_cast<size_t>(n - 2)] + cfg.stage_channels[static_cast<size_t>(n - 1)];
        p.proj_w = he_conv(rng, 1, 1, cat, cfg.out_channels);
        p.proj_b = Tensor<T>({cfg.out_channels});
        return p;
    }

    static Tensor<T> he_conv(RngStream& rng, int kh, int kw, int cin, int cout) {
        Tensor<T> w({kh, kw, cin, cout});
        double std = std::sqrt(2.0 / (kh * kw * cin));
        for (auto& v : w.data) v = static_cast<T>(std * rng.next_normal());
        return w;
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        for (size_t i = 0; i < stages.size(); ++i) {
            std::string s = prefix + "stage" + std::to_string(i) + ".";
            f(s + "w", stages[i].w);
            f(s + "b", stages[i].b);
            f(s + "gamma", stages[i].gamma);
            f(s + "beta", stages[i].beta);
        }
        f(prefix + "proj.w", proj_w);
        f(prefix + "proj.b", proj_b);
    }
};

struct EncoderNodes {
    EncoderConfig cfg;
    struct Stage {
        int w, b, gamma, beta;
    };
    std::vector<Stage> stages;
    int proj_w = -1, proj_b = -1;
};

template <typename T>
EncoderNodes bind_encoder(Graph<T>& g, const EncoderParams<T>& p, bool trainable) {
    auto put = [&](const Tensor<T>& t) { return trainable ? g.var(t) : g.constant(t); };
    EncoderNodes n;
    n.cfg = p.cfg;
    for (const auto& s : p.stages)
        n.stages.push_back({put(s.w), put(s.b), put(s.gamma), put(s.beta)});
    n.proj_w = put(p.proj_w);
    n.proj_b = put(p.proj_b);
    return n;
}

/// image node [H,W,3] -> feature node [H/f, W/f, out_channels].
template <typename T>
int encoder_forward(Graph<T>& g, const EncoderNodes& n, int image) {
    const Tensor<T>& img = g.val(image);
    if (img.rank() != 3 || img.shape[2] != 3)
        throw std::invalid_argument("encoder_forward: [H,W,3] image expected");
    int f = n.cfg.total_downsample();
    if (img.shape[0] % f != 0 || img.shape[1] % f != 0)
        throw std::invalid_argument("encoder_forward: extent not divisible by downsample factor " +
                                    std::to_string(f));
    int x = image;
    std::vector<int> outs;
    for (size_t i = 0; i < n.stages.size(); ++i) {
        const auto& s = n.stages[i];
        x = conv2d(g, x, s.w, s.b, n.cfg.stage_strides[i]);
        x = groupnorm(g, x, s.gamma, s.beta, n.cfg.groups);
        x = g.relu(x);
        outs.push_back(x);
    }
    int cat = concat_channels(g, outs[outs.size() - 2], outs[outs.size() - 1]);
    return conv2d(g, cat, n.proj_w, n.proj_b, 1);
}

/// Value-level convenience: run the encoder without gradient tracking.
template <typename T>
Tensor<T> extract_features(const Tensor<T>& image, const EncoderParams<T>& p) {
    Graph<T> g;
    EncoderNodes n = bind_encoder(g, p, false);
    return g.val(encoder_forward(g, n, g.constant(image)));
}

/// Bilinear mask downsampling; binary inputs become soft outputs in [0,1].
inline Mask downsample_mask(const Mask& m, int th, int tw) {
    if (th < 1 || tw < 1) throw std::invalid_argument("downsample_mask: zero target extent");
    if (th > m.height() || tw > m.width())
        throw std::invalid_argument("downsample_mask: target exceeds source extent");
    TensorF d = resize_bilinear_value(m.data, th, tw);
    for (auto& v : d.data) v = std::clamp(v, 0.0f, 1.0f);
    return Mask(std::move(d), MaskKind::soft);
}

}  // namespace fsseg

#endif
