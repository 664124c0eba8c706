#ifndef FSSEG_LOSSES_HPP
#define FSSEG_LOSSES_HPP

#include <cstdio>
#include <utility>
#include <vector>

#include "fsseg/config.hpp"
#include "fsseg/nn.hpp"

namespace fsseg {

/// Per-step loss values, generator and discriminator side by side.
/// Invariants (checked in tests): l_g_total = adv_g + lambda_kl * kl + bce
/// and l_d_total = adv_d_real + adv_d_fake + lambda_div * l_div.
struct LossReport {
    double l_g_total = 0, bce = 0, kl = 0, adv_g = 0;
    double l_d_total = 0, adv_d_real = 0, adv_d_fake = 0, l_div = 0;

    LossReport& operator+=(const LossReport& o) {
        l_g_total += o.l_g_total;
        bce += o.bce;
        kl += o.kl;
        adv_g += o.adv_g;
        l_d_total += o.l_d_total;
        adv_d_real += o.adv_d_real;
        adv_d_fake += o.adv_d_fake;
        l_div += o.l_div;
        return *this;
    }
    LossReport& operator/=(double n) {
        l_g_total /= n;
        bce /= n;
        kl /= n;
        adv_g /= n;
        l_d_total /= n;
        adv_d_real /= n;
        adv_d_fake /= n;
        l_div /= n;
        return *this;
    }

    void append_kv(KvMap& kv, const std::string& prefix) const {
        auto putd = [&](const std::string& k, double v) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            kv[prefix + k] = buf;
        };
        putd("l_g_total", l_g_total);
        putd("bce", bce);
        putd("kl", kl);
        putd("adv_g", adv_g);
        putd("l_d_total", l_d_total);
        putd("adv_d_real", adv_d_real);
        putd("adv_d_fake", adv_d_fake);
        putd("l_div", l_div);
    }
};

/// -log(s) for a clamped score node.
template <typename T>
int neg_log(Graph<T>& g, int s) {
    return g.scale(g.log_(s), T(-1));
}

/// -log(1 - s); safe because scores are clamped below 1.
template <typename T>
int neg_log_one_minus(Graph<T>& g, int s) {
    const Tensor<T>& S = g.val(s);
    return g.scale(g.log_(g.sub(g.constant(Tensor<T>(S.shape, T(1))), s)), T(-1));
}

/// Consistency distillation between attention maps of adjacent pyramid
/// scales. The coarse map acts as the (stop-gradient) teacher; the fine map
/// is bilinearly shrunk to the coarse geometry on both its target and
/// source axes, both maps are renormalized to row distributions over source
/// positions, and the mean row-wise KL(coarse || fine) is summed over
/// adjacent pairs. One scale means nothing to align, so the loss is zero.
template <typename T>
int kl_distill(Graph<T>& g, const std::vector<int>& maps,
               const std::vector<std::pair<int, int>>& extents, T delta = T(1e-8)) {
    if (maps.size() != extents.size())
        throw std::invalid_argument("kl_distill: one extent per map expected");
    if (maps.empty()) throw std::invalid_argument("kl_distill: no maps");
    if (maps.size() == 1) return g.constant(Tensor<T>({1}, T(0)));

    int total = -1;
    for (size_t l = 0; l + 1 < maps.size(); ++l) {
        const auto [fh, fw] = extents[l];
        const auto [ch, cw] = extents[l + 1];
        const int nf = fh * fw, nc = ch * cw;
        if (g.val(maps[l]).shape != std::vector<int>{nf, nf} ||
            g.val(maps[l + 1]).shape != std::vector<int>{nc, nc})
            throw std::invalid_argument("kl_distill: map/extent mismatch");

        // shrink the fine map's target axis: rows laid out as (fh, fw)
        int t = g.reshape(maps[l], {fh, fw, nf});
        t = resize_bilinear(g, t, ch, cw);
        t = g.reshape(t, {nc, nf});
        // then its source axis, via a transpose sandwich
        t = g.transpose(t);
        t = g.reshape(t, {fh, fw, nc});
        t = resize_bilinear(g, t, ch, cw);
        t = g.transpose(g.reshape(t, {nc, nc}));
        int q = row_normalize(g, t, delta);

        // teacher: the coarse map's rows as fixed distributions
        Tensor<T> p = g.val(maps[l + 1]);
        for (int r = 0; r < nc; ++r) {
            double sum = 0;
            for (int c = 0; c < nc; ++c) sum += static_cast<double>(p.at2(r, c)) + static_cast<double>(delta);
            for (int c = 0; c < nc; ++c)
                p.at2(r, c) = static_cast<T>((static_cast<double>(p.at2(r, c)) + static_cast<double>(delta)) / sum);
        }
        int term = kl_vs_const(g, p, q);
        total = total < 0 ? term : g.add(total, term);
    }
    return total;
}

}  // namespace fsseg

#endif
