#ifndef FSSEG_NN_HPP
#define FSSEG_NN_HPP

#include <algorithm>
#include <cmath>

#include "fsseg/graph.hpp"

namespace fsseg {

// Bilinear sampling weights for one output index, half-pixel convention.
// Factor-2 downsampling degenerates to 2x2 average pooling under this
// convention, which is what mask and correlation-map downsampling rely on.
struct LerpTap {
    int i0, i1;
    double w0, w1;
};

inline LerpTap lerp_tap(int out_idx, int in_n, int out_n) {
    double scale = static_cast<double>(in_n) / out_n;
    double src = (out_idx + 0.5) * scale - 0.5;
    double lo = std::floor(src);
    LerpTap t;
    t.i0 = std::clamp(static_cast<int>(lo), 0, in_n - 1);
    t.i1 = std::clamp(static_cast<int>(lo) + 1, 0, in_n - 1);
    t.w1 = src - lo;
    t.w0 = 1.0 - t.w1;
    return t;
}

/// Value-level bilinear resize of an [H, W, C] (or [H, W]) tensor.
template <typename T>
Tensor<T> resize_bilinear_value(const Tensor<T>& x, int oh, int ow) {
    if (x.rank() != 3 && x.rank() != 2) throw std::invalid_argument("resize_bilinear: rank 2 or 3");
    if (oh < 1 || ow < 1) throw std::invalid_argument("resize_bilinear: zero target extent");
    const int H = x.shape[0], W = x.shape[1];
    const int C = x.rank() == 3 ? x.shape[2] : 1;
    Tensor<T> out(x.rank() == 3 ? std::vector<int>{oh, ow, C} : std::vector<int>{oh, ow});
    for (int oy = 0; oy < oh; ++oy) {
        LerpTap ty = lerp_tap(oy, H, oh);
        for (int ox = 0; ox < ow; ++ox) {
            LerpTap tx = lerp_tap(ox, W, ow);
            for (int c = 0; c < C; ++c) {
                auto px = [&](int y, int xx) {
                    return x.data[(static_cast<size_t>(y) * W + xx) * C + c];
                };
                double v = ty.w0 * (tx.w0 * px(ty.i0, tx.i0) + tx.w1 * px(ty.i0, tx.i1)) +
                           ty.w1 * (tx.w0 * px(ty.i1, tx.i0) + tx.w1 * px(ty.i1, tx.i1));
                out.data[(static_cast<size_t>(oy) * ow + ox) * C + c] = static_cast<T>(v);
            }
        }
    }
    return out;
}

template <typename T>
int resize_bilinear(Graph<T>& g, int a, int oh, int ow) {
    const Tensor<T>& x = g.val(a);
    Tensor<T> out = resize_bilinear_value(x, oh, ow);
    const int H = x.shape[0], W = x.shape[1];
    const int C = x.rank() == 3 ? x.shape[2] : 1;
    return g.push(std::move(out), g.tracked(a), [a, H, W, C, oh, ow](Graph<T>& gg, int self) {
        const Tensor<T>& go = gg.gref(self);
        gg.accum(a, [&](Tensor<T>& da) {
            for (int oy = 0; oy < oh; ++oy) {
                LerpTap ty = lerp_tap(oy, H, oh);
                for (int ox = 0; ox < ow; ++ox) {
                    LerpTap tx = lerp_tap(ox, W, ow);
                    for (int c = 0; c < C; ++c) {
                        T gv = go.data[(static_cast<size_t>(oy) * ow + ox) * C + c];
                        if (gv == T(0)) continue;
                        auto add = [&](int y, int xx, double w) {
                            da.data[(static_cast<size_t>(y) * W + xx) * C + c] += static_cast<T>(w) * gv;
                        };
                        add(ty.i0, tx.i0, ty.w0 * tx.w0);
                        add(ty.i0, tx.i1, ty.w0 * tx.w1);
                        add(ty.i1, tx.i0, ty.w1 * tx.w0);
                        add(ty.i1, tx.i1, ty.w1 * tx.w1);
                    }
                }
            }
        });
    });
}

/// 2D convolution on [H, W, Cin] with kernel [KH, KW, Cin, Cout] and bias
/// [Cout]. Odd kernels only; "same" padding at stride 1, and for stride 2
/// the usual floor((k-1)/2) padding halving the extent.
template <typename T>
int conv2d(Graph<T>& g, int x, int w, int b, int stride) {
    const Tensor<T>& X = g.val(x);
    const Tensor<T>& Wt = g.val(w);
    const Tensor<T>& B = g.val(b);
    if (X.rank() != 3 || Wt.rank() != 4) throw std::invalid_argument("conv2d: need [H,W,C] and [KH,KW,Cin,Cout]");
    const int H = X.shape[0], W_ = X.shape[1], Cin = X.shape[2];
    const int KH = Wt.shape[0], KW = Wt.shape[1], Cout = Wt.shape[3];
    if (Wt.shape[2] != Cin) throw std::invalid_argument("conv2d: channel mismatch");
    if (B.rank() != 1 || B.shape[0] != Cout) throw std::invalid_argument("conv2d: bias mismatch");
    if (KH % 2 == 0 || KW % 2 == 0) throw std::invalid_argument("conv2d: odd kernels only");
    const int PH = (KH - 1) / 2, PW = (KW - 1) / 2;
    const int OH = (H + stride - 1) / stride, OW = (W_ + stride - 1) / stride;

    Tensor<T> out({OH, OW, Cout});
    for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
            T* orow = &out.at3(oy, ox, 0);
            for (int c = 0; c < Cout; ++c) orow[c] = B[c];
            for (int ky = 0; ky < KH; ++ky) {
                int iy = oy * stride + ky - PH;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < KW; ++kx) {
                    int ix = ox * stride + kx - PW;
                    if (ix < 0 || ix >= W_) continue;
                    const T* xin = &X.at3(iy, ix, 0);
                    const T* wk = &Wt.at4(ky, kx, 0, 0);
                    for (int ci = 0; ci < Cin; ++ci) {
                        T xv = xin[ci];
                        if (xv == T(0)) continue;
                        const T* wrow = wk + static_cast<size_t>(ci) * Cout;
                        for (int c = 0; c < Cout; ++c) orow[c] += xv * wrow[c];
                    }
                }
            }
        }

    bool track = g.tracked(x) || g.tracked(w) || g.tracked(b);
    return g.push(std::move(out), track, [x, w, b, H, W_, Cin, KH, KW, Cout, PH, PW, stride, OH, OW](Graph<T>& gg, int self) {
        const Tensor<T>& go = gg.gref(self);
        const Tensor<T>& X2 = gg.val(x);
        const Tensor<T>& W2 = gg.val(w);
        gg.accum(b, [&](Tensor<T>& db) {
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    const T* grow = &go.at3(oy, ox, 0);
                    for (int c = 0; c < Cout; ++c) db[c] += grow[c];
                }
        });
        gg.accum(w, [&](Tensor<T>& dw) {
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    const T* grow = &go.at3(oy, ox, 0);
                    for (int ky = 0; ky < KH; ++ky) {
                        int iy = oy * stride + ky - PH;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < KW; ++kx) {
                            int ix = ox * stride + kx - PW;
                            if (ix < 0 || ix >= W_) continue;
                            const T* xin = &X2.at3(iy, ix, 0);
                            T* wk = &dw.at4(ky, kx, 0, 0);
                            for (int ci = 0; ci < Cin; ++ci) {
                                T xv = xin[ci];
                                if (xv == T(0)) continue;
                                T* wrow = wk + static_cast<size_t>(ci) * Cout;
                                for (int c = 0; c < Cout; ++c) wrow[c] += xv * grow[c];
                            }
                        }
                    }
                }
        });
        gg.accum(x, [&](Tensor<T>& dx) {
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    const T* grow = &go.at3(oy, ox, 0);
                    for (int ky = 0; ky < KH; ++ky) {
                        int iy = oy * stride + ky - PH;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < KW; ++kx) {
                            int ix = ox * stride + kx - PW;
                            if (ix < 0 || ix >= W_) continue;
                            T* xin = &dx.at3(iy, ix, 0);
                            const T* wk = &W2.at4(ky, kx, 0, 0);
                            for (int ci = 0; ci < Cin; ++ci) {
                                const T* wrow = wk + static_cast<size_t>(ci) * Cout;
                                T acc = T(0);
                                for (int c = 0; c < Cout; ++c) acc += grow[c] * wrow[c];
                                xin[ci] += acc;
                            }
                        }
                    }
                }
        });
    });
}

/// Group normalization over [H, W, C]: statistics per channel group across
/// all spatial positions, then per-channel affine.
template <typename T>
int groupnorm(Graph<T>& g, int x, int gamma, int beta, int groups, T eps = T(1e-5)) {
    const Tensor<T>& X = g.val(x);
    if (X.rank() != 3) throw std::invalid_argument("groupnorm: [H,W,C] input");
    const int H = X.shape[0], W = X.shape[1], C = X.shape[2];
    if (C % groups != 0) throw std::invalid_argument("groupnorm: C not divisible by groups");
    const Tensor<T>& G = g.val(gamma);
    const Tensor<T>& Bt = g.val(beta);
    if (G.shape != std::vector<int>{C} || Bt.shape != std::vector<int>{C})
        throw std::invalid_argument("groupnorm: affine shape mismatch");
    const int cg = C / groups;
    const int64_t m = static_cast<int64_t>(H) * W * cg;

    Tensor<T> xhat({H, W, C});
    std::vector<T> inv_sigma(static_cast<size_t>(groups));
    for (int gr = 0; gr < groups; ++gr) {
        double sum = 0, sq = 0;
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx)
                for (int c = gr * cg; c < (gr + 1) * cg; ++c) {
                    double v = X.at3(y, xx, c);
                    sum += v;
                    sq += v * v;
                }
        double mu = sum / m;
        double var = sq / m - mu * mu;
        if (var < 0) var = 0;
        double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
        inv_sigma[static_cast<size_t>(gr)] = static_cast<T>(is);
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx)
                for (int c = gr * cg; c < (gr + 1) * cg; ++c)
                    xhat.at3(y, xx, c) = static_cast<T>((X.at3(y, xx, c) - mu) * is);
    }
    Tensor<T> out({H, W, C});
    for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
            for (int c = 0; c < C; ++c) out.at3(y, xx, c) = G[c] * xhat.at3(y, xx, c) + Bt[c];

    bool track = g.tracked(x) || g.tracked(gamma) || g.tracked(beta);
    // xhat and inv_sigma are captured by value for the backward pass.
    return g.push(std::move(out), track,
                  [x, gamma, beta, H, W, C, cg, groups, m, xhat, inv_sigma](Graph<T>& gg, int self) {
        const Tensor<T>& go = gg.gref(self);
        const Tensor<T>& G2 = gg.val(gamma);
        gg.accum(beta, [&](Tensor<T>& db) {
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx)
                    for (int c = 0; c < C; ++c) db[c] += go.at3(y, xx, c);
        });
        gg.accum(gamma, [&](Tensor<T>& dg) {
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx)
                    for (int c = 0; c < C; ++c) dg[c] += go.at3(y, xx, c) * xhat.at3(y, xx, c);
        });
        gg.accum(x, [&](Tensor<T>& dx) {
            for (int gr = 0; gr < groups; ++gr) {
                double mean_gh = 0, mean_ghx = 0;
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx)
                        for (int c = gr * cg; c < (gr + 1) * cg; ++c) {
                            double gh = static_cast<double>(go.at3(y, xx, c)) * G2[c];
                            mean_gh += gh;
                            mean_ghx += gh * xhat.at3(y, xx, c);
                        }
                mean_gh /= m;
                mean_ghx /= m;
                T is = inv_sigma[static_cast<size_t>(gr)];
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx)
                        for (int c = gr * cg; c < (gr + 1) * cg; ++c) {
                            double gh = static_cast<double>(go.at3(y, xx, c)) * G2[c];
                            dx.at3(y, xx, c) += static_cast<T>(is * (gh - mean_gh - xhat.at3(y, xx, c) * mean_ghx));
                        }
            }
        });
    });
}

/// Layer normalization over the last axis of [M, N], with [N] affine.
template <typename T>
int layernorm_rows(Graph<T>& g, int x, int gamma, int beta, T eps = T(1e-5)) {
    const Tensor<T>& X = g.val(x);
    if (X.rank() != 2) throw std::invalid_argument("layernorm_rows: [M,N] input");
    const int M = X.shape[0], N = X.shape[1];
    const Tensor<T>& G = g.val(gamma);
    const Tensor<T>& Bt = g.val(beta);
    if (G.shape != std::vector<int>{N} || Bt.shape != std::vector<int>{N})
        throw std::invalid_argument("layernorm_rows: affine shape mismatch");

    Tensor<T> xhat({M, N});
    std::vector<T> inv_sigma(static_cast<size_t>(M));
    for (int i = 0; i < M; ++i) {
        double sum = 0, sq = 0;
        for (int j = 0; j < N; ++j) {
            double v = X.at2(i, j);
            sum += v;
            sq += v * v;
        }
        double mu = sum / N;
        double var = sq / N - mu * mu;
        if (var < 0) var = 0;
        double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
        inv_sigma[static_cast<size_t>(i)] = static_cast<T>(is);
        for (int j = 0; j < N; ++j) xhat.at2(i, j) = static_cast<T>((X.at2(i, j) - mu) * is);
    }
    Tensor<T> out({M, N});
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) out.at2(i, j) = G[j] * xhat.at2(i, j) + Bt[j];

    bool track = g.tracked(x) || g.tracked(gamma) || g.tracked(beta);
    return g.push(std::move(out), track, [x, gamma, beta, M, N, xhat, inv_sigma](Graph<T>& gg, int self) {
        const Tensor<T>& go = gg.gref(self);
        const Tensor<T>& G2 = gg.val(gamma);
        gg.accum(beta, [&](Tensor<T>& db) {
            for (int i = 0; i < M; ++i)
                for (int j = 0; j < N; ++j) db[j] += go.at2(i, j);
        });
        gg.accum(gamma, [&](Tensor<T>& dg) {
            for (int i = 0; i < M; ++i)
                for (int j = 0; j < N; ++j) dg[j] += go.at2(i, j) * xhat.at2(i, j);
        });
        gg.accum(x, [&](Tensor<T>& dx) {
            for (int i = 0; i < M; ++i) {
                double mean_gh = 0, mean_ghx = 0;
                for (int j = 0; j < N; ++j) {
                    double gh = static_cast<double>(go.at2(i, j)) * G2[j];
                    mean_gh += gh;
                    mean_ghx += gh * xhat.at2(i, j);
                }
                mean_gh /= N;
                mean_ghx /= N;
                T is = inv_sigma[static_cast<size_t>(i)];
                for (int j = 0; j < N; ++j) {
                    double gh = static_cast<double>(go.at2(i, j)) * G2[j];
                    dx.at2(i, j) += static_cast<T>(is * (gh - mean_gh - xhat.at2(i, j) * mean_ghx));
                }
            }
        });
    });
}

/// Channel concatenation of [H, W, C1] and [H, W, C2].
template <typename T>
int concat_channels(Graph<T>& g, int a, int b) {
    const Tensor<T>& A = g.val(a);
    const Tensor<T>& B = g.val(b);
    if (A.rank() != 3 || B.rank() != 3 || A.shape[0] != B.shape[0] || A.shape[1] != B.shape[1])
        throw std::invalid_argument("concat_channels: spatial mismatch");
    const int H = A.shape[0], W = A.shape[1], C1 = A.shape[2], C2 = B.shape[2];
    Tensor<T> out({H, W, C1 + C2});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < C1; ++c) out.at3(y, x, c) = A.at3(y, x, c);
            for (int c = 0; c < C2; ++c) out.at3(y, x, C1 + c) = B.at3(y, x, c);
        }
    return g.push(std::move(out), g.needs(a, b), [a, b, H, W, C1, C2](Graph<T>& gg, int self) {
        const Tensor<T>& go = gg.gref(self);
        gg.accum(a, [&](Tensor<T>& da) {
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    for (int c = 0; c < C1; ++c) da.at3(y, x, c) += go.at3(y, x, c);
        });
        gg.accum(b, [&](Tensor<T>& db) {
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    for (int c = 0; c < C2; ++c) db.at3(y, x, c) += go.at3(y, x, C1 + c);
        });
    });
}

/// Feature map [H, W, C] times mask [H, W], mask broadcast over channels.
/// Both sides may carry gradient (the fake path multiplies by a predicted,
/// non-binarized mask).
template <typename T>
int hadamard_channels(Graph<T>& g, int x, int m) {
    const Tensor<T>& X = g.val(x);
    const Tensor<T>& M = g.val(m);
    if (X.rank() != 3 || M.rank() != 2 || X.shape[0] != M.shape[0] || X.shape[1] != M.shape[1])
        throw std::invalid_argument("hadamard_channels: shape mismatch");
    const int H = X.shape[0], W = X.shape[1], C = X.shape[2];
    Tensor<T> out({H, W, C});
    for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
            T mv = M.at2(y, xx);
            for (int c = 0; c < C; ++c) out.at3(y, xx, c) = X.at3(y, xx, c) * mv;
        }
    return g.push(std::move(out), g.needs(x, m), [x, m, H, W, C](Graph<T>& gg, int self) {
        const Tensor<T>& go = gg.gref(self);
        const Tensor<T>& X2 = gg.val(x);
        const Tensor<T>& M2 = gg.val(m);
        gg.accum(x, [&](Tensor<T>& dx) {
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    T mv = M2.at2(y, xx);
                    if (mv == T(0)) continue;
                    for (int c = 0; c < C; ++c) dx.at3(y, xx, c) += go.at3(y, xx, c) * mv;
                }
        });
        gg.accum(m, [&](Tensor<T>& dm) {
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    T acc = T(0);
                    for (int c = 0; c < C; ++c) acc += go.at3(y, xx, c) * X2.at3(y, xx, c);
                    dm.at2(y, xx) += acc;
                }
        });
    });
}

/// Cosine similarity of two [C] vectors as a scalar node. Near-zero norms
/// yield value 0 with zero gradient; callers can observe degeneracy via the
/// optional flag.
template <typename T>
int cosine_node(Graph<T>& g, int u, int v, bool* degenerate = nullptr, T norm_eps = T(1e-8)) {
    const Tensor<T>& U = g.val(u);
    const Tensor<T>& V = g.val(v);
    if (U.rank() != 1 || V.rank() != 1 || U.shape[0] != V.shape[0])
        throw std::invalid_argument("cosine: vector shape mismatch");
    const int C = U.shape[0];
    double dot = 0, nu = 0, nv = 0;
    for (int i = 0; i < C; ++i) {
        dot += static_cast<double>(U[i]) * V[i];
        nu += static_cast<double>(U[i]) * U[i];
        nv += static_cast<double>(V[i]) * V[i];
    }
    nu = std::sqrt(nu);
    nv = std::sqrt(nv);
    bool degen = nu < static_cast<double>(norm_eps) || nv < static_cast<double>(norm_eps);
    if (degenerate) *degenerate = degen;
    T value = degen ? T(0) : static_cast<T>(dot / (nu * nv));
    bool track = g.needs(u, v) && !degen;
    return g.push(Tensor<T>::from({1}, {value}), track, [u, v, C](Graph<T>& gg, int self) {
        const T go = gg.gref(self)[0];
        const T cosv = gg.val(self)[0];
        const Tensor<T>& U2 = gg.val(u);
        const Tensor<T>& V2 = gg.val(v);
        double nu2 = 0, nv2 = 0;
        for (int i = 0; i < C; ++i) {
            nu2 += static_cast<double>(U2[i]) * U2[i];
            nv2 += static_cast<double>(V2[i]) * V2[i];
        }
        nu2 = std::sqrt(nu2);
        nv2 = std::sqrt(nv2);
        gg.accum(u, [&](Tensor<T>& du) {
            for (int i = 0; i < C; ++i)
                du[i] += go * static_cast<T>(V2[i] / (nu2 * nv2) - cosv * U2[i] / (nu2 * nu2));
        });
        gg.accum(v, [&](Tensor<T>& dv) {
            for (int i = 0; i < C; ++i)
                dv[i] += go * static_cast<T>(U2[i] / (nu2 * nv2) - cosv * V2[i] / (nv2 * nv2));
        });
    });
}

/// Mean binary cross-entropy between a soft prediction and a fixed binary
/// target of the same shape. Predictions are clamped away from {0,1}
/// before the logs.
template <typename T>
int bce_mean(Graph<T>& g, int pred, const Tensor<T>& target, T eps = T(1e-6)) {
    const Tensor<T>& P = g.val(pred);
    if (P.shape != target.shape) throw std::invalid_argument("bce_mean: shape mismatch");
    const int64_t n = P.size();
    double loss = 0;
    for (int64_t i = 0; i < n; ++i) {
        double p = std::clamp(static_cast<double>(P[i]), static_cast<double>(eps), 1.0 - static_cast<double>(eps));
        double t = target[i];
        loss += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
    }
    loss /= static_cast<double>(n);
    Tensor<T> tgt = target;
    return g.push(Tensor<T>::from({1}, {static_cast<T>(loss)}), g.tracked(pred),
                  [pred, tgt, n, eps](Graph<T>& gg, int self) {
        const T go = gg.gref(self)[0];
        const Tensor<T>& P2 = gg.val(pred);
        gg.accum(pred, [&](Tensor<T>& dp) {
            for (int64_t i = 0; i < n; ++i) {
                double p = P2[i];
                if (p <= static_cast<double>(eps) || p >= 1.0 - static_cast<double>(eps)) continue;
                double t = tgt[i];
                dp[i] += go * static_cast<T>((p - t) / (p * (1.0 - p)) / static_cast<double>(n));
            }
        });
    });
}

/// Normalize each row of a non-negative [M, N] tensor to a probability
/// distribution: y = (x + delta) / sum(x + delta).
template <typename T>
int row_normalize(Graph<T>& g, int a, T delta = T(1e-8)) {
    const Tensor<T>& X = g.val(a);
    if (X.rank() != 2) throw std::invalid_argument("row_normalize: [M,N] input");
    const int M = X.shape[0], N = X.shape[1];
    Tensor<T> out({M, N});
    std::vector<T> sums(static_cast<size_t>(M));
    for (int i = 0; i < M; ++i) {
        double s = 0;
        for (int j = 0; j < N; ++j) s += static_cast<double>(X.at2(i, j)) + static_cast<double>(delta);
        sums[static_cast<size_t>(i)] = static_cast<T>(s);
        for (int j = 0; j < N; ++j) out.at2(i, j) = static_cast<T>((X.at2(i, j) + static_cast<double>(delta)) / s);
    }
    return g.push(std::move(out), g.tracked(a), [a, M, N, sums](Graph<T>& gg, int self) {
        const Tensor<T>& go = gg.gref(self);
        const Tensor<T>& y = gg.val(self);
        gg.accum(a, [&](Tensor<T>& da) {
            for (int i = 0; i < M; ++i) {
                double dot = 0;
                for (int j = 0; j < N; ++j) dot += static_cast<double>(go.at2(i, j)) * y.at2(i, j);
                T s = sums[static_cast<size_t>(i)];
                for (int j = 0; j < N; ++j)
                    da.at2(i, j) += static_cast<T>((go.at2(i, j) - dot) / s);
            }
        });
    });
}

/// Mean over rows of KL(p || q) where p is a fixed row-stochastic matrix
/// (the stop-gradient side) and q a matching graph node. Zero entries of p
/// contribute nothing; q is floored at eps inside the logs.
template <typename T>
int kl_vs_const(Graph<T>& g, const Tensor<T>& p, int q, T eps = T(1e-12)) {
    const Tensor<T>& Q = g.val(q);
    if (p.shape != Q.shape || p.rank() != 2) throw std::invalid_argument("kl_vs_const: shape mismatch");
    const int M = p.shape[0], N = p.shape[1];
    double total = 0;
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) {
            double pv = p.at2(i, j);
            if (pv <= 0) continue;
            double qv = std::max(static_cast<double>(Q.at2(i, j)), static_cast<double>(eps));
            total += pv * std::log(pv / qv);
        }
    total /= M;
    Tensor<T> pc = p;
    return g.push(Tensor<T>::from({1}, {static_cast<T>(total)}), g.tracked(q),
                  [q, pc, M, N, eps](Graph<T>& gg, int self) {
        const T go = gg.gref(self)[0];
        const Tensor<T>& Q2 = gg.val(q);
        gg.accum(q, [&](Tensor<T>& dq) {
            for (int i = 0; i < M; ++i)
                for (int j = 0; j < N; ++j) {
                    double pv = pc.at2(i, j);
                    if (pv <= 0) continue;
                    double qv = Q2.at2(i, j);
                    if (qv < static_cast<double>(eps)) continue;
                    dq.at2(i, j) += go * static_cast<T>(-pv / qv / M);
                }
        });
    });
}

}  // namespace fsseg

#endif
