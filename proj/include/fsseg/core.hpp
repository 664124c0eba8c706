#ifndef FSSEG_CORE_HPP
#define FSSEG_CORE_HPP

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fsseg/rng.hpp"
#include "fsseg/tensor.hpp"

namespace fsseg {

enum class MaskKind { binary, soft };

/// Spatial mask [H, W]. Binary masks hold {0,1}, soft masks values in [0,1].
struct Mask {
    TensorF data;  // [H, W]
    MaskKind kind = MaskKind::binary;

    Mask() = default;
    Mask(TensorF d, MaskKind k) : data(std::move(d)), kind(k) {
        if (data.rank() != 2) throw std::invalid_argument("Mask: [H,W] expected");
    }
    static Mask zeros(int h, int w, MaskKind k = MaskKind::binary) { return Mask(TensorF({h, w}), k); }

    int height() const { return data.shape[0]; }
    int width() const { return data.shape[1]; }

    void validate() const {
        for (real v : data.data) {
            if (!std::isfinite(v)) throw std::invalid_argument("Mask: non-finite entry");
            if (kind == MaskKind::binary) {
                if (v != real(0) && v != real(1)) throw std::invalid_argument("Mask: non-binary entry");
            } else if (v < real(0) || v > real(1)) {
                throw std::invalid_argument("Mask: soft entry outside [0,1]");
            }
        }
    }

    int64_t foreground_count() const {
        int64_t n = 0;
        for (real v : data.data) n += v > real(0) ? 1 : 0;
        return n;
    }
};

/// Dense feature map [H, W, C].
struct FeatureMap {
    TensorF data;  // [H, W, C]

    FeatureMap() = default;
    explicit FeatureMap(TensorF d) : data(std::move(d)) {
        if (data.rank() != 3) throw std::invalid_argument("FeatureMap: [H,W,C] expected");
    }
    FeatureMap(int h, int w, int c) : data(TensorF({h, w, c})) {}

    int height() const { return data.shape[0]; }
    int width() const { return data.shape[1]; }
    int channels() const { return data.shape[2]; }
};

/// One meta-learning task: K labeled supports plus one query.
struct Episode {
    struct Support {
        TensorF image;  // [H_img, W_img, 3]
        Mask label;     // binary, image extent
        int64_t scene_id = -1;
    };
    std::vector<Support> supports;
    TensorF query_image;
    Mask query_mask;  // binary ground truth
    int class_id = -1;
    int64_t query_scene_id = -1;
    int64_t episode_id = -1;
};

/// Row-major spatial flatten: [H, W, C] -> [H*W, C]. Row r corresponds to
/// position (r / W, r % W). The layout makes this a pure reshape.
template <typename T>
Tensor<T> flatten_spatial(const Tensor<T>& f) {
    if (f.rank() != 3) throw std::invalid_argument("flatten_spatial: [H,W,C] expected");
    Tensor<T> out;
    out.shape = {f.shape[0] * f.shape[1], f.shape[2]};
    out.data = f.data;
    return out;
}

template <typename T>
Tensor<T> unflatten_spatial(const Tensor<T>& rows, int h, int w) {
    if (rows.rank() != 2 || rows.shape[0] != h * w)
        throw std::invalid_argument("unflatten_spatial: row count != H*W");
    Tensor<T> out;
    out.shape = {h, w, rows.shape[1]};
    out.data = rows.data;
    return out;
}

/// Cosine similarity with the zero-vector convention: norms below norm_eps
/// give 0 and set the degenerate flag (direction undefined).
template <typename T>
T cosine(const T* u, const T* v, int n, bool* degenerate = nullptr, double norm_eps = 1e-8) {
    double dot = 0, nu = 0, nv = 0;
    for (int i = 0; i < n; ++i) {
        dot += static_cast<double>(u[i]) * v[i];
        nu += static_cast<double>(u[i]) * u[i];
        nv += static_cast<double>(v[i]) * v[i];
    }
    nu = std::sqrt(nu);
    nv = std::sqrt(nv);
    if (nu < norm_eps || nv < norm_eps) {
        if (degenerate) *degenerate = true;
        return T(0);
    }
    if (degenerate) *degenerate = false;
    return static_cast<T>(dot / (nu * nv));
}

template <typename T>
T cosine(const std::vector<T>& u, const std::vector<T>& v, bool* degenerate = nullptr) {
    if (u.size() != v.size()) throw std::invalid_argument("cosine: length mismatch");
    return cosine(u.data(), v.data(), static_cast<int>(u.size()), degenerate);
}

template <typename T>
T cosine(const Tensor<T>& u, const Tensor<T>& v, bool* degenerate = nullptr) {
    if (u.rank() != 1 || v.rank() != 1 || u.shape[0] != v.shape[0])
        throw std::invalid_argument("cosine: vector shape mismatch");
    return cosine(u.data.data(), v.data.data(), u.shape[0], degenerate);
}

}  // namespace fsseg

#endif
