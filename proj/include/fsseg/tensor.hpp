#ifndef FSSEG_TENSOR_HPP
#define FSSEG_TENSOR_HPP

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace fsseg {

// Production scalar type. Gradient-check code instantiates the templated
// stack with double instead.
using real = float;

/// Dense row-major array. Feature maps are [H, W, C], masks [H, W],
/// sequences [N, C]; the shape vector carries whichever rank applies.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(count(shape)), fill);
    }

    static Tensor from(std::vector<int> s, std::vector<T> d) {
        if (count(s) != static_cast<int64_t>(d.size()))
            throw std::invalid_argument("Tensor::from: shape/data size mismatch");
        Tensor t;
        t.shape = std::move(s);
        t.data = std::move(d);
        return t;
    }

    static int64_t count(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("Tensor: negative extent");
            n *= d;
        }
        return n;
    }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // Unchecked row-major accessors for the common ranks.
    T& at2(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
    const T& at2(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }

    T& at3(int i, int j, int k) {
        return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    const T& at3(int i, int j, int k) const {
        return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
    }

    T& at4(int i, int j, int k, int l) {
        return data[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
    const T& at4(int i, int j, int k, int l) const {
        return data[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using TensorF = Tensor<real>;

inline std::string shape_str(const std::vector<int>& s) {
    std::string r = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + "]";
}

}  // namespace fsseg

#endif
