#ifndef FSSEG_GRAPH_HPP
#define FSSEG_GRAPH_HPP

#include <cmath>
#include <deque>
#include <functional>
#include <stdexcept>
#include <vector>

#include "fsseg/tensor.hpp"

namespace fsseg {

/// Reverse-mode tape. One Graph per forward pass; node ids are indices into
/// the tape, and parents always precede children, so a single reverse sweep
/// is a valid topological order for backward().
///
/// Leaves enter either as variables (gradients tracked) or constants
/// (structurally zero gradient). Freezing one side of the adversarial pair
/// is done by binding its parameters as constants, which makes the
/// "gradient is exactly zero for the frozen side" contract hold by
/// construction rather than by masking updates.
template <typename T>
class Graph {
public:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;  // allocated lazily in backward()
        bool requires_grad = false;
        std::function<void(Graph&, int)> back;  // accumulate into parents
    };

    int constant(Tensor<T> v) { return push(std::move(v), false, nullptr); }

    int var(Tensor<T> v) { return push(std::move(v), true, nullptr); }

    const Tensor<T>& val(int id) const { return nodes_[check(id)].value; }

    const Tensor<T>& grad(int id) const {
        const Node& n = nodes_[check(id)];
        if (n.grad.data.empty()) throw std::logic_error("Graph::grad: backward not run or node unused");
        return n.grad;
    }

    bool tracked(int id) const { return nodes_[check(id)].requires_grad; }

    size_t node_count() const { return nodes_.size(); }

    /// Seed d(root)/d(root) = 1 and sweep the tape in reverse.
    void backward(int root) {
        Node& r = nodes_[check(root)];
        if (r.value.size() != 1) throw std::invalid_argument("Graph::backward: root must be scalar");
        for (auto& n : nodes_)
            if (n.requires_grad) n.grad = Tensor<T>(n.value.shape, T(0));
        if (!r.requires_grad) return;  // loss independent of all variables
        r.grad[0] = T(1);
        for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (n.requires_grad && n.back) n.back(*this, id);
        }
    }

    // ---- elementwise ----

    int add(int a, int b) {
        require_same(a, b, "add");
        Tensor<T> out = val(a);
        const Tensor<T>& vb = val(b);
        for (int64_t i = 0; i < out.size(); ++i) out[i] += vb[i];
        return push(std::move(out), needs(a, b), [a, b](Graph& g, int self) {
            const Tensor<T>& go = g.gref(self);
            g.accum(a, [&](Tensor<T>& da) { for (int64_t i = 0; i < da.size(); ++i) da[i] += go[i]; });
            g.accum(b, [&](Tensor<T>& db) { for (int64_t i = 0; i < db.size(); ++i) db[i] += go[i]; });
        });
    }

    int sub(int a, int b) {
        require_same(a, b, "sub");
        Tensor<T> out = val(a);
        const Tensor<T>& vb = val(b);
        for (int64_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
        return push(std::move(out), needs(a, b), [a, b](Graph& g, int self) {
            const Tensor<T>& go = g.gref(self);
            g.accum(a, [&](Tensor<T>& da) { for (int64_t i = 0; i < da.size(); ++i) da[i] += go[i]; });
            g.accum(b, [&](Tensor<T>& db) { for (int64_t i = 0; i < db.size(); ++i) db[i] -= go[i]; });
        });
    }

    int mul(int a, int b) {
        require_same(a, b, "mul");
        Tensor<T> out = val(a);
        const Tensor<T>& vb = val(b);
        for (int64_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
        return push(std::move(out), needs(a, b), [a, b](Graph& g, int self) {
            const Tensor<T>& go = g.gref(self);
            const Tensor<T>& va = g.val(a);
            const Tensor<T>& vb2 = g.val(b);
            g.accum(a, [&](Tensor<T>& da) { for (int64_t i = 0; i < da.size(); ++i) da[i] += go[i] * vb2[i]; });
            g.accum(b, [&](Tensor<T>& db) { for (int64_t i = 0; i < db.size(); ++i) db[i] += go[i] * va[i]; });
        });
    }

    int scale(int a, T s) {
        Tensor<T> out = val(a);
        for (int64_t i = 0; i < out.size(); ++i) out[i] *= s;
        return push(std::move(out), tracked(a), [a, s](Graph& g, int self) {
            const Tensor<T>& go = g.gref(self);
            g.accum(a, [&](Tensor<T>& da) { for (int64_t i = 0; i < da.size(); ++i) da[i] += s * go[i]; });
        });
    }

    int relu(int a) {
        Tensor<T> out = val(a);
        for (int64_t i = 0; i < out.size(); ++i) out[i] = out[i] > T(0) ? out[i] : T(0);
        return push(std::move(out), tracked(a), [a](Graph& g, int self) {
            const Tensor<T>& go = g.gref(self);
            const Tensor<T>& x = g.val(a);
            g.accum(a, [&](Tensor<T>& da) {
                for (int64_t i = 0; i < da.size(); ++i)
                    if (x[i] > T(0)) da[i] += go[i];
            });
        });
    }

    int sigmoid(int a) {
        Tensor<T> out = val(a);
        for (int64_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-out[i]));
        return push(std::move(out), tracked(a), [a](Graph& g, int self) {
            const Tensor<T>& go = g.gref(self);
            const Tensor<T>& y = g.val(self);
            g.accum(a, [&](Tensor<T>& da) {
                for (int64_t i = 0; i < da.size(); ++i) da[i] += go[i] * y[i] * (T(1) - y[i]);
            });
        });
    }

    int log_(int a) {
        Tensor<T> out = val(a);
        for (int64_t i = 0; i < out.size(); ++i) {
            if (out[i] <= T(0)) throw std::domain_error("Graph::log_: non-positive input");
            out[i] = std::log(out[i]);
        }
        return push(std::move(out), tracked(a), [a](Graph& g, int self) {
            const Tensor<T>& go = g.gref(self);
            const Tensor<T>& x = g.val(a);
            g.accum(a, [&](Tensor<T>& da) { for (int64_t i = 0; i < da.size(); ++i) da[i] += go[i] / x[i]; });
        });
    }

    int clamp(int a, T lo, T hi) {
        Tensor<T> out = val(a);
        for (int64_t i = 0; i < out.size(); ++i) out[i] = out[i] < lo ? lo : (out[i] > hi ? hi : out[i]);
        return push(std::move(out), tracked(a), [a, lo, hi](Graph& g, int self) {
            const Tensor<T>& go = g.gref(self);
            const Tensor<T>& x = g.val(a);
            g.accum(a, [&](Tensor<T>& da) {
                for (int64_t i = 0; i < da.size(); ++i)
                    if (x[i] > lo && x[i] < hi) da[i] += go[i];
            });
        });
    }

    // ---- matrix ----

    int matmul(int a, int b) {
        const Tensor<T>& A = val(a);
        const Tensor<T>& B = val(b);
        if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[0])
            throw std::invalid_argument("matmul: bad shapes " + shape_str(A.shape) + " x " + shape_str(B.shape));
        const int M = A.shape[0], K = A.shape[1], N = B.shape[1];
        Tensor<T> C({M, N});
        gemm_nn(A.data.data(), B.data.data(), C.data.data(), M, K, N);
        return push(std::move(C), needs(a, b), [a, b](Graph& g, int self) {
            const Tensor<T>& go = g.gref(self);
            const Tensor<T>& A2 = g.val(a);
            const Tensor<T>& B2 = g.val(b);
            const int M2 = A2.shape[0], K2 = A2.shape[1], N2 = B2.shape[1];
            g.accum(a, [&](Tensor<T>& da) {  // dA += G * B^T
                for (int i = 0; i < M2; ++i)
                    for (int j = 0; j < N2; ++j) {
                        T gv = go.at2(i, j);
                        if (gv == T(0)) continue;
                        for (int k = 0; k < K2; ++k) da.at2(i, k) += gv * B2.at2(k, j);
                    }
            });
            g.accum(b, [&](Tensor<T>& db) {  // dB += A^T * G
                for (int i = 0; i < M2; ++i)
                    for (int k = 0; k < K2; ++k) {
                        T av = A2.at2(i, k);
                        if (av == T(0)) continue;
                        for (int j = 0; j < N2; ++j) db.at2(k, j) += av * go.at2(i, j);
                    }
            });
        });
    }

    int transpose(int a) {
        const Tensor<T>& A = val(a);
        if (A.rank() != 2) throw std::invalid_argument("transpose: rank-2 only");
        const int M = A.shape[0], N = A.shape[1];
        Tensor<T> out({N, M});
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j) out.at2(j, i) = A.at2(i, j);
        return push(std::move(out), tracked(a), [a, M, N](Graph& g, int self) {
            const Tensor<T>& go = g.gref(self);
            g.accum(a, [&](Tensor<T>& da) {
                for (int i = 0; i < M; ++i)
                    for (int j = 0; j < N; ++j) da.at2(i, j) += go.at2(j, i);
            });
        });
    }

    /// Softmax along axis of a 2D tensor: axis=1 normalizes each row,
    /// axis=0 each column.
    int softmax(int a, int axis) {
        const Tensor<T>& A = val(a);
        if (A.rank() != 2 || (axis != 0 && axis != 1)) throw std::invalid_argument("softmax: rank-2, axis 0|1");
        const int M = A.shape[0], N = A.shape[1];
        Tensor<T> out({M, N});
        if (axis == 1) {
            for (int i = 0; i < M; ++i) softmax_line(&A.data[static_cast<size_t>(i) * N], &out.data[static_cast<size_t>(i) * N], N, 1);
        } else {
            for (int j = 0; j < N; ++j) softmax_line(&A.data[static_cast<size_t>(j)], &out.data[static_cast<size_t>(j)], M, N);
        }
        return push(std::move(out), tracked(a), [a, axis](Graph& g, int self) {
            const Tensor<T>& go = g.gref(self);
            const Tensor<T>& s = g.val(self);
            const int M2 = s.shape[0], N2 = s.shape[1];
            g.accum(a, [&](Tensor<T>& da) {
                if (axis == 1) {
                    for (int i = 0; i < M2; ++i) {
                        T dot = T(0);
                        for (int j = 0; j < N2; ++j) dot += go.at2(i, j) * s.at2(i, j);
                        for (int j = 0; j < N2; ++j) da.at2(i, j) += s.at2(i, j) * (go.at2(i, j) - dot);
                    }
                } else {
                    for (int j = 0; j < N2; ++j) {
                        T dot = T(0);
                        for (int i = 0; i < M2; ++i) dot += go.at2(i, j) * s.at2(i, j);
                        for (int i = 0; i < M2; ++i) da.at2(i, j) += s.at2(i, j) * (go.at2(i, j) - dot);
                    }
                }
            });
        });
    }

    /// A[M,N] + b[N], broadcast over rows.
    int add_rowvec(int a, int b) {
        const Tensor<T>& A = val(a);
        const Tensor<T>& B = val(b);
        if (A.rank() != 2 || B.rank() != 1 || B.shape[0] != A.shape[1])
            throw std::invalid_argument("add_rowvec: shapes " + shape_str(A.shape) + " + " + shape_str(B.shape));
        Tensor<T> out = A;
        const int M = A.shape[0], N = A.shape[1];
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j) out.at2(i, j) += B[j];
        return push(std::move(out), needs(a, b), [a, b, M, N](Graph& g, int self) {
            const Tensor<T>& go = g.gref(self);
            g.accum(a, [&](Tensor<T>& da) { for (int64_t i = 0; i < da.size(); ++i) da[i] += go[i]; });
            g.accum(b, [&](Tensor<T>& db) {
                for (int i = 0; i < M; ++i)
                    for (int j = 0; j < N; ++j) db[j] += go.at2(i, j);
            });
        });
    }

    // ---- shape ----

    int reshape(int a, std::vector<int> s) {
        const Tensor<T>& A = val(a);
        if (Tensor<T>::count(s) != A.size()) throw std::invalid_argument("reshape: element count mismatch");
        Tensor<T> out;
        out.shape = std::move(s);
        out.data = A.data;
        return push(std::move(out), tracked(a), [a](Graph& g, int self) {
            const Tensor<T>& go = g.gref(self);
            g.accum(a, [&](Tensor<T>& da) { for (int64_t i = 0; i < da.size(); ++i) da[i] += go[i]; });
        });
    }

    int concat_cols(int a, int b) {
        const Tensor<T>& A = val(a);
        const Tensor<T>& B = val(b);
        if (A.rank() != 2 || B.rank() != 2 || A.shape[0] != B.shape[0])
            throw std::invalid_argument("concat_cols: row mismatch");
        const int M = A.shape[0], N1 = A.shape[1], N2 = B.shape[1];
        Tensor<T> out({M, N1 + N2});
        for (int i = 0; i < M; ++i) {
            for (int j = 0; j < N1; ++j) out.at2(i, j) = A.at2(i, j);
            for (int j = 0; j < N2; ++j) out.at2(i, N1 + j) = B.at2(i, j);
        }
        return push(std::move(out), needs(a, b), [a, b, M, N1, N2](Graph& g, int self) {
            const Tensor<T>& go = g.gref(self);
            g.accum(a, [&](Tensor<T>& da) {
                for (int i = 0; i < M; ++i)
                    for (int j = 0; j < N1; ++j) da.at2(i, j) += go.at2(i, j);
            });
            g.accum(b, [&](Tensor<T>& db) {
                for (int i = 0; i < M; ++i)
                    for (int j = 0; j < N2; ++j) db.at2(i, j) += go.at2(i, N1 + j);
            });
        });
    }

    /// Extract row r of [N, C] as a [C] vector.
    int row(int a, int r) {
        const Tensor<T>& A = val(a);
        if (A.rank() != 2 || r < 0 || r >= A.shape[0]) throw std::invalid_argument("row: out of range");
        const int C = A.shape[1];
        Tensor<T> out({C});
        for (int j = 0; j < C; ++j) out[j] = A.at2(r, j);
        return push(std::move(out), tracked(a), [a, r, C](Graph& g, int self) {
            const Tensor<T>& go = g.gref(self);
            g.accum(a, [&](Tensor<T>& da) {
                for (int j = 0; j < C; ++j) da.at2(r, j) += go[j];
            });
        });
    }

    // ---- reductions / scalars ----

    int sum_all(int a) {
        const Tensor<T>& A = val(a);
        T s = T(0);
        for (int64_t i = 0; i < A.size(); ++i) s += A[i];
        return push(Tensor<T>::from({1}, {s}), tracked(a), [a](Graph& g, int self) {
            const T go = g.gref(self)[0];
            g.accum(a, [&](Tensor<T>& da) { for (int64_t i = 0; i < da.size(); ++i) da[i] += go; });
        });
    }

    int mean_all(int a) { return scale(sum_all(a), T(1) / static_cast<T>(val(a).size())); }

    /// Detached copy: same value, no gradient path (stop-gradient).
    int detach(int a) { return constant(val(a)); }

    // ---- shared low-level kernels ----

    static void gemm_nn(const T* A, const T* B, T* C, int M, int K, int N) {
        for (int i = 0; i < M; ++i) {
            T* crow = C + static_cast<size_t>(i) * N;
            for (int j = 0; j < N; ++j) crow[j] = T(0);
            for (int k = 0; k < K; ++k) {
                T av = A[static_cast<size_t>(i) * K + k];
                if (av == T(0)) continue;
                const T* brow = B + static_cast<size_t>(k) * N;
                for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
            }
        }
    }

    static void softmax_line(const T* x, T* y, int n, int stride) {
        T mx = x[0];
        for (int i = 1; i < n; ++i) mx = std::max(mx, x[static_cast<size_t>(i) * stride]);
        T sum = T(0);
        for (int i = 0; i < n; ++i) {
            T e = std::exp(x[static_cast<size_t>(i) * stride] - mx);
            y[static_cast<size_t>(i) * stride] = e;
            sum += e;
        }
        for (int i = 0; i < n; ++i) y[static_cast<size_t>(i) * stride] /= sum;
    }

    // Internal: gradient accumulation helper. Runs fn on the parent's grad
    // buffer only if that parent is tracked.
    template <typename Fn>
    void accum(int parent, Fn&& fn) {
        Node& p = nodes_[check(parent)];
        if (!p.requires_grad) return;
        fn(p.grad);
    }

    const Tensor<T>& gref(int id) const { return nodes_[check(id)].grad; }

    bool needs(int a, int b) const { return tracked(a) || tracked(b); }

    int push(Tensor<T> v, bool req, std::function<void(Graph&, int)> back) {
        Node n;
        n.value = std::move(v);
        n.requires_grad = req;
        n.back = req ? std::move(back) : nullptr;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

private:
    int check(int id) const {
        if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) throw std::out_of_range("Graph: bad node id");
        return id;
    }

    void require_same(int a, int b, const char* op) const {
        if (!val(a).same_shape(val(b)))
            throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(val(a).shape) +
                                        " vs " + shape_str(val(b).shape));
    }

    // deque, not vector: ops routinely hold `const Tensor&` references from
    // val() across subsequent pushes, so element references must survive
    // appends
    std::deque<Node> nodes_;
};

}  // namespace fsseg

#endif
