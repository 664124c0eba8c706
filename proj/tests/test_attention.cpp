// The oracle here recomputes the whole layer with plain nested loops in
// double, sharing no code with the tape implementation.

#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "fsseg/attention.hpp"
#include "fsseg/graph.hpp"
#include "fsseg/rng.hpp"

using namespace fsseg;

namespace {

using Td = Tensor<double>;

AttentionParams<double> widen(const AttentionParams<float>& p) {
  AttentionParams<double> q;
  q.dim = p.dim;
  q.heads = p.heads;
  q.head_dim = p.head_dim;
  q.ffn_hidden = p.ffn_hidden;
  q.use_norm = p.use_norm;
  for (const auto& t : p.w_q) q.w_q.push_back(t.cast<double>());
  for (const auto& t : p.w_k) q.w_k.push_back(t.cast<double>());
  for (const auto& t : p.w_v) q.w_v.push_back(t.cast<double>());
  q.ffn_w1 = p.ffn_w1.cast<double>();
  q.ffn_b1 = p.ffn_b1.cast<double>();
  q.ffn_w2 = p.ffn_w2.cast<double>();
  q.ffn_b2 = p.ffn_b2.cast<double>();
  q.ln_t_g = p.ln_t_g.cast<double>();
  q.ln_t_b = p.ln_t_b.cast<double>();
  q.ln_s_g = p.ln_s_g.cast<double>();
  q.ln_s_b = p.ln_s_b.cast<double>();
  q.ln_f_g = p.ln_f_g.cast<double>();
  q.ln_f_b = p.ln_f_b.cast<double>();
  return q;
}

Td oracle_layernorm(const Td& x, const Td& gm, const Td& bt) {
  const int M = x.shape[0], N = x.shape[1];
  Td out({M, N});
  for (int i = 0; i < M; ++i) {
    double mu = 0;
    for (int j = 0; j < N; ++j) mu += x.at2(i, j);
    mu /= N;
    double var = 0;
    for (int j = 0; j < N; ++j) var += (x.at2(i, j) - mu) * (x.at2(i, j) - mu);
    var /= N;
    double is = 1.0 / std::sqrt(var + 1e-5);
    for (int j = 0; j < N; ++j) out.at2(i, j) = gm[j] * (x.at2(i, j) - mu) * is + bt[j];
  }
  return out;
}

struct OracleOut {
  Td output;    // [N2, C]
  Td attn_map;  // [N2, N1]
};

OracleOut oracle_feat_agg(const Td& target, const Td& source,
                          const AttentionParams<double>& p, SoftmaxAxis axis) {
  const int N2 = target.shape[0], N1 = source.shape[0], C = p.dim, d = p.head_dim;
  Td tn = p.use_norm ? oracle_layernorm(target, p.ln_t_g, p.ln_t_b) : target;
  Td sn = p.use_norm ? oracle_layernorm(source, p.ln_s_g, p.ln_s_b) : source;

  Td att({N2, C});
  Td map_avg({N2, N1});
  for (int h = 0; h < p.heads; ++h) {
    const Td& wq = p.w_q[static_cast<size_t>(h)];
    const Td& wk = p.w_k[static_cast<size_t>(h)];
    const Td& wv = p.w_v[static_cast<size_t>(h)];
    Td q({N2, d}), k({N1, d}), v({N1, d});
    for (int i = 0; i < N2; ++i)
      for (int e = 0; e < d; ++e) {
        double s = 0;
        for (int c = 0; c < C; ++c) s += tn.at2(i, c) * wq.at2(c, e);
        q.at2(i, e) = s;
      }
    for (int j = 0; j < N1; ++j)
      for (int e = 0; e < d; ++e) {
        double sk = 0, sv = 0;
        for (int c = 0; c < C; ++c) {
          sk += sn.at2(j, c) * wk.at2(c, e);
          sv += sn.at2(j, c) * wv.at2(c, e);
        }
        k.at2(j, e) = sk;
        v.at2(j, e) = sv;
      }
    Td s({N2, N1});
    for (int i = 0; i < N2; ++i)
      for (int j = 0; j < N1; ++j) {
        double dot = 0;
        for (int e = 0; e < d; ++e) dot += q.at2(i, e) * k.at2(j, e);
        s.at2(i, j) = dot / std::sqrt(static_cast<double>(d));
      }
    if (axis == SoftmaxAxis::over_source) {
      for (int i = 0; i < N2; ++i) {
        double z = 0;
        for (int j = 0; j < N1; ++j) z += std::exp(s.at2(i, j));
        for (int j = 0; j < N1; ++j) s.at2(i, j) = std::exp(s.at2(i, j)) / z;
      }
    } else {
      for (int j = 0; j < N1; ++j) {
        double z = 0;
        for (int i = 0; i < N2; ++i) z += std::exp(s.at2(i, j));
        for (int i = 0; i < N2; ++i) s.at2(i, j) = std::exp(s.at2(i, j)) / z;
      }
    }
    for (int i = 0; i < N2; ++i)
      for (int j = 0; j < N1; ++j) map_avg.at2(i, j) += s.at2(i, j) / p.heads;
    for (int i = 0; i < N2; ++i)
      for (int e = 0; e < d; ++e) {
        double o = 0;
        for (int j = 0; j < N1; ++j) o += s.at2(i, j) * v.at2(j, e);
        att.at2(i, h * d + e) = o;
      }
  }

  Td y({N2, C});
  for (int i = 0; i < N2; ++i)
    for (int c = 0; c < C; ++c) y.at2(i, c) = target.at2(i, c) + att.at2(i, c);
  Td fin = p.use_norm ? oracle_layernorm(y, p.ln_f_g, p.ln_f_b) : y;

  const int Hd = p.ffn_hidden;
  Td out({N2, C});
  for (int i = 0; i < N2; ++i) {
    std::vector<double> hid(static_cast<size_t>(Hd));
    for (int e = 0; e < Hd; ++e) {
      double s = p.ffn_b1[e];
      for (int c = 0; c < C; ++c) s += fin.at2(i, c) * p.ffn_w1.at2(c, e);
      hid[static_cast<size_t>(e)] = s > 0 ? s : 0;
    }
    for (int c = 0; c < C; ++c) {
      double s = p.ffn_b2[c];
      for (int e = 0; e < Hd; ++e) s += hid[static_cast<size_t>(e)] * p.ffn_w2.at2(e, c);
      out.at2(i, c) = y.at2(i, c) + s;
    }
  }
  return {std::move(out), std::move(map_avg)};
}

template <typename T>
Tensor<T> rand_seq(int n, int c, RngStream& r) {
  Tensor<T> t({n, c});
  for (auto& v : t.data) v = static_cast<T>(r.next_normal());
  return t;
}

}  // namespace

TEST_CASE("two-source closed form pins weights and output") {
  // C=d=2, one head, identity projections, no norm, zero FFN: the target
  // [1,0] scores the sources at [1/sqrt(2), 0], so the weights are
  // softmax of that pair and the output is target + weighted sources.
  AttentionParams<real> p;
  p.dim = 2;
  p.heads = 1;
  p.head_dim = 2;
  p.ffn_hidden = 4;
  p.use_norm = false;
  TensorF eye({2, 2});
  eye.at2(0, 0) = 1;
  eye.at2(1, 1) = 1;
  p.w_q = {eye};
  p.w_k = {eye};
  p.w_v = {eye};
  p.ffn_w1 = TensorF({2, 4});
  p.ffn_b1 = TensorF({4});
  p.ffn_w2 = TensorF({4, 2});
  p.ffn_b2 = TensorF({2});

  Graph<real> g;
  int target = g.constant(TensorF::from({1, 2}, {1, 0}));
  int source = g.constant(TensorF::from({2, 2}, {1, 0, 0, 1}));
  auto out = feat_agg(g, target, source, bind_attention(g, p, false), SoftmaxAxis::over_source);

  const TensorF& w = g.val(out.attn_map);
  CHECK(w.shape == std::vector<int>{1, 2});
  CHECK(std::abs(w.at2(0, 0) - 0.6698f) < 1e-3f);
  CHECK(std::abs(w.at2(0, 1) - 0.3302f) < 1e-3f);

  const TensorF& o = g.val(out.output);
  CHECK(std::abs(o.at2(0, 0) - (1.0f + w.at2(0, 0))) < 1e-5f);
  CHECK(std::abs(o.at2(0, 1) - w.at2(0, 1)) < 1e-5f);
}

TEST_CASE("softmax sums to one along the configured axis") {
  RngStream r(31);
  auto p = AttentionParams<real>::make(8, 2, r);
  Graph<real> g;
  int target = g.constant(rand_seq<real>(5, 8, r));
  int source = g.constant(rand_seq<real>(7, 8, r));
  auto nodes = bind_attention(g, p, false);

  auto over_src = feat_agg(g, target, source, nodes, SoftmaxAxis::over_source);
  const TensorF& ws = g.val(over_src.attn_map);
  for (int i = 0; i < 5; ++i) {
    float s = 0;
    for (int j = 0; j < 7; ++j) s += ws.at2(i, j);
    CHECK(std::abs(s - 1.0f) < 1e-5f);
  }

  auto over_tgt = feat_agg(g, target, source, nodes, SoftmaxAxis::over_target);
  const TensorF& wt = g.val(over_tgt.attn_map);
  for (int j = 0; j < 7; ++j) {
    float s = 0;
    for (int i = 0; i < 5; ++i) s += wt.at2(i, j);
    CHECK(std::abs(s - 1.0f) < 1e-5f);
  }
}

TEST_CASE("self attention is permutation equivariant") {
  RngStream r(32);
  auto p = AttentionParams<double>::make(8, 2, r);
  Td seq = rand_seq<double>(6, 8, r);
  std::vector<int> perm = {3, 0, 5, 1, 4, 2};
  Td permuted({6, 8});
  for (int i = 0; i < 6; ++i)
    for (int c = 0; c < 8; ++c) permuted.at2(i, c) = seq.at2(perm[static_cast<size_t>(i)], c);

  Graph<double> g;
  auto nodes = bind_attention(g, p, false);
  int o1 = self_attention(g, g.constant(seq), nodes);
  int o2 = self_attention(g, g.constant(permuted), nodes);
  for (int i = 0; i < 6; ++i)
    for (int c = 0; c < 8; ++c)
      CHECK(g.val(o2).at2(i, c) ==
            doctest::Approx(g.val(o1).at2(perm[static_cast<size_t>(i)], c)).epsilon(1e-10));
}

TEST_CASE("single token reduces to a hand-unrolled trace") {
  RngStream r(33);
  auto p = AttentionParams<double>::make(4, 2, r, /*use_norm=*/false);
  Td tok = rand_seq<double>(1, 4, r);

  Graph<double> g;
  auto out = feat_agg(g, g.constant(tok), g.constant(tok), bind_attention(g, p, false),
                      SoftmaxAxis::over_source);
  CHECK(g.val(out.attn_map)[0] == doctest::Approx(1.0));  // softmax of a single score

  // y = tok + concat_h(W_v^T tok); out = y + W2 relu(W1 y + b1) + b2
  std::vector<double> y(4);
  for (int h = 0; h < 2; ++h)
    for (int e = 0; e < 2; ++e) {
      double s = 0;
      for (int c = 0; c < 4; ++c) s += tok.at2(0, c) * p.w_v[static_cast<size_t>(h)].at2(c, e);
      y[static_cast<size_t>(h * 2 + e)] = s;
    }
  for (int c = 0; c < 4; ++c) y[static_cast<size_t>(c)] += tok.at2(0, c);
  std::vector<double> hid(8);
  for (int e = 0; e < 8; ++e) {
    double s = p.ffn_b1[e];
    for (int c = 0; c < 4; ++c) s += y[static_cast<size_t>(c)] * p.ffn_w1.at2(c, e);
    hid[static_cast<size_t>(e)] = s > 0 ? s : 0;
  }
  for (int c = 0; c < 4; ++c) {
    double s = p.ffn_b2[c];
    for (int e = 0; e < 8; ++e) s += hid[static_cast<size_t>(e)] * p.ffn_w2.at2(e, c);
    CHECK(g.val(out.output).at2(0, c) == doctest::Approx(y[static_cast<size_t>(c)] + s).epsilon(1e-12));
  }
}

TEST_CASE("50 random instances match the brute-force oracle") {
  RngStream r(34);
  double worst_float = 0, worst_double = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const int C = std::vector<int>{4, 8, 16}[static_cast<size_t>(r.next_int(0, 2))];
    const int heads = std::vector<int>{1, 2, 4}[static_cast<size_t>(r.next_int(0, 2))];
    const int N1 = static_cast<int>(r.next_int(1, 8));
    const int N2 = static_cast<int>(r.next_int(1, 8));
    bool use_norm = r.next_bool();
    SoftmaxAxis axis = r.next_bool() ? SoftmaxAxis::over_source : SoftmaxAxis::over_target;

    auto pf = AttentionParams<float>::make(C, heads, r, use_norm);
    auto pd = widen(pf);
    Tensor<float> tf = rand_seq<float>(N2, C, r);
    Tensor<float> sf = rand_seq<float>(N1, C, r);
    auto ref = oracle_feat_agg(tf.cast<double>(), sf.cast<double>(), pd, axis);

    Graph<float> gf;
    auto rf = feat_agg(gf, gf.constant(tf), gf.constant(sf), bind_attention(gf, pf, false), axis);
    for (int64_t i = 0; i < ref.output.size(); ++i)
      worst_float = std::max(worst_float,
                             std::abs(static_cast<double>(gf.val(rf.output)[i]) - ref.output[i]));
    for (int64_t i = 0; i < ref.attn_map.size(); ++i)
      worst_float = std::max(worst_float,
                             std::abs(static_cast<double>(gf.val(rf.attn_map)[i]) - ref.attn_map[i]));

    Graph<double> gd;
    auto rd = feat_agg(gd, gd.constant(tf.cast<double>()), gd.constant(sf.cast<double>()),
                       bind_attention(gd, pd, false), axis);
    for (int64_t i = 0; i < ref.output.size(); ++i)
      worst_double = std::max(worst_double, std::abs(gd.val(rd.output)[i] - ref.output[i]));
  }
  CHECK(worst_float < 1e-5);
  CHECK(worst_double < 1e-10);
}

TEST_CASE("non-trainable binding keeps parameters out of the tape") {
  RngStream r(35);
  auto p = AttentionParams<double>::make(4, 2, r);
  Graph<double> g;
  auto frozen = bind_attention(g, p, false);
  CHECK_FALSE(g.tracked(frozen.w_q[0]));
  CHECK_FALSE(g.tracked(frozen.ffn_w1));
  CHECK_FALSE(g.tracked(frozen.ln_f_g));

  int target = g.var(rand_seq<double>(3, 4, r));
  int source = g.constant(rand_seq<double>(5, 4, r));
  auto out = feat_agg(g, target, source, frozen, SoftmaxAxis::over_source);
  g.backward(g.mean_all(out.output));
  double gsum = 0;
  for (double v : g.grad(target).data) gsum += std::abs(v);
  CHECK(gsum > 0.0);
  CHECK_THROWS_AS(g.grad(frozen.w_q[0]), std::logic_error);

  auto live = bind_attention(g, p, true);
  CHECK(g.tracked(live.w_q[0]));
  CHECK(g.tracked(live.ln_s_b));
}
