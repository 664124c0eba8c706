// Finite-difference validation of every tape op. Everything here runs in
// double: float32 rounding would swamp a 1e-4 central-difference step.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "fsseg/attention.hpp"
#include "fsseg/graph.hpp"
#include "fsseg/nn.hpp"
#include "fsseg/rng.hpp"

using namespace fsseg;

namespace {

using Td = Tensor<double>;
using Builder = std::function<int(Graph<double>&, const std::vector<int>&)>;

Td randt(std::vector<int> s, RngStream& r, double scale = 1.0, double offset = 0.0) {
  Td t(std::move(s));
  for (auto& v : t.data) v = offset + scale * r.next_normal();
  return t;
}

// Random values bounded away from zero, for kink-free relu checks.
Td randt_margin(std::vector<int> s, RngStream& r) {
  Td t(std::move(s));
  for (auto& v : t.data) {
    double m = r.next_uniform(0.2, 1.2);
    v = r.next_bool() ? m : -m;
  }
  return t;
}

struct FdResult {
  double max_rel = 0;
  int checked = 0;
};

// Builds the graph once with variable leaves for analytic gradients, then
// re-evaluates with perturbed constant leaves for central differences.
// Builders must be pure functions of the leaf values.
FdResult fd_check(const std::vector<Td>& leaves, const Builder& build,
                  double step = 1e-5, int max_per_leaf = 64, uint64_t pick_seed = 1) {
  Graph<double> g;
  std::vector<int> ids;
  for (const auto& t : leaves) ids.push_back(g.var(t));
  int root = build(g, ids);
  REQUIRE(g.val(root).size() == 1);
  g.backward(root);
  std::vector<Td> grads;
  for (int id : ids) grads.push_back(g.grad(id));

  auto eval = [&](size_t leaf, int64_t idx, double delta) {
    Graph<double> g2;
    std::vector<int> ids2;
    for (size_t i = 0; i < leaves.size(); ++i) {
      Td t = leaves[i];
      if (i == leaf) t[idx] += delta;
      ids2.push_back(g2.constant(std::move(t)));
    }
    return g2.val(build(g2, ids2))[0];
  };

  RngStream pick(pick_seed);
  FdResult res;
  for (size_t l = 0; l < leaves.size(); ++l) {
    int64_t n = leaves[l].size();
    std::vector<int64_t> idxs;
    if (n <= max_per_leaf) {
      for (int64_t i = 0; i < n; ++i) idxs.push_back(i);
    } else {
      for (int i = 0; i < max_per_leaf; ++i) idxs.push_back(pick.next_int(0, n - 1));
    }
    for (int64_t i : idxs) {
      double fd = (eval(l, i, step) - eval(l, i, -step)) / (2.0 * step);
      double an = grads[l][i];
      double diff = std::abs(an - fd);
      double rel = diff < 1e-9 ? 0.0 : diff / std::max({std::abs(an), std::abs(fd), 1e-6});
      res.max_rel = std::max(res.max_rel, rel);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace

TEST_CASE("elementwise gradients: add/sub/mul/scale") {
  RngStream r(11);
  std::vector<Td> leaves = {randt({3, 4}, r), randt({3, 4}, r)};
  auto res = fd_check(leaves, [](Graph<double>& g, const std::vector<int>& id) {
    int prod = g.mul(g.add(id[0], id[1]), g.sub(id[0], g.scale(id[1], 0.5)));
    return g.mean_all(prod);
  });
  CHECK(res.checked == 24);
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("nonlinearity gradients: relu/sigmoid/log/clamp") {
  RngStream r(12);
  Td w = randt({2, 5}, r);
  std::vector<Td> leaves = {randt_margin({2, 5}, r), randt({2, 5}, r, 0.3, 3.0)};
  auto res = fd_check(leaves, [w](Graph<double>& g, const std::vector<int>& id) {
    int a = g.relu(id[0]);
    int b = g.sigmoid(id[0]);
    int c = g.log_(id[1]);
    int mix = g.add(g.mul(a, g.constant(w)), g.add(b, c));
    return g.sum_all(mix);
  });
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("clamp gradient vanishes outside the band") {
  Graph<double> g;
  int x = g.var(Td::from({4}, {-2.0, -0.2, 0.3, 2.0}));
  int y = g.clamp(x, -0.5, 0.5);
  g.backward(g.sum_all(y));
  const Td& dx = g.grad(x);
  CHECK(dx[0] == 0.0);
  CHECK(dx[1] == 1.0);
  CHECK(dx[2] == 1.0);
  CHECK(dx[3] == 0.0);
}

TEST_CASE("matmul and transpose gradients") {
  RngStream r(13);
  Td w = randt({3, 5}, r);
  std::vector<Td> leaves = {randt({3, 4}, r), randt({5, 4}, r)};
  auto res = fd_check(leaves, [w](Graph<double>& g, const std::vector<int>& id) {
    int m = g.matmul(id[0], g.transpose(id[1]));  // [3,5]
    return g.sum_all(g.mul(m, g.constant(w)));
  });
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("softmax gradients on both axes") {
  RngStream r(14);
  Td w = randt({4, 6}, r);
  std::vector<Td> leaves = {randt({4, 6}, r)};
  for (int axis : {0, 1}) {
    auto res = fd_check(leaves, [w, axis](Graph<double>& g, const std::vector<int>& id) {
      return g.sum_all(g.mul(g.softmax(id[0], axis), g.constant(w)));
    });
    CHECK(res.max_rel < 1e-4);
  }
}

TEST_CASE("shape-op gradients: add_rowvec/reshape/concat_cols/row") {
  RngStream r(15);
  Td w1 = randt({2, 11}, r);
  Td w2 = randt({5}, r);
  std::vector<Td> leaves = {randt({2, 6}, r), randt({2, 5}, r), randt({5}, r), randt({3, 5}, r)};
  auto res = fd_check(leaves, [w1, w2](Graph<double>& g, const std::vector<int>& id) {
    int left = g.reshape(id[0], {2, 6});
    int right = g.add_rowvec(id[1], id[2]);
    int cat = g.concat_cols(left, right);  // [2,11]
    int s1 = g.sum_all(g.mul(cat, g.constant(w1)));
    int s2 = g.sum_all(g.mul(g.row(id[3], 1), g.constant(w2)));
    return g.add(s1, s2);
  });
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("bilinear resize gradients, up and down") {
  RngStream r(16);
  Td wu = randt({5, 7, 2}, r);
  Td wd = randt({2, 2}, r);
  std::vector<Td> leaves = {randt({3, 4, 2}, r), randt({4, 4}, r)};
  auto res = fd_check(leaves, [wu, wd](Graph<double>& g, const std::vector<int>& id) {
    int up = resize_bilinear(g, id[0], 5, 7);
    int down = resize_bilinear(g, id[1], 2, 2);
    return g.add(g.sum_all(g.mul(up, g.constant(wu))), g.sum_all(g.mul(down, g.constant(wd))));
  });
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("conv2d gradients at stride 1 and 2") {
  RngStream r(17);
  for (int stride : {1, 2}) {
    const int oh = stride == 1 ? 5 : 3, ow = stride == 1 ? 6 : 3;
    Td w = randt({oh, ow, 3}, r);
    std::vector<Td> leaves = {randt({5, 6, 2}, r), randt({3, 3, 2, 3}, r, 0.5), randt({3}, r, 0.2)};
    auto res = fd_check(leaves, [w, stride](Graph<double>& g, const std::vector<int>& id) {
      int y = conv2d(g, id[0], id[1], id[2], stride);
      return g.sum_all(g.mul(y, g.constant(w)));
    }, 1e-5, 48);
    CHECK(res.max_rel < 1e-4);
  }
}

TEST_CASE("groupnorm gradients") {
  RngStream r(18);
  Td w = randt({3, 4, 6}, r);
  std::vector<Td> leaves = {randt({3, 4, 6}, r), randt({6}, r, 0.5, 1.0), randt({6}, r, 0.3)};
  auto res = fd_check(leaves, [w](Graph<double>& g, const std::vector<int>& id) {
    int y = groupnorm(g, id[0], id[1], id[2], 3);
    return g.sum_all(g.mul(y, g.constant(w)));
  });
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("layernorm gradients") {
  RngStream r(19);
  Td w = randt({4, 5}, r);
  std::vector<Td> leaves = {randt({4, 5}, r), randt({5}, r, 0.5, 1.0), randt({5}, r, 0.3)};
  auto res = fd_check(leaves, [w](Graph<double>& g, const std::vector<int>& id) {
    int y = layernorm_rows(g, id[0], id[1], id[2]);
    return g.sum_all(g.mul(y, g.constant(w)));
  });
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("channel concat and mask product gradients") {
  RngStream r(20);
  Td w = randt({3, 3, 5}, r);
  std::vector<Td> leaves = {randt({3, 3, 2}, r), randt({3, 3, 3}, r), randt({3, 3}, r)};
  auto res = fd_check(leaves, [w](Graph<double>& g, const std::vector<int>& id) {
    int cat = concat_channels(g, id[0], id[1]);
    int gated = hadamard_channels(g, cat, id[2]);
    return g.sum_all(g.mul(gated, g.constant(w)));
  });
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("cosine gradients and the degenerate convention") {
  RngStream r(21);
  std::vector<Td> leaves = {randt({6}, r), randt({6}, r)};
  auto res = fd_check(leaves, [](Graph<double>& g, const std::vector<int>& id) {
    return cosine_node(g, id[0], id[1]);
  });
  CHECK(res.max_rel < 1e-4);

  // zero-norm input: value 0, no gradient path into either argument
  Graph<double> g;
  int u = g.var(Td({3}, 0.0));
  int v = g.var(Td::from({3}, {1.0, 2.0, 3.0}));
  bool degen = false;
  int c = cosine_node(g, u, v, &degen);
  CHECK(degen);
  CHECK(g.val(c)[0] == 0.0);
  CHECK_FALSE(g.tracked(c));
}

TEST_CASE("bce gradients") {
  RngStream r(22);
  Td target({3, 4});
  for (auto& t : target.data) t = r.next_bool() ? 1.0 : 0.0;
  std::vector<Td> leaves = {randt({3, 4}, r)};
  auto res = fd_check(leaves, [target](Graph<double>& g, const std::vector<int>& id) {
    return bce_mean(g, g.sigmoid(id[0]), target);
  });
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("row normalize and KL gradients") {
  RngStream r(23);
  Td p({3, 5});
  for (int i = 0; i < 3; ++i) {
    double s = 0;
    for (int j = 0; j < 5; ++j) {
      p.at2(i, j) = r.next_uniform(0.05, 1.0);
      s += p.at2(i, j);
    }
    for (int j = 0; j < 5; ++j) p.at2(i, j) /= s;
  }
  std::vector<Td> leaves = {randt({3, 5}, r)};
  auto res = fd_check(leaves, [p](Graph<double>& g, const std::vector<int>& id) {
    int q = row_normalize(g, g.sigmoid(id[0]));
    return kl_vs_const(g, p, q);
  });
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("row normalize emits distributions") {
  RngStream r(24);
  Graph<double> g;
  Td x({4, 7});
  for (auto& v : x.data) v = r.next_uniform(0.0, 2.0);
  int y = row_normalize(g, g.constant(x));
  for (int i = 0; i < 4; ++i) {
    double s = 0;
    for (int j = 0; j < 7; ++j) {
      CHECK(g.val(y).at2(i, j) >= 0.0);
      s += g.val(y).at2(i, j);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("attention layer gradients match finite differences") {
  // 4-token instances, step 1e-4, relative error < 1e-3, every parameter
  // matrix sampled.
  RngStream r(25);
  const int C = 4, heads = 2;
  auto params = AttentionParams<double>::make(C, heads, r, /*use_norm=*/true);
  std::vector<Td> leaves = {randt({4, C}, r), randt({4, C}, r)};
  params.visit("", [&](const std::string&, Tensor<double>& t) { leaves.push_back(t); });
  Td wo = randt({4, C}, r);
  Td wm = randt({4, 4}, r);

  auto nodes_from = [&](const std::vector<int>& id) {
    AttentionNodes n;
    n.dim = C;
    n.heads = heads;
    n.head_dim = C / heads;
    n.use_norm = true;
    size_t k = 2;
    for (int h = 0; h < heads; ++h) {
      n.w_q.push_back(id[k++]);
      n.w_k.push_back(id[k++]);
      n.w_v.push_back(id[k++]);
    }
    n.ffn_w1 = id[k++];
    n.ffn_b1 = id[k++];
    n.ffn_w2 = id[k++];
    n.ffn_b2 = id[k++];
    n.ln_t_g = id[k++];
    n.ln_t_b = id[k++];
    n.ln_s_g = id[k++];
    n.ln_s_b = id[k++];
    n.ln_f_g = id[k++];
    n.ln_f_b = id[k++];
    return n;
  };

  for (SoftmaxAxis axis : {SoftmaxAxis::over_source, SoftmaxAxis::over_target}) {
    auto res = fd_check(leaves, [&](Graph<double>& g, const std::vector<int>& id) {
      auto out = feat_agg(g, id[0], id[1], nodes_from(id), axis);
      int s1 = g.sum_all(g.mul(out.output, g.constant(wo)));
      int s2 = g.sum_all(g.mul(out.attn_map, g.constant(wm)));
      return g.add(s1, s2);
    }, 1e-4, 10);
    CHECK(res.checked >= 10 * static_cast<int>(leaves.size()) - 60);
    CHECK(res.max_rel < 1e-3);
  }
}

TEST_CASE("constants stay out of the gradient sweep") {
  Graph<double> g;
  int a = g.var(Td::from({2}, {1.0, 2.0}));
  int c = g.constant(Td::from({2}, {3.0, 4.0}));
  int root = g.sum_all(g.mul(a, c));
  g.backward(root);
  CHECK(g.grad(a)[0] == 3.0);
  CHECK(g.grad(a)[1] == 4.0);
  CHECK_FALSE(g.tracked(c));
  CHECK_THROWS_AS(g.grad(c), std::logic_error);
}

TEST_CASE("unused variables receive zero gradients") {
  Graph<double> g;
  int a = g.var(Td::from({2}, {1.0, 2.0}));
  int b = g.var(Td::from({2}, {5.0, 6.0}));
  g.backward(g.sum_all(b));
  CHECK(g.grad(a)[0] == 0.0);
  CHECK(g.grad(a)[1] == 0.0);
}
