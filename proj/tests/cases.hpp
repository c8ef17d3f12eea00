#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "limn/matcher.hpp"
#include "limn/model.hpp"
#include "limn/ops.hpp"
#include "limn/params.hpp"
#include "support.hpp"

namespace limn::testing {

struct OpCase {
  std::string name;
  std::vector<ParamStore::Entry> inputs;
  std::function<Tensor(Graph&)> f;
};

// Every differentiable primitive wrapped into a scalar via a fixed random probe.
inline std::vector<OpCase> op_cases() {
  Rng rng(11);
  std::vector<OpCase> cases;
  auto unary = [&](const std::string& name, Shape shape, std::function<Tensor(Graph&, const Tensor&)> op,
                   double lo = -1.0, double hi = 1.0) {
    Tensor x = random_tensor(shape, rng, lo, hi);
    Graph probe_graph(false);
    Tensor w = random_tensor(op(probe_graph, x).shape(), rng);
    cases.push_back({name, {{"x", x}}, [x, w, op](Graph& g) { return probe(g, op(g, x), w); }});
  };
  auto binary = [&](const std::string& name, Shape sa, Shape sb,
                    std::function<Tensor(Graph&, const Tensor&, const Tensor&)> op) {
    Tensor a = random_tensor(sa, rng), b = random_tensor(sb, rng);
    Graph probe_graph(false);
    Tensor w = random_tensor(op(probe_graph, a, b).shape(), rng);
    cases.push_back({name, {{"a", a}, {"b", b}}, [a, b, w, op](Graph& g) { return probe(g, op(g, a, b), w); }});
  };

  binary("matmul", {3, 4}, {4, 2}, ops::matmul);
  unary("transpose", {3, 5}, ops::transpose);
  binary("add", {3, 4}, {3, 4}, ops::add);
  binary("sub", {3, 4}, {3, 4}, ops::sub);
  binary("mul", {3, 4}, {3, 4}, ops::mul);
  unary("scale", {2, 3}, [](Graph& g, const Tensor& x) { return ops::scale(g, x, -2.5); });
  binary("add_row_vector", {3, 4}, {4}, ops::add_row_vector);
  binary("add_col_vector", {3, 4}, {3}, ops::add_col_vector);
  unary("relu", {4, 4}, ops::relu);
  unary("tanh", {3, 4}, ops::tanh);
  unary("sigmoid", {3, 4}, ops::sigmoid);
  unary("softmax_rows", {3, 5}, [](Graph& g, const Tensor& x) { return ops::softmax_rows(g, x); }, -3, 3);
  unary("softmax_rows_masked", {3, 5}, [](Graph& g, const Tensor& x) {
    return ops::softmax_rows(g, x, {false, true, false, false, true});
  });
  {
    Tensor x = random_tensor({4, 6}, rng, -2, 2), gain = random_tensor({6}, rng, 0.5, 1.5),
           bias = random_tensor({6}, rng), w = random_tensor({4, 6}, rng);
    cases.push_back({"layer_norm",
                     {{"x", x}, {"gain", gain}, {"bias", bias}},
                     [=](Graph& g) { return probe(g, ops::layer_norm(g, x, gain, bias), w); }});
  }
  unary("l2_normalize_columns", {5, 3}, [](Graph& g, const Tensor& x) { return ops::l2_normalize_columns(g, x); });
  unary("pool_max", {3, 2, 3}, [](Graph& g, const Tensor& x) { return ops::pool(g, x, ops::PoolKind::kMax); });
  unary("pool_avg", {3, 2, 3}, [](Graph& g, const Tensor& x) { return ops::pool(g, x, ops::PoolKind::kAvg); });
  unary("pool_gem", {3, 2, 3}, [](Graph& g, const Tensor& x) { return ops::pool(g, x, ops::PoolKind::kGem, 3.0); },
        0.1, 2.0);
  unary("im2col", {2, 5, 5}, [](Graph& g, const Tensor& x) { return ops::im2col(g, x, 3, 2, 1); });
  {
    Tensor table = random_tensor({6, 4}, rng), w = random_tensor({4, 5}, rng);
    const std::vector<int> ids = {3, 0, 3, 5, 1};
    cases.push_back({"embedding", {{"table", table}}, [=](Graph& g) { return probe(g, ops::embedding(g, table, ids), w); }});
  }
  unary("slice_rows", {5, 3}, [](Graph& g, const Tensor& x) { return ops::slice_rows(g, x, 1, 4); });
  unary("slice_cols", {3, 5}, [](Graph& g, const Tensor& x) { return ops::slice_cols(g, x, 2, 5); });
  binary("concat_cols", {3, 2}, {3, 4}, [](Graph& g, const Tensor& a, const Tensor& b) {
    return ops::concat_cols(g, {a, b, a});
  });
  binary("concat_rows", {2, 3}, {4, 3}, [](Graph& g, const Tensor& a, const Tensor& b) {
    return ops::concat_rows(g, {b, a});
  });
  unary("reshape", {2, 6}, [](Graph& g, const Tensor& x) { return ops::reshape(g, x, {3, 4}); });
  unary("flatten_columns", {4, 3}, ops::flatten_columns);
  unary("mean_columns", {4, 3}, ops::mean_columns);
  unary("sum_squares", {3, 3}, ops::sum_squares);
  {
    Tensor logits = random_tensor({3, 4}, rng, -2, 2);
    const std::vector<std::size_t> targets = {2, 0, 3};
    cases.push_back(
        {"cross_entropy_rows", {{"logits", logits}}, [=](Graph& g) { return ops::cross_entropy_rows(g, logits, targets); }});
  }
  return cases;
}

inline LimnConfig small_config(std::size_t tokens = 3) {
  LimnConfig cfg;
  cfg.dim = 8;
  cfg.tokens = tokens;
  cfg.image.mid_channels = 4;
  cfg.image.last_channels = 6;
  cfg.text.vocab_size = 12;
  cfg.text.embed_dim = 6;
  cfg.text.hidden_dim = 5;
  cfg.transformer.heads = 2;
  cfg.transformer.ff_dim = 16;
  cfg.normalize();
  return cfg;
}

inline TokenMatrix from_raw(Graph& g, const Tensor& raw) { return {raw, ops::l2_normalize_columns(g, raw)}; }

// Aggregates a random context plus the matching tokens, then the same context
// with its columns shuffled; returns the largest token-output difference.
inline double permutation_trial(const ParamStore& ps, const TransformerConfig& cfg, std::size_t tokens, Rng& rng,
                                std::size_t ctx) {
  const std::size_t dim = cfg.dim;
  Tensor context = random_tensor({dim, ctx}, rng);
  std::vector<bool> mask(ctx, false);
  mask[1] = true;
  Graph g(false);
  std::vector<bool> full_mask = mask;
  full_mask.insert(full_mask.end(), tokens, false);
  Sequence seq{ops::concat_cols(g, {context, ps.get("tokens")}), full_mask, tokens};
  TokenMatrix base = aggregate(g, ps, "transformer.", cfg, seq);

  std::vector<std::size_t> perm(ctx);
  std::iota(perm.begin(), perm.end(), 0);
  shuffle(perm.begin(), perm.end(), rng);
  Tensor shuffled = Tensor::zeros({dim, ctx});
  std::vector<bool> pmask(ctx);
  for (std::size_t j = 0; j < ctx; ++j) {
    for (std::size_t d = 0; d < dim; ++d) shuffled.mutable_data()[d * ctx + j] = context.at(d, perm[j]);
    pmask[j] = mask[perm[j]];
  }
  pmask.insert(pmask.end(), tokens, false);
  Sequence pseq{ops::concat_cols(g, {shuffled, ps.get("tokens")}), pmask, tokens};
  TokenMatrix moved = aggregate(g, ps, "transformer.", cfg, pseq);
  double worst = 0.0;
  for (std::size_t i = 0; i < base.raw.size(); ++i) worst = std::max(worst, std::abs(base.raw[i] - moved.raw[i]));
  return worst;
}

// Sum over tokens of the cosine between matching columns, computed directly.
inline double cosine_sum(const Tensor& q, const Tensor& t) {
  double total = 0.0;
  for (std::size_t u = 0; u < q.cols(); ++u) {
    double dot = 0, nq = 0, nt = 0;
    for (std::size_t d = 0; d < q.rows(); ++d) {
      dot += q.at(d, u) * t.at(d, u);
      nq += q.at(d, u) * q.at(d, u);
      nt += t.at(d, u) * t.at(d, u);
    }
    total += dot / std::sqrt(nq * nt);
  }
  return total;
}

}  // namespace limn::testing
