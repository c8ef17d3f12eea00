#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "limn/tensor.hpp"

// Differentiable primitives. Every function records its backward rule on the
// supplied graph; matrices are row-major and 1-D tensors read as columns.
namespace limn::ops {

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);
Tensor transpose(Graph& g, const Tensor& a);

Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& a, double c);

// x[m x n] + b broadcast over rows (b has n entries) or columns (b has m).
Tensor add_row_vector(Graph& g, const Tensor& x, const Tensor& b);
Tensor add_col_vector(Graph& g, const Tensor& x, const Tensor& b);

Tensor relu(Graph& g, const Tensor& x);
Tensor tanh(Graph& g, const Tensor& x);
Tensor sigmoid(Graph& g, const Tensor& x);

// Row-wise softmax with max subtraction. `key_mask[j] == true` removes column j
// from every row (weight exactly 0). At least one column must stay active.
Tensor softmax_rows(Graph& g, const Tensor& x, const std::vector<bool>& key_mask = {});

// Normalizes each row (the trailing D axis) to zero mean, unit variance, then
// applies gain and bias.
Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Each column divided by max(||col||, eps).
Tensor l2_normalize_columns(Graph& g, const Tensor& x, double eps = 1e-12);

enum class PoolKind { kMax, kAvg, kGem };
// x is C x H x W (or C x N); returns a length-C vector.
Tensor pool(Graph& g, const Tensor& x, PoolKind kind, double p = 3.0);

// Unfolds a C x H x W map into (C*k*k) x (Ho*Wo) patch columns, zero padded.
Tensor im2col(Graph& g, const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t pad);

// Gathers rows of table[V x E]; returns E x K (one column per id).
Tensor embedding(Graph& g, const Tensor& table, std::span<const int> ids);

Tensor slice_rows(Graph& g, const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(Graph& g, const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_cols(Graph& g, const std::vector<Tensor>& parts);
Tensor concat_rows(Graph& g, const std::vector<Tensor>& parts);
Tensor reshape(Graph& g, const Tensor& x, Shape shape);

// D x U -> 1 x (D*U), token-major: entry u*D + d holds x(d, u).
Tensor flatten_columns(Graph& g, const Tensor& x);
// D x U -> D x 1 column mean.
Tensor mean_columns(Graph& g, const Tensor& x);
// Sum of squared entries as a 1 x 1 tensor.
Tensor sum_squares(Graph& g, const Tensor& x);

// Mean over rows of -log softmax(logits[i])[targets[i]].
Tensor cross_entropy_rows(Graph& g, const Tensor& logits, std::span<const std::size_t> targets);

}  // namespace limn::ops
