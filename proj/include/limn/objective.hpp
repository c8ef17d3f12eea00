#pragma once

#include <vector>

#include "limn/matcher.hpp"
#include "limn/tensor.hpp"

namespace limn {

struct LossConfig {
  double temperature = 10.0;  // scores are divided by this before the softmax
  double lambda = 0.1;        // weight of the orthogonality term
  ScoreRule score_rule = ScoreRule::kTokenSum;

  void validate() const;
};

// Batch classification loss: row i of the B x B score matrix is a softmax over
// all in-batch targets with target i as the positive.
Tensor ranking_loss(Graph& g, const std::vector<TokenMatrix>& queries, const std::vector<TokenMatrix>& targets,
                    const LossConfig& cfg);

// Mean over the batch of ||Q^T Q - I||_F^2 + ||T^T T - I||_F^2 on the
// normalized token matrices.
Tensor ortho_loss(Graph& g, const std::vector<TokenMatrix>& queries, const std::vector<TokenMatrix>& targets);

struct LossParts {
  Tensor total;
  double ranking = 0.0;
  double ortho = 0.0;
};

// ranking + lambda * ortho. The orthogonality term is skipped when lambda is 0.
LossParts total_loss(Graph& g, const std::vector<TokenMatrix>& queries, const std::vector<TokenMatrix>& targets,
                     const LossConfig& cfg);

// The B x B score matrix under `rule`, recorded on the graph.
Tensor score_matrix(Graph& g, const std::vector<TokenMatrix>& queries, const std::vector<TokenMatrix>& targets,
                    ScoreRule rule);

}  // namespace limn
