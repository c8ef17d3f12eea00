#include "limn/objective.hpp"

#include <numeric>

#include "limn/error.hpp"
#include "limn/ops.hpp"

namespace limn {

void LossConfig::validate() const {
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be non-negative");
}

namespace {

void check_batch(const std::vector<TokenMatrix>& queries, const std::vector<TokenMatrix>& targets) {
  if (queries.empty()) throw InvalidArgument("empty batch");
  if (queries.size() != targets.size())
    throw DimensionError("batch size mismatch: " + std::to_string(queries.size()) + " queries vs " +
                         std::to_string(targets.size()) + " targets");
}

Tensor embedding_rows(Graph& g, const std::vector<TokenMatrix>& mats, ScoreRule rule) {
  std::vector<Tensor> rows;
  rows.reserve(mats.size());
  for (const auto& m : mats) {
    if (rule == ScoreRule::kTokenSum) {
      rows.push_back(ops::flatten_columns(g, m.normalized));
    } else {
      Tensor avg = ops::l2_normalize_columns(g, ops::mean_columns(g, m.normalized));
      rows.push_back(ops::flatten_columns(g, avg));
    }
  }
  return ops::concat_rows(g, rows);
}

}  // namespace

Tensor score_matrix(Graph& g, const std::vector<TokenMatrix>& queries, const std::vector<TokenMatrix>& targets,
                    ScoreRule rule) {
  check_batch(queries, targets);
  for (std::size_t i = 0; i < queries.size(); ++i)
    if (queries[i].normalized.shape() != targets[0].normalized.shape() ||
        targets[i].normalized.shape() != targets[0].normalized.shape())
      throw DimensionError("token matrices in a batch must share one D x U shape");
  Tensor q = embedding_rows(g, queries, rule);
  Tensor t = embedding_rows(g, targets, rule);
  return ops::matmul(g, q, ops::transpose(g, t));
}

Tensor ranking_loss(Graph& g, const std::vector<TokenMatrix>& queries, const std::vector<TokenMatrix>& targets,
                    const LossConfig& cfg) {
  cfg.validate();
  Tensor scores = score_matrix(g, queries, targets, cfg.score_rule);
  std::vector<std::size_t> diag(queries.size());
  std::iota(diag.begin(), diag.end(), 0);
  return ops::cross_entropy_rows(g, ops::scale(g, scores, 1.0 / cfg.temperature), diag);
}

Tensor ortho_loss(Graph& g, const std::vector<TokenMatrix>& queries, const std::vector<TokenMatrix>& targets) {
  check_batch(queries, targets);
  const std::size_t u = queries[0].tokens();
  Tensor eye = Tensor::zeros({u, u});
  for (std::size_t i = 0; i < u; ++i) eye.mutable_data()[i * u + i] = 1.0;
  std::vector<Tensor> terms;
  auto penalty = [&](const Tensor& m) {
    if (m.cols() != u) throw DimensionError("ortho_loss: token counts differ within the batch");
    Tensor gram = ops::matmul(g, ops::transpose(g, m), m);
    return ops::sum_squares(g, ops::sub(g, gram, eye));
  };
  for (std::size_t i = 0; i < queries.size(); ++i) {
    terms.push_back(penalty(queries[i].normalized));
    terms.push_back(penalty(targets[i].normalized));
  }
  Tensor sum = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) sum = ops::add(g, sum, terms[i]);
  return ops::scale(g, sum, 1.0 / static_cast<double>(queries.size()));
}

LossParts total_loss(Graph& g, const std::vector<TokenMatrix>& queries, const std::vector<TokenMatrix>& targets,
                     const LossConfig& cfg) {
  LossParts parts;
  Tensor rank = ranking_loss(g, queries, targets, cfg);
  parts.ranking = rank.item();
  if (cfg.lambda == 0.0) {
    parts.total = rank;
    return parts;
  }
  Tensor ortho = ortho_loss(g, queries, targets);
  parts.ortho = ortho.item();
  parts.total = ops::add(g, rank, ops::scale(g, ortho, cfg.lambda));
  return parts;
}

}  // namespace limn
