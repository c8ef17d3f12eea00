#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "limn/encoders.hpp"
#include "limn/params.hpp"
#include "limn/rng.hpp"
#include "limn/tensor.hpp"

namespace limn {

struct TransformerConfig {
  std::size_t layers = 1;
  std::size_t heads = 4;
  std::size_t dim = 32;
  std::size_t ff_dim = 128;
  double ln_eps = 1e-5;

  void validate() const;
};

// Columns of an assembled Transformer input, D x N. The matching tokens always
// occupy the final `tokens` columns.
struct Sequence {
  Tensor columns;
  std::vector<bool> mask;  // true marks a padded (inactive) column
  std::size_t tokens = 0;

  std::size_t width() const { return columns.cols(); }
  std::size_t token_begin() const { return width() - tokens; }
};

// Aggregated matching-token embeddings, D x U, plus the column-normalized form
// that every score is computed from.
struct TokenMatrix {
  Tensor raw;
  Tensor normalized;

  std::size_t dim() const { return normalized.rows(); }
  std::size_t tokens() const { return normalized.cols(); }
};

enum class ScoreRule {
  kTokenSum,    // inner product of flattened normalized token matrices
  kAveragePool  // cosine of the column-averaged token vectors
};

void init_matching_tokens(std::size_t dim, std::size_t tokens, ParamStore& params, const std::string& name, Rng& rng);
void init_transformer(const TransformerConfig& cfg, ParamStore& params, const std::string& prefix, Rng& rng);

// [E_r ; E_m ; E_p] in column order.
Sequence assemble_query(Graph& g, const VisualRepresentation& image, const TextualRepresentation& text,
                        const Tensor& tokens);
// [E_t ; E_p].
Sequence assemble_target(Graph& g, const VisualRepresentation& image, const Tensor& tokens);

// Post-norm Transformer encoder without positional or modality encodings.
// Returns only the outputs at the token positions.
TokenMatrix aggregate(Graph& g, const ParamStore& params, const std::string& prefix, const TransformerConfig& cfg,
                      const Sequence& seq);

// Canonical token-major flattening inner product; equals the sum of per-token
// cosines when both inputs are column-normalized.
double match_score(const TokenMatrix& query, const TokenMatrix& target);
double average_pool_score(const TokenMatrix& query, const TokenMatrix& target);
double score(const TokenMatrix& query, const TokenMatrix& target, ScoreRule rule);

void to_json(nlohmann::json& j, const TransformerConfig& cfg);
void from_json(const nlohmann::json& j, TransformerConfig& cfg);

}  // namespace limn
