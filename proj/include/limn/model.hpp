#pragma once

#include <cstdint>
#include <span>

#include <json.hpp>

#include "limn/encoders.hpp"
#include "limn/matcher.hpp"
#include "limn/params.hpp"

namespace limn {

// Architecture of the full retrieval model: encoders, U matching tokens and one
// Transformer shared by the query and target paths.
struct LimnConfig {
  std::size_t dim = 32;
  std::size_t tokens = 8;
  ImageEncoderConfig image;
  TextEncoderConfig text;
  TransformerConfig transformer;
  Granularity granularity;
  ScoreRule score_rule = ScoreRule::kTokenSum;

  // Propagates `dim` into the sub-configs and checks consistency.
  void normalize();
  void validate() const;
};

ParamStore init_limn(const LimnConfig& cfg, std::uint64_t seed);

TokenMatrix embed_query(Graph& g, const ParamStore& params, const LimnConfig& cfg, const Tensor& reference,
                        std::span<const int> caption);
TokenMatrix embed_target(Graph& g, const ParamStore& params, const LimnConfig& cfg, const Tensor& target);

void to_json(nlohmann::json& j, const LimnConfig& cfg);
void from_json(const nlohmann::json& j, LimnConfig& cfg);

const char* score_rule_name(ScoreRule rule);
ScoreRule parse_score_rule(const std::string& name);

}  // namespace limn
