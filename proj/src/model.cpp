#include "limn/model.hpp"

#include "limn/error.hpp"
#include "limn/rng.hpp"

namespace limn {

namespace {
const std::string kImage = "image.";
const std::string kText = "text.";
const std::string kTokens = "tokens";
const std::string kTransformer = "transformer.";
}  // namespace

void LimnConfig::normalize() {
  image.dim = dim;
  text.dim = dim;
  transformer.dim = dim;
}

void LimnConfig::validate() const {
  if (tokens < 1) throw InvalidArgument("at least one matching token is required (U >= 1)");
  if (image.dim != dim || text.dim != dim || transformer.dim != dim)
    throw InvalidArgument("encoder, token and transformer dims must all equal D");
  image.validate();
  text.validate();
  transformer.validate();
  if (!granularity.local && !granularity.global)
    throw InvalidArgument("the local and global branches cannot both be disabled");
}

ParamStore init_limn(const LimnConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore params;
  Rng rng(seed);
  init_image_encoder(cfg.image, params, kImage, rng);
  init_text_encoder(cfg.text, params, kText, rng);
  init_matching_tokens(cfg.dim, cfg.tokens, params, kTokens, rng);
  init_transformer(cfg.transformer, params, kTransformer, rng);
  return params;
}

TokenMatrix embed_query(Graph& g, const ParamStore& params, const LimnConfig& cfg, const Tensor& reference,
                        std::span<const int> caption) {
  VisualRepresentation image = encode_image(g, params, kImage, cfg.image, reference, cfg.granularity);
  TextualRepresentation text = encode_text(g, params, kText, cfg.text, caption, cfg.granularity);
  Sequence seq = assemble_query(g, image, text, params.get(kTokens));
  return aggregate(g, params, kTransformer, cfg.transformer, seq);
}

TokenMatrix embed_target(Graph& g, const ParamStore& params, const LimnConfig& cfg, const Tensor& target) {
  VisualRepresentation image = encode_image(g, params, kImage, cfg.image, target, cfg.granularity);
  Sequence seq = assemble_target(g, image, params.get(kTokens));
  return aggregate(g, params, kTransformer, cfg.transformer, seq);
}

const char* score_rule_name(ScoreRule rule) { return rule == ScoreRule::kTokenSum ? "token_sum" : "avepool"; }

ScoreRule parse_score_rule(const std::string& name) {
  if (name == "token_sum") return ScoreRule::kTokenSum;
  if (name == "avepool") return ScoreRule::kAveragePool;
  throw InvalidArgument("unknown score rule " + name);
}

void to_json(nlohmann::json& j, const LimnConfig& c) {
  j = {{"dim", c.dim},
       {"tokens", c.tokens},
       {"image", c.image},
       {"text", c.text},
       {"transformer", c.transformer},
       {"local", c.granularity.local},
       {"global", c.granularity.global},
       {"score_rule", score_rule_name(c.score_rule)}};
}

void from_json(const nlohmann::json& j, LimnConfig& c) {
  j.at("dim").get_to(c.dim);
  j.at("tokens").get_to(c.tokens);
  j.at("image").get_to(c.image);
  j.at("text").get_to(c.text);
  j.at("transformer").get_to(c.transformer);
  j.at("local").get_to(c.granularity.local);
  j.at("global").get_to(c.granularity.global);
  c.score_rule = parse_score_rule(j.at("score_rule").get<std::string>());
}

}  // namespace limn
