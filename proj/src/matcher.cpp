#include "limn/matcher.hpp"

#include <algorithm>
#include <cmath>

#include "limn/error.hpp"
#include "limn/ops.hpp"

namespace limn {

void TransformerConfig::validate() const {
  if (layers < 1) throw InvalidArgument("transformer needs at least one layer");
  if (heads < 1 || dim % heads != 0)
    throw InvalidArgument("transformer dim " + std::to_string(dim) + " is not divisible by " +
                          std::to_string(heads) + " heads");
  if (ff_dim < 1) throw InvalidArgument("transformer feed-forward dim must be positive");
}

void init_matching_tokens(std::size_t dim, std::size_t tokens, ParamStore& params, const std::string& name, Rng& rng) {
  if (tokens < 1) throw InvalidArgument("at least one matching token is required");
  params.add(name, init_uniform({dim, tokens}, 1.0, rng));
}

void init_transformer(const TransformerConfig& cfg, ParamStore& params, const std::string& prefix, Rng& rng) {
  cfg.validate();
  const double bd = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
  const double bf = 1.0 / std::sqrt(static_cast<double>(cfg.ff_dim));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = prefix + "layer" + std::to_string(l) + ".";
    for (const char* n : {"q", "k", "v", "o"}) {
      params.add(p + "w" + n, init_uniform({cfg.dim, cfg.dim}, bd, rng));
      params.add(p + "b" + n, Tensor::zeros({cfg.dim}));
    }
    params.add(p + "ln1.gain", Tensor::filled({cfg.dim}, 1.0));
    params.add(p + "ln1.bias", Tensor::zeros({cfg.dim}));
    params.add(p + "ff1.w", init_uniform({cfg.dim, cfg.ff_dim}, bd, rng));
    params.add(p + "ff1.b", Tensor::zeros({cfg.ff_dim}));
    params.add(p + "ff2.w", init_uniform({cfg.ff_dim, cfg.dim}, bf, rng));
    params.add(p + "ff2.b", Tensor::zeros({cfg.dim}));
    params.add(p + "ln2.gain", Tensor::filled({cfg.dim}, 1.0));
    params.add(p + "ln2.bias", Tensor::zeros({cfg.dim}));
  }
}

namespace {
void check_dim(const Tensor& a, const Tensor& b, const char* what) {
  if (a.rows() != b.rows())
    throw DimensionError(std::string(what) + ": feature dims differ (" + std::to_string(a.rows()) + " vs " +
                         std::to_string(b.rows()) + ")");
}
}  // namespace

Sequence assemble_query(Graph& g, const VisualRepresentation& image, const TextualRepresentation& text,
                        const Tensor& tokens) {
  check_dim(image.features, text.features, "assemble_query");
  check_dim(image.features, tokens, "assemble_query");
  if (tokens.cols() < 1) throw InvalidArgument("assemble_query: need at least one matching token");
  Sequence seq;
  seq.columns = ops::concat_cols(g, {image.features, text.features, tokens});
  seq.tokens = tokens.cols();
  seq.mask.assign(image.features.cols(), false);
  seq.mask.insert(seq.mask.end(), text.mask.begin(), text.mask.end());
  seq.mask.resize(seq.columns.cols(), false);
  return seq;
}

Sequence assemble_target(Graph& g, const VisualRepresentation& image, const Tensor& tokens) {
  check_dim(image.features, tokens, "assemble_target");
  if (tokens.cols() < 1) throw InvalidArgument("assemble_target: need at least one matching token");
  Sequence seq;
  seq.columns = ops::concat_cols(g, {image.features, tokens});
  seq.tokens = tokens.cols();
  seq.mask.assign(seq.columns.cols(), false);
  return seq;
}

TokenMatrix aggregate(Graph& g, const ParamStore& params, const std::string& prefix, const TransformerConfig& cfg,
                      const Sequence& seq) {
  const std::size_t n = seq.width();
  if (seq.tokens < 1 || seq.tokens > n) throw DimensionError("aggregate: sequence narrower than its token count");
  if (seq.mask.size() != n) throw DimensionError("aggregate: mask length does not match sequence width");
  if (seq.columns.rows() != cfg.dim)
    throw DimensionError("aggregate: sequence dim " + std::to_string(seq.columns.rows()) +
                         " != transformer dim " + std::to_string(cfg.dim));
  for (std::size_t j = seq.token_begin(); j < n; ++j)
    if (seq.mask[j]) throw DimensionError("aggregate: matching-token columns may not be masked");

  const std::size_t dh = cfg.dim / cfg.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<bool> key_mask;
  if (std::find(seq.mask.begin(), seq.mask.end(), true) != seq.mask.end()) key_mask = seq.mask;
  Tensor x = ops::transpose(g, seq.columns);  // N x D, one row per column of the input
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = prefix + "layer" + std::to_string(l) + ".";
    auto w = [&](const std::string& name) -> const Tensor& { return params.get(p + name); };
    auto linear = [&](const Tensor& in, const char* wn, const char* bn) {
      return ops::add_row_vector(g, ops::matmul(g, in, w(wn)), w(bn));
    };
    // In the last layer only the token rows reach the output, so the other
    // query rows are skipped; keys and values still span the whole sequence.
    const bool last = l + 1 == cfg.layers;
    Tensor queries_in = last ? ops::slice_rows(g, x, seq.token_begin(), n) : x;

    Tensor q = linear(queries_in, "wq", "bq");
    Tensor k = linear(x, "wk", "bk");
    Tensor v = linear(x, "wv", "bv");
    std::vector<Tensor> heads;
    heads.reserve(cfg.heads);
    for (std::size_t a = 0; a < cfg.heads; ++a) {
      Tensor qa = ops::slice_cols(g, q, a * dh, (a + 1) * dh);
      Tensor ka = ops::slice_cols(g, k, a * dh, (a + 1) * dh);
      Tensor va = ops::slice_cols(g, v, a * dh, (a + 1) * dh);
      Tensor logits = ops::scale(g, ops::matmul(g, qa, ops::transpose(g, ka)), inv_sqrt);
      Tensor attn = ops::softmax_rows(g, logits, key_mask);
      heads.push_back(ops::matmul(g, attn, va));
    }
    Tensor attended = linear(heads.size() == 1 ? heads[0] : ops::concat_cols(g, heads), "wo", "bo");
    Tensor h1 = ops::layer_norm(g, ops::add(g, queries_in, attended), w("ln1.gain"), w("ln1.bias"), cfg.ln_eps);
    Tensor ff = linear(ops::relu(g, linear(h1, "ff1.w", "ff1.b")), "ff2.w", "ff2.b");
    x = ops::layer_norm(g, ops::add(g, h1, ff), w("ln2.gain"), w("ln2.bias"), cfg.ln_eps);
  }
  TokenMatrix out;
  out.raw = ops::transpose(g, x);
  out.normalized = ops::l2_normalize_columns(g, out.raw);
  return out;
}

double match_score(const TokenMatrix& query, const TokenMatrix& target) {
  const Tensor& a = query.normalized;
  const Tensor& b = target.normalized;
  if (a.cols() != b.cols())
    throw DimensionError("match_score: token counts differ (" + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.cols()) + ")");
  if (a.rows() != b.rows()) throw DimensionError("match_score: token dims differ");
  const std::size_t d = a.rows(), u = a.cols();
  double s = 0.0;
  for (std::size_t k = 0; k < u; ++k)
    for (std::size_t i = 0; i < d; ++i) s += a.at(i, k) * b.at(i, k);
  return s;
}

double average_pool_score(const TokenMatrix& query, const TokenMatrix& target) {
  const Tensor& a = query.normalized;
  const Tensor& b = target.normalized;
  if (a.cols() != b.cols() || a.rows() != b.rows()) throw DimensionError("average_pool_score: shape mismatch");
  const std::size_t d = a.rows(), u = a.cols();
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double ma = 0.0, mb = 0.0;
    for (std::size_t k = 0; k < u; ++k) {
      ma += a.at(i, k);
      mb += b.at(i, k);
    }
    dot += ma * mb;
    na += ma * ma;
    nb += mb * mb;
  }
  const double denom = std::max(std::sqrt(na), 1e-12) * std::max(std::sqrt(nb), 1e-12);
  return dot / denom;
}

double score(const TokenMatrix& query, const TokenMatrix& target, ScoreRule rule) {
  return rule == ScoreRule::kTokenSum ? match_score(query, target) : average_pool_score(query, target);
}

void to_json(nlohmann::json& j, const TransformerConfig& c) {
  j = {{"layers", c.layers}, {"heads", c.heads}, {"dim", c.dim}, {"ff_dim", c.ff_dim}, {"ln_eps", c.ln_eps}};
}

void from_json(const nlohmann::json& j, TransformerConfig& c) {
  j.at("layers").get_to(c.layers);
  j.at("heads").get_to(c.heads);
  j.at("dim").get_to(c.dim);
  j.at("ff_dim").get_to(c.ff_dim);
  j.at("ln_eps").get_to(c.ln_eps);
}

}  // namespace limn
