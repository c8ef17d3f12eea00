#include "limn/encoders.hpp"

#include <cmath>

#include "limn/error.hpp"
#include "limn/ops.hpp"

namespace limn {

namespace {
constexpr std::size_t kKernel = 3;
constexpr std::size_t kStride = 2;
constexpr std::size_t kPad = 1;

void require_granularity(Granularity gran) {
  if (!gran.local && !gran.global) throw InvalidArgument("encoder needs at least one of the local/global branches");
}
}  // namespace

Tensor init_uniform(Shape shape, double bound, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.mutable_data()) v = uniform(rng, -bound, bound);
  return t;
}

void ImageEncoderConfig::validate() const {
  if (in_channels == 0 || mid_channels == 0 || last_channels == 0 || dim == 0 || input_h == 0 || input_w == 0)
    throw InvalidArgument("image encoder dimensions must be positive");
  if (grid_h() * grid_w() < 4) throw InvalidArgument("image encoder grid H*W must be at least 4");
  if (!(gem_p >= 1.0)) throw InvalidArgument("gem exponent must be >= 1");
}

void TextEncoderConfig::validate() const {
  if (vocab_size == 0 || embed_dim == 0 || hidden_dim == 0 || dim == 0 || max_len == 0)
    throw InvalidArgument("text encoder dimensions must be positive");
  if (pad_id < 0 || static_cast<std::size_t>(pad_id) >= vocab_size)
    throw InvalidArgument("pad id must lie inside the vocabulary");
}

void init_image_encoder(const ImageEncoderConfig& cfg, ParamStore& params, const std::string& prefix, Rng& rng) {
  cfg.validate();
  const std::size_t k2 = kKernel * kKernel;
  auto fan = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  params.add(prefix + "conv1.w", init_uniform({cfg.mid_channels, cfg.in_channels * k2}, fan(cfg.in_channels * k2), rng));
  params.add(prefix + "conv1.b", init_uniform({cfg.mid_channels}, fan(cfg.in_channels * k2), rng));
  params.add(prefix + "conv2.w",
             init_uniform({cfg.last_channels, cfg.mid_channels * k2}, fan(cfg.mid_channels * k2), rng));
  params.add(prefix + "conv2.b", init_uniform({cfg.last_channels}, fan(cfg.mid_channels * k2), rng));
  params.add(prefix + "local.w", init_uniform({cfg.dim, cfg.mid_channels}, fan(cfg.mid_channels), rng));
  params.add(prefix + "local.b", init_uniform({cfg.dim}, fan(cfg.mid_channels), rng));
  params.add(prefix + "global.w", init_uniform({cfg.dim, cfg.last_channels}, fan(cfg.last_channels), rng));
  params.add(prefix + "global.b", init_uniform({cfg.dim}, fan(cfg.last_channels), rng));
}

void init_text_encoder(const TextEncoderConfig& cfg, ParamStore& params, const std::string& prefix, Rng& rng) {
  cfg.validate();
  const std::size_t h = cfg.hidden_dim;
  params.add(prefix + "embed", init_uniform({cfg.vocab_size, cfg.embed_dim}, 1.0, rng));
  params.add(prefix + "lstm.wx", init_uniform({4 * h, cfg.embed_dim}, 0.08, rng));
  params.add(prefix + "lstm.wh", init_uniform({4 * h, h}, 0.08, rng));
  // gate order i, f, g, o; forget gate bias starts at +1
  Tensor b = init_uniform({4 * h}, 0.08, rng);
  for (std::size_t i = h; i < 2 * h; ++i) b.mutable_data()[i] = 1.0;
  params.add(prefix + "lstm.b", b);
  const double bound = 1.0 / std::sqrt(static_cast<double>(h));
  params.add(prefix + "word.w", init_uniform({cfg.dim, h}, bound, rng));
  params.add(prefix + "word.b", init_uniform({cfg.dim}, bound, rng));
  params.add(prefix + "sentence.w", init_uniform({cfg.dim, h}, bound, rng));
  params.add(prefix + "sentence.b", init_uniform({cfg.dim}, bound, rng));
}

VisualRepresentation encode_image(Graph& g, const ParamStore& params, const std::string& prefix,
                                  const ImageEncoderConfig& cfg, const Tensor& pixels, Granularity gran) {
  require_granularity(gran);
  if (pixels.ndim() != 3 || pixels.dim(0) != cfg.in_channels || pixels.dim(1) != cfg.input_h ||
      pixels.dim(2) != cfg.input_w)
    throw DimensionError("encode_image: expected " + shape_str({cfg.in_channels, cfg.input_h, cfg.input_w}) +
                         " pixels, got " + shape_str(pixels.shape()));
  auto p = [&](const char* n) -> const Tensor& { return params.get(prefix + n); };

  Tensor cols1 = ops::im2col(g, pixels, kKernel, kStride, kPad);
  Tensor mid = ops::relu(g, ops::add_col_vector(g, ops::matmul(g, p("conv1.w"), cols1), p("conv1.b")));

  VisualRepresentation rep;
  std::vector<Tensor> parts;
  if (gran.local) {
    parts.push_back(ops::add_col_vector(g, ops::matmul(g, p("local.w"), mid), p("local.b")));
    rep.local_cols = mid.cols();
  }
  if (gran.global) {
    Tensor mid_map = ops::reshape(g, mid, {cfg.mid_channels, cfg.grid_h(), cfg.grid_w()});
    Tensor cols2 = ops::im2col(g, mid_map, kKernel, kStride, kPad);
    // rectified, so the map is a valid gem domain
    Tensor last = ops::relu(g, ops::add_col_vector(g, ops::matmul(g, p("conv2.w"), cols2), p("conv2.b")));
    Tensor pooled = ops::concat_cols(g, {ops::pool(g, last, ops::PoolKind::kMax),
                                         ops::pool(g, last, ops::PoolKind::kAvg),
                                         ops::pool(g, last, ops::PoolKind::kGem, cfg.gem_p)});
    parts.push_back(ops::add_col_vector(g, ops::matmul(g, p("global.w"), pooled), p("global.b")));
    rep.global_cols = 3;
  }
  rep.features = parts.size() == 1 ? parts[0] : ops::concat_cols(g, parts);
  return rep;
}

TextualRepresentation encode_text(Graph& g, const ParamStore& params, const std::string& prefix,
                                  const TextEncoderConfig& cfg, std::span<const int> token_ids, Granularity gran) {
  require_granularity(gran);
  const std::size_t len = token_ids.size();
  std::size_t valid = 0;
  while (valid < len && token_ids[valid] != cfg.pad_id) ++valid;
  if (valid == 0) throw InvalidArgument("encode_text: empty token sequence");
  if (len > cfg.max_len)
    throw InvalidArgument("encode_text: sequence length " + std::to_string(len) + " exceeds maximum " +
                          std::to_string(cfg.max_len));
  for (std::size_t i = valid; i < len; ++i)
    if (token_ids[i] != cfg.pad_id) throw InvalidArgument("encode_text: padding must be trailing");
  for (int id : token_ids)
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size)
      throw InvalidArgument("encode_text: out-of-vocabulary token id " + std::to_string(id));

  auto p = [&](const char* n) -> const Tensor& { return params.get(prefix + n); };
  const std::size_t h = cfg.hidden_dim;

  Tensor emb = ops::embedding(g, p("embed"), token_ids);
  Tensor gates_x = ops::add_col_vector(g, ops::matmul(g, p("lstm.wx"), emb), p("lstm.b"));
  Tensor hidden = Tensor::zeros({h, 1});
  Tensor cell = Tensor::zeros({h, 1});
  std::vector<Tensor> states;
  states.reserve(len);
  for (std::size_t t = 0; t < len; ++t) {
    Tensor gates = ops::add(g, ops::slice_cols(g, gates_x, t, t + 1), ops::matmul(g, p("lstm.wh"), hidden));
    Tensor in = ops::sigmoid(g, ops::slice_rows(g, gates, 0, h));
    Tensor forget = ops::sigmoid(g, ops::slice_rows(g, gates, h, 2 * h));
    Tensor cand = ops::tanh(g, ops::slice_rows(g, gates, 2 * h, 3 * h));
    Tensor out = ops::sigmoid(g, ops::slice_rows(g, gates, 3 * h, 4 * h));
    cell = ops::add(g, ops::mul(g, forget, cell), ops::mul(g, in, cand));
    hidden = ops::mul(g, out, ops::tanh(g, cell));
    states.push_back(hidden);
  }

  TextualRepresentation rep;
  rep.valid_length = valid;
  std::vector<Tensor> parts;
  if (gran.local) {
    Tensor all = ops::concat_cols(g, states);
    parts.push_back(ops::add_col_vector(g, ops::matmul(g, p("word.w"), all), p("word.b")));
    rep.word_cols = len;
    for (std::size_t i = 0; i < len; ++i) rep.mask.push_back(i >= valid);
  }
  if (gran.global) {
    parts.push_back(ops::add_col_vector(g, ops::matmul(g, p("sentence.w"), states[valid - 1]), p("sentence.b")));
    rep.sentence_cols = 1;
    rep.mask.push_back(false);
  }
  rep.features = parts.size() == 1 ? parts[0] : ops::concat_cols(g, parts);
  return rep;
}

void to_json(nlohmann::json& j, const ImageEncoderConfig& c) {
  j = {{"in_channels", c.in_channels}, {"input_h", c.input_h},           {"input_w", c.input_w},
       {"mid_channels", c.mid_channels}, {"last_channels", c.last_channels}, {"dim", c.dim},
       {"gem_p", c.gem_p}};
}

void from_json(const nlohmann::json& j, ImageEncoderConfig& c) {
  j.at("in_channels").get_to(c.in_channels);
  j.at("input_h").get_to(c.input_h);
  j.at("input_w").get_to(c.input_w);
  j.at("mid_channels").get_to(c.mid_channels);
  j.at("last_channels").get_to(c.last_channels);
  j.at("dim").get_to(c.dim);
  j.at("gem_p").get_to(c.gem_p);
}

void to_json(nlohmann::json& j, const TextEncoderConfig& c) {
  j = {{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim}, {"hidden_dim", c.hidden_dim},
       {"dim", c.dim},               {"max_len", c.max_len},     {"pad_id", c.pad_id}};
}

void from_json(const nlohmann::json& j, TextEncoderConfig& c) {
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("embed_dim").get_to(c.embed_dim);
  j.at("hidden_dim").get_to(c.hidden_dim);
  j.at("dim").get_to(c.dim);
  j.at("max_len").get_to(c.max_len);
  j.at("pad_id").get_to(c.pad_id);
}

}  // namespace limn
