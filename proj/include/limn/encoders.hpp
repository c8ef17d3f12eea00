#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "limn/params.hpp"
#include "limn/rng.hpp"
#include "limn/tensor.hpp"

namespace limn {

// Which granularities an encoder emits. Both on is the full model; the other
// two settings are the "without global" and "without local" ablations.
struct Granularity {
  bool local = true;
  bool global = true;
};

// Two-stage convolutional backbone. Stage one (3x3, stride 2) yields the
// mid-depth map of grid H x W that feeds the local branch; stage two (3x3,
// stride 2, rectified) yields the deeper H' x W' map that is pooled for the
// global branch.
struct ImageEncoderConfig {
  std::size_t in_channels = 3;
  std::size_t input_h = 8;
  std::size_t input_w = 8;
  std::size_t mid_channels = 16;
  std::size_t last_channels = 32;
  std::size_t dim = 32;
  double gem_p = 3.0;

  std::size_t grid_h() const { return (input_h + 1) / 2; }
  std::size_t grid_w() const { return (input_w + 1) / 2; }
  std::size_t reduced_h() const { return (grid_h() + 1) / 2; }
  std::size_t reduced_w() const { return (grid_w() + 1) / 2; }
  void validate() const;
};

// D x (H*W + 3): local columns first, then max/avg/gem global columns.
struct VisualRepresentation {
  Tensor features;
  std::size_t local_cols = 0;
  std::size_t global_cols = 0;
};

struct TextEncoderConfig {
  std::size_t vocab_size = 40;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 32;
  std::size_t dim = 32;
  std::size_t max_len = 32;
  int pad_id = 0;

  void validate() const;
};

// D x (L + 1): one word column per input position (pad positions flagged in
// `mask`), then the sentence column taken from the last valid hidden state.
struct TextualRepresentation {
  Tensor features;
  std::vector<bool> mask;  // true marks a padded column
  std::size_t valid_length = 0;
  std::size_t word_cols = 0;
  std::size_t sentence_cols = 0;
};

void init_image_encoder(const ImageEncoderConfig& cfg, ParamStore& params, const std::string& prefix, Rng& rng);
void init_text_encoder(const TextEncoderConfig& cfg, ParamStore& params, const std::string& prefix, Rng& rng);

VisualRepresentation encode_image(Graph& g, const ParamStore& params, const std::string& prefix,
                                  const ImageEncoderConfig& cfg, const Tensor& pixels, Granularity gran = {});

TextualRepresentation encode_text(Graph& g, const ParamStore& params, const std::string& prefix,
                                  const TextEncoderConfig& cfg, std::span<const int> token_ids,
                                  Granularity gran = {});

// Fan-in scaled uniform initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor init_uniform(Shape shape, double bound, Rng& rng);

void to_json(nlohmann::json& j, const ImageEncoderConfig& cfg);
void to_json(nlohmann::json& j, const TextEncoderConfig& cfg);
void from_json(const nlohmann::json& j, ImageEncoderConfig& cfg);
void from_json(const nlohmann::json& j, TextEncoderConfig& cfg);

}  // namespace limn
