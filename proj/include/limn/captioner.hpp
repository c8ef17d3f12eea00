#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "limn/checkpoint.hpp"
#include "limn/encoders.hpp"
#include "limn/synthio.hpp"
#include "limn/trainer.hpp"

namespace limn {

struct CaptionerConfig {
  ImageEncoderConfig image;
  std::size_t hidden = 64;
  std::size_t epochs = 15;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  // Probability of replacing each predicted slot decision with a random other
  // decision at generation time.
  double noise = 0.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const CaptionerConfig& cfg);
void from_json(const nlohmann::json& j, CaptionerConfig& cfg);

struct CaptionerModel {
  CaptionerConfig config;
  std::vector<std::size_t> slot_classes;  // 1 + number of values, per slot
  ParamStore params;
  std::size_t skipped = 0;  // training triplets whose caption did not parse
  std::vector<double> loss_curve;

  std::uint64_t hash() const { return params.hash(); }
};

CaptionerModel train_captioner(const std::vector<synth::Triplet>& triplets, const synth::Dataset& ds,
                               const RenderCache& renders, const CaptionerConfig& cfg);

// Predicted slot diff for an item pair (before the noise knob).
synth::Diff predict_diff(const CaptionerModel& model, const synth::Item& ref, const synth::Item& tgt,
                         const RenderCache& renders);

// Greedy caption through the template grammar; "no change" when nothing is
// predicted to change or the two images are identical.
std::vector<int> generate_caption(const CaptionerModel& model, const synth::Item& ref, const synth::Item& tgt,
                                  const synth::Dataset& ds, const RenderCache& renders);

struct CaptionMetrics {
  double bleu1 = 0.0;
  double rouge_l = 0.0;
  double average = 0.0;
  double slot_accuracy = 0.0;  // exact-diff agreement with the ground truth
  std::size_t pairs = 0;
};

nlohmann::json caption_metrics_json(const CaptionMetrics& m);

// Captions each triplet's (ref, tgt) pair and compares with its caption.
CaptionMetrics evaluate_captioner(const CaptionerModel& model, const std::vector<synth::Triplet>& triplets,
                                  const synth::Dataset& ds, const RenderCache& renders);

Checkpoint to_checkpoint(const CaptionerModel& model);
CaptionerModel captioner_from_checkpoint(const Checkpoint& ckpt);

double bleu1(const std::vector<std::string>& candidate, const std::vector<std::vector<std::string>>& references);
double bleu1(const std::vector<int>& candidate, const std::vector<std::vector<int>>& references);
double rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);
double rouge_l(const std::vector<int>& candidate, const std::vector<int>& reference);

}  // namespace limn
