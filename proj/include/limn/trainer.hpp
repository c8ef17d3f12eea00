#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "limn/adam.hpp"
#include "limn/checkpoint.hpp"
#include "limn/model.hpp"
#include "limn/objective.hpp"
#include "limn/synthio.hpp"

namespace limn {

struct Ablation {
  bool one_factor = false;  // U forced to 1
  bool avepool = false;     // average-pool scoring
  bool no_ortho = false;    // lambda forced to 0
  bool no_global = false;
  bool no_local = false;
};

struct TrainConfig {
  LimnConfig model;
  LossConfig loss;
  Ablation ablation;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double lr = 1e-4;
  std::size_t decay_epoch = 10;  // lr *= decay_factor when this many epochs have completed; 0 disables
  double decay_factor = 0.1;
  std::uint64_t seed = 0;
  std::vector<std::size_t> ks = {1, 10, 50};

  // Applies ablation switches onto the model and loss settings.
  TrainConfig resolved() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

struct RecallReport {
  std::vector<std::size_t> ks;
  std::vector<double> recall;
  std::size_t gallery_size = 0;
  std::size_t queries = 0;
  double average = 0.0;
  std::vector<std::size_t> ranks;  // 1-based rank of each query's target; not serialized

  double at(std::size_t k) const;
};

nlohmann::json report_to_json(const RecallReport& r);
RecallReport report_from_json(const nlohmann::json& j);

// Rank of gallery position `target` under descending score with ties broken by
// ascending gallery id (1-based).
std::size_t rank_of(std::span<const double> scores, std::span<const int> ids, std::size_t target);
RecallReport recall_from_ranks(std::vector<std::size_t> ranks, std::size_t gallery_size, std::vector<std::size_t> ks);

// Rendered catalog images, indexed by item id.
class RenderCache {
 public:
  RenderCache() = default;
  explicit RenderCache(const synth::Dataset& ds);
  const Tensor& image(int id) const;
  std::size_t size() const { return images_.size(); }

 private:
  std::vector<Tensor> images_;
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double ranking = 0.0;
  double ortho = 0.0;
  double lr = 0.0;
  std::optional<RecallReport> validation;
};

struct TrainedModel {
  TrainConfig config;  // resolved
  ParamStore params;
  std::optional<AdamState> optimizer;
  double initial_loss = 0.0;  // mean loss of the untrained model over the first epoch's batches
  std::vector<EpochStats> curve;

  std::uint64_t hash() const { return params.hash(); }
};

// Target-path embeddings of a gallery, valid for one parameter hash.
struct GalleryCache {
  std::uint64_t param_hash = 0;
  std::vector<int> ids;
  std::vector<TokenMatrix> embeddings;
};

struct TrainOptions {
  std::vector<synth::Triplet> validation;  // evaluated after every epoch when non-empty
  std::function<void(const EpochStats&)> on_epoch;
};

// Fresh, untrained model for `cfg` (parameters seeded from cfg.seed).
TrainedModel init_model(const TrainConfig& cfg, std::size_t vocab_size);

TrainedModel train(const std::vector<synth::Triplet>& triplets, const synth::Dataset& ds, const RenderCache& renders,
                   const TrainConfig& cfg, const TrainOptions& opts = {});

// Ranks the whole catalog for each query.
RecallReport evaluate(const TrainedModel& model, const std::vector<synth::Triplet>& queries,
                      const synth::Dataset& ds, const RenderCache& renders, const std::vector<std::size_t>& ks,
                      GalleryCache* cache = nullptr);
RecallReport evaluate_gallery(const TrainedModel& model, const std::vector<synth::Triplet>& queries,
                              const std::vector<int>& gallery, const RenderCache& renders,
                              const std::vector<std::size_t>& ks, GalleryCache* cache = nullptr);

double score_triplet(const TrainedModel& model, const synth::Triplet& triplet, const RenderCache& renders);
TokenMatrix embed_item(const TrainedModel& model, int id, const RenderCache& renders);
TokenMatrix embed_query_of(const TrainedModel& model, const synth::Triplet& triplet, const RenderCache& renders);

Checkpoint to_checkpoint(const TrainedModel& model);
TrainedModel from_checkpoint(const Checkpoint& ckpt);

// metrics.json body: config echo, loss curve, per-epoch validation and an
// optional final test report.
nlohmann::json metrics_json(const TrainedModel& model, const std::optional<RecallReport>& test);
// CSV mirror, one row per epoch plus a final "test" row when given.
std::string metrics_csv(const TrainedModel& model, const std::optional<RecallReport>& test);

}  // namespace limn
