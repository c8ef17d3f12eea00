#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "limn/captioner.hpp"
#include "limn/checkpoint.hpp"
#include "limn/synthio.hpp"
#include "limn/trainer.hpp"

namespace limn {

// What a retrieval model must offer to take part in self-training.
class CirModelPort {
 public:
  virtual ~CirModelPort() = default;
  virtual std::string kind() const = 0;
  // Trains from scratch on `triplets`, replacing any current model.
  virtual void train(const std::vector<synth::Triplet>& triplets, std::uint64_t seed) = 0;
  virtual double score_triplet(const synth::Triplet& triplet) const = 0;
  virtual RecallReport evaluate(const std::vector<synth::Triplet>& queries, const std::vector<std::size_t>& ks) const = 0;
  // Model similarity of two catalog images, used by the model-driven mining
  // strategies.
  virtual double image_similarity(int a, int b) const = 0;
  virtual bool trained() const = 0;
  virtual Checkpoint checkpoint() const = 0;
};

class LimnPort : public CirModelPort {
 public:
  LimnPort(const synth::Dataset& ds, const RenderCache& renders, TrainConfig cfg);
  std::string kind() const override { return "limn"; }
  void train(const std::vector<synth::Triplet>& triplets, std::uint64_t seed) override;
  double score_triplet(const synth::Triplet& triplet) const override;
  RecallReport evaluate(const std::vector<synth::Triplet>& queries, const std::vector<std::size_t>& ks) const override;
  double image_similarity(int a, int b) const override;
  bool trained() const override { return model_.has_value(); }
  Checkpoint checkpoint() const override;

  void set_model(TrainedModel model);
  const TrainedModel& model() const;

 private:
  void require_model() const;
  const synth::Dataset& ds_;
  const RenderCache& renders_;
  TrainConfig cfg_;
  std::optional<TrainedModel> model_;
  mutable GalleryCache gallery_;
};

// Naive-Bayes association between caption tokens and per-slot target
// decisions (keep, or change to a value), scored over item attributes rather
// than pixels.
class BagOfAttributesPort : public CirModelPort {
 public:
  explicit BagOfAttributesPort(const synth::Dataset& ds);
  std::string kind() const override { return "bag_of_attributes"; }
  void train(const std::vector<synth::Triplet>& triplets, std::uint64_t seed) override;
  double score_triplet(const synth::Triplet& triplet) const override;
  RecallReport evaluate(const std::vector<synth::Triplet>& queries, const std::vector<std::size_t>& ks) const override;
  double image_similarity(int a, int b) const override;
  bool trained() const override { return trained_; }
  Checkpoint checkpoint() const override;

 private:
  // Per slot: log-probability of each decision (0 = keep, 1 + v = change to v).
  std::vector<std::vector<double>> decision_logp(const synth::Triplet& query) const;
  double score_item(const std::vector<std::vector<double>>& logp, const synth::Item& ref, const synth::Item& tgt) const;

  const synth::Dataset& ds_;
  bool trained_ = false;
  // counts_[token][slot][decision]
  std::vector<std::vector<std::vector<double>>> counts_;
};

enum class MiningStrategy { kTfidfTitle, kSimilarityBand, kTaxonomyVisual };

const char* strategy_name(MiningStrategy s);
MiningStrategy parse_strategy(const std::string& name);

enum class BandWidth { kStd, kVariance };

struct MiningConfig {
  MiningStrategy strategy = MiningStrategy::kTfidfTitle;
  std::size_t budget = 0;  // pair cap; 0 = one pass over the catalog (similarity_band: n_items)
  std::optional<double> band_mu;     // overrides the estimate from labeled pairs
  std::optional<double> band_sigma;  // overrides the estimated half-width
  BandWidth band_width = BandWidth::kStd;
  std::size_t taxon_partners = 2;
  std::size_t visual_neighbors = 2;
  std::size_t max_attempts_factor = 200;  // similarity_band draws at most factor * budget random pairs
};

struct BandEstimate {
  double mu = 0.0;
  double std = 0.0;
  double variance = 0.0;
};

BandEstimate estimate_band(const CirModelPort& model, const std::vector<synth::Triplet>& labeled);

// Pairs are (reference, target) over catalog ids. Labeled reference-target
// pairs never appear; the model is required by similarity_band and
// taxonomy_visual.
std::vector<synth::Pair> mine_pairs(const synth::Dataset& ds, const MiningConfig& cfg, const CirModelPort* model,
                                    const std::vector<synth::Triplet>& labeled, std::uint64_t seed);

// TF-IDF weights of each title word, tf = count / title length,
// idf = log(n_items / document frequency).
std::vector<std::map<std::string, double>> title_tfidf(const std::vector<synth::Item>& catalog);

struct ScoreSummary {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};
ScoreSummary summarize(std::vector<double> values);
nlohmann::json summary_json(const ScoreSummary& s);

struct PseudoBatch {
  std::vector<synth::Triplet> retained;   // score-descending
  std::vector<synth::Triplet> discarded;  // score-descending
};

PseudoBatch build_pseudo_triplets(const std::vector<synth::Pair>& pairs, const CaptionerModel& captioner,
                                  const CirModelPort& cir, std::size_t kappa, const synth::Dataset& ds,
                                  const RenderCache& renders);

struct SelfTrainConfig {
  MiningConfig mining;
  std::size_t kappa = 0;  // 0 = size of the original training set
  std::size_t max_iters = 3;
  double epsilon = 0.001;  // minimum gain in average validation recall (fraction)
  std::uint64_t seed = 0;
  std::vector<std::size_t> ks = {1, 10, 50};
};

struct IterationRecord {
  std::size_t iteration = 0;
  std::uint64_t train_seed = 0;
  std::size_t train_size = 0;
  std::size_t pairs_mined = 0;
  std::size_t pseudo_generated = 0;
  std::size_t retained = 0;
  std::size_t kappa = 0;
  std::optional<ScoreSummary> scores;
  std::optional<double> retained_min;
  std::optional<double> discarded_max;
  std::optional<BandEstimate> band;
  RecallReport recall;
  CaptionMetrics captions;
};

struct ParadigmResult {
  std::vector<IterationRecord> history;
  std::size_t best_iteration = 0;
  std::string stop_reason;
  Checkpoint best_cir;
  CaptionerModel best_captioner;
};

// S1 train both models; then up to max_iters rounds of mine, caption, filter
// and retrain on original + retained pseudo triplets; the best validation
// round is returned.
ParadigmResult run_paradigm(const std::vector<synth::Triplet>& original, const std::vector<synth::Triplet>& validation,
                            const synth::Dataset& ds, const RenderCache& renders, CirModelPort& cir,
                            const CaptionerConfig& captioner_cfg, const SelfTrainConfig& cfg);

nlohmann::json selftrain_report(const ParadigmResult& result, const SelfTrainConfig& cfg, const std::string& cir_kind);

}  // namespace limn
