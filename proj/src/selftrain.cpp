#include "limn/selftrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <utility>

#include "limn/error.hpp"
#include "limn/rng.hpp"

namespace limn {

using json = nlohmann::json;
using synth::Dataset;
using synth::Item;
using synth::Pair;
using synth::Triplet;

namespace {

using PairKey = std::pair<int, int>;

std::set<PairKey> labeled_keys(const std::vector<Triplet>& labeled) {
  std::set<PairKey> keys;
  for (const auto& t : labeled) keys.emplace(t.ref_id, t.tgt_id);
  return keys;
}

std::vector<int> catalog_ids(const Dataset& ds) {
  std::vector<int> ids;
  ids.reserve(ds.catalog.size());
  for (const auto& it : ds.catalog) ids.push_back(it.id);
  return ids;
}

}  // namespace

// ---- LIMN port ----

LimnPort::LimnPort(const Dataset& ds, const RenderCache& renders, TrainConfig cfg)
    : ds_(ds), renders_(renders), cfg_(std::move(cfg)) {
  cfg_.validate();
}

void LimnPort::train(const std::vector<Triplet>& triplets, std::uint64_t seed) {
  TrainConfig c = cfg_;
  c.seed = seed;
  model_ = limn::train(triplets, ds_, renders_, c);
  gallery_ = {};
}

void LimnPort::set_model(TrainedModel model) {
  model_ = std::move(model);
  gallery_ = {};
}

const TrainedModel& LimnPort::model() const {
  require_model();
  return *model_;
}

void LimnPort::require_model() const {
  if (!model_) throw StateError("retrieval model has not been trained");
}

double LimnPort::score_triplet(const Triplet& t) const {
  require_model();
  return limn::score_triplet(*model_, t, renders_);
}

RecallReport LimnPort::evaluate(const std::vector<Triplet>& queries, const std::vector<std::size_t>& ks) const {
  require_model();
  return limn::evaluate(*model_, queries, ds_, renders_, ks, &gallery_);
}

double LimnPort::image_similarity(int a, int b) const {
  require_model();
  const std::uint64_t h = model_->hash();
  if (gallery_.embeddings.empty() || gallery_.param_hash != h || gallery_.ids != catalog_ids(ds_)) {
    gallery_.param_hash = h;
    gallery_.ids = catalog_ids(ds_);
    gallery_.embeddings.clear();
    for (int id : gallery_.ids) gallery_.embeddings.push_back(embed_item(*model_, id, renders_));
  }
  ds_.item(a);
  ds_.item(b);
  const auto& ea = gallery_.embeddings[static_cast<std::size_t>(a)];
  const auto& eb = gallery_.embeddings[static_cast<std::size_t>(b)];
  const ScoreRule rule = model_->config.model.score_rule;
  const double s = score(ea, eb, rule);
  // Token-sum scores lie in [-U, U]; bring them to the cosine range.
  return rule == ScoreRule::kTokenSum ? s / static_cast<double>(ea.tokens()) : s;
}

Checkpoint LimnPort::checkpoint() const {
  require_model();
  return to_checkpoint(*model_);
}

// ---- bag-of-attributes port ----

BagOfAttributesPort::BagOfAttributesPort(const Dataset& ds) : ds_(ds) {}

void BagOfAttributesPort::train(const std::vector<Triplet>& triplets, std::uint64_t /*seed*/) {
  if (triplets.empty()) throw InvalidArgument("cannot train on an empty triplet set");
  const auto& slots = ds_.spec.slots;
  counts_.assign(ds_.vocab.size(), {});
  for (auto& per_tok : counts_) {
    per_tok.resize(slots.size());
    for (std::size_t s = 0; s < slots.size(); ++s) per_tok[s].assign(1 + slots[s].values.size(), 0.0);
  }
  for (const auto& t : triplets) {
    const Item& ref = ds_.item(t.ref_id);
    const Item& tgt = ds_.item(t.tgt_id);
    std::set<int> seen;
    for (int tok : t.caption) {
      if (tok == synth::Vocabulary::kPad) continue;
      if (tok < 0 || static_cast<std::size_t>(tok) >= counts_.size())
        throw InvalidArgument("caption token " + std::to_string(tok) + " outside the vocabulary");
      if (!seen.insert(tok).second) continue;
      for (std::size_t s = 0; s < slots.size(); ++s) {
        const int a = ref.attributes[s], b = tgt.attributes[s];
        counts_[static_cast<std::size_t>(tok)][s][a == b ? 0 : static_cast<std::size_t>(1 + b)] += 1.0;
      }
    }
  }
  trained_ = true;
}

std::vector<std::vector<double>> BagOfAttributesPort::decision_logp(const Triplet& query) const {
  if (!trained_) throw StateError("retrieval model has not been trained");
  const auto& slots = ds_.spec.slots;
  std::vector<std::vector<double>> logp(slots.size());
  std::set<int> toks;
  for (int tok : query.caption)
    if (tok != synth::Vocabulary::kPad && tok >= 0 && static_cast<std::size_t>(tok) < counts_.size()) toks.insert(tok);
  for (std::size_t s = 0; s < slots.size(); ++s) {
    const std::size_t k = 1 + slots[s].values.size();
    std::vector<double> l(k, 0.0);
    for (int tok : toks) {
      const auto& c = counts_[static_cast<std::size_t>(tok)][s];
      const double total = std::accumulate(c.begin(), c.end(), 0.0);
      for (std::size_t d = 0; d < k; ++d) l[d] += std::log((c[d] + 1.0) / (total + static_cast<double>(k)));
    }
    const double m = *std::max_element(l.begin(), l.end());
    double z = 0.0;
    for (double v : l) z += std::exp(v - m);
    for (double& v : l) v -= m + std::log(z);
    logp[s] = std::move(l);
  }
  return logp;
}

double BagOfAttributesPort::score_item(const std::vector<std::vector<double>>& logp, const Item& ref,
                                       const Item& tgt) const {
  double s = 0.0;
  for (std::size_t i = 0; i < logp.size(); ++i) {
    const int a = ref.attributes[i], b = tgt.attributes[i];
    s += logp[i][a == b ? 0 : static_cast<std::size_t>(1 + b)];
  }
  return s;
}

double BagOfAttributesPort::score_triplet(const Triplet& t) const {
  return score_item(decision_logp(t), ds_.item(t.ref_id), ds_.item(t.tgt_id));
}

RecallReport BagOfAttributesPort::evaluate(const std::vector<Triplet>& queries,
                                           const std::vector<std::size_t>& ks) const {
  const std::vector<int> ids = catalog_ids(ds_);
  std::vector<std::size_t> ranks;
  std::vector<double> scores(ids.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto& t = queries[q];
    const Item& ref = ds_.item(t.ref_id);
    if (t.tgt_id < 0 || static_cast<std::size_t>(t.tgt_id) >= ids.size())
      throw NotFound("query " + std::to_string(q) + " has target " + std::to_string(t.tgt_id) + " outside the gallery");
    const auto logp = decision_logp(t);
    for (std::size_t i = 0; i < ids.size(); ++i) scores[i] = score_item(logp, ref, ds_.catalog[i]);
    ranks.push_back(rank_of(scores, ids, static_cast<std::size_t>(t.tgt_id)));
  }
  return recall_from_ranks(std::move(ranks), ids.size(), ks);
}

double BagOfAttributesPort::image_similarity(int a, int b) const {
  const Item& x = ds_.item(a);
  const Item& y = ds_.item(b);
  std::size_t same = 0;
  for (std::size_t s = 0; s < x.attributes.size(); ++s) same += x.attributes[s] == y.attributes[s];
  return static_cast<double>(same) / static_cast<double>(x.attributes.size());
}

Checkpoint BagOfAttributesPort::checkpoint() const {
  if (!trained_) throw StateError("retrieval model has not been trained");
  std::size_t kmax = 0;
  for (const auto& s : ds_.spec.slots) kmax = std::max(kmax, 1 + s.values.size());
  const std::size_t v = counts_.size(), f = ds_.spec.slots.size();
  std::vector<double> flat(v * f * kmax, 0.0);
  for (std::size_t t = 0; t < v; ++t)
    for (std::size_t s = 0; s < f; ++s)
      for (std::size_t d = 0; d < counts_[t][s].size(); ++d) flat[(t * f + s) * kmax + d] = counts_[t][s][d];
  Checkpoint ck;
  ck.config = {{"kind", kind()}};
  ck.params.add("counts", Tensor::from({v, f * kmax}, std::move(flat)));
  ck.extra = {{"kind", kind()}, {"param_hash", hash_hex(ck.params.hash())}};
  return ck;
}

// ---- mining ----

const char* strategy_name(MiningStrategy s) {
  switch (s) {
    case MiningStrategy::kTfidfTitle: return "tfidf_title";
    case MiningStrategy::kSimilarityBand: return "similarity_band";
    case MiningStrategy::kTaxonomyVisual: return "taxonomy_visual";
  }
  return "?";
}

MiningStrategy parse_strategy(const std::string& name) {
  if (name == "tfidf_title") return MiningStrategy::kTfidfTitle;
  if (name == "similarity_band") return MiningStrategy::kSimilarityBand;
  if (name == "taxonomy_visual") return MiningStrategy::kTaxonomyVisual;
  throw InvalidArgument("unknown mining strategy '" + name + "' (tfidf_title, similarity_band, taxonomy_visual)");
}

std::vector<std::map<std::string, double>> title_tfidf(const std::vector<Item>& catalog) {
  std::map<std::string, std::size_t> df;
  for (const auto& it : catalog) {
    std::set<std::string> words(it.title.begin(), it.title.end());
    for (const auto& w : words) ++df[w];
  }
  const double n = static_cast<double>(catalog.size());
  std::vector<std::map<std::string, double>> out;
  out.reserve(catalog.size());
  for (const auto& it : catalog) {
    std::map<std::string, double> tf;
    for (const auto& w : it.title) tf[w] += 1.0;
    for (auto& [w, v] : tf) v = v / static_cast<double>(it.title.size()) * std::log(n / static_cast<double>(df[w]));
    out.push_back(std::move(tf));
  }
  return out;
}

BandEstimate estimate_band(const CirModelPort& model, const std::vector<Triplet>& labeled) {
  if (labeled.empty()) throw InvalidArgument("band estimate needs labeled pairs");
  std::vector<double> s;
  s.reserve(labeled.size());
  for (const auto& t : labeled) s.push_back(model.image_similarity(t.ref_id, t.tgt_id));
  BandEstimate b;
  b.mu = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
  for (double v : s) b.variance += (v - b.mu) * (v - b.mu);
  b.variance /= static_cast<double>(s.size());
  b.std = std::sqrt(b.variance);
  return b;
}

namespace {

std::vector<Pair> mine_tfidf(const Dataset& ds, const std::set<PairKey>& exclude) {
  const auto w = title_tfidf(ds.catalog);
  std::vector<Pair> out;
  for (std::size_t i = 0; i < ds.catalog.size(); ++i) {
    double best = 0.0;
    int best_j = -1;
    for (std::size_t j = 0; j < ds.catalog.size(); ++j) {
      if (i == j) continue;
      const int ri = ds.catalog[i].id, tj = ds.catalog[j].id;
      if (exclude.count({ri, tj})) continue;
      double s = 0.0;
      for (const auto& [word, v] : w[i]) {
        auto it = w[j].find(word);
        if (it != w[j].end()) s += v + it->second;
      }
      if (s > best) {
        best = s;
        best_j = tj;
      }
    }
    if (best_j >= 0) out.push_back({ds.catalog[i].id, best_j, "tfidf_title", best});
  }
  return out;
}

std::vector<Pair> mine_band(const Dataset& ds, const MiningConfig& cfg, const CirModelPort& model,
                            const std::vector<Triplet>& labeled, const std::set<PairKey>& exclude, Rng& rng) {
  BandEstimate est;
  if (!cfg.band_mu || !cfg.band_sigma) est = estimate_band(model, labeled);
  const double mu = cfg.band_mu.value_or(est.mu);
  const double half = cfg.band_sigma.value_or(cfg.band_width == BandWidth::kStd ? est.std : est.variance);
  const std::size_t n = ds.catalog.size();
  const std::size_t budget = cfg.budget ? cfg.budget : n;
  const std::size_t attempts = cfg.max_attempts_factor * budget;
  std::set<PairKey> taken;
  std::vector<Pair> out;
  if (n < 2) return out;
  for (std::size_t a = 0; a < attempts && out.size() < budget; ++a) {
    const std::size_t i = uniform_index(rng, n);
    std::size_t j = uniform_index(rng, n - 1);
    if (j >= i) ++j;
    const PairKey key{ds.catalog[i].id, ds.catalog[j].id};
    if (exclude.count(key) || taken.count(key)) continue;
    const double s = model.image_similarity(key.first, key.second);
    if (std::abs(s - mu) > half) continue;
    taken.insert(key);
    out.push_back({key.first, key.second, "similarity_band", s});
  }
  return out;
}

std::vector<Pair> mine_taxonomy(const Dataset& ds, const MiningConfig& cfg, const CirModelPort& model,
                                const std::set<PairKey>& exclude, Rng& rng) {
  std::map<std::string, std::vector<int>> by_genus;
  for (const auto& it : ds.catalog) by_genus[it.taxon.at(1)].push_back(it.id);
  std::set<PairKey> taken;
  std::vector<Pair> out;
  auto emit = [&](int ref, int tgt, std::optional<double> stat) {
    const PairKey key{ref, tgt};
    if (ref == tgt || exclude.count(key) || !taken.insert(key).second) return;
    out.push_back({ref, tgt, "taxonomy_visual", stat});
  };
  for (const auto& t : ds.catalog) {
    std::vector<int> genus;
    for (int id : by_genus[t.taxon.at(1)])
      if (id != t.id) genus.push_back(id);
    shuffle(genus.begin(), genus.end(), rng);
    for (std::size_t k = 0; k < std::min(cfg.taxon_partners, genus.size()); ++k) emit(genus[k], t.id, std::nullopt);

    std::vector<std::pair<double, int>> sims;
    for (const auto& r : ds.catalog)
      if (r.id != t.id) sims.emplace_back(model.image_similarity(r.id, t.id), r.id);
    std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (std::size_t k = 0; k < std::min(cfg.visual_neighbors, sims.size()); ++k)
      emit(sims[k].second, t.id, sims[k].first);
  }
  return out;
}

}  // namespace

std::vector<Pair> mine_pairs(const Dataset& ds, const MiningConfig& cfg, const CirModelPort* model,
                             const std::vector<Triplet>& labeled, std::uint64_t seed) {
  const auto exclude = labeled_keys(labeled);
  Rng rng(derive_seed(seed, 0x6d696e65));
  std::vector<Pair> out;
  switch (cfg.strategy) {
    case MiningStrategy::kTfidfTitle:
      out = mine_tfidf(ds, exclude);
      break;
    case MiningStrategy::kSimilarityBand:
    case MiningStrategy::kTaxonomyVisual:
      if (!model || !model->trained())
        throw StateError(std::string(strategy_name(cfg.strategy)) + " mining needs a trained retrieval model");
      out = cfg.strategy == MiningStrategy::kSimilarityBand ? mine_band(ds, cfg, *model, labeled, exclude, rng)
                                                            : mine_taxonomy(ds, cfg, *model, exclude, rng);
      break;
  }
  if (cfg.budget && out.size() > cfg.budget) out.resize(cfg.budget);
  return out;
}

// ---- filtering ----

ScoreSummary summarize(std::vector<double> v) {
  if (v.empty()) throw InvalidArgument("cannot summarize an empty score list");
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return {v.front(), q(0.25), q(0.5), q(0.75), v.back()};
}

json summary_json(const ScoreSummary& s) {
  return {{"min", s.min}, {"q1", s.q1}, {"median", s.median}, {"q3", s.q3}, {"max", s.max}};
}

PseudoBatch build_pseudo_triplets(const std::vector<Pair>& pairs, const CaptionerModel& captioner,
                                  const CirModelPort& cir, std::size_t kappa, const Dataset& ds,
                                  const RenderCache& renders) {
  if (pairs.empty()) throw InvalidArgument("no pairs to caption");
  if (kappa == 0) throw InvalidArgument("kappa must be at least 1");
  std::vector<Triplet> all;
  all.reserve(pairs.size());
  for (const auto& p : pairs) {
    Triplet t;
    t.ref_id = p.ref_id;
    t.tgt_id = p.tgt_id;
    t.caption = generate_caption(captioner, ds.item(p.ref_id), ds.item(p.tgt_id), ds, renders);
    t.provenance = synth::Provenance::kPseudo;
    t.score = cir.score_triplet(t);
    all.push_back(std::move(t));
  }
  std::sort(all.begin(), all.end(), [](const Triplet& a, const Triplet& b) {
    if (*a.score != *b.score) return *a.score > *b.score;
    return std::make_pair(a.ref_id, a.tgt_id) < std::make_pair(b.ref_id, b.tgt_id);
  });
  PseudoBatch out;
  const std::size_t keep = std::min(kappa, all.size());
  out.retained.assign(all.begin(), all.begin() + static_cast<long>(keep));
  out.discarded.assign(all.begin() + static_cast<long>(keep), all.end());
  return out;
}

// ---- paradigm ----

namespace {

CaptionerModel fit_captioner(const std::vector<Triplet>& triplets, const Dataset& ds, const RenderCache& renders,
                             CaptionerConfig cfg, std::uint64_t seed) {
  cfg.seed = derive_seed(seed, 0x63617074);
  return train_captioner(triplets, ds, renders, cfg);
}

}  // namespace

ParadigmResult run_paradigm(const std::vector<Triplet>& original, const std::vector<Triplet>& validation,
                            const Dataset& ds, const RenderCache& renders, CirModelPort& cir,
                            const CaptionerConfig& captioner_cfg, const SelfTrainConfig& cfg) {
  if (original.empty()) throw InvalidArgument("self-training needs a non-empty original training set");
  if (validation.empty()) throw InvalidArgument("self-training needs a non-empty validation set");
  captioner_cfg.validate();

  ParadigmResult res;
  const std::size_t kappa = cfg.kappa ? cfg.kappa : original.size();

  IterationRecord r0;
  r0.iteration = 0;
  r0.train_seed = derive_seed(cfg.seed, 0);
  r0.train_size = original.size();
  r0.kappa = kappa;
  cir.train(original, r0.train_seed);
  CaptionerModel captioner = fit_captioner(original, ds, renders, captioner_cfg, r0.train_seed);
  r0.recall = cir.evaluate(validation, cfg.ks);
  r0.captions = evaluate_captioner(captioner, validation, ds, renders);
  res.history.push_back(r0);
  res.best_cir = cir.checkpoint();
  res.best_captioner = captioner;
  double best = r0.recall.average, prev = r0.recall.average;

  res.stop_reason = "max_iters";
  for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
    IterationRecord r;
    r.iteration = it;
    r.kappa = kappa;
    if (cfg.mining.strategy == MiningStrategy::kSimilarityBand && (!cfg.mining.band_mu || !cfg.mining.band_sigma))
      r.band = estimate_band(cir, original);
    const auto pairs = mine_pairs(ds, cfg.mining, &cir, original, derive_seed(cfg.seed, 0x6974000 + it));
    r.pairs_mined = pairs.size();
    if (pairs.empty() || kappa == 0) {
      res.stop_reason = "no_pairs";
      break;
    }
    PseudoBatch batch = build_pseudo_triplets(pairs, captioner, cir, kappa, ds, renders);
    r.pseudo_generated = pairs.size();
    r.retained = batch.retained.size();
    std::vector<double> scores;
    for (const auto& t : batch.retained) scores.push_back(*t.score);
    for (const auto& t : batch.discarded) scores.push_back(*t.score);
    r.scores = summarize(scores);
    if (!batch.retained.empty()) r.retained_min = *batch.retained.back().score;
    if (!batch.discarded.empty()) r.discarded_max = *batch.discarded.front().score;

    std::vector<Triplet> augmented = original;
    augmented.insert(augmented.end(), batch.retained.begin(), batch.retained.end());
    r.train_seed = derive_seed(cfg.seed, it);
    r.train_size = augmented.size();
    cir.train(augmented, r.train_seed);
    captioner = fit_captioner(augmented, ds, renders, captioner_cfg, r.train_seed);
    r.recall = cir.evaluate(validation, cfg.ks);
    r.captions = evaluate_captioner(captioner, validation, ds, renders);
    res.history.push_back(r);

    if (r.recall.average > best) {
      best = r.recall.average;
      res.best_iteration = it;
      res.best_cir = cir.checkpoint();
      res.best_captioner = captioner;
    }
    if (r.recall.average - prev < cfg.epsilon) {
      res.stop_reason = "converged";
      break;
    }
    prev = r.recall.average;
  }
  return res;
}

json selftrain_report(const ParadigmResult& res, const SelfTrainConfig& cfg, const std::string& cir_kind) {
  json mining = {{"strategy", strategy_name(cfg.mining.strategy)},
                 {"budget", cfg.mining.budget},
                 {"band_width", cfg.mining.band_width == BandWidth::kStd ? "std" : "variance"},
                 {"taxon_partners", cfg.mining.taxon_partners},
                 {"visual_neighbors", cfg.mining.visual_neighbors}};
  if (cfg.mining.band_mu) mining["band_mu"] = *cfg.mining.band_mu;
  if (cfg.mining.band_sigma) mining["band_sigma"] = *cfg.mining.band_sigma;

  json iters = json::array();
  for (const auto& r : res.history) {
    json j = {{"iteration", r.iteration},
              {"train_seed", r.train_seed},
              {"train_size", r.train_size},
              {"pairs_mined", r.pairs_mined},
              {"pseudo_generated", r.pseudo_generated},
              {"retained", r.retained},
              {"kappa", r.kappa},
              {"recall", report_to_json(r.recall)},
              {"captions", caption_metrics_json(r.captions)}};
    if (r.scores) j["scores"] = summary_json(*r.scores);
    if (r.retained_min) j["retained_min"] = *r.retained_min;
    if (r.discarded_max) j["discarded_max"] = *r.discarded_max;
    if (r.band) j["band"] = {{"mu", r.band->mu}, {"std", r.band->std}, {"variance", r.band->variance}};
    iters.push_back(std::move(j));
  }
  return {{"cir", cir_kind},
          {"config",
           {{"mining", mining},
            {"kappa", cfg.kappa},
            {"max_iters", cfg.max_iters},
            {"epsilon", cfg.epsilon},
            {"seed", cfg.seed},
            {"ks", cfg.ks}}},
          {"iterations", iters},
          {"best_iteration", res.best_iteration},
          {"stop_reason", res.stop_reason},
          {"best_cir_hash", hash_hex(res.best_cir.params.hash())},
          {"best_captioner_hash", hash_hex(res.best_captioner.hash())}};
}

}  // namespace limn
