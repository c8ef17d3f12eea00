#include "limn/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "limn/error.hpp"
#include "limn/rng.hpp"

namespace limn {

using nlohmann::json;
using synth::Triplet;

TrainConfig TrainConfig::resolved() const {
  TrainConfig c = *this;
  if (c.ablation.one_factor) c.model.tokens = 1;
  if (c.ablation.avepool) c.model.score_rule = ScoreRule::kAveragePool;
  if (c.ablation.no_ortho) c.loss.lambda = 0.0;
  if (c.ablation.no_global) c.model.granularity.global = false;
  if (c.ablation.no_local) c.model.granularity.local = false;
  c.loss.score_rule = c.model.score_rule;
  c.model.normalize();
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("epochs must be at least 1");
  if (batch_size < 1) throw InvalidArgument("batch size must be at least 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidArgument("learning rate must be positive");
  if (!(decay_factor > 0.0)) throw InvalidArgument("decay factor must be positive");
  if (ablation.no_global && ablation.no_local)
    throw InvalidArgument("ablations no_global and no_local cannot be combined");
  if (ks.empty()) throw InvalidArgument("at least one recall cutoff is required");
  for (auto k : ks)
    if (k < 1) throw InvalidArgument("recall cutoffs must be >= 1");
  TrainConfig r = resolved();
  r.model.validate();
  r.loss.validate();
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"model", c.model},
       {"temperature", c.loss.temperature},
       {"lambda", c.loss.lambda},
       {"ablation",
        {{"one_factor", c.ablation.one_factor},
         {"avepool", c.ablation.avepool},
         {"no_ortho", c.ablation.no_ortho},
         {"no_global", c.ablation.no_global},
         {"no_local", c.ablation.no_local}}},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"decay_epoch", c.decay_epoch},
       {"decay_factor", c.decay_factor},
       {"seed", c.seed},
       {"ks", c.ks}};
}

void from_json(const json& j, TrainConfig& c) {
  j.at("model").get_to(c.model);
  j.at("temperature").get_to(c.loss.temperature);
  j.at("lambda").get_to(c.loss.lambda);
  const json& a = j.at("ablation");
  a.at("one_factor").get_to(c.ablation.one_factor);
  a.at("avepool").get_to(c.ablation.avepool);
  a.at("no_ortho").get_to(c.ablation.no_ortho);
  a.at("no_global").get_to(c.ablation.no_global);
  a.at("no_local").get_to(c.ablation.no_local);
  j.at("epochs").get_to(c.epochs);
  j.at("batch_size").get_to(c.batch_size);
  j.at("lr").get_to(c.lr);
  j.at("decay_epoch").get_to(c.decay_epoch);
  j.at("decay_factor").get_to(c.decay_factor);
  j.at("seed").get_to(c.seed);
  j.at("ks").get_to(c.ks);
  c.loss.score_rule = c.model.score_rule;
}

// ---- recall ----

double RecallReport::at(std::size_t k) const {
  for (std::size_t i = 0; i < ks.size(); ++i)
    if (ks[i] == k) return recall[i];
  throw NotFound("no recall recorded at k=" + std::to_string(k));
}

json report_to_json(const RecallReport& r) {
  json recall = json::object();
  for (std::size_t i = 0; i < r.ks.size(); ++i) recall["R@" + std::to_string(r.ks[i])] = r.recall[i];
  return {{"ks", r.ks}, {"recall", recall}, {"gallery_size", r.gallery_size}, {"queries", r.queries},
          {"average", r.average}};
}

RecallReport report_from_json(const json& j) {
  RecallReport r;
  j.at("ks").get_to(r.ks);
  for (auto k : r.ks) r.recall.push_back(j.at("recall").at("R@" + std::to_string(k)).get<double>());
  j.at("gallery_size").get_to(r.gallery_size);
  j.at("queries").get_to(r.queries);
  j.at("average").get_to(r.average);
  return r;
}

std::size_t rank_of(std::span<const double> scores, std::span<const int> ids, std::size_t target) {
  if (scores.size() != ids.size()) throw DimensionError("rank_of: scores and ids differ in length");
  if (target >= scores.size()) throw InvalidArgument("rank_of: target position out of range");
  const double st = scores[target];
  std::size_t ahead = 0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (j == target) continue;
    if (scores[j] > st || (scores[j] == st && ids[j] < ids[target])) ++ahead;
  }
  return ahead + 1;
}

RecallReport recall_from_ranks(std::vector<std::size_t> ranks, std::size_t gallery_size, std::vector<std::size_t> ks) {
  if (ranks.empty()) throw InvalidArgument("no queries to evaluate");
  RecallReport r;
  r.ks = std::move(ks);
  r.gallery_size = gallery_size;
  r.queries = ranks.size();
  for (auto k : r.ks) {
    const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t rank) { return rank <= k; });
    r.recall.push_back(static_cast<double>(hits) / static_cast<double>(ranks.size()));
  }
  r.average = std::accumulate(r.recall.begin(), r.recall.end(), 0.0) / static_cast<double>(r.recall.size());
  r.ranks = std::move(ranks);
  return r;
}

// ---- model plumbing ----

RenderCache::RenderCache(const synth::Dataset& ds) {
  images_.reserve(ds.catalog.size());
  for (const auto& item : ds.catalog) images_.push_back(synth::render(item, ds.spec));
}

const Tensor& RenderCache::image(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= images_.size())
    throw NotFound("item " + std::to_string(id) + " is not in the catalog");
  return images_[static_cast<std::size_t>(id)];
}

TrainedModel init_model(const TrainConfig& cfg, std::size_t vocab_size) {
  TrainedModel m;
  m.config = cfg.resolved();
  m.config.model.text.vocab_size = vocab_size;
  m.config.validate();
  m.params = init_limn(m.config.model, derive_seed(cfg.seed, 0x696e6974ull));
  return m;
}

namespace {

TokenMatrix query_on(Graph& g, const ParamStore& ps, const LimnConfig& cfg, const Triplet& t,
                     const RenderCache& renders) {
  return embed_query(g, ps, cfg, renders.image(t.ref_id), t.caption);
}

TokenMatrix target_on(Graph& g, const ParamStore& ps, const LimnConfig& cfg, int id, const RenderCache& renders) {
  return embed_target(g, ps, cfg, renders.image(id));
}

LossParts batch_loss(Graph& g, const ParamStore& ps, const TrainConfig& cfg, const std::vector<Triplet>& triplets,
                     std::span<const std::size_t> batch, const RenderCache& renders) {
  std::vector<TokenMatrix> qs, ts;
  qs.reserve(batch.size());
  ts.reserve(batch.size());
  for (std::size_t i : batch) {
    qs.push_back(query_on(g, ps, cfg.model, triplets[i], renders));
    ts.push_back(target_on(g, ps, cfg.model, triplets[i].tgt_id, renders));
  }
  return total_loss(g, qs, ts, cfg.loss);
}

}  // namespace

TrainedModel train(const std::vector<Triplet>& triplets, const synth::Dataset& ds, const RenderCache& renders,
                   const TrainConfig& cfg, const TrainOptions& opts) {
  if (triplets.empty()) throw InvalidArgument("cannot train on an empty triplet set");
  cfg.validate();
  TrainedModel m = init_model(cfg, ds.vocab.size());
  const TrainConfig& rc = m.config;
  for (const auto& t : triplets) {
    ds.item(t.ref_id);
    ds.item(t.tgt_id);
  }

  Adam adam(AdamConfig{rc.lr});
  std::vector<std::size_t> order(triplets.size());
  const std::size_t bs = rc.batch_size;
  GalleryCache cache;

  for (std::size_t epoch = 0; epoch < rc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(rc.seed, 0x65706f6368ull + epoch));
    shuffle(order.begin(), order.end(), rng);
    const double lr = (rc.decay_epoch > 0 && epoch >= rc.decay_epoch) ? rc.lr * rc.decay_factor : rc.lr;
    adam.set_lr(lr);

    if (epoch == 0) {
      double sum = 0.0;
      std::size_t n = 0;
      for (std::size_t b = 0; b < order.size(); b += bs) {
        Graph g(false);
        const std::size_t e = std::min(order.size(), b + bs);
        sum += batch_loss(g, m.params, rc, triplets, std::span(order).subspan(b, e - b), renders).total.item() *
               static_cast<double>(e - b);
        n += e - b;
      }
      m.initial_loss = sum / static_cast<double>(n);
    }

    EpochStats st;
    st.epoch = epoch + 1;
    st.lr = lr;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      const std::size_t e = std::min(order.size(), b + bs);
      m.params.zero_grad();
      Graph g;
      LossParts parts = batch_loss(g, m.params, rc, triplets, std::span(order).subspan(b, e - b), renders);
      const double loss = parts.total.item();
      if (!std::isfinite(loss))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                            std::to_string(b / bs + 1) + " (ranking " + std::to_string(parts.ranking) + ", ortho " +
                            std::to_string(parts.ortho) + ")");
      g.backward(parts.total);
      adam.step(m.params);
      const double w = static_cast<double>(e - b);
      st.loss += loss * w;
      st.ranking += parts.ranking * w;
      st.ortho += parts.ortho * w;
      seen += e - b;
    }
    st.loss /= static_cast<double>(seen);
    st.ranking /= static_cast<double>(seen);
    st.ortho /= static_cast<double>(seen);
    if (!opts.validation.empty()) st.validation = evaluate(m, opts.validation, ds, renders, rc.ks, &cache);
    m.curve.push_back(st);
    if (opts.on_epoch) opts.on_epoch(st);
  }
  m.params.zero_grad();
  m.optimizer = adam.state();
  return m;
}

TokenMatrix embed_item(const TrainedModel& model, int id, const RenderCache& renders) {
  Graph g(false);
  return target_on(g, model.params, model.config.model, id, renders);
}

TokenMatrix embed_query_of(const TrainedModel& model, const Triplet& t, const RenderCache& renders) {
  Graph g(false);
  return query_on(g, model.params, model.config.model, t, renders);
}

RecallReport evaluate_gallery(const TrainedModel& model, const std::vector<Triplet>& queries,
                              const std::vector<int>& gallery, const RenderCache& renders,
                              const std::vector<std::size_t>& ks, GalleryCache* cache) {
  if (queries.empty()) throw InvalidArgument("no queries to evaluate");
  if (gallery.empty()) throw InvalidArgument("empty gallery");
  std::vector<std::size_t> position(renders.size(), gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    renders.image(gallery[i]);
    position[static_cast<std::size_t>(gallery[i])] = i;
  }
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const int tgt = queries[q].tgt_id;
    if (tgt < 0 || static_cast<std::size_t>(tgt) >= position.size() || position[static_cast<std::size_t>(tgt)] == gallery.size())
      throw NotFound("query " + std::to_string(q) + " (ref " + std::to_string(queries[q].ref_id) + ") has target " +
                     std::to_string(tgt) + " outside the gallery");
  }

  GalleryCache local;
  GalleryCache& gc = cache ? *cache : local;
  const std::uint64_t h = model.hash();
  if (gc.embeddings.empty() || gc.param_hash != h || gc.ids != gallery) {
    gc.param_hash = h;
    gc.ids = gallery;
    gc.embeddings.clear();
    gc.embeddings.reserve(gallery.size());
    for (int id : gallery) gc.embeddings.push_back(embed_item(model, id, renders));
  }

  const ScoreRule rule = model.config.model.score_rule;
  std::vector<std::size_t> ranks;
  ranks.reserve(queries.size());
  std::vector<double> scores(gallery.size());
  for (const auto& t : queries) {
    TokenMatrix q = embed_query_of(model, t, renders);
    for (std::size_t i = 0; i < gallery.size(); ++i) scores[i] = score(q, gc.embeddings[i], rule);
    ranks.push_back(rank_of(scores, gallery, position[static_cast<std::size_t>(t.tgt_id)]));
  }
  return recall_from_ranks(std::move(ranks), gallery.size(), ks);
}

RecallReport evaluate(const TrainedModel& model, const std::vector<Triplet>& queries, const synth::Dataset& ds,
                      const RenderCache& renders, const std::vector<std::size_t>& ks, GalleryCache* cache) {
  std::vector<int> gallery;
  gallery.reserve(ds.catalog.size());
  for (const auto& it : ds.catalog) gallery.push_back(it.id);
  return evaluate_gallery(model, queries, gallery, renders, ks, cache);
}

double score_triplet(const TrainedModel& model, const Triplet& t, const RenderCache& renders) {
  TokenMatrix q = embed_query_of(model, t, renders);
  TokenMatrix x = embed_item(model, t.tgt_id, renders);
  return score(q, x, model.config.model.score_rule);
}

// ---- persistence ----

namespace {

json stats_to_json(const EpochStats& s) {
  json j = {{"epoch", s.epoch}, {"loss", s.loss}, {"ranking", s.ranking}, {"ortho", s.ortho}, {"lr", s.lr}};
  if (s.validation) j["validation"] = report_to_json(*s.validation);
  return j;
}

EpochStats stats_from_json(const json& j) {
  EpochStats s;
  j.at("epoch").get_to(s.epoch);
  j.at("loss").get_to(s.loss);
  j.at("ranking").get_to(s.ranking);
  j.at("ortho").get_to(s.ortho);
  j.at("lr").get_to(s.lr);
  if (j.contains("validation")) s.validation = report_from_json(j.at("validation"));
  return s;
}

json curve_json(const TrainedModel& m) {
  json curve = json::array();
  for (const auto& s : m.curve) curve.push_back(stats_to_json(s));
  return curve;
}

}  // namespace

Checkpoint to_checkpoint(const TrainedModel& m) {
  Checkpoint ck;
  ck.config = m.config;
  ck.params = m.params.clone();
  ck.optimizer = m.optimizer;
  ck.extra = {{"kind", "limn"}, {"initial_loss", m.initial_loss}, {"curve", curve_json(m)},
              {"param_hash", hash_hex(m.hash())}};
  return ck;
}

TrainedModel from_checkpoint(const Checkpoint& ck) {
  TrainedModel m;
  try {
    m.config = ck.config.get<TrainConfig>();
    if (ck.extra.contains("initial_loss")) ck.extra.at("initial_loss").get_to(m.initial_loss);
    if (ck.extra.contains("curve"))
      for (const auto& s : ck.extra.at("curve")) m.curve.push_back(stats_from_json(s));
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint is not a retrieval model: ") + e.what());
  }
  m.config.validate();
  TrainedModel shape = init_model(m.config, m.config.model.text.vocab_size);
  for (const auto& [name, t] : shape.params.entries()) {
    if (!ck.params.contains(name)) throw ParseError("checkpoint is missing tensor " + name);
    if (ck.params.get(name).shape() != t.shape())
      throw ParseError("checkpoint tensor " + name + " has shape " + shape_str(ck.params.get(name).shape()) +
                       ", expected " + shape_str(t.shape()));
  }
  if (ck.params.size() != shape.params.size()) throw ParseError("checkpoint has unexpected extra tensors");
  m.params = ck.params.clone();
  m.optimizer = ck.optimizer;
  return m;
}

json metrics_json(const TrainedModel& m, const std::optional<RecallReport>& test) {
  json j = {{"config", m.config}, {"param_hash", hash_hex(m.hash())}, {"initial_loss", m.initial_loss}};
  json losses = json::array();
  for (const auto& s : m.curve) losses.push_back(s.loss);
  j["loss_curve"] = losses;
  j["epochs"] = curve_json(m);
  if (test) j["test"] = report_to_json(*test);
  return j;
}

namespace {
std::string num(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}
}  // namespace

std::string metrics_csv(const TrainedModel& m, const std::optional<RecallReport>& test) {
  std::ostringstream os;
  os << "row,loss,ranking,ortho,lr";
  for (auto k : m.config.ks) os << ",R@" << k;
  os << ",average\n";
  auto recall_cells = [&](const std::optional<RecallReport>& r) {
    for (std::size_t i = 0; i < m.config.ks.size(); ++i) os << "," << (r ? num(r->at(m.config.ks[i])) : "");
    os << "," << (r ? num(r->average) : "") << "\n";
  };
  for (const auto& s : m.curve) {
    os << s.epoch << "," << num(s.loss) << "," << num(s.ranking) << "," << num(s.ortho) << "," << num(s.lr);
    recall_cells(s.validation);
  }
  if (test) {
    os << "test,,,,";
    recall_cells(test);
  }
  return os.str();
}

}  // namespace limn
