#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "limn/error.hpp"
#include "limn/trainer.hpp"
#include "support.hpp"

using namespace limn;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.model.dim = 8;
  cfg.model.tokens = 3;
  cfg.model.image.mid_channels = 4;
  cfg.model.image.last_channels = 6;
  cfg.model.text.embed_dim = 6;
  cfg.model.text.hidden_dim = 6;
  cfg.model.transformer.heads = 2;
  cfg.model.transformer.ff_dim = 16;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.lr = 3e-3;
  cfg.loss.temperature = 0.1;
  cfg.seed = 5;
  return cfg;
}

const synth::Dataset& tiny_world() {
  static const synth::Dataset ds = synth::generate_dataset({60, 120, 3, 2, 0.05, 11});
  return ds;
}

// Brute-force rank of the target: count strictly better scores and equal
// scores with a smaller id.
std::size_t brute_rank(const std::vector<double>& s, const std::vector<int>& ids, std::size_t target) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i] > s[target] || (s[i] == s[target] && ids[i] < ids[target])) ++r;
  return r;
}

}  // namespace

TEST_CASE("rank of a hand-built gallery") {
  const std::vector<double> s = {0.9, 0.2, 0.8, 0.1};
  const std::vector<int> ids = {0, 1, 2, 3};
  CHECK(rank_of(s, ids, 2) == 2);
  RecallReport r = recall_from_ranks({2}, 4, {1, 2, 4});
  CHECK(r.at(1) == 0.0);
  CHECK(r.at(2) == 1.0);
  CHECK(r.at(4) == 1.0);
}

TEST_CASE("ties are broken by ascending gallery id") {
  const std::vector<double> s = {0.5, 0.5, 0.5};
  const std::vector<int> ids = {5, 3, 9};
  CHECK(rank_of(s, ids, 1) == 1);
  CHECK(rank_of(s, ids, 0) == 2);
  CHECK(rank_of(s, ids, 2) == 3);
}

TEST_CASE("rank matches a brute-force oracle on random galleries") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 50);
    std::vector<double> s(n);
    std::vector<int> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    shuffle(ids.begin(), ids.end(), rng);
    // Coarse values force plenty of ties.
    for (auto& v : s) v = static_cast<double>(uniform_index(rng, 5));
    const std::size_t t = uniform_index(rng, n);
    CHECK(rank_of(s, ids, t) == brute_rank(s, ids, t));
  }
}

TEST_CASE("recall reports are monotone and reach one at the gallery size") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t g = 1 + uniform_index(rng, 100);
    std::vector<std::size_t> ranks(1 + uniform_index(rng, 30));
    for (auto& r : ranks) r = 1 + uniform_index(rng, g);
    std::vector<std::size_t> ks = {1, 2, 5, 10, g};
    RecallReport rep = recall_from_ranks(ranks, g, ks);
    for (std::size_t i = 0; i < rep.recall.size(); ++i) {
      CHECK(rep.recall[i] >= 0.0);
      CHECK(rep.recall[i] <= 1.0);
      if (i > 0 && ks[i] >= ks[i - 1]) CHECK(rep.recall[i] >= rep.recall[i - 1]);
    }
    CHECK(rep.at(g) == 1.0);
  }
}

TEST_CASE("evaluate agrees with brute-force re-ranking") {
  const auto& ds = tiny_world();
  RenderCache rc(ds);
  TrainConfig cfg = tiny_config();
  TrainedModel m = init_model(cfg, ds.vocab.size());
  std::vector<synth::Triplet> queries(ds.triplets.begin(), ds.triplets.begin() + 30);
  RecallReport r = evaluate(m, queries, ds, rc, {1, 5, 60});

  std::vector<TokenMatrix> gallery;
  std::vector<int> ids;
  for (const auto& it : ds.catalog) {
    gallery.push_back(embed_item(m, it.id, rc));
    ids.push_back(it.id);
  }
  for (std::size_t q = 0; q < queries.size(); ++q) {
    TokenMatrix e = embed_query_of(m, queries[q], rc);
    std::vector<double> s;
    for (const auto& x : gallery) s.push_back(match_score(e, x));
    CHECK(r.ranks[q] == brute_rank(s, ids, static_cast<std::size_t>(queries[q].tgt_id)));
  }
  CHECK(r.at(60) == 1.0);
}

TEST_CASE("missing ground truth names the query") {
  const auto& ds = tiny_world();
  RenderCache rc(ds);
  TrainedModel m = init_model(tiny_config(), ds.vocab.size());
  std::vector<synth::Triplet> queries(ds.triplets.begin(), ds.triplets.begin() + 3);
  std::vector<int> gallery;
  for (const auto& it : ds.catalog)
    if (it.id != queries[1].tgt_id) gallery.push_back(it.id);
  try {
    evaluate_gallery(m, queries, gallery, rc, {1});
    FAIL("expected NotFound");
  } catch (const NotFound& e) {
    CHECK(std::string(e.what()).find("query 1") != std::string::npos);
  }
}

TEST_CASE("training is deterministic under a seed") {
  const auto& ds = tiny_world();
  RenderCache rc(ds);
  TrainConfig cfg = tiny_config();
  TrainedModel a = train(ds.triplets, ds, rc, cfg);
  TrainedModel b = train(ds.triplets, ds, rc, cfg);
  REQUIRE(a.curve.size() == 2);
  for (std::size_t i = 0; i < a.curve.size(); ++i) CHECK(a.curve[i].loss == b.curve[i].loss);
  CHECK(a.initial_loss == b.initial_loss);
  CHECK(a.hash() == b.hash());
  cfg.seed = 6;
  CHECK(train(ds.triplets, ds, rc, cfg).hash() != a.hash());
}

TEST_CASE("scores are bounded by U and repeatable") {
  const auto& ds = tiny_world();
  RenderCache rc(ds);
  TrainedModel m = init_model(tiny_config(), ds.vocab.size());
  for (std::size_t i = 0; i < 20; ++i) {
    const double s = score_triplet(m, ds.triplets[i], rc);
    CHECK(std::abs(s) <= 3.0 + 1e-12);
    CHECK(score_triplet(m, ds.triplets[i], rc) == s);
  }
}

TEST_CASE("one_factor forces a single matching token") {
  TrainConfig cfg = tiny_config();
  cfg.ablation.one_factor = true;
  CHECK(cfg.resolved().model.tokens == 1);
  const auto& ds = tiny_world();
  TrainedModel m = init_model(cfg, ds.vocab.size());
  CHECK(m.params.get("tokens").cols() == 1);
  CHECK(m.config.model.tokens == 1);
}

TEST_CASE("avepool changes only the scoring rule") {
  const auto& ds = tiny_world();
  RenderCache rc(ds);
  TrainConfig cfg = tiny_config();
  TrainedModel a = init_model(cfg, ds.vocab.size());
  cfg.ablation.avepool = true;
  TrainedModel b = init_model(cfg, ds.vocab.size());
  CHECK(b.config.model.score_rule == ScoreRule::kAveragePool);
  CHECK(a.hash() == b.hash());
  TokenMatrix ea = embed_item(a, 4, rc), eb = embed_item(b, 4, rc);
  for (std::size_t i = 0; i < ea.normalized.size(); ++i) CHECK(ea.normalized[i] == eb.normalized[i]);
}

TEST_CASE("a diverging run aborts with a training error") {
  const auto& ds = tiny_world();
  RenderCache rc(ds);
  TrainConfig cfg = tiny_config();
  cfg.lr = 1e300;
  cfg.epochs = 3;
  CHECK_THROWS_AS(train(ds.triplets, ds, rc, cfg), TrainingError);
}

TEST_CASE("empty training set and bad configs are rejected") {
  const auto& ds = tiny_world();
  RenderCache rc(ds);
  CHECK_THROWS_AS(train({}, ds, rc, tiny_config()), InvalidArgument);
  TrainConfig cfg = tiny_config();
  cfg.lr = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = tiny_config();
  cfg.ks = {};
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("first epoch lowers the loss on the default world") {
  const synth::Dataset ds = synth::generate_dataset({});
  RenderCache rc(ds);
  TrainConfig cfg;
  cfg.loss.temperature = 0.1;
  cfg.lr = 3e-3;
  cfg.epochs = 1;
  auto split = synth::split_triplets(ds.triplets);
  TrainedModel m = train(split.train, ds, rc, cfg);
  CHECK(m.curve.front().loss < m.initial_loss);
}

TEST_CASE("checkpoints round trip through files") {
  const auto& ds = tiny_world();
  RenderCache rc(ds);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  TrainedModel m = train(ds.triplets, ds, rc, cfg);
  auto dir = testing::scratch_dir("trainer_ckpt");
  save_checkpoint(dir / "model.json", to_checkpoint(m));
  TrainedModel back = from_checkpoint(load_checkpoint(dir / "model.json"));
  CHECK(back.hash() == m.hash());
  CHECK(back.initial_loss == m.initial_loss);
  std::vector<synth::Triplet> q(ds.triplets.begin(), ds.triplets.begin() + 10);
  CHECK(evaluate(back, q, ds, rc, {1, 10}).ranks == evaluate(m, q, ds, rc, {1, 10}).ranks);
}

TEST_CASE("metrics json and csv agree") {
  const auto& ds = tiny_world();
  RenderCache rc(ds);
  TrainConfig cfg = tiny_config();
  TrainOptions opts;
  opts.validation.assign(ds.triplets.begin(), ds.triplets.begin() + 10);
  TrainedModel m = train(ds.triplets, ds, rc, cfg, opts);
  RecallReport test = evaluate(m, opts.validation, ds, rc, cfg.ks);
  nlohmann::json j = metrics_json(m, test);
  CHECK(j.at("epochs").size() == 2);
  CHECK(j.at("test").at("recall").at("R@10").get<double>() == test.at(10));
  const std::string csv = metrics_csv(m, test);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(csv.rfind("test,", std::string::npos) != std::string::npos);
}
