#include <doctest.h>

#include <cmath>

#include "limn/captioner.hpp"
#include "limn/error.hpp"
#include "support.hpp"

using namespace limn;

namespace {

using Words = std::vector<std::string>;

const synth::Dataset& tiny_world() {
  static const synth::Dataset ds = synth::generate_dataset({60, 120, 3, 2, 0.05, 11});
  return ds;
}

CaptionerConfig tiny_config() {
  CaptionerConfig cfg;
  cfg.image.mid_channels = 4;
  cfg.image.last_channels = 6;
  cfg.hidden = 16;
  cfg.epochs = 2;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("bleu-1 worked values") {
  CHECK(bleu1(Words{"make", "it", "red"}, {Words{"make", "it", "red"}}) == 1.0);
  CHECK(std::abs(bleu1(Words{"red", "dress"}, {Words{"red", "long", "dress"}}) - std::exp(1.0 - 1.5)) <= 1e-12);
  CHECK(std::abs(bleu1(Words{"red", "dress"}, {Words{"red", "long", "dress"}}) - 0.606531) <= 1e-6);
  CHECK(bleu1(Words{"blue", "shirt"}, {Words{"red", "dress"}}) == 0.0);
  // Clipping: a repeated word earns credit at most as often as the reference has it.
  CHECK(std::abs(bleu1(Words{"red", "red", "red"}, {Words{"red", "dress", "x"}}) - 1.0 / 3.0) <= 1e-12);
  CHECK_THROWS_AS(bleu1(Words{}, {Words{"a"}}), InvalidArgument);
}

TEST_CASE("rouge-l worked values") {
  CHECK(rouge_l(Words{"a", "b", "c"}, Words{"a", "b", "c"}) == 1.0);
  CHECK(std::abs(rouge_l(Words{"a", "b", "c"}, Words{"a", "c", "b"}) - 2.0 / 3.0) <= 1e-12);
  CHECK(std::abs(rouge_l(Words{"a", "b", "c"}, Words{"a", "c", "b"}) - 0.666667) <= 1e-6);
  CHECK(rouge_l(Words{"a", "b"}, Words{"c", "d"}) == 0.0);
  CHECK_THROWS_AS(rouge_l(Words{}, Words{"a"}), InvalidArgument);
  CHECK_THROWS_AS(rouge_l(Words{"a"}, Words{}), InvalidArgument);
}

TEST_CASE("token-id metrics agree with the word versions") {
  CHECK(bleu1(std::vector<int>{4, 5}, {std::vector<int>{4, 9, 5}}) ==
        bleu1(Words{"red", "dress"}, {Words{"red", "long", "dress"}}));
  CHECK(rouge_l(std::vector<int>{1, 2, 3}, std::vector<int>{1, 3, 2}) ==
        rouge_l(Words{"a", "b", "c"}, Words{"a", "c", "b"}));
}

TEST_CASE("captioner training is deterministic and rejects empty input") {
  const auto& ds = tiny_world();
  RenderCache rc(ds);
  CaptionerModel a = train_captioner(ds.triplets, ds, rc, tiny_config());
  CaptionerModel b = train_captioner(ds.triplets, ds, rc, tiny_config());
  CHECK(a.hash() == b.hash());
  CHECK(a.loss_curve == b.loss_curve);
  CHECK(a.skipped == 0);
  CHECK_THROWS_AS(train_captioner({}, ds, rc, tiny_config()), InvalidArgument);
}

TEST_CASE("unparseable captions are skipped and counted") {
  const auto& ds = tiny_world();
  RenderCache rc(ds);
  auto triplets = ds.triplets;
  triplets[0].caption = {ds.vocab.id("and")};
  triplets[1].caption = {ds.vocab.id("make")};
  CaptionerModel m = train_captioner(triplets, ds, rc, tiny_config());
  CHECK(m.skipped == 2);
}

TEST_CASE("generated captions: sentinel, purity and grammar") {
  const auto& ds = tiny_world();
  RenderCache rc(ds);
  CaptionerConfig cfg = tiny_config();
  cfg.noise = 0.5;
  CaptionerModel m = train_captioner(ds.triplets, ds, rc, cfg);
  const auto& a = ds.item(3);
  const auto sentinel = synth::realize_caption({}, ds.spec, ds.vocab);
  CHECK(generate_caption(m, a, a, ds, rc) == sentinel);
  for (std::size_t i = 0; i < ds.catalog.size(); ++i) {
    const auto& r = ds.catalog[i];
    const auto& t = ds.catalog[(i * 7 + 1) % ds.catalog.size()];
    auto c1 = generate_caption(m, r, t, ds, rc);
    CHECK(c1 == generate_caption(m, r, t, ds, rc));
    auto parsed = synth::parse_caption(c1, ds.spec, ds.vocab);
    REQUIRE(parsed.has_value());
    for (const auto& [slot, v] : *parsed) CHECK(r.attributes[slot] != v);
  }
}

TEST_CASE("captioner checkpoints round trip") {
  const auto& ds = tiny_world();
  RenderCache rc(ds);
  CaptionerModel m = train_captioner(ds.triplets, ds, rc, tiny_config());
  auto dir = testing::scratch_dir("captioner_ckpt");
  save_checkpoint(dir / "captioner.json", to_checkpoint(m));
  CaptionerModel back = captioner_from_checkpoint(load_checkpoint(dir / "captioner.json"));
  CHECK(back.hash() == m.hash());
  for (int i = 0; i < 10; ++i)
    CHECK(generate_caption(back, ds.item(i), ds.item(i + 10), ds, rc) ==
          generate_caption(m, ds.item(i), ds.item(i + 10), ds, rc));
}

TEST_CASE("a trained captioner names single-slot changes on held-out pairs") {
  const synth::Dataset ds = synth::generate_dataset({});
  RenderCache rc(ds);
  auto split = synth::split_triplets(ds.triplets);
  CaptionerConfig cfg;
  CaptionerModel m = train_captioner(split.train, ds, rc, cfg);
  CaptionMetrics held = evaluate_captioner(m, split.test, ds, rc);
  CHECK(held.slot_accuracy > 0.9);
  CHECK(held.bleu1 >= 0.0);
  CHECK(held.bleu1 <= 1.0);
  CHECK(held.rouge_l <= 1.0);

  std::size_t single = 0, named = 0;
  for (const auto& t : split.test) {
    auto diff = synth::attribute_diff(ds.item(t.ref_id).attributes, ds.item(t.tgt_id).attributes);
    if (diff.size() != 1) continue;
    ++single;
    auto got = synth::parse_caption(generate_caption(m, ds.item(t.ref_id), ds.item(t.tgt_id), ds, rc), ds.spec,
                                    ds.vocab);
    named += got && *got == diff;
  }
  REQUIRE(single > 50);
  CHECK(static_cast<double>(named) / static_cast<double>(single) > 0.9);
}
