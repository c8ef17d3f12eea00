#include <doctest.h>

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "limn/error.hpp"
#include "limn/synthio.hpp"
#include "support.hpp"

using namespace limn;
using namespace limn::synth;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("vocabulary is small and pad is id zero") {
  WorldSpec spec = default_world();
  Vocabulary v = build_vocabulary(spec);
  CHECK(v.id("<pad>") == 0);
  CHECK(v.size() >= 30);
  CHECK(v.size() <= 45);
  CHECK_THROWS_AS(v.id("purple"), NotFound);
  CHECK(v.decode(v.encode({"make", "it", "red"})) == std::vector<std::string>{"make", "it", "red"});
}

TEST_CASE("catalog generation") {
  WorldSpec spec = default_world();
  auto a = generate_catalog(500, spec, 7);
  auto b = generate_catalog(500, spec, 7);
  REQUIRE(a.size() == 500);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == static_cast<int>(i));
    CHECK(a[i].attributes == b[i].attributes);
    CHECK(a[i].title == b[i].title);
    CHECK(a[i].attributes.size() == 5);
    CHECK(a[i].title.size() >= 2);
    CHECK(a[i].taxon.size() == 2);
  }
  std::set<std::vector<int>> distinct;
  for (const auto& it : a) distinct.insert(it.attributes);
  CHECK(distinct.size() == 500);
  CHECK_THROWS_AS(generate_catalog(1, spec, 7), InvalidArgument);
}

TEST_CASE("attribute marginals are close to uniform") {
  WorldSpec spec = default_world();
  auto cat = generate_catalog(10000, spec, 3);
  for (std::size_t s = 0; s < spec.num_slots(); ++s) {
    std::map<int, int> counts;
    for (const auto& it : cat) ++counts[it.attributes[s]];
    const double expect = 1.0 / static_cast<double>(spec.slots[s].values.size());
    for (const auto& [v, c] : counts) CHECK(std::abs(c / 10000.0 - expect) <= 0.05);
    CHECK(counts.size() == spec.slots[s].values.size());
  }
}

TEST_CASE("rendering is pure and local") {
  WorldSpec spec = default_world(5, 99);
  auto cat = generate_catalog(50, spec, 1);
  Tensor a = render(cat[0], spec), b = render(cat[0], spec);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  CHECK(a.shape() == Shape{3, 8, 8});

  for (std::size_t s = 0; s < spec.num_slots(); ++s) {
    Item other = cat[0];
    other.attributes[s] = (other.attributes[s] + 1) % static_cast<int>(spec.slots[s].values.size());
    Tensor x = render(cat[0], spec, true), y = render(other, spec, true);
    std::set<std::pair<std::size_t, std::size_t>> region;
    for (auto cell : slot_region(spec, s)) region.insert(cell);
    bool changed_inside = false;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t col = 0; col < 8; ++col) {
          const std::size_t i = c * 64 + r * 8 + col;
          if (region.count({r, col}))
            changed_inside |= x[i] != y[i];
          else
            CHECK(x[i] == y[i]);
        }
    CHECK(changed_inside);
  }

  for (std::size_t i = 0; i < cat.size(); ++i)
    for (std::size_t j = i + 1; j < cat.size(); ++j) {
      Tensor x = render(cat[i], spec, true), y = render(cat[j], spec, true);
      bool differ = false;
      for (std::size_t k = 0; k < x.size() && !differ; ++k) differ = x[k] != y[k];
      CHECK(differ);
    }
}

TEST_CASE("caption grammar round trip") {
  WorldSpec spec = default_world();
  Vocabulary v = build_vocabulary(spec);
  Diff d = {{0, 2}, {3, 1}};
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 2; ++b) {
      auto cap = realize_caption(d, spec, v, {a, b});
      auto back = parse_caption(cap, spec, v);
      REQUIRE(back.has_value());
      CHECK(*back == d);
    }
  CHECK(v.decode(realize_caption(d, spec, v, {1, 0})) ==
        std::vector<std::string>{"make", "it", "green", "and", "use", "a", "crewneck", "collar"});
  CHECK(v.decode(realize_caption({}, spec, v)) == std::vector<std::string>{"no", "change"});
  CHECK(parse_caption(v.encode({"no", "change"}), spec, v)->empty());
  CHECK_FALSE(parse_caption(v.encode({"make", "it"}), spec, v).has_value());
  CHECK_FALSE(parse_caption(v.encode({"make", "it", "red", "blue"}), spec, v).has_value());
  CHECK_FALSE(parse_caption(v.encode({"make", "it", "red", "and", "make", "it", "blue"}), spec, v).has_value());
  CHECK_FALSE(parse_caption(v.encode({"use", "a", "red", "collar"}), spec, v).has_value());
  CHECK_FALSE(parse_caption({99}, spec, v).has_value());
}

TEST_CASE("triplets follow the grammar and the label-level world") {
  Dataset ds = generate_dataset({500, 2000, 5, 2, 0.05, 7});
  REQUIRE(ds.triplets.size() == 2000);
  std::set<std::pair<int, int>> pairs;
  for (const auto& t : ds.triplets) {
    CHECK(t.ref_id != t.tgt_id);
    CHECK(pairs.emplace(t.ref_id, t.tgt_id).second);
    auto diff = parse_caption(t.caption, ds.spec, ds.vocab);
    REQUIRE(diff.has_value());
    CHECK(diff->size() >= 1);
    CHECK(diff->size() <= 2);
    CHECK(apply_diff(ds.item(t.ref_id).attributes, *diff) == ds.item(t.tgt_id).attributes);
  }
  Split s = split_triplets(ds.triplets);
  CHECK(s.train.size() == 1400);
  CHECK(s.val.size() == 200);
  CHECK(s.test.size() == 400);

  Dataset one = generate_dataset({200, 300, 5, 1, 0.05, 7});
  for (const auto& t : one.triplets) CHECK(parse_caption(t.caption, one.spec, one.vocab)->size() == 1);
  CHECK_THROWS_AS(make_triplets(one.catalog, one.spec, one.vocab, 10, 0, 1), InvalidArgument);
  CHECK_THROWS_AS(make_triplets(one.catalog, one.spec, one.vocab, 10, 6, 1), InvalidArgument);
}

TEST_CASE("dataset files round trip byte for byte") {
  auto dir = limn::testing::scratch_dir("synth_a");
  auto dir2 = limn::testing::scratch_dir("synth_b");
  Dataset ds = generate_dataset({60, 80, 4, 2, 0.05, 11});
  ds.triplets[0].provenance = Provenance::kPseudo;
  ds.triplets[0].score = 0.1234567890123;
  save_dataset(ds, dir);
  Dataset back = load_dataset(dir);
  save_dataset(back, dir2);
  for (const char* f : {"items.jsonl", "triplets.jsonl", "vocab.json", "world.json"})
    CHECK(slurp(dir / f) == slurp(dir2 / f));
  CHECK(back.triplets[0].score == ds.triplets[0].score);
  CHECK(back.spec.num_slots() == 4);
  Tensor a = render(ds.catalog[3], ds.spec), b = render(back.catalog[3], back.spec);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  std::vector<Pair> pairs = {{1, 2, "tfidf_title", 0.5}, {3, 4, "taxonomy_visual", std::nullopt}};
  write_pairs(dir / "pairs.jsonl", pairs);
  auto pb = read_pairs(dir / "pairs.jsonl");
  write_pairs(dir2 / "pairs.jsonl", pb);
  CHECK(slurp(dir / "pairs.jsonl") == slurp(dir2 / "pairs.jsonl"));
  CHECK_FALSE(pb[1].stat.has_value());

  CHECK_THROWS_AS(load_dataset(dir / "nope"), IoError);
  std::ofstream(dir / "bad.jsonl") << "{\"ref_id\": 1\n";
  CHECK_THROWS_AS(read_triplets(dir / "bad.jsonl"), ParseError);
}

TEST_CASE("items serialize attributes by slot name") {
  WorldSpec spec = default_world(2);
  Item it{0, {1, 3}, {"blue", "floral"}, {"family0", "family0/floral"}};
  auto j = item_to_json(it, spec);
  CHECK(j["attributes"]["color"] == "blue");
  CHECK(j["attributes"]["pattern"] == "floral");
  CHECK(item_from_json(j, spec).attributes == it.attributes);
}
