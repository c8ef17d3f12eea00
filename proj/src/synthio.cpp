#include "limn/synthio.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "limn/error.hpp"
#include "limn/rng.hpp"

namespace limn::synth {

using nlohmann::json;

namespace {

const std::string kValue = "{v}";
const std::string kAnd = "and";
const std::vector<std::string> kNoChange = {"no", "change"};

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

SlotSpec slot(std::string name, std::vector<std::string> values, const std::string& t0, const std::string& t1) {
  return SlotSpec{std::move(name), std::move(values), {words(t0), words(t1)}};
}

std::vector<std::string> fill(const std::vector<std::string>& tmpl, const std::string& value) {
  std::vector<std::string> out = tmpl;
  for (auto& w : out)
    if (w == kValue) w = value;
  return out;
}

std::size_t combos(const WorldSpec& spec) {
  std::size_t n = 1;
  for (const auto& s : spec.slots) n *= s.values.size();
  return n;
}

// Signature seeds are tagged by (slot, value) so adding slots never changes
// existing signatures.
std::uint64_t signature_tag(std::size_t slot, std::size_t value) { return 0x5157000000ull + slot * 1000 + value; }

}  // namespace

WorldSpec default_world(std::size_t n_slots, std::uint64_t render_seed) {
  std::vector<SlotSpec> all = {
      slot("color", {"red", "blue", "green", "black", "white", "yellow", "pink", "grey"}, "change the color to {v}",
           "make it {v}"),
      slot("pattern", {"plain", "striped", "dotted", "floral"}, "make the pattern {v}", "switch to a {v} pattern"),
      slot("sleeve", {"sleeveless", "shortsleeve", "longsleeve"}, "make the sleeves {v}", "change to {v} sleeves"),
      slot("collar", {"vneck", "crewneck", "turtleneck"}, "use a {v} collar", "change the collar to {v}"),
      slot("length", {"mini", "midi", "maxi"}, "make the length {v}", "make it {v} length"),
  };
  if (n_slots < 1 || n_slots > all.size())
    throw InvalidArgument("slot count must be in [1, " + std::to_string(all.size()) + "], got " +
                          std::to_string(n_slots));
  WorldSpec spec;
  spec.slots.assign(all.begin(), all.begin() + static_cast<long>(n_slots));
  spec.render_seed = render_seed;
  return spec;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw InvalidArgument("duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) throw NotFound("token '" + token + "' is not in the vocabulary");
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw NotFound("token id " + std::to_string(id) + " is out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& ws) const {
  std::vector<int> out;
  out.reserve(ws.size());
  for (const auto& w : ws) out.push_back(id(w));
  return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

Vocabulary build_vocabulary(const WorldSpec& spec) {
  std::vector<std::string> tokens = {"<pad>", kAnd};
  tokens.insert(tokens.end(), kNoChange.begin(), kNoChange.end());
  std::set<std::string> seen(tokens.begin(), tokens.end());
  auto add = [&](const std::string& w) {
    if (w != kValue && seen.insert(w).second) tokens.push_back(w);
  };
  for (const auto& s : spec.slots) {
    for (const auto& t : s.templates)
      for (const auto& w : t) add(w);
    for (const auto& v : s.values) add(v);
  }
  return Vocabulary(std::move(tokens));
}

std::vector<Item> generate_catalog(std::size_t n_items, const WorldSpec& spec, std::uint64_t seed) {
  if (n_items < 2) throw InvalidArgument("a catalog needs at least 2 items");
  if (spec.slots.empty()) throw InvalidArgument("world has no slots");
  Rng rng(seed);
  // While the attribute space can hold every item, combinations are kept
  // distinct so that no two catalog items are the same garment.
  const bool distinct = n_items <= combos(spec);
  std::set<std::vector<int>> used;
  std::vector<Item> catalog;
  catalog.reserve(n_items);
  while (catalog.size() < n_items) {
    std::vector<int> attrs(spec.num_slots());
    for (std::size_t s = 0; s < attrs.size(); ++s)
      attrs[s] = static_cast<int>(uniform_index(rng, spec.slots[s].values.size()));
    if (distinct && !used.insert(attrs).second) continue;

    Item item;
    item.id = static_cast<int>(catalog.size());
    item.attributes = attrs;
    std::vector<std::size_t> order(spec.num_slots());
    for (std::size_t s = 0; s < order.size(); ++s) order[s] = s;
    shuffle(order.begin(), order.end(), rng);
    const std::size_t lo = std::min<std::size_t>(2, order.size());
    const std::size_t take = lo + uniform_index(rng, order.size() - lo + 1);
    order.resize(take);
    std::sort(order.begin(), order.end());
    for (std::size_t s : order) item.title.push_back(spec.slots[s].values[static_cast<std::size_t>(attrs[s])]);

    const std::size_t n0 = spec.slots[0].values.size();
    const std::string family = "family" + std::to_string(static_cast<std::size_t>(attrs[0]) * 2 / n0);
    std::string genus = family;
    if (spec.num_slots() > 1) genus += "/" + spec.slots[1].values[static_cast<std::size_t>(attrs[1])];
    item.taxon = {family, genus};
    catalog.push_back(std::move(item));
  }
  return catalog;
}

std::vector<std::pair<std::size_t, std::size_t>> slot_region(const WorldSpec& spec, std::size_t slot) {
  // The grid is cut into blocks of 2 rows x (W/2) columns, read row-major.
  const std::size_t bw = std::max<std::size_t>(1, spec.width / 2);
  const std::size_t per_row = spec.width / bw;
  const std::size_t r0 = (slot / per_row) * 2;
  const std::size_t c0 = (slot % per_row) * bw;
  if (r0 + 2 > spec.height) throw InvalidArgument("grid too small for slot " + std::to_string(slot));
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  for (std::size_t r = r0; r < r0 + 2; ++r)
    for (std::size_t c = c0; c < c0 + bw; ++c) cells.emplace_back(r, c);
  return cells;
}

Tensor render(const Item& item, const WorldSpec& spec, bool noise_free) {
  if (item.attributes.size() != spec.num_slots())
    throw DimensionError("item " + std::to_string(item.id) + " has " + std::to_string(item.attributes.size()) +
                         " attributes, world has " + std::to_string(spec.num_slots()) + " slots");
  const std::size_t hw = spec.height * spec.width;
  Tensor img = Tensor::zeros({spec.channels, spec.height, spec.width});
  auto px = img.mutable_data();
  for (std::size_t s = 0; s < spec.num_slots(); ++s) {
    Rng sig(derive_seed(spec.render_seed, signature_tag(s, static_cast<std::size_t>(item.attributes[s]))));
    const auto cells = slot_region(spec, s);
    for (std::size_t c = 0; c < spec.channels; ++c)
      for (const auto& [r, col] : cells) px[c * hw + r * spec.width + col] = uniform01(sig);
  }
  if (!noise_free && spec.noise > 0.0) {
    Rng noise(derive_seed(spec.render_seed ^ 0x6e6f697365ull, static_cast<std::uint64_t>(item.id)));
    for (auto& v : px) v += uniform(noise, -spec.noise, spec.noise);
  }
  return img;
}

Diff attribute_diff(const std::vector<int>& from, const std::vector<int>& to) {
  if (from.size() != to.size()) throw DimensionError("attribute vectors differ in length");
  Diff d;
  for (std::size_t s = 0; s < from.size(); ++s)
    if (from[s] != to[s]) d[s] = to[s];
  return d;
}

std::vector<int> apply_diff(std::vector<int> attributes, const Diff& diff) {
  for (const auto& [s, v] : diff) {
    if (s >= attributes.size()) throw InvalidArgument("diff names slot " + std::to_string(s) + " outside the item");
    attributes[s] = v;
  }
  return attributes;
}

std::vector<int> realize_caption(const Diff& diff, const WorldSpec& spec, const Vocabulary& vocab,
                                 const std::vector<std::size_t>& variants) {
  if (diff.empty()) return vocab.encode(kNoChange);
  std::vector<std::string> out;
  std::size_t clause = 0;
  for (const auto& [s, v] : diff) {
    if (s >= spec.num_slots()) throw InvalidArgument("diff names unknown slot " + std::to_string(s));
    const auto& sl = spec.slots[s];
    if (v < 0 || static_cast<std::size_t>(v) >= sl.values.size())
      throw InvalidArgument("value " + std::to_string(v) + " out of range for slot " + sl.name);
    const std::size_t variant = clause < variants.size() ? variants[clause] : 0;
    if (variant >= sl.templates.size()) throw InvalidArgument("template variant out of range");
    if (clause > 0) out.push_back(kAnd);
    const auto words = fill(sl.templates[variant], sl.values[static_cast<std::size_t>(v)]);
    out.insert(out.end(), words.begin(), words.end());
    ++clause;
  }
  return vocab.encode(out);
}

std::optional<Diff> parse_caption(const std::vector<int>& caption, const WorldSpec& spec, const Vocabulary& vocab) {
  std::vector<std::string> toks;
  for (int id : caption) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) return std::nullopt;
    toks.push_back(vocab.token(id));
  }
  if (toks == kNoChange) return Diff{};
  std::vector<std::vector<std::string>> clauses(1);
  for (const auto& t : toks) {
    if (t == kAnd)
      clauses.emplace_back();
    else
      clauses.back().push_back(t);
  }
  Diff diff;
  for (const auto& clause : clauses) {
    std::optional<std::pair<std::size_t, int>> hit;
    for (const auto& w : clause)
      for (std::size_t s = 0; s < spec.num_slots(); ++s) {
        const auto& vals = spec.slots[s].values;
        auto it = std::find(vals.begin(), vals.end(), w);
        if (it == vals.end()) continue;
        if (hit) return std::nullopt;
        hit = std::make_pair(s, static_cast<int>(it - vals.begin()));
      }
    if (!hit || diff.count(hit->first)) return std::nullopt;
    const auto& sl = spec.slots[hit->first];
    const std::string& value = sl.values[static_cast<std::size_t>(hit->second)];
    const bool matches = std::any_of(sl.templates.begin(), sl.templates.end(),
                                     [&](const auto& t) { return fill(t, value) == clause; });
    if (!matches) return std::nullopt;
    diff.insert(*hit);
  }
  return diff;
}

std::vector<Triplet> make_triplets(const std::vector<Item>& catalog, const WorldSpec& spec, const Vocabulary& vocab,
                                   std::size_t n_triplets, std::size_t max_edits, std::uint64_t seed) {
  if (max_edits < 1 || max_edits > spec.num_slots())
    throw InvalidArgument("max_edits must be in [1, " + std::to_string(spec.num_slots()) + "], got " +
                          std::to_string(max_edits));
  if (catalog.size() < 2) throw InvalidArgument("a catalog needs at least 2 items");
  Rng rng(seed);

  // Neighbours of each item grouped by Hamming distance.
  std::vector<std::vector<std::vector<int>>> by_dist(catalog.size(), std::vector<std::vector<int>>(max_edits + 1));
  for (std::size_t a = 0; a < catalog.size(); ++a)
    for (std::size_t b = 0; b < catalog.size(); ++b) {
      if (a == b) continue;
      const std::size_t d = attribute_diff(catalog[a].attributes, catalog[b].attributes).size();
      if (d >= 1 && d <= max_edits) by_dist[a][d].push_back(static_cast<int>(b));
    }

  std::set<std::pair<int, int>> used;
  std::vector<Triplet> out;
  out.reserve(n_triplets);
  const std::size_t budget = 1000 * (n_triplets + 1);
  for (std::size_t attempt = 0; out.size() < n_triplets; ++attempt) {
    if (attempt >= budget)
      throw InvalidArgument("could not draw " + std::to_string(n_triplets) + " distinct triplets from " +
                            std::to_string(catalog.size()) + " items with max_edits " + std::to_string(max_edits));
    const std::size_t ref = uniform_index(rng, catalog.size());
    const std::size_t edits = 1 + uniform_index(rng, max_edits);
    const auto& pool = by_dist[ref][edits];
    if (pool.empty()) continue;
    const int tgt = pool[uniform_index(rng, pool.size())];
    if (!used.emplace(static_cast<int>(ref), tgt).second) continue;

    const Diff diff = attribute_diff(catalog[ref].attributes, catalog[static_cast<std::size_t>(tgt)].attributes);
    std::vector<std::size_t> variants;
    for (std::size_t i = 0; i < diff.size(); ++i) variants.push_back(uniform_index(rng, 2));
    Triplet t;
    t.ref_id = catalog[ref].id;
    t.tgt_id = catalog[static_cast<std::size_t>(tgt)].id;
    t.caption = realize_caption(diff, spec, vocab, variants);
    out.push_back(std::move(t));
  }
  return out;
}

Split split_triplets(const std::vector<Triplet>& triplets) {
  const std::size_t n = triplets.size();
  const std::size_t n_train = n * 7 / 10;
  const std::size_t n_val = n / 10;
  Split s;
  s.train.assign(triplets.begin(), triplets.begin() + static_cast<long>(n_train));
  s.val.assign(triplets.begin() + static_cast<long>(n_train), triplets.begin() + static_cast<long>(n_train + n_val));
  s.test.assign(triplets.begin() + static_cast<long>(n_train + n_val), triplets.end());
  return s;
}

const Item& Dataset::item(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= catalog.size() || catalog[static_cast<std::size_t>(id)].id != id)
    throw NotFound("item " + std::to_string(id) + " is not in the catalog");
  return catalog[static_cast<std::size_t>(id)];
}

Dataset generate_dataset(const WorldParams& p) {
  Dataset ds;
  ds.spec = default_world(p.slots, derive_seed(p.seed, 0x72656e646572ull));
  ds.spec.noise = p.noise;
  ds.vocab = build_vocabulary(ds.spec);
  ds.catalog = generate_catalog(p.items, ds.spec, derive_seed(p.seed, 1));
  ds.triplets = make_triplets(ds.catalog, ds.spec, ds.vocab, p.triplets, p.max_edits, derive_seed(p.seed, 2));
  ds.max_edits = p.max_edits;
  ds.seed = p.seed;
  return ds;
}

// ---- serialization ----

const char* provenance_name(Provenance p) { return p == Provenance::kOriginal ? "original" : "pseudo"; }

json item_to_json(const Item& item, const WorldSpec& spec) {
  json attrs = json::object();
  for (std::size_t s = 0; s < spec.num_slots(); ++s)
    attrs[spec.slots[s].name] = spec.slots[s].values.at(static_cast<std::size_t>(item.attributes.at(s)));
  return {{"id", item.id}, {"attributes", attrs}, {"title", item.title}, {"taxon", item.taxon}};
}

Item item_from_json(const json& j, const WorldSpec& spec) {
  Item item;
  j.at("id").get_to(item.id);
  const json& attrs = j.at("attributes");
  for (const auto& sl : spec.slots) {
    const std::string v = attrs.at(sl.name).get<std::string>();
    auto it = std::find(sl.values.begin(), sl.values.end(), v);
    if (it == sl.values.end()) throw ParseError("unknown value '" + v + "' for slot " + sl.name);
    item.attributes.push_back(static_cast<int>(it - sl.values.begin()));
  }
  j.at("title").get_to(item.title);
  j.at("taxon").get_to(item.taxon);
  return item;
}

json triplet_to_json(const Triplet& t) {
  json j = {{"ref_id", t.ref_id}, {"tgt_id", t.tgt_id}, {"caption", t.caption}, {"provenance", provenance_name(t.provenance)}};
  if (t.score) j["score"] = *t.score;
  return j;
}

Triplet triplet_from_json(const json& j) {
  Triplet t;
  j.at("ref_id").get_to(t.ref_id);
  j.at("tgt_id").get_to(t.tgt_id);
  j.at("caption").get_to(t.caption);
  const std::string prov = j.at("provenance").get<std::string>();
  if (prov == "original")
    t.provenance = Provenance::kOriginal;
  else if (prov == "pseudo")
    t.provenance = Provenance::kPseudo;
  else
    throw ParseError("unknown provenance '" + prov + "'");
  if (j.contains("score")) t.score = j.at("score").get<double>();
  if (t.ref_id == t.tgt_id) throw ParseError("triplet has ref_id == tgt_id == " + std::to_string(t.ref_id));
  if (t.caption.empty()) throw ParseError("triplet has an empty caption");
  return t;
}

json pair_to_json(const Pair& p) {
  json j = {{"ref_id", p.ref_id}, {"tgt_id", p.tgt_id}, {"strategy", p.strategy}};
  if (p.stat) j["stat"] = *p.stat;
  return j;
}

Pair pair_from_json(const json& j) {
  Pair p;
  j.at("ref_id").get_to(p.ref_id);
  j.at("tgt_id").get_to(p.tgt_id);
  j.at("strategy").get_to(p.strategy);
  if (j.contains("stat")) p.stat = j.at("stat").get<double>();
  return p;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : rows) out << r.dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<json> rows;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return rows;
}

namespace {

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

template <typename T, typename F>
std::vector<T> parse_rows(const std::filesystem::path& path, F f) {
  std::vector<T> out;
  for (const auto& r : read_jsonl(path)) {
    try {
      out.push_back(f(r));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
  }
  return out;
}

json world_to_json(const Dataset& ds) {
  json slots = json::array();
  for (const auto& s : ds.spec.slots) {
    json templates = json::array();
    for (const auto& t : s.templates) {
      std::string joined;
      for (const auto& w : t) joined += (joined.empty() ? "" : " ") + w;
      templates.push_back(joined);
    }
    slots.push_back({{"name", s.name}, {"values", s.values}, {"templates", templates}});
  }
  return {{"slots", slots},
          {"channels", ds.spec.channels},
          {"height", ds.spec.height},
          {"width", ds.spec.width},
          {"noise", ds.spec.noise},
          {"render_seed", ds.spec.render_seed},
          {"max_edits", ds.max_edits},
          {"seed", ds.seed}};
}

}  // namespace

void write_triplets(const std::filesystem::path& path, const std::vector<Triplet>& triplets) {
  std::vector<json> rows;
  rows.reserve(triplets.size());
  for (const auto& t : triplets) rows.push_back(triplet_to_json(t));
  write_jsonl(path, rows);
}

std::vector<Triplet> read_triplets(const std::filesystem::path& path) {
  return parse_rows<Triplet>(path, triplet_from_json);
}

void write_pairs(const std::filesystem::path& path, const std::vector<Pair>& pairs) {
  std::vector<json> rows;
  rows.reserve(pairs.size());
  for (const auto& p : pairs) rows.push_back(pair_to_json(p));
  write_jsonl(path, rows);
}

std::vector<Pair> read_pairs(const std::filesystem::path& path) { return parse_rows<Pair>(path, pair_from_json); }

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<json> items;
  for (const auto& it : ds.catalog) items.push_back(item_to_json(it, ds.spec));
  write_jsonl(dir / "items.jsonl", items);
  write_triplets(dir / "triplets.jsonl", ds.triplets);
  write_json(dir / "vocab.json", {{"pad_id", Vocabulary::kPad}, {"tokens", ds.vocab.tokens()}});
  write_json(dir / "world.json", world_to_json(ds));
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  const json world = read_json(dir / "world.json");
  try {
    for (const auto& s : world.at("slots")) {
      SlotSpec sl;
      s.at("name").get_to(sl.name);
      s.at("values").get_to(sl.values);
      for (const auto& t : s.at("templates")) sl.templates.push_back(words(t.get<std::string>()));
      ds.spec.slots.push_back(std::move(sl));
    }
    world.at("channels").get_to(ds.spec.channels);
    world.at("height").get_to(ds.spec.height);
    world.at("width").get_to(ds.spec.width);
    world.at("noise").get_to(ds.spec.noise);
    world.at("render_seed").get_to(ds.spec.render_seed);
    world.at("max_edits").get_to(ds.max_edits);
    world.at("seed").get_to(ds.seed);
    ds.vocab = Vocabulary(read_json(dir / "vocab.json").at("tokens").get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    throw ParseError(dir.string() + ": " + e.what());
  }
  ds.catalog = parse_rows<Item>(dir / "items.jsonl", [&](const json& j) { return item_from_json(j, ds.spec); });
  for (std::size_t i = 0; i < ds.catalog.size(); ++i)
    if (ds.catalog[i].id != static_cast<int>(i)) throw ParseError("items.jsonl ids must be 0..n-1 in order");
  ds.triplets = read_triplets(dir / "triplets.jsonl");
  for (const auto& t : ds.triplets) {
    ds.item(t.ref_id);
    ds.item(t.tgt_id);
  }
  return ds;
}

}  // namespace limn::synth
