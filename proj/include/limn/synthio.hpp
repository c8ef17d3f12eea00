#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "limn/tensor.hpp"

namespace limn::synth {

// One attribute slot: its value words and two surface templates. "{v}" in a
// template is replaced by the value word.
struct SlotSpec {
  std::string name;
  std::vector<std::string> values;
  std::vector<std::vector<std::string>> templates;
};

struct WorldSpec {
  std::vector<SlotSpec> slots;
  std::size_t channels = 3;
  std::size_t height = 8;
  std::size_t width = 8;
  double noise = 0.05;
  std::uint64_t render_seed = 0;

  std::size_t num_slots() const { return slots.size(); }
};

// The five-slot fashion world (color, pattern, sleeve, collar, length); the
// first `n_slots` slots are kept.
WorldSpec default_world(std::size_t n_slots = 5, std::uint64_t render_seed = 0);

class Vocabulary {
 public:
  static constexpr int kPad = 0;

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const std::vector<std::string>& words) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
};

Vocabulary build_vocabulary(const WorldSpec& spec);

struct Item {
  int id = 0;
  std::vector<int> attributes;  // one value index per slot
  std::vector<std::string> title;
  std::vector<std::string> taxon;  // {family, genus}
};

enum class Provenance { kOriginal, kPseudo };

struct Triplet {
  int ref_id = 0;
  int tgt_id = 0;
  std::vector<int> caption;
  Provenance provenance = Provenance::kOriginal;
  std::optional<double> score;
};

struct Pair {
  int ref_id = 0;
  int tgt_id = 0;
  std::string strategy;
  std::optional<double> stat;
};

// slot index -> new value index, in ascending slot order.
using Diff = std::map<std::size_t, int>;

std::vector<Item> generate_catalog(std::size_t n_items, const WorldSpec& spec, std::uint64_t seed);

// Pure function of (item, spec). Slot s paints its own block of the grid with
// a per-value signature; `noise_free` skips the per-item noise.
Tensor render(const Item& item, const WorldSpec& spec, bool noise_free = false);

// Grid cells (row, col) owned by a slot.
std::vector<std::pair<std::size_t, std::size_t>> slot_region(const WorldSpec& spec, std::size_t slot);

Diff attribute_diff(const std::vector<int>& from, const std::vector<int>& to);
std::vector<int> apply_diff(std::vector<int> attributes, const Diff& diff);

// Realizes a diff as caption tokens; `variants` picks a template per clause
// (missing entries use template 0). An empty diff yields "no change".
std::vector<int> realize_caption(const Diff& diff, const WorldSpec& spec, const Vocabulary& vocab,
                                 const std::vector<std::size_t>& variants = {});
// Inverse grammar. nullopt when the tokens are not a caption of this world.
std::optional<Diff> parse_caption(const std::vector<int>& caption, const WorldSpec& spec, const Vocabulary& vocab);

std::vector<Triplet> make_triplets(const std::vector<Item>& catalog, const WorldSpec& spec, const Vocabulary& vocab,
                                   std::size_t n_triplets, std::size_t max_edits, std::uint64_t seed);

struct Split {
  std::vector<Triplet> train;
  std::vector<Triplet> val;
  std::vector<Triplet> test;
};
// 70/10/20 by position in the (already shuffled) triplet list.
Split split_triplets(const std::vector<Triplet>& triplets);

struct Dataset {
  WorldSpec spec;
  Vocabulary vocab;
  std::vector<Item> catalog;
  std::vector<Triplet> triplets;
  std::size_t max_edits = 2;
  std::uint64_t seed = 0;

  const Item& item(int id) const;
};

struct WorldParams {
  std::size_t items = 500;
  std::size_t triplets = 2000;
  std::size_t slots = 5;
  std::size_t max_edits = 2;
  double noise = 0.05;
  std::uint64_t seed = 7;
};

Dataset generate_dataset(const WorldParams& params);

// items.jsonl, triplets.jsonl, vocab.json and world.json under `dir`.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

nlohmann::json item_to_json(const Item& item, const WorldSpec& spec);
Item item_from_json(const nlohmann::json& j, const WorldSpec& spec);
nlohmann::json triplet_to_json(const Triplet& t);
Triplet triplet_from_json(const nlohmann::json& j);
nlohmann::json pair_to_json(const Pair& p);
Pair pair_from_json(const nlohmann::json& j);

void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows);
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
void write_triplets(const std::filesystem::path& path, const std::vector<Triplet>& triplets);
std::vector<Triplet> read_triplets(const std::filesystem::path& path);
void write_pairs(const std::filesystem::path& path, const std::vector<Pair>& pairs);
std::vector<Pair> read_pairs(const std::filesystem::path& path);

const char* provenance_name(Provenance p);

}  // namespace limn::synth
