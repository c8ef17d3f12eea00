#include "limn/config.hpp"

#include <charconv>
#include <functional>
#include <set>
#include <sstream>

#include "limn/error.hpp"

namespace limn {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw InvalidArgument("config key '" + key + "': '" + v + "' is not a valid number");
  return out;
}

std::size_t as_size(const std::string& k, const std::string& v) { return parse_number<std::size_t>(k, v); }
double as_double(const std::string& k, const std::string& v) { return parse_number<double>(k, v); }

std::optional<double> as_auto_double(const std::string& k, const std::string& v) {
  if (v == "auto") return std::nullopt;
  return as_double(k, v);
}

std::string auto_double(const std::optional<double>& v) { return v ? format_double(*v) : "auto"; }

std::string size_list(const std::vector<std::size_t>& ks) {
  std::string out;
  for (std::size_t i = 0; i < ks.size(); ++i) out += (i ? "," : "") + std::to_string(ks[i]);
  return out;
}

std::vector<std::size_t> as_size_list(const std::string& k, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& part : split_list(v)) out.push_back(as_size(k, part));
  return out;
}

const std::vector<std::string> kAblations = {"one_factor", "avepool", "no_ortho", "no_global", "no_local"};

std::string ablation_text(const Ablation& a) {
  const bool on[] = {a.one_factor, a.avepool, a.no_ortho, a.no_global, a.no_local};
  std::string out;
  for (std::size_t i = 0; i < kAblations.size(); ++i)
    if (on[i]) out += (out.empty() ? "" : ",") + kAblations[i];
  return out.empty() ? "none" : out;
}

Ablation parse_ablation(const std::string& v) {
  Ablation a;
  if (v == "none" || v.empty()) return a;
  for (const auto& name : split_list(v)) {
    if (name == "one_factor") a.one_factor = true;
    else if (name == "avepool") a.avepool = true;
    else if (name == "no_ortho") a.no_ortho = true;
    else if (name == "no_global") a.no_global = true;
    else if (name == "no_local") a.no_local = true;
    else throw InvalidArgument("unknown ablation '" + name + "' (one_factor, avepool, no_ortho, no_global, no_local)");
  }
  return a;
}

struct Key {
  std::string name;
  std::function<void(RunSettings&, const std::string&)> set;
  std::function<std::string(const RunSettings&)> get;
};

#define LIMN_SIZE_KEY(NAME, FIELD)                                                       \
  Key {                                                                                  \
    NAME, [](RunSettings& s, const std::string& v) { s.FIELD = as_size(NAME, v); },      \
        [](const RunSettings& s) { return std::to_string(s.FIELD); }                     \
  }
#define LIMN_DOUBLE_KEY(NAME, FIELD)                                                     \
  Key {                                                                                  \
    NAME, [](RunSettings& s, const std::string& v) { s.FIELD = as_double(NAME, v); },    \
        [](const RunSettings& s) { return format_double(s.FIELD); }                      \
  }
#define LIMN_STRING_KEY(NAME, FIELD)                                                     \
  Key {                                                                                  \
    NAME, [](RunSettings& s, const std::string& v) { s.FIELD = v; },                     \
        [](const RunSettings& s) { return s.FIELD; }                                     \
  }

const std::map<std::string, Key>& key_table() {
  static const std::map<std::string, Key> table = [] {
    std::vector<Key> keys = {
        // world
        LIMN_SIZE_KEY("items", world.items),
        LIMN_SIZE_KEY("triplets", world.triplets),
        LIMN_SIZE_KEY("slots", world.slots),
        LIMN_SIZE_KEY("max_edits", world.max_edits),
        LIMN_DOUBLE_KEY("noise", world.noise),
        // retrieval model
        LIMN_SIZE_KEY("dim", train.model.dim),
        LIMN_SIZE_KEY("u", train.model.tokens),
        LIMN_SIZE_KEY("layers", train.model.transformer.layers),
        LIMN_SIZE_KEY("heads", train.model.transformer.heads),
        LIMN_SIZE_KEY("ff_dim", train.model.transformer.ff_dim),
        LIMN_SIZE_KEY("embed_dim", train.model.text.embed_dim),
        LIMN_SIZE_KEY("hidden_dim", train.model.text.hidden_dim),
        LIMN_SIZE_KEY("mid_channels", train.model.image.mid_channels),
        LIMN_SIZE_KEY("last_channels", train.model.image.last_channels),
        LIMN_DOUBLE_KEY("gem_p", train.model.image.gem_p),
        LIMN_DOUBLE_KEY("lambda", train.loss.lambda),
        LIMN_DOUBLE_KEY("tau", train.loss.temperature),
        LIMN_DOUBLE_KEY("lr", train.lr),
        LIMN_SIZE_KEY("epochs", train.epochs),
        LIMN_SIZE_KEY("batch_size", train.batch_size),
        LIMN_SIZE_KEY("decay_epoch", train.decay_epoch),
        LIMN_DOUBLE_KEY("decay_factor", train.decay_factor),
        Key{"ablation", [](RunSettings& s, const std::string& v) { s.train.ablation = parse_ablation(v); },
            [](const RunSettings& s) { return ablation_text(s.train.ablation); }},
        Key{"ks",
            [](RunSettings& s, const std::string& v) {
              s.train.ks = as_size_list("ks", v);
              s.selftrain.ks = s.train.ks;
            },
            [](const RunSettings& s) { return size_list(s.train.ks); }},
        LIMN_STRING_KEY("preset", preset),
        // captioner
        LIMN_SIZE_KEY("cap_hidden", captioner.hidden),
        LIMN_SIZE_KEY("cap_epochs", captioner.epochs),
        LIMN_SIZE_KEY("cap_batch_size", captioner.batch_size),
        LIMN_DOUBLE_KEY("cap_lr", captioner.lr),
        LIMN_DOUBLE_KEY("cap_noise", captioner.noise),
        // mining and self-training
        Key{"strategy",
            [](RunSettings& s, const std::string& v) { s.selftrain.mining.strategy = parse_strategy(v); },
            [](const RunSettings& s) { return std::string(strategy_name(s.selftrain.mining.strategy)); }},
        LIMN_SIZE_KEY("budget", selftrain.mining.budget),
        Key{"band_mu", [](RunSettings& s, const std::string& v) { s.selftrain.mining.band_mu = as_auto_double("band_mu", v); },
            [](const RunSettings& s) { return auto_double(s.selftrain.mining.band_mu); }},
        Key{"band_sigma",
            [](RunSettings& s, const std::string& v) { s.selftrain.mining.band_sigma = as_auto_double("band_sigma", v); },
            [](const RunSettings& s) { return auto_double(s.selftrain.mining.band_sigma); }},
        Key{"band_width",
            [](RunSettings& s, const std::string& v) {
              if (v == "std") s.selftrain.mining.band_width = BandWidth::kStd;
              else if (v == "variance") s.selftrain.mining.band_width = BandWidth::kVariance;
              else throw InvalidArgument("config key 'band_width': expected std or variance, got '" + v + "'");
            },
            [](const RunSettings& s) {
              return std::string(s.selftrain.mining.band_width == BandWidth::kStd ? "std" : "variance");
            }},
        LIMN_SIZE_KEY("taxon_partners", selftrain.mining.taxon_partners),
        LIMN_SIZE_KEY("visual_neighbors", selftrain.mining.visual_neighbors),
        LIMN_SIZE_KEY("kappa", selftrain.kappa),
        LIMN_SIZE_KEY("max_iters", selftrain.max_iters),
        LIMN_DOUBLE_KEY("epsilon", selftrain.epsilon),
        Key{"cir",
            [](RunSettings& s, const std::string& v) {
              if (v != "limn" && v != "bag_of_attributes")
                throw InvalidArgument("config key 'cir': expected limn or bag_of_attributes, got '" + v + "'");
              s.cir = v;
            },
            [](const RunSettings& s) { return s.cir; }},
        // sources
        LIMN_STRING_KEY("train", train_source),
        LIMN_STRING_KEY("val", val_source),
        LIMN_STRING_KEY("test", test_source),
        LIMN_STRING_KEY("labeled", labeled_source),
        LIMN_STRING_KEY("queries", query_source),
        LIMN_DOUBLE_KEY("train_fraction", train_fraction),
        // one master seed
        Key{"seed",
            [](RunSettings& s, const std::string& v) {
              const auto seed = parse_number<std::uint64_t>("seed", v);
              s.world.seed = seed;
              s.train.seed = seed;
              s.captioner.seed = seed;
              s.selftrain.seed = seed;
            },
            [](const RunSettings& s) { return std::to_string(s.train.seed); }},
    };
    std::map<std::string, Key> m;
    for (auto& k : keys) m.emplace(k.name, std::move(k));
    return m;
  }();
  return table;
}

#undef LIMN_SIZE_KEY
#undef LIMN_DOUBLE_KEY
#undef LIMN_STRING_KEY

const std::vector<std::string> kModelKeys = {"preset", "dim",    "u",          "layers",      "heads",
                                             "ff_dim", "embed_dim", "hidden_dim", "mid_channels", "last_channels",
                                             "gem_p",  "lambda", "tau",        "lr",          "epochs",
                                             "batch_size", "decay_epoch", "decay_factor", "ablation", "ks"};
const std::vector<std::string> kCaptionerKeys = {"cap_hidden", "cap_epochs", "cap_batch_size", "cap_lr", "cap_noise"};
const std::vector<std::string> kMiningKeys = {"strategy", "budget", "band_mu", "band_sigma", "band_width",
                                              "taxon_partners", "visual_neighbors"};

std::vector<std::string> concat(std::initializer_list<std::vector<std::string>> parts) {
  std::vector<std::string> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

}  // namespace

KeyValues KeyValues::parse(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("config line " + std::to_string(n) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError("config line " + std::to_string(n) + ": empty key");
    kv.set(key, trim(line.substr(eq + 1)));
  }
  return kv;
}

const std::string& KeyValues::at(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw NotFound("config key '" + key + "' is not set");
  return it->second;
}

void KeyValues::merge(const KeyValues& over) {
  for (const auto& [k, v] : over.entries_) entries_[k] = v;
}

std::string KeyValues::dump() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
  return out;
}

std::vector<std::string> command_keys(const std::string& command) {
  if (command == "gen-data") return {"items", "triplets", "slots", "max_edits", "noise", "seed"};
  if (command == "train") return concat({kModelKeys, {"train", "val", "test", "train_fraction", "seed"}});
  if (command == "eval") return {"test", "ks"};
  if (command == "score") return {"queries"};
  if (command == "mine-pairs") return concat({kMiningKeys, {"labeled", "seed"}});
  if (command == "caption") return concat({kCaptionerKeys, {"train", "train_fraction", "seed"}});
  if (command == "self-train")
    return concat({kModelKeys, kCaptionerKeys, kMiningKeys,
                   {"cir", "kappa", "max_iters", "epsilon", "train", "val", "train_fraction", "seed"}});
  if (command == "report") return {};
  throw InvalidArgument("unknown command '" + command + "'");
}

RunSettings resolve_settings(const std::string& command, const KeyValues& kv) {
  const auto allowed_list = command_keys(command);
  const std::set<std::string> allowed(allowed_list.begin(), allowed_list.end());
  for (const auto& [k, v] : kv.entries())
    if (!allowed.count(k)) throw InvalidArgument("config key '" + k + "' does not apply to " + command);

  RunSettings s;
  if (kv.has("preset")) {
    const std::string& p = kv.at("preset");
    if (p == "desk") {
      s.train.loss.temperature = 0.1;
      s.train.lr = 3e-3;
    } else if (p != "reference") {
      throw InvalidArgument("config key 'preset': expected reference or desk, got '" + p + "'");
    }
    s.preset = p;
  }
  const auto& table = key_table();
  for (const auto& [k, v] : kv.entries())
    if (k != "preset") table.at(k).set(s, v);
  if (!(s.train_fraction > 0.0 && s.train_fraction <= 1.0))
    throw InvalidArgument("config key 'train_fraction' must be in (0, 1]");
  return s;
}

KeyValues settings_echo(const std::string& command, const RunSettings& s) {
  KeyValues kv;
  const auto& table = key_table();
  for (const auto& k : command_keys(command)) kv.set(k, table.at(k).get(s));
  return kv;
}

std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::vector<synth::Triplet> resolve_source(const synth::Dataset& ds, const std::string& source) {
  if (source == "all") return ds.triplets;
  if (source == "train" || source == "val" || source == "test") {
    synth::Split sp = synth::split_triplets(ds.triplets);
    return source == "train" ? sp.train : source == "val" ? sp.val : sp.test;
  }
  if (source.empty()) throw InvalidArgument("empty triplet source");
  return synth::read_triplets(source);
}

std::vector<synth::Triplet> take_fraction(std::vector<synth::Triplet> triplets, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("fraction must be in (0, 1]");
  if (triplets.empty()) return triplets;
  const auto n = static_cast<std::size_t>(fraction * static_cast<double>(triplets.size()));
  triplets.resize(std::max<std::size_t>(1, std::min(n, triplets.size())));
  return triplets;
}

}  // namespace limn
