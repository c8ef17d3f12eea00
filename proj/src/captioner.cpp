#include "limn/captioner.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "limn/error.hpp"
#include "limn/ops.hpp"
#include "limn/rng.hpp"

namespace limn {

using nlohmann::json;
using synth::Diff;
using synth::Triplet;

namespace {
const std::string kImage = "image.";
}

void CaptionerConfig::validate() const {
  image.validate();
  if (hidden < 1) throw InvalidArgument("captioner hidden width must be positive");
  if (epochs < 1) throw InvalidArgument("captioner epochs must be at least 1");
  if (batch_size < 1) throw InvalidArgument("captioner batch size must be at least 1");
  if (!(lr > 0.0)) throw InvalidArgument("captioner learning rate must be positive");
  if (!(noise >= 0.0 && noise <= 1.0)) throw InvalidArgument("captioner noise must be in [0, 1]");
}

void to_json(json& j, const CaptionerConfig& c) {
  j = {{"image", c.image}, {"hidden", c.hidden},         {"epochs", c.epochs}, {"batch_size", c.batch_size},
       {"lr", c.lr},       {"seed", c.seed},             {"noise", c.noise}};
}

void from_json(const json& j, CaptionerConfig& c) {
  j.at("image").get_to(c.image);
  j.at("hidden").get_to(c.hidden);
  j.at("epochs").get_to(c.epochs);
  j.at("batch_size").get_to(c.batch_size);
  j.at("lr").get_to(c.lr);
  j.at("seed").get_to(c.seed);
  j.at("noise").get_to(c.noise);
}

namespace {

std::size_t feature_width(const CaptionerConfig& c) { return c.image.dim * c.image.grid_h() * c.image.grid_w(); }

void init_head(CaptionerModel& m, Rng& rng) {
  const std::size_t in = 2 * feature_width(m.config);
  const std::size_t h = m.config.hidden;
  m.params.add("head.w", init_uniform({in, h}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
  m.params.add("head.b", Tensor::zeros({h}));
  for (std::size_t s = 0; s < m.slot_classes.size(); ++s) {
    const std::string p = "slot" + std::to_string(s) + ".";
    m.params.add(p + "w", init_uniform({h, m.slot_classes[s]}, 1.0 / std::sqrt(static_cast<double>(h)), rng));
    m.params.add(p + "b", Tensor::zeros({m.slot_classes[s]}));
  }
}

// 1 x F row of local features.
Tensor image_row(Graph& g, const CaptionerModel& m, const Tensor& pixels) {
  VisualRepresentation rep = encode_image(g, m.params, kImage, m.config.image, pixels, {true, false});
  return ops::flatten_columns(g, rep.features);
}

// One row of per-slot logits per pair.
std::vector<Tensor> slot_logits(Graph& g, const CaptionerModel& m, const std::vector<std::pair<int, int>>& pairs,
                                const RenderCache& renders) {
  std::vector<Tensor> rows;
  rows.reserve(pairs.size());
  for (const auto& [r, t] : pairs) {
    Tensor fr = image_row(g, m, renders.image(r));
    Tensor ft = image_row(g, m, renders.image(t));
    rows.push_back(ops::concat_cols(g, {ops::sub(g, ft, fr), ft}));
  }
  Tensor x = ops::concat_rows(g, rows);
  Tensor h = ops::relu(g, ops::add_row_vector(g, ops::matmul(g, x, m.params.get("head.w")), m.params.get("head.b")));
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < m.slot_classes.size(); ++s) {
    const std::string p = "slot" + std::to_string(s) + ".";
    out.push_back(ops::add_row_vector(g, ops::matmul(g, h, m.params.get(p + "w")), m.params.get(p + "b")));
  }
  return out;
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.cols(); ++c)
    if (logits.at(row, c) > logits.at(row, best)) best = c;
  return best;
}

CaptionerModel blank(const synth::Dataset& ds, const CaptionerConfig& cfg) {
  cfg.validate();
  CaptionerModel m;
  m.config = cfg;
  for (const auto& s : ds.spec.slots) m.slot_classes.push_back(1 + s.values.size());
  Rng rng(derive_seed(cfg.seed, 0x63617074ull));
  init_image_encoder(cfg.image, m.params, kImage, rng);
  init_head(m, rng);
  return m;
}

}  // namespace

CaptionerModel train_captioner(const std::vector<Triplet>& triplets, const synth::Dataset& ds,
                               const RenderCache& renders, const CaptionerConfig& cfg) {
  if (triplets.empty()) throw InvalidArgument("cannot train the captioner on an empty triplet set");
  CaptionerModel m = blank(ds, cfg);

  std::vector<std::pair<int, int>> pairs;
  std::vector<std::vector<std::size_t>> labels;  // per example, per slot class
  for (const auto& t : triplets) {
    auto diff = synth::parse_caption(t.caption, ds.spec, ds.vocab);
    if (!diff) {
      ++m.skipped;
      continue;
    }
    std::vector<std::size_t> y(m.slot_classes.size(), 0);
    for (const auto& [s, v] : *diff) y[s] = 1 + static_cast<std::size_t>(v);
    pairs.emplace_back(t.ref_id, t.tgt_id);
    labels.push_back(std::move(y));
  }
  if (pairs.empty()) throw InvalidArgument("no triplet caption parses under the world grammar");

  Adam adam(AdamConfig{cfg.lr});
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, 0x63657063ull + epoch));
    shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      std::vector<std::pair<int, int>> batch;
      for (std::size_t i = b; i < e; ++i) batch.push_back(pairs[order[i]]);
      m.params.zero_grad();
      Graph g;
      std::vector<Tensor> logits = slot_logits(g, m, batch, renders);
      Tensor loss;
      for (std::size_t s = 0; s < logits.size(); ++s) {
        std::vector<std::size_t> y;
        for (std::size_t i = b; i < e; ++i) y.push_back(labels[order[i]][s]);
        Tensor ls = ops::cross_entropy_rows(g, logits[s], y);
        loss = s == 0 ? ls : ops::add(g, loss, ls);
      }
      const double v = loss.item();
      if (!std::isfinite(v))
        throw TrainingError("captioner loss is not finite at epoch " + std::to_string(epoch + 1));
      g.backward(loss);
      adam.step(m.params);
      sum += v * static_cast<double>(e - b);
    }
    m.loss_curve.push_back(sum / static_cast<double>(order.size()));
  }
  m.params.zero_grad();
  return m;
}

Diff predict_diff(const CaptionerModel& m, const synth::Item& ref, const synth::Item& tgt, const RenderCache& renders) {
  Graph g(false);
  std::vector<Tensor> logits = slot_logits(g, m, {{ref.id, tgt.id}}, renders);
  Diff d;
  for (std::size_t s = 0; s < logits.size(); ++s) {
    const std::size_t c = argmax_row(logits[s], 0);
    if (c > 0) d[s] = static_cast<int>(c - 1);
  }
  return d;
}

std::vector<int> generate_caption(const CaptionerModel& m, const synth::Item& ref, const synth::Item& tgt,
                                  const synth::Dataset& ds, const RenderCache& renders) {
  const Tensor& a = renders.image(ref.id);
  const Tensor& b = renders.image(tgt.id);
  if (ref.id == tgt.id || std::equal(a.data().begin(), a.data().end(), b.data().begin(), b.data().end()))
    return synth::realize_caption({}, ds.spec, ds.vocab);

  Diff d = predict_diff(m, ref, tgt, renders);
  if (m.config.noise > 0.0) {
    Rng rng(derive_seed(m.config.seed ^ 0x6e6f6973ull,
                        (static_cast<std::uint64_t>(ref.id) << 32) | static_cast<std::uint32_t>(tgt.id)));
    for (std::size_t s = 0; s < m.slot_classes.size(); ++s) {
      if (uniform01(rng) >= m.config.noise) continue;
      const std::size_t current = d.count(s) ? static_cast<std::size_t>(d[s]) + 1 : 0;
      std::size_t pick = uniform_index(rng, m.slot_classes[s] - 1);
      if (pick >= current) ++pick;
      if (pick == 0)
        d.erase(s);
      else
        d[s] = static_cast<int>(pick - 1);
    }
  }
  // A slot "changed" to the value it already has is no change at all.
  for (auto it = d.begin(); it != d.end();)
    it = ref.attributes[it->first] == it->second ? d.erase(it) : std::next(it);
  return synth::realize_caption(d, ds.spec, ds.vocab);
}

json caption_metrics_json(const CaptionMetrics& m) {
  return {{"bleu1", m.bleu1}, {"rouge_l", m.rouge_l}, {"average", m.average}, {"slot_accuracy", m.slot_accuracy},
          {"pairs", m.pairs}};
}

CaptionMetrics evaluate_captioner(const CaptionerModel& m, const std::vector<Triplet>& triplets,
                                  const synth::Dataset& ds, const RenderCache& renders) {
  if (triplets.empty()) throw InvalidArgument("no triplets to evaluate the captioner on");
  CaptionMetrics out;
  std::size_t exact = 0;
  for (const auto& t : triplets) {
    const auto& ref = ds.item(t.ref_id);
    const auto& tgt = ds.item(t.tgt_id);
    std::vector<int> cap = generate_caption(m, ref, tgt, ds, renders);
    out.bleu1 += bleu1(cap, {t.caption});
    out.rouge_l += rouge_l(cap, t.caption);
    auto got = synth::parse_caption(cap, ds.spec, ds.vocab);
    if (got && *got == synth::attribute_diff(ref.attributes, tgt.attributes)) ++exact;
  }
  const double n = static_cast<double>(triplets.size());
  out.bleu1 /= n;
  out.rouge_l /= n;
  out.average = 0.5 * (out.bleu1 + out.rouge_l);
  out.slot_accuracy = static_cast<double>(exact) / n;
  out.pairs = triplets.size();
  return out;
}

Checkpoint to_checkpoint(const CaptionerModel& m) {
  Checkpoint ck;
  ck.config = m.config;
  ck.params = m.params.clone();
  ck.extra = {{"kind", "captioner"},
              {"slot_classes", m.slot_classes},
              {"skipped", m.skipped},
              {"loss_curve", m.loss_curve},
              {"param_hash", hash_hex(m.hash())}};
  return ck;
}

CaptionerModel captioner_from_checkpoint(const Checkpoint& ck) {
  CaptionerModel m;
  try {
    if (ck.extra.value("kind", "") != "captioner") throw ParseError("checkpoint is not a captioner");
    m.config = ck.config.get<CaptionerConfig>();
    ck.extra.at("slot_classes").get_to(m.slot_classes);
    ck.extra.at("skipped").get_to(m.skipped);
    ck.extra.at("loss_curve").get_to(m.loss_curve);
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed captioner checkpoint: ") + e.what());
  }
  m.config.validate();
  m.params = ck.params.clone();
  return m;
}

// ---- text metrics ----

namespace {

template <typename T>
double bleu1_impl(const std::vector<T>& cand, const std::vector<std::vector<T>>& refs) {
  if (cand.empty()) throw InvalidArgument("bleu1: empty candidate");
  if (refs.empty()) throw InvalidArgument("bleu1: no references");
  std::map<T, std::size_t> counts;
  for (const auto& w : cand) ++counts[w];
  std::map<T, std::size_t> max_ref;
  for (const auto& r : refs) {
    std::map<T, std::size_t> rc;
    for (const auto& w : r) ++rc[w];
    for (const auto& [w, c] : rc) max_ref[w] = std::max(max_ref[w], c);
  }
  std::size_t clipped = 0;
  for (const auto& [w, c] : counts) {
    auto it = max_ref.find(w);
    if (it != max_ref.end()) clipped += std::min(c, it->second);
  }
  const double c = static_cast<double>(cand.size());
  // Closest reference length; ties go to the shorter one.
  std::size_t r = refs[0].size();
  for (const auto& ref : refs) {
    const auto d = std::abs(static_cast<double>(ref.size()) - c);
    const auto best = std::abs(static_cast<double>(r) - c);
    if (d < best || (d == best && ref.size() < r)) r = ref.size();
  }
  const double bp = std::exp(std::min(0.0, 1.0 - static_cast<double>(r) / c));
  return bp * static_cast<double>(clipped) / c;
}

template <typename T>
double rouge_l_impl(const std::vector<T>& cand, const std::vector<T>& ref) {
  if (cand.empty() || ref.empty()) throw InvalidArgument("rouge_l: empty input");
  std::vector<std::size_t> prev(ref.size() + 1, 0), cur(ref.size() + 1, 0);
  for (std::size_t i = 1; i <= cand.size(); ++i) {
    for (std::size_t j = 1; j <= ref.size(); ++j)
      cur[j] = cand[i - 1] == ref[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  const double lcs = static_cast<double>(prev[ref.size()]);
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(cand.size());
  const double r = lcs / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

}  // namespace

double bleu1(const std::vector<std::string>& c, const std::vector<std::vector<std::string>>& r) { return bleu1_impl(c, r); }
double bleu1(const std::vector<int>& c, const std::vector<std::vector<int>>& r) { return bleu1_impl(c, r); }
double rouge_l(const std::vector<std::string>& c, const std::vector<std::string>& r) { return rouge_l_impl(c, r); }
double rouge_l(const std::vector<int>& c, const std::vector<int>& r) { return rouge_l_impl(c, r); }

}  // namespace limn
