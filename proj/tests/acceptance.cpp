// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance <path-to-limn-cli> [criterion ...]
//
// With no criterion numbers every criterion runs. The exit status is non-zero
// when any selected criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cases.hpp"
#include "limn/captioner.hpp"
#include "limn/gradcheck.hpp"
#include "limn/model.hpp"
#include "limn/objective.hpp"
#include "limn/selftrain.hpp"
#include "limn/trainer.hpp"
#include "support.hpp"

using namespace limn;
using limn::testing::from_raw;
using limn::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

std::string list(const std::vector<double>& v, const char* f = "%.4f") {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt(f, x);
  return s;
}

TrainConfig desk_config() {
  TrainConfig cfg;
  cfg.loss.temperature = 0.1;
  cfg.lr = 3e-3;
  return cfg;
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t ops_checked = 0;
  for (auto& c : limn::testing::op_cases()) {
    GradCheckResult r = grad_check(c.f, c.inputs);
    if (r.coords_checked == 0) return {false, c.name + " checked no coordinates"};
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_name = c.name + ":" + r.worst;
    }
    ++ops_checked;
  }

  LimnConfig cfg = limn::testing::small_config(3);
  ParamStore ps = init_limn(cfg, 21);
  Rng rng(22);
  Tensor r0 = random_tensor({3, 8, 8}, rng, 0, 1), r1 = random_tensor({3, 8, 8}, rng, 0, 1);
  Tensor t0i = random_tensor({3, 8, 8}, rng, 0, 1), t1i = random_tensor({3, 8, 8}, rng, 0, 1);
  const std::vector<int> c0 = {1, 4, 7}, c1 = {2, 9, 3, 5};
  LossConfig loss;
  loss.lambda = 0.5;
  auto f = [&](Graph& g) {
    std::vector<TokenMatrix> qs = {embed_query(g, ps, cfg, r0, c0), embed_query(g, ps, cfg, r1, c1)};
    std::vector<TokenMatrix> ts = {embed_target(g, ps, cfg, t0i), embed_target(g, ps, cfg, t1i)};
    return total_loss(g, qs, ts, loss).total;
  };
  GradCheckOptions opts;
  opts.seed = 3;
  GradCheckResult full = grad_check(f, ps.entries(), opts);
  const double elapsed = seconds_since(t0);
  const bool pass = worst <= 1e-4 && full.max_rel_error <= 1e-4 && elapsed < 60.0;
  return {pass, std::to_string(ops_checked) + " ops worst rel " + fmt("%.2e", worst) + " (" + worst_name +
                    "); objective " + std::to_string(full.coords_checked) + " coords worst rel " +
                    fmt("%.2e", full.max_rel_error) + "; " + fmt("%.1f s", elapsed)};
}

Outcome permutation() {
  LimnConfig cfg = limn::testing::small_config(3);
  cfg.transformer.layers = 2;
  ParamStore ps = init_limn(cfg, 9);
  Rng rng(10);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t ctx = 3 + static_cast<std::size_t>(trial % 8);
    worst = std::max(worst, limn::testing::permutation_trial(ps, cfg.transformer, 3, rng, ctx));
  }
  return {worst <= 1e-9, "100 trials, max abs diff " + fmt("%.2e", worst)};
}

Outcome closed_forms() {
  Graph g(false);
  LossConfig cfg;
  Rng rng(14);
  TokenMatrix q = from_raw(g, random_tensor({4, 2}, rng));
  TokenMatrix t = from_raw(g, random_tensor({4, 2}, rng));
  const double single = ranking_loss(g, {q}, {t}, cfg).item();
  TokenMatrix e = from_raw(g, Tensor::matrix(2, 1, {1, 0}));
  const double ln2 = ranking_loss(g, {e, e}, {e, e}, cfg).item();
  TokenMatrix eye = from_raw(g, Tensor::matrix(3, 2, {1, 0, 0, 1, 0, 0}));
  const double ortho_zero = ortho_loss(g, {eye}, {eye}).item();
  TokenMatrix dup = from_raw(g, Tensor::matrix(2, 2, {1, 1, 0, 0}));
  const double ortho_four = ortho_loss(g, {dup}, {dup}).item();
  const bool pass = single == 0.0 && std::abs(ln2 - std::log(2.0)) <= 1e-12 && ortho_zero == 0.0 &&
                    std::abs(ortho_four - 4.0) <= 1e-12;
  return {pass, "B=1 " + fmt("%.17g", single) + ", ln2 err " + fmt("%.1e", std::abs(ln2 - std::log(2.0))) +
                    ", orthonormal " + fmt("%.17g", ortho_zero) + ", duplicate " + fmt("%.17g", ortho_four)};
}

Outcome score_equivalence() {
  Rng rng(13);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 2 + static_cast<std::size_t>(trial % 31);
    const std::size_t u = 1 + static_cast<std::size_t>(trial % 8);
    Graph g(false);
    TokenMatrix q = from_raw(g, random_tensor({d, u}, rng));
    TokenMatrix t = from_raw(g, random_tensor({d, u}, rng));
    worst = std::max(worst, std::abs(match_score(q, t) - limn::testing::cosine_sum(q.raw, t.raw)));
  }

  synth::Dataset ds = synth::generate_dataset({});
  RenderCache renders(ds);
  synth::Split split = synth::split_triplets(ds.triplets);
  TrainConfig cfg = desk_config();
  cfg.epochs = 1;
  TrainedModel model = train(std::vector<synth::Triplet>(split.train.begin(), split.train.begin() + 64), ds,
                             renders, cfg);
  std::vector<synth::Triplet> queries(split.test.begin(), split.test.begin() + 100);

  std::size_t mismatches = 0, galleries = 0;
  auto brute = [&](const std::vector<int>& gallery, const RecallReport& report) {
    std::vector<TokenMatrix> emb;
    for (int id : gallery) emb.push_back(embed_item(model, id, renders));
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      TokenMatrix qm = embed_query_of(model, queries[qi], renders);
      std::vector<std::pair<double, int>> order;
      for (std::size_t k = 0; k < gallery.size(); ++k) order.push_back({match_score(qm, emb[k]), gallery[k]});
      std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
      });
      std::size_t rank = 0;
      for (std::size_t k = 0; k < order.size(); ++k)
        if (order[k].second == queries[qi].tgt_id) rank = k + 1;
      if (rank != report.ranks.at(qi)) ++mismatches;
    }
    ++galleries;
  };
  std::vector<int> full;
  for (const auto& item : ds.catalog) full.push_back(item.id);
  brute(full, evaluate(model, queries, ds, renders, {1, 10, 50}));

  std::vector<int> sub;
  std::set<int> needed;
  for (const auto& q : queries) needed.insert(q.tgt_id);
  for (int id : full)
    if (needed.count(id) || id % 3 == 0) sub.push_back(id);
  brute(sub, evaluate_gallery(model, queries, sub, renders, {1, 10, 50}));

  return {worst <= 1e-12 && mismatches == 0,
          "1000 matrices max diff " + fmt("%.2e", worst) + "; " + std::to_string(galleries) +
              " galleries (" + std::to_string(full.size()) + ", " + std::to_string(sub.size()) + " items), " +
              std::to_string(mismatches) + " rank mismatches"};
}

Outcome learnability() {
  const auto t0 = std::chrono::steady_clock::now();
  synth::Dataset ds = synth::generate_dataset({});
  RenderCache renders(ds);
  synth::Split split = synth::split_triplets(ds.triplets);
  TrainConfig cfg = desk_config();
  TrainedModel model = train(split.train, ds, renders, cfg);
  RecallReport r = evaluate(model, split.test, ds, renders, {1, 10, 50});
  const double random = 10.0 / static_cast<double>(ds.catalog.size());
  const double r10 = r.at(10);

  Rng rng(5);
  std::size_t wins = 0;
  for (const auto& t : split.test) {
    synth::Triplet other = t;
    do other.tgt_id = static_cast<int>(uniform_index(rng, ds.catalog.size()));
    while (other.tgt_id == t.tgt_id);
    if (score_triplet(model, t, renders) > score_triplet(model, other, renders)) ++wins;
  }
  const double elapsed = seconds_since(t0);
  const bool pass = r10 >= 0.80 && r10 >= 40.0 * random && elapsed < 600.0;
  return {pass, "test R@10 " + fmt("%.4f", r10) + " (" + fmt("%.1fx", r10 / random) + " random " +
                    fmt("%.3f", random) + "), R@1 " + fmt("%.4f", r.at(1)) + ", R@50 " + fmt("%.4f", r.at(50)) +
                    ", target beats a random item on " +
                    fmt("%.3f", static_cast<double>(wins) / static_cast<double>(split.test.size())) + "; " +
                    fmt("%.0f s", elapsed)};
}

// Shared by the token-count and orthogonality criteria: 3-slot world, desk
// settings, three seeds.
struct AblationRuns {
  bool done = false;
  synth::Dataset ds;
  std::vector<double> full_recall, one_recall, full_cos, no_ortho_cos;
};
AblationRuns ablation_runs;

double mean_abs_cos(const TrainedModel& m, const std::vector<synth::Triplet>& queries, const RenderCache& renders) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& t : queries) {
    TokenMatrix q = embed_query_of(m, t, renders);
    for (std::size_t a = 0; a < q.tokens(); ++a)
      for (std::size_t b = a + 1; b < q.tokens(); ++b) {
        double dot = 0.0;
        for (std::size_t d = 0; d < q.dim(); ++d) dot += q.normalized.at(d, a) * q.normalized.at(d, b);
        total += std::abs(dot);
        ++n;
      }
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

enum class Arm { kFull, kOneFactor, kNoOrtho };

AblationRuns& ablations(Arm need) {
  static std::set<Arm> have;
  AblationRuns& a = ablation_runs;
  if (!a.done) {
    a.ds = synth::generate_dataset({96, 600, 3, 2, 0.05, 7});
    a.done = true;
  }
  if (have.count(need)) return a;
  RenderCache renders(a.ds);
  synth::Split split = synth::split_triplets(a.ds.triplets);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    TrainConfig cfg = desk_config();
    cfg.seed = seed;
    if (need == Arm::kOneFactor) cfg.ablation.one_factor = true;
    if (need == Arm::kNoOrtho) cfg.ablation.no_ortho = true;
    TrainedModel m = train(split.train, a.ds, renders, cfg);
    if (need == Arm::kFull) {
      a.full_recall.push_back(evaluate(m, split.test, a.ds, renders, cfg.ks).average);
      a.full_cos.push_back(mean_abs_cos(m, split.test, renders));
    } else if (need == Arm::kOneFactor) {
      a.one_recall.push_back(evaluate(m, split.test, a.ds, renders, cfg.ks).average);
    } else {
      a.no_ortho_cos.push_back(mean_abs_cos(m, split.test, renders));
    }
  }
  have.insert(need);
  return a;
}

Outcome token_count() {
  const auto t0 = std::chrono::steady_clock::now();
  ablations(Arm::kFull);
  AblationRuns& a = ablations(Arm::kOneFactor);
  std::vector<double> gaps;
  for (std::size_t i = 0; i < 3; ++i) gaps.push_back(a.full_recall[i] - a.one_recall[i]);
  const double m = median(gaps);
  return {m >= 0.02, "avg recall U=8 [" + list(a.full_recall) + "] U=1 [" + list(a.one_recall) +
                         "], median gap " + fmt("%.4f", m) + "; " + fmt("%.0f s", seconds_since(t0))};
}

Outcome orthogonality() {
  const auto t0 = std::chrono::steady_clock::now();
  ablations(Arm::kFull);
  AblationRuns& a = ablations(Arm::kNoOrtho);
  std::vector<double> drops;
  for (std::size_t i = 0; i < 3; ++i) drops.push_back(a.no_ortho_cos[i] - a.full_cos[i]);
  const double m = median(drops);
  return {m >= 0.05, "mean |cos| lambda=0.1 [" + list(a.full_cos) + "] lambda=0 [" + list(a.no_ortho_cos) +
                         "], median reduction " + fmt("%.4f", m) + "; " + fmt("%.0f s", seconds_since(t0))};
}

// 25% of the triplets: the first quarter of the train split's share of the
// 2000-triplet default world is 350 labeled triplets.
std::vector<synth::Triplet> scarce_train(const synth::Split& split) {
  const std::size_t n = std::min<std::size_t>(350, split.train.size());
  return {split.train.begin(), split.train.begin() + static_cast<std::ptrdiff_t>(n)};
}

bool filter_law(const ParadigmResult& r) {
  for (const auto& h : r.history)
    if (h.retained_min && h.discarded_max && *h.retained_min < *h.discarded_max) return false;
  return true;
}

Outcome self_training() {
  const auto t0 = std::chrono::steady_clock::now();
  synth::Dataset ds = synth::generate_dataset({});
  RenderCache renders(ds);
  synth::Split split = synth::split_triplets(ds.triplets);
  auto labeled = scarce_train(split);
  std::vector<double> base, gains;
  bool law = true;
  std::size_t filtered = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    LimnPort port(ds, renders, desk_config());
    SelfTrainConfig sc;
    sc.seed = seed;
    sc.max_iters = 1;
    ParadigmResult r = run_paradigm(labeled, split.val, ds, renders, port, CaptionerConfig{}, sc);
    if (r.history.size() < 2) return {false, "seed " + std::to_string(seed) + " stopped early: " + r.stop_reason};
    base.push_back(r.history[0].recall.average);
    gains.push_back(r.history[1].recall.average - r.history[0].recall.average);
    law = law && filter_law(r);
    if (r.history[1].discarded_max) ++filtered;
  }
  const double m = median(gains);
  return {m >= 0.01 && law, std::to_string(labeled.size()) + " labeled, val avg recall S1 [" + list(base) +
                                "] gain [" + list(gains) + "], median gain " + fmt("%.4f", m) +
                                "; filter law " + (law ? "holds" : "violated") + " (" + std::to_string(filtered) +
                                "/3 runs discarded pairs); " + fmt("%.0f s", seconds_since(t0))};
}

Outcome generality() {
  const auto t0 = std::chrono::steady_clock::now();
  synth::Dataset ds = synth::generate_dataset({});
  RenderCache renders(ds);
  synth::Split split = synth::split_triplets(ds.triplets);
  BagOfAttributesPort port(ds);
  SelfTrainConfig sc;
  sc.seed = 0;
  sc.max_iters = 2;
  ParadigmResult r = run_paradigm(scarce_train(split), split.val, ds, renders, port, CaptionerConfig{}, sc);
  std::vector<double> recall;
  for (const auto& h : r.history) recall.push_back(h.recall.average);
  const double best = recall.at(r.best_iteration);
  const bool argmax = best == *std::max_element(recall.begin(), recall.end());
  const bool pass = r.history.size() >= 2 && best >= recall.front() && argmax && filter_law(r);
  return {pass, "bag_of_attributes val avg recall per iteration [" + list(recall) + "], best iteration " +
                    std::to_string(r.best_iteration) + ", stop " + r.stop_reason + "; " +
                    fmt("%.0f s", seconds_since(t0))};
}

Outcome text_metrics() {
  const double b = bleu1(std::vector<std::string>{"red", "dress"}, {{"red", "long", "dress"}});
  const double r = rouge_l(std::vector<std::string>{"a", "b", "c"}, std::vector<std::string>{"a", "c", "b"});
  const double eb = std::abs(b - std::exp(-0.5)), er = std::abs(r - 2.0 / 3.0);
  return {eb <= 1e-9 && er <= 1e-9,
          "BLEU-1 " + fmt("%.9f", b) + " (err " + fmt("%.1e", eb) + "), ROUGE-L " + fmt("%.9f", r) + " (err " +
              fmt("%.1e", er) + ")"};
}

// Runs every subcommand twice in separate directories with the same seeds and
// compares all produced files byte for byte.
std::string cli_path;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  if (cli_path.empty() || !fs::exists(cli_path)) return {false, "CLI binary not found: " + cli_path};
  const fs::path root = limn::testing::scratch_dir("acceptance_cli");
  const std::vector<std::string> steps = {
      "gen-data --out data --items 60 --triplets 200 --slots 3 --seed 3",
      "train --data data --out train --preset desk --epochs 2 --seed 3",
      "eval --data data --model train/model.json --out eval",
      "score --data data --model train/model.json --out score",
      "mine-pairs --data data --model train/model.json --out mine --strategy similarity_band --seed 3",
      "caption --data data --pairs mine/pairs.jsonl --out caption --cap-epochs 2 --seed 3",
      "self-train --data data --out self --preset desk --epochs 2 --cap-epochs 2 --max-iters 1",
      "report train self --out report",
  };
  for (const char* run : {"a", "b"}) {
    const fs::path dir = root / run;
    fs::create_directories(dir);
    for (const auto& step : steps) {
      // self-train takes its seed from the environment.
      const std::string cmd = "cd '" + dir.string() + "' && LIMN_SEED=4 '" + cli_path + "' " + step + " >> '" +
                              (root / (std::string(run) + ".log")).string() + "' 2>&1";
      if (std::system(cmd.c_str()) != 0) return {false, "run " + std::string(run) + " failed at: " + step};
    }
  }
  std::map<std::string, fs::path> a_files, b_files;
  for (auto& e : fs::recursive_directory_iterator(root / "a"))
    if (e.is_regular_file()) a_files[fs::relative(e.path(), root / "a").string()] = e.path();
  for (auto& e : fs::recursive_directory_iterator(root / "b"))
    if (e.is_regular_file()) b_files[fs::relative(e.path(), root / "b").string()] = e.path();
  std::vector<std::string> differing;
  for (const auto& [name, path] : a_files) {
    auto it = b_files.find(name);
    if (it == b_files.end() || read_file(path) != read_file(it->second)) differing.push_back(name);
  }
  for (const auto& [name, path] : b_files)
    if (!a_files.count(name)) differing.push_back(name);
  std::string detail = std::to_string(steps.size()) + " subcommands, " + std::to_string(a_files.size()) +
                       " files compared, " + std::to_string(differing.size()) + " differ";
  for (const auto& d : differing) detail += " " + d;
  fs::remove_all(root);
  return {differing.empty() && a_files.size() >= steps.size(), detail + "; " + fmt("%.0f s", seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <limn-cli> [criterion ...]\n", argv[0]);
    return 2;
  }
  cli_path = fs::absolute(argv[1]).string();
  std::set<int> selected;
  for (int i = 2; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient checks", gradients},
      {"permutation invariance", permutation},
      {"closed-form losses", closed_forms},
      {"score equivalence", score_equivalence},
      {"end-to-end learnability", learnability},
      {"multi-token beats one token", token_count},
      {"orthogonality lowers token overlap", orthogonality},
      {"self-training gain", self_training},
      {"paradigm with a second model", generality},
      {"text metrics", text_metrics},
      {"CLI determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
