// limn command-line front end over the C interface.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "limn/limn.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(limn_status s) {
  if (s != LIMN_OK) throw CliError(limn_last_error());
}

// Owns a string returned by the library.
class Owned {
 public:
  Owned() = default;
  ~Owned() { limn_string_free(p_); }
  Owned(const Owned&) = delete;
  Owned& operator=(const Owned&) = delete;
  char** out() { return &p_; }
  std::string str() const { return p_ ? p_ : ""; }

 private:
  char* p_ = nullptr;
};

template <typename T, void (*Free)(T*)>
class Handle {
 public:
  Handle() = default;
  ~Handle() { Free(p_); }
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  T** out() { return &p_; }
  T* get() const { return p_; }

 private:
  T* p_ = nullptr;
};

using Dataset = Handle<limn_dataset, limn_dataset_free>;
using Model = Handle<limn_model, limn_model_free>;
using Captioner = Handle<limn_captioner, limn_captioner_free>;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CliError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw CliError("cannot write " + p.string());
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
  if (!out) throw CliError("failed writing " + p.string());
}

void make_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw CliError("cannot create output directory " + dir.string());
}

std::vector<std::string> keys_of(const std::string& command) {
  Owned j;
  check(limn_config_keys(command.c_str(), j.out()));
  return json::parse(j.str()).get<std::vector<std::string>>();
}

std::string flag_name(std::string key) {
  for (auto& c : key)
    if (c == '_') c = '-';
  return "--" + key;
}

struct Command {
  std::string name;
  CLI::App* app = nullptr;
  std::string config_file;
  std::string out;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  // Config file, then flags, then LIMN_SEED when no seed was given.
  std::string config_text() const {
    std::string text;
    bool seeded = false;
    if (!config_file.empty()) {
      text = read_file(config_file) + "\n";
      std::istringstream in(text);
      std::string line;
      while (std::getline(in, line)) {
        auto s = line.substr(0, line.find('#'));
        auto eq = s.find('=');
        if (eq == std::string::npos) continue;
        auto k = s.substr(0, eq);
        k.erase(0, k.find_first_not_of(" \t"));
        k.erase(k.find_last_not_of(" \t") + 1);
        if (k == "seed") seeded = true;
      }
    }
    for (const auto& [k, opt] : options)
      if (opt->count() > 0) {
        text += k + "=" + values.at(k) + "\n";
        if (k == "seed") seeded = true;
      }
    if (!seeded && options.count("seed"))
      if (const char* env = std::getenv("LIMN_SEED")) text += std::string("seed=") + env + "\n";
    return text;
  }

  // Resolves and echoes the config under --out; returns the text to pass on.
  std::string resolve() const {
    std::string text = config_text();
    Owned resolved;
    check(limn_config_resolve(name.c_str(), text.c_str(), resolved.out()));
    make_out_dir(out);
    write_file(fs::path(out) / "config.txt", resolved.str());
    return resolved.str();
  }
};

Command& add_command(CLI::App& app, std::vector<std::unique_ptr<Command>>& cmds, const std::string& name,
                     const std::string& help) {
  auto c = std::make_unique<Command>();
  c->name = name;
  c->app = app.add_subcommand(name, help);
  c->app->add_option("--config", c->config_file, "key=value config file; flags override it")
      ->check(CLI::ExistingFile);
  c->app->add_option("--out", c->out, "output directory")->required();
  for (const auto& k : keys_of(name)) {
    c->values[k];
    c->options[k] = c->app->add_option(flag_name(k), c->values[k], "config key " + k);
  }
  cmds.push_back(std::move(c));
  return *cmds.back();
}

std::string recall_table(const json& report) {
  std::ostringstream os;
  std::string head, row;
  char buf[64];
  for (const auto& k : report.at("ks")) {
    const std::string key = "R@" + std::to_string(k.get<std::size_t>());
    std::snprintf(buf, sizeof buf, "%10s", key.c_str());
    head += buf;
    std::snprintf(buf, sizeof buf, "%10.4f", report.at("recall").at(key).get<double>());
    row += buf;
  }
  std::snprintf(buf, sizeof buf, "%10s", "average");
  head += buf;
  std::snprintf(buf, sizeof buf, "%10.4f", report.at("average").get<double>());
  row += buf;
  os << head << "\n" << row << "\n";
  os << "(" << report.at("queries") << " queries, gallery " << report.at("gallery_size") << ")\n";
  return os.str();
}

// Value of `key` in resolved key=value text.
std::string config_value(const std::string& cfg, const std::string& key) {
  std::istringstream in(cfg);
  for (std::string line; std::getline(in, line);)
    if (line.rfind(key + "=", 0) == 0) return line.substr(key.size() + 1);
  throw CliError("resolved config lacks " + key);
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

void load_dataset(const std::string& dir, Dataset& ds) {
  if (dir.empty()) throw CliError("--data is required");
  check(limn_dataset_load(dir.c_str(), ds.out()));
}

// ---- subcommands ----

void run_gen_data(const Command& c) {
  const std::string cfg = c.resolve();
  Dataset ds;
  check(limn_dataset_generate(cfg.c_str(), ds.out()));
  check(limn_dataset_save(ds.get(), c.out.c_str()));
  Owned summary;
  check(limn_dataset_summary(ds.get(), summary.out()));
  std::cout << summary.str() << "\n";
}

void run_train(const Command& c, const std::string& data) {
  const std::string cfg = c.resolve();
  Dataset ds;
  load_dataset(data, ds);
  Model m;
  check(limn_model_train(ds.get(), cfg.c_str(), m.out()));
  const fs::path out(c.out);
  check(limn_model_save(m.get(), (out / "model.json").c_str()));

  const std::string test_source = config_value(cfg, "test");
  Owned report, mj, csv;
  const bool with_test = test_source != "none";
  if (with_test) check(limn_model_evaluate(m.get(), ds.get(), test_source.c_str(), nullptr, report.out()));
  check(limn_model_metrics(m.get(), with_test ? report.str().c_str() : nullptr, mj.out(), csv.out()));
  write_file(out / "metrics.json", mj.str());
  write_file(out / "metrics.csv", csv.str());
  Owned hash;
  check(limn_model_hash(m.get(), hash.out()));
  std::cout << "model " << hash.str() << " -> " << (out / "model.json").string() << "\n";
  if (with_test) std::cout << recall_table(json::parse(report.str()));
}

void run_eval(const Command& c, const std::string& data, const std::string& model) {
  const std::string cfg = c.resolve();
  Dataset ds;
  load_dataset(data, ds);
  Model m;
  if (model.empty()) throw CliError("--model is required");
  check(limn_model_load(model.c_str(), m.out()));
  Owned report, mj, csv;
  const std::string source = config_value(cfg, "test"), ks = config_value(cfg, "ks");
  check(limn_model_evaluate(m.get(), ds.get(), source.c_str(), ks.c_str(), report.out()));
  check(limn_model_metrics(m.get(), report.str().c_str(), mj.out(), csv.out()));
  const fs::path out(c.out);
  write_file(out / "metrics.json", mj.str());
  write_file(out / "metrics.csv", csv.str());
  std::cout << recall_table(json::parse(report.str()));
}

void run_score(const Command& c, const std::string& data, const std::string& model) {
  const std::string cfg = c.resolve();
  const std::string source = config_value(cfg, "queries");
  Dataset ds;
  load_dataset(data, ds);
  Model m;
  if (model.empty()) throw CliError("--model is required");
  check(limn_model_load(model.c_str(), m.out()));
  Owned lines;
  check(limn_model_score(m.get(), ds.get(), source.c_str(), lines.out()));
  write_file(fs::path(c.out) / "scores.jsonl", lines.str());
  std::cout << "scored " << line_count(lines.str()) << " triplets\n";
}

void run_mine_pairs(const Command& c, const std::string& data, const std::string& model) {
  const std::string cfg = c.resolve();
  Dataset ds;
  load_dataset(data, ds);
  Model m;
  if (!model.empty()) check(limn_model_load(model.c_str(), m.out()));
  Owned lines;
  check(limn_mine_pairs(ds.get(), m.get(), cfg.c_str(), lines.out()));
  write_file(fs::path(c.out) / "pairs.jsonl", lines.str());
  std::cout << "mined " << line_count(lines.str()) << " pairs\n";
}

void run_caption(const Command& c, const std::string& data, const std::string& captioner, const std::string& pairs) {
  const std::string cfg = c.resolve();
  Dataset ds;
  load_dataset(data, ds);
  Captioner cap;
  const fs::path out(c.out);
  if (captioner.empty()) {
    check(limn_captioner_train(ds.get(), cfg.c_str(), cap.out()));
    check(limn_captioner_save(cap.get(), (out / "captioner.json").c_str()));
    Owned metrics;
    check(limn_captioner_evaluate(cap.get(), ds.get(), "val", metrics.out()));
    write_file(out / "caption_metrics.json", metrics.str());
    std::cout << "captioner trained; validation " << json::parse(metrics.str()).dump() << "\n";
  } else {
    check(limn_captioner_load(captioner.c_str(), cap.out()));
  }
  if (pairs.empty()) return;
  Owned lines;
  check(limn_captioner_caption(cap.get(), ds.get(), pairs.c_str(), lines.out()));
  write_file(out / "captions.jsonl", lines.str());
  std::cout << "captioned " << line_count(lines.str()) << " pairs\n";
}

void run_self_train(const Command& c, const std::string& data) {
  const std::string cfg = c.resolve();
  Dataset ds;
  load_dataset(data, ds);
  Owned report;
  check(limn_self_train(ds.get(), cfg.c_str(), c.out.c_str(), report.out()));
  write_file(fs::path(c.out) / "selftrain_report.json", report.str());
  json r = json::parse(report.str());
  std::printf("%5s %8s %8s %9s %10s %10s\n", "iter", "train", "pairs", "retained", "avg R", "caption");
  for (const auto& it : r.at("iterations"))
    std::printf("%5zu %8zu %8zu %9zu %10.4f %10.4f\n", it.at("iteration").get<std::size_t>(),
                it.at("train_size").get<std::size_t>(), it.at("pairs_mined").get<std::size_t>(),
                it.at("retained").get<std::size_t>(), it.at("recall").at("average").get<double>(),
                it.at("captions").at("average").get<double>());
  std::cout << "best iteration " << r.at("best_iteration") << ", stopped: " << r.at("stop_reason").get<std::string>()
            << "\n";
}

void run_report(const Command& c, const std::vector<std::string>& runs) {
  c.resolve();
  if (runs.empty()) throw CliError("report needs at least one run directory");
  std::ostringstream md, csv;
  md << "| run | kind | row | R@1 | R@10 | R@50 | average |\n|---|---|---|---|---|---|---|\n";
  csv << "run,kind,row,R@1,R@10,R@50,average\n";
  auto cell = [](const json& rep, const std::string& key) -> std::string {
    if (!rep.at("recall").contains(key)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", rep.at("recall").at(key).get<double>());
    return buf;
  };
  auto emit = [&](const std::string& run, const std::string& kind, const std::string& row, const json& rep) {
    char avg[32];
    std::snprintf(avg, sizeof avg, "%.4f", rep.at("average").get<double>());
    const std::string r1 = cell(rep, "R@1"), r10 = cell(rep, "R@10"), r50 = cell(rep, "R@50");
    md << "| " << run << " | " << kind << " | " << row << " | " << r1 << " | " << r10 << " | " << r50 << " | " << avg
       << " |\n";
    csv << run << "," << kind << "," << row << "," << r1 << "," << r10 << "," << r50 << "," << avg << "\n";
  };
  for (const auto& run : runs) {
    const fs::path dir(run);
    const std::string name = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
    bool found = false;
    if (fs::exists(dir / "metrics.json")) {
      json m = json::parse(read_file(dir / "metrics.json"));
      if (m.contains("test")) emit(name, "metrics", "test", m.at("test"));
      found = true;
    }
    if (fs::exists(dir / "selftrain_report.json")) {
      json r = json::parse(read_file(dir / "selftrain_report.json"));
      for (const auto& it : r.at("iterations"))
        emit(name, "self-train", "iter " + std::to_string(it.at("iteration").get<std::size_t>()), it.at("recall"));
      found = true;
    }
    if (!found) throw CliError(run + " has neither metrics.json nor selftrain_report.json");
  }
  write_file(fs::path(c.out) / "report.md", md.str());
  write_file(fs::path(c.out) / "report.csv", csv.str());
  std::cout << md.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"limn: composed image retrieval with matching tokens and dual self-training"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(limn_version()));

  std::vector<std::unique_ptr<Command>> cmds;
  std::string data, model, captioner, pairs;
  std::vector<std::string> runs;
  try {
    auto& gen = add_command(app, cmds, "gen-data", "generate the synthetic catalog and triplets");
    auto& train = add_command(app, cmds, "train", "train the retrieval model");
    auto& eval = add_command(app, cmds, "eval", "evaluate a checkpoint");
    auto& score = add_command(app, cmds, "score", "score triplets with a checkpoint");
    auto& mine = add_command(app, cmds, "mine-pairs", "mine unlabeled reference-target pairs");
    auto& cap = add_command(app, cmds, "caption", "train a difference captioner and caption pairs");
    auto& self = add_command(app, cmds, "self-train", "run the iterative dual self-training loop");
    auto& report = add_command(app, cmds, "report", "tabulate metrics from run directories");
    for (auto* c : {&train, &eval, &score, &mine, &cap, &self})
      c->app->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    for (auto* c : {&eval, &score})
      c->app->add_option("--model", model, "retrieval checkpoint manifest")->required()->check(CLI::ExistingFile);
    mine.app->add_option("--model", model, "retrieval checkpoint (needed by similarity_band, taxonomy_visual)")
        ->check(CLI::ExistingFile);
    cap.app->add_option("--captioner", captioner, "captioner checkpoint; trained from --train when absent")
        ->check(CLI::ExistingFile);
    cap.app->add_option("--pairs", pairs, "pairs.jsonl to caption")->check(CLI::ExistingFile);
    report.app->add_option("runs", runs, "run directories")->required();

    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      return app.exit(e);
    }

    if (gen.app->parsed()) run_gen_data(gen);
    else if (train.app->parsed()) run_train(train, data);
    else if (eval.app->parsed()) run_eval(eval, data, model);
    else if (score.app->parsed()) run_score(score, data, model);
    else if (mine.app->parsed()) run_mine_pairs(mine, data, model);
    else if (cap.app->parsed()) run_caption(cap, data, captioner, pairs);
    else if (self.app->parsed()) run_self_train(self, data);
    else if (report.app->parsed()) run_report(report, runs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
