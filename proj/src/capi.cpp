#include "limn/limn.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>

#include "limn/captioner.hpp"
#include "limn/config.hpp"
#include "limn/error.hpp"
#include "limn/selftrain.hpp"
#include "limn/trainer.hpp"

using nlohmann::json;

struct limn_dataset {
  limn::synth::Dataset ds;
  limn::RenderCache renders;
};

struct limn_model {
  limn::TrainedModel model;
};

struct limn_captioner {
  limn::CaptionerModel model;
};

namespace {

thread_local std::string g_last_error;

limn_status fail(limn_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <typename F>
limn_status guarded(F&& f) {
  try {
    g_last_error.clear();
    f();
    return LIMN_OK;
  } catch (const limn::Error& e) {
    return fail(static_cast<limn_status>(e.code()), e.what());
  } catch (const json::exception& e) {
    return fail(LIMN_ERR_PARSE, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(LIMN_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(LIMN_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(LIMN_ERR_INTERNAL, "unknown failure");
  }
}

char* copy_out(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

void require(const void* p, const char* what) {
  if (!p) throw limn::InvalidArgument(std::string(what) + " must not be NULL");
}

limn::KeyValues parse_config(const char* config) { return limn::KeyValues::parse(config ? config : ""); }

std::vector<limn::synth::Triplet> training_set(const limn::synth::Dataset& ds, const limn::RunSettings& s) {
  return limn::take_fraction(limn::resolve_source(ds, s.train_source), s.train_fraction);
}

}  // namespace

extern "C" {

const char* limn_version(void) { return "0.1.0"; }

const char* limn_last_error(void) { return g_last_error.c_str(); }

void limn_string_free(char* s) { std::free(s); }

limn_status limn_config_resolve(const char* command, const char* config, char** resolved) {
  return guarded([&] {
    require(command, "command");
    require(resolved, "resolved");
    auto s = limn::resolve_settings(command, parse_config(config));
    *resolved = copy_out(limn::settings_echo(command, s).dump());
  });
}

limn_status limn_config_keys(const char* command, char** out) {
  return guarded([&] {
    require(command, "command");
    require(out, "out");
    *out = copy_out(json(limn::command_keys(command)).dump());
  });
}

limn_status limn_dataset_generate(const char* config, limn_dataset** out) {
  return guarded([&] {
    require(out, "out");
    auto s = limn::resolve_settings("gen-data", parse_config(config));
    auto h = std::make_unique<limn_dataset>();
    h->ds = limn::synth::generate_dataset(s.world);
    h->renders = limn::RenderCache(h->ds);
    *out = h.release();
  });
}

limn_status limn_dataset_load(const char* dir, limn_dataset** out) {
  return guarded([&] {
    require(dir, "dir");
    require(out, "out");
    auto h = std::make_unique<limn_dataset>();
    h->ds = limn::synth::load_dataset(dir);
    h->renders = limn::RenderCache(h->ds);
    *out = h.release();
  });
}

limn_status limn_dataset_save(const limn_dataset* ds, const char* dir) {
  return guarded([&] {
    require(ds, "dataset");
    require(dir, "dir");
    limn::synth::save_dataset(ds->ds, dir);
  });
}

limn_status limn_dataset_summary(const limn_dataset* ds, char** out) {
  return guarded([&] {
    require(ds, "dataset");
    require(out, "out");
    const auto& d = ds->ds;
    auto sp = limn::synth::split_triplets(d.triplets);
    std::size_t max_clauses = 0;
    for (const auto& t : d.triplets) {
      auto diff = limn::synth::parse_caption(t.caption, d.spec, d.vocab);
      if (diff) max_clauses = std::max(max_clauses, diff->size());
    }
    json j = {{"items", d.catalog.size()},
              {"triplets", d.triplets.size()},
              {"slots", d.spec.num_slots()},
              {"vocab", d.vocab.size()},
              {"splits", {{"train", sp.train.size()}, {"val", sp.val.size()}, {"test", sp.test.size()}}},
              {"max_caption_clauses", max_clauses}};
    *out = copy_out(j.dump(2));
  });
}

void limn_dataset_free(limn_dataset* ds) { delete ds; }

limn_status limn_model_train(const limn_dataset* ds, const char* config, limn_model** out) {
  return guarded([&] {
    require(ds, "dataset");
    require(out, "out");
    auto s = limn::resolve_settings("train", parse_config(config));
    auto h = std::make_unique<limn_model>();
    if (s.train.epochs == 0) {
      limn::TrainConfig c = s.train;
      c.epochs = 1;
      c.validate();
      h->model = limn::init_model(c, ds->ds.vocab.size());
    } else {
      limn::TrainOptions opts;
      if (s.val_source != "none") opts.validation = limn::resolve_source(ds->ds, s.val_source);
      h->model = limn::train(training_set(ds->ds, s), ds->ds, ds->renders, s.train, opts);
    }
    *out = h.release();
  });
}

limn_status limn_model_load(const char* manifest, limn_model** out) {
  return guarded([&] {
    require(manifest, "manifest");
    require(out, "out");
    auto h = std::make_unique<limn_model>();
    h->model = limn::from_checkpoint(limn::load_checkpoint(manifest));
    *out = h.release();
  });
}

limn_status limn_model_save(const limn_model* m, const char* manifest) {
  return guarded([&] {
    require(m, "model");
    require(manifest, "manifest");
    limn::save_checkpoint(manifest, limn::to_checkpoint(m->model));
  });
}

limn_status limn_model_hash(const limn_model* m, char** hex) {
  return guarded([&] {
    require(m, "model");
    require(hex, "hex");
    *hex = copy_out(limn::hash_hex(m->model.hash()));
  });
}

limn_status limn_model_evaluate(const limn_model* m, const limn_dataset* ds, const char* source, const char* ks,
                                char** report_json) {
  return guarded([&] {
    require(m, "model");
    require(ds, "dataset");
    require(source, "source");
    require(report_json, "report_json");
    std::vector<std::size_t> cut = m->model.config.ks;
    if (ks && *ks) {
      limn::KeyValues kv;
      kv.set("ks", ks);
      cut = limn::resolve_settings("eval", kv).train.ks;
    }
    auto queries = limn::resolve_source(ds->ds, source);
    *report_json = copy_out(limn::report_to_json(limn::evaluate(m->model, queries, ds->ds, ds->renders, cut)).dump(2));
  });
}

limn_status limn_model_metrics(const limn_model* m, const char* test_report_json, char** js, char** csv) {
  return guarded([&] {
    require(m, "model");
    std::optional<limn::RecallReport> test;
    if (test_report_json) test = limn::report_from_json(json::parse(test_report_json));
    if (js) *js = copy_out(limn::metrics_json(m->model, test).dump(2));
    if (csv) *csv = copy_out(limn::metrics_csv(m->model, test));
  });
}

limn_status limn_model_score(const limn_model* m, const limn_dataset* ds, const char* source, char** jsonl) {
  return guarded([&] {
    require(m, "model");
    require(ds, "dataset");
    require(source, "source");
    require(jsonl, "jsonl");
    std::string out;
    for (auto t : limn::resolve_source(ds->ds, source)) {
      t.score = limn::score_triplet(m->model, t, ds->renders);
      out += limn::synth::triplet_to_json(t).dump() + "\n";
    }
    *jsonl = copy_out(out);
  });
}

void limn_model_free(limn_model* m) { delete m; }

limn_status limn_captioner_train(const limn_dataset* ds, const char* config, limn_captioner** out) {
  return guarded([&] {
    require(ds, "dataset");
    require(out, "out");
    auto s = limn::resolve_settings("caption", parse_config(config));
    auto h = std::make_unique<limn_captioner>();
    h->model = limn::train_captioner(training_set(ds->ds, s), ds->ds, ds->renders, s.captioner);
    *out = h.release();
  });
}

limn_status limn_captioner_load(const char* manifest, limn_captioner** out) {
  return guarded([&] {
    require(manifest, "manifest");
    require(out, "out");
    auto h = std::make_unique<limn_captioner>();
    h->model = limn::captioner_from_checkpoint(limn::load_checkpoint(manifest));
    *out = h.release();
  });
}

limn_status limn_captioner_save(const limn_captioner* c, const char* manifest) {
  return guarded([&] {
    require(c, "captioner");
    require(manifest, "manifest");
    limn::save_checkpoint(manifest, limn::to_checkpoint(c->model));
  });
}

limn_status limn_captioner_caption(const limn_captioner* c, const limn_dataset* ds, const char* pairs_path,
                                   char** jsonl) {
  return guarded([&] {
    require(c, "captioner");
    require(ds, "dataset");
    require(pairs_path, "pairs_path");
    require(jsonl, "jsonl");
    const std::string hash = limn::hash_hex(c->model.hash());
    std::string out;
    for (const auto& p : limn::synth::read_pairs(pairs_path)) {
      auto cap = limn::generate_caption(c->model, ds->ds.item(p.ref_id), ds->ds.item(p.tgt_id), ds->ds, ds->renders);
      json j = {{"ref_id", p.ref_id}, {"tgt_id", p.tgt_id}, {"caption", cap}, {"model_hash", hash}};
      out += j.dump() + "\n";
    }
    *jsonl = copy_out(out);
  });
}

limn_status limn_captioner_evaluate(const limn_captioner* c, const limn_dataset* ds, const char* source,
                                    char** out) {
  return guarded([&] {
    require(c, "captioner");
    require(ds, "dataset");
    require(source, "source");
    require(out, "out");
    auto m = limn::evaluate_captioner(c->model, limn::resolve_source(ds->ds, source), ds->ds, ds->renders);
    *out = copy_out(limn::caption_metrics_json(m).dump(2));
  });
}

void limn_captioner_free(limn_captioner* c) { delete c; }

limn_status limn_mine_pairs(const limn_dataset* ds, const limn_model* model, const char* config, char** jsonl) {
  return guarded([&] {
    require(ds, "dataset");
    require(jsonl, "jsonl");
    auto s = limn::resolve_settings("mine-pairs", parse_config(config));
    auto labeled = limn::resolve_source(ds->ds, s.labeled_source);
    std::unique_ptr<limn::LimnPort> port;
    if (model) {
      port = std::make_unique<limn::LimnPort>(ds->ds, ds->renders, model->model.config);
      port->set_model(model->model);
    }
    auto pairs = limn::mine_pairs(ds->ds, s.selftrain.mining, port.get(), labeled, s.selftrain.seed);
    std::string out;
    for (const auto& p : pairs) out += limn::synth::pair_to_json(p).dump() + "\n";
    *jsonl = copy_out(out);
  });
}

limn_status limn_self_train(const limn_dataset* ds, const char* config, const char* out_dir, char** report_json) {
  return guarded([&] {
    require(ds, "dataset");
    require(out_dir, "out_dir");
    require(report_json, "report_json");
    auto s = limn::resolve_settings("self-train", parse_config(config));
    auto original = training_set(ds->ds, s);
    auto validation = limn::resolve_source(ds->ds, s.val_source);
    std::unique_ptr<limn::CirModelPort> port;
    if (s.cir == "limn")
      port = std::make_unique<limn::LimnPort>(ds->ds, ds->renders, s.train);
    else
      port = std::make_unique<limn::BagOfAttributesPort>(ds->ds);
    auto res = limn::run_paradigm(original, validation, ds->ds, ds->renders, *port, s.captioner, s.selftrain);
    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    limn::save_checkpoint(dir / "best_model.json", res.best_cir);
    limn::save_checkpoint(dir / "best_captioner.json", limn::to_checkpoint(res.best_captioner));
    *report_json = copy_out(limn::selftrain_report(res, s.selftrain, port->kind()).dump(2));
  });
}

}  // extern "C"
