#include <doctest.h>

#include <cstring>
#include <string>

#include <json.hpp>

#include "limn/limn.h"
#include "support.hpp"

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  limn_string_free(s);
  return out;
}

const char* kWorld = "items=40\ntriplets=120\nslots=3\nseed=5\n";

}  // namespace

TEST_CASE("version and free of null handles") {
  CHECK(std::string(limn_version()) == "0.1.0");
  limn_dataset_free(nullptr);
  limn_model_free(nullptr);
  limn_captioner_free(nullptr);
  limn_string_free(nullptr);
}

TEST_CASE("config errors carry codes and messages") {
  char* out = nullptr;
  CHECK(limn_config_resolve("train", "bogus=1", &out) == LIMN_ERR_INVALID_ARGUMENT);
  CHECK(std::string(limn_last_error()).find("bogus") != std::string::npos);
  CHECK(out == nullptr);
  CHECK(limn_config_resolve("train", "no equals sign", &out) == LIMN_ERR_PARSE);
  CHECK(limn_config_resolve("nope", "", &out) == LIMN_ERR_INVALID_ARGUMENT);
  CHECK(limn_config_resolve("train", "", nullptr) == LIMN_ERR_INVALID_ARGUMENT);
  REQUIRE(limn_config_resolve("train", nullptr, &out) == LIMN_OK);
  CHECK(take(out).find("tau=10\n") != std::string::npos);

  REQUIRE(limn_config_resolve("train", "preset=desk\nepochs=3", &out) == LIMN_OK);
  const std::string echo = take(out);
  CHECK(echo.find("epochs=3\n") != std::string::npos);
  CHECK(echo.find("tau=0.1\n") != std::string::npos);
  CHECK(echo.find("lr=0.003\n") != std::string::npos);

  REQUIRE(limn_config_keys("gen-data", &out) == LIMN_OK);
  auto keys = nlohmann::json::parse(take(out));
  CHECK(keys.size() == 6);
}

TEST_CASE("missing files map to the io code") {
  limn_dataset* ds = nullptr;
  CHECK(limn_dataset_load("/nonexistent/limn", &ds) == LIMN_ERR_IO);
  CHECK(ds == nullptr);
  CHECK(std::strlen(limn_last_error()) > 0);
  limn_model* m = nullptr;
  CHECK(limn_model_load("/nonexistent/model.json", &m) == LIMN_ERR_IO);
}

TEST_CASE("dataset, untrained model and evaluation through the C interface") {
  limn_dataset* ds = nullptr;
  REQUIRE(limn_dataset_generate(kWorld, &ds) == LIMN_OK);
  char* out = nullptr;
  REQUIRE(limn_dataset_summary(ds, &out) == LIMN_OK);
  auto summary = nlohmann::json::parse(take(out));
  CHECK(summary.at("items") == 40);
  CHECK(summary.at("triplets") == 120);

  const auto dir = limn::testing::scratch_dir("capi");
  REQUIRE(limn_dataset_save(ds, dir.c_str()) == LIMN_OK);
  limn_dataset* loaded = nullptr;
  REQUIRE(limn_dataset_load(dir.c_str(), &loaded) == LIMN_OK);
  REQUIRE(limn_dataset_summary(loaded, &out) == LIMN_OK);
  CHECK(nlohmann::json::parse(take(out)) == summary);

  limn_model* m = nullptr;
  REQUIRE(limn_model_train(ds, "epochs=0\ndim=8\nu=2\nheads=2\nseed=1", &m) == LIMN_OK);
  REQUIRE(limn_model_hash(m, &out) == LIMN_OK);
  const std::string hash = take(out);
  CHECK(hash.size() == 16);

  const std::string manifest = (dir / "model.json").string();
  REQUIRE(limn_model_save(m, manifest.c_str()) == LIMN_OK);
  limn_model* back = nullptr;
  REQUIRE(limn_model_load(manifest.c_str(), &back) == LIMN_OK);
  REQUIRE(limn_model_hash(back, &out) == LIMN_OK);
  CHECK(take(out) == hash);

  REQUIRE(limn_model_evaluate(m, ds, "test", "1,10", &out) == LIMN_OK);
  auto report = nlohmann::json::parse(take(out));
  CHECK(report.at("gallery_size") == 40);
  CHECK(limn_model_evaluate(m, ds, "nowhere.jsonl", nullptr, &out) == LIMN_ERR_IO);
  CHECK(limn_model_evaluate(nullptr, ds, "test", nullptr, &out) == LIMN_ERR_INVALID_ARGUMENT);

  REQUIRE(limn_model_score(m, ds, "val", &out) == LIMN_OK);
  const std::string scores = take(out);
  CHECK(!scores.empty());

  // tfidf mining needs no model.
  REQUIRE(limn_mine_pairs(ds, nullptr, "strategy=tfidf_title\nbudget=5", &out) == LIMN_OK);
  const std::string pairs = take(out);
  CHECK(!pairs.empty());
  CHECK(limn_mine_pairs(ds, nullptr, "strategy=similarity_band", &out) == LIMN_ERR_STATE);

  limn_model_free(back);
  limn_model_free(m);
  limn_dataset_free(loaded);
  limn_dataset_free(ds);
}
