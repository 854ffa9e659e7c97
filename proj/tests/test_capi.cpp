// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "codistill/codistill.h"
#include "doctest.h"

namespace fs = std::filesystem;

namespace {

const char* kConfig = R"([data]
classes = 3
dim = 4
per_class = 10
[model]
layers = dense:6,dense:5
fork = 1
branches = 2
[loss]
structure = codistillation
mu = 1
[training]
epochs = 2
batch_size = 6
)";

std::string take(char* text) {
  std::string out = text ? text : "";
  cd_string_free(text);
  return out;
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "codistill_test_capi" / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("null arguments and bad configs map to status codes") {
  CHECK(std::string(cd_version()).size() > 0);
  cd_config* config = nullptr;
  CHECK(cd_config_parse(nullptr, &config) == CD_ERR_ARGUMENT);
  CHECK(cd_config_parse("[loss]\nstructure = ensembling\nmu = 1\n", &config) == CD_ERR_CONFIG);
  CHECK(std::string(cd_last_error()).rfind("loss.mu:", 0) == 0);
  CHECK(config == nullptr);
  CHECK(cd_config_load("/nonexistent/config.ini", &config) == CD_ERR_IO);
  int passed = 0;
  char* text = nullptr;
  CHECK(cd_verify(0, 0, &passed, &text) == CD_ERR_ARGUMENT);
  cd_model* model = nullptr;
  CHECK(cd_model_load("/nonexistent/checkpoint.bin", &model) == CD_ERR_IO);
  cd_config_free(nullptr);
  cd_model_free(nullptr);
}

TEST_CASE("config echo round-trips through the C interface") {
  cd_config* config = nullptr;
  REQUIRE(cd_config_parse(kConfig, &config) == CD_OK);
  CHECK(std::string(cd_last_error()).empty());
  const std::uint64_t seeds[] = {4, 2};
  CHECK(cd_config_set_seeds(config, seeds, 2) == CD_OK);
  CHECK(cd_config_set_seeds(config, seeds, 0) == CD_ERR_ARGUMENT);
  CHECK(cd_config_set_out(config, "") == CD_ERR_ARGUMENT);
  char* echo = nullptr;
  REQUIRE(cd_config_echo(config, &echo) == CD_OK);
  const std::string first = take(echo);
  CHECK(first.find("seeds = 4,2") != std::string::npos);
  cd_config* again = nullptr;
  REQUIRE(cd_config_parse(first.c_str(), &again) == CD_OK);
  REQUIRE(cd_config_echo(again, &echo) == CD_OK);
  CHECK(take(echo) == first);
  cd_config_free(again);
  cd_config_free(config);
}

TEST_CASE("train, eval and predict through the C interface") {
  const fs::path out = fresh_dir("train");
  cd_config* config = nullptr;
  REQUIRE(cd_config_parse(kConfig, &config) == CD_OK);
  REQUIRE(cd_config_set_out(config, out.c_str()) == CD_OK);
  char* result = nullptr;
  REQUIRE(cd_train(config, &result) == CD_OK);
  const std::string rows = take(result);
  CHECK(rows.rfind("seed,dir,diverged,head,loss,top1,top5,gap,map\n", 0) == 0);
  CHECK(count_lines(rows) == 1 + 3);

  const std::string ckpt = (out / "seed-0" / "checkpoint.bin").string();
  REQUIRE(cd_eval(ckpt.c_str(), nullptr, nullptr, &result) == CD_OK);
  const std::string eval = take(result);
  CHECK(eval.rfind("head,loss,top1,top5,gap,map,params,flops\n", 0) == 0);
  CHECK(count_lines(eval) == 1 + 3);

  cd_model* model = nullptr;
  REQUIRE(cd_model_load(ckpt.c_str(), &model) == CD_OK);
  CHECK(cd_model_input_dim(model) == 4);
  CHECK(cd_model_classes(model) == 3);
  CHECK(cd_model_branches(model) == 2);
  // 4*6 + 6 + 2 * (6*3 + 3 + 3*3 + 3)
  CHECK(cd_model_param_count(model) == 30 + 2 * 33);
  const std::vector<double> features{0.1, -0.2, 0.3, 0.4, 1, 2, 3, 4};
  std::vector<double> scores(6);
  REQUIRE(cd_model_predict(model, features.data(), 2, scores.data()) == CD_OK);
  CHECK(scores[0] + scores[1] + scores[2] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(scores[3] + scores[4] + scores[5] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cd_model_predict(model, features.data(), 0, scores.data()) == CD_ERR_ARGUMENT);
  cd_model_free(model);

  const fs::path junk = out / "junk.bin";
  std::ofstream(junk) << "not a checkpoint";
  CHECK(cd_model_load(junk.c_str(), &model) == CD_ERR_FORMAT);
  cd_config_free(config);
}

TEST_CASE("sweep and gen-data through the C interface") {
  const fs::path out = fresh_dir("sweep");
  cd_config* config = nullptr;
  REQUIRE(cd_config_parse(kConfig, &config) == CD_OK);
  REQUIRE(cd_config_set_out(config, out.c_str()) == CD_OK);
  const double values[] = {0.5};
  char* result = nullptr;
  REQUIRE(cd_sweep(config, "mu", values, 1, 1, &result) == CD_OK);
  const std::string summary = take(result);
  CHECK(count_lines(summary) == 2);
  CHECK(summary.find("\n0.5,1,") != std::string::npos);
  CHECK(cd_sweep(config, "lambda", values, 1, 1, &result) == CD_ERR_CONFIG);
  CHECK(cd_sweep(config, "sigma", values, 1, 1, &result) == CD_ERR_CONFIG);

  REQUIRE(cd_gen_data(config, (out / "data").c_str(), &result) == CD_OK);
  CHECK(fs::exists(take(result)));
  cd_config_free(config);
}

TEST_CASE("helpers") {
  const double runs[] = {1, 2, 3};
  double mean = 0, uncertainty = 0;
  REQUIRE(cd_mean_uncertainty(runs, 3, &mean, &uncertainty) == CD_OK);
  CHECK(mean == 2.0);
  CHECK(std::abs(uncertainty - 0.577350) <= 1e-6);
  CHECK(cd_mean_uncertainty(runs, 1, &mean, &uncertainty) == CD_ERR_CONFIG);
  double diff = 1.0;
  REQUIRE(cd_equivalence_max_diff(3, 100, 1, &diff) == CD_OK);
  CHECK(diff < 1e-9);

  int passed = 0;
  char* text = nullptr;
  REQUIRE(cd_verify(2, 1, &passed, &text) == CD_OK);
  CHECK(passed == 1);
  CHECK(take(text).rfind("check,value,threshold,status\n", 0) == 0);
}
