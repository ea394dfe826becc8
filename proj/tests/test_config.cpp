// SPDX-License-Identifier: Apache-2.0
#include <fstream>

#include "doctest.h"
#include "small_run.hpp"
#include "uacal/config.hpp"
#include "uacal/error.hpp"

using namespace uacal;

TEST_SUITE("config") {
  TEST_CASE("defaults roundtrip through json") {
    const RunConfig cfg;
    const auto j = config_to_json(cfg);
    CHECK(config_to_json(config_from_json(j)) == j);
    CHECK(j.at("generate").at("temperature") == 0.3);
    CHECK(j.at("generate").at("num_samples") == 5);
    CHECK(j.at("lora").at("rank") == 32);
    CHECK(j.at("loss") == "ua_clm");
  }

  TEST_CASE("partial json merges over defaults") {
    nlohmann::ordered_json j;
    j["seed"] = 9;
    j["finetune"]["epochs"] = 5;
    const RunConfig cfg = config_from_json(j);
    CHECK(cfg.seed == 9);
    CHECK(cfg.finetune.epochs == 5);
    CHECK(cfg.finetune.batch_size == RunConfig{}.finetune.batch_size);
    // The top-level seed reaches every stream.
    CHECK(cfg.world_config().seed == 9);
    CHECK(cfg.model_config(50).seed == 9);
    CHECK(cfg.gen_config().seed == 9);
    CHECK(cfg.model_config(50).vocab_size == 50);
  }

  TEST_CASE("unknown keys and wrong types are rejected") {
    nlohmann::ordered_json unknown;
    unknown["finetune"]["learning_rat"] = 1e-3;
    try {
      config_from_json(unknown);
      FAIL("expected a config error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::config_error);
      CHECK(std::string(e.what()).find("finetune.learning_rat") != std::string::npos);
    }
    nlohmann::ordered_json wrong;
    wrong["generate"]["num_samples"] = "five";
    CHECK_THROWS_AS(config_from_json(wrong), Error);
    nlohmann::ordered_json invalid;
    invalid["generate"]["temperature"] = -1.0;
    CHECK_THROWS_AS(config_from_json(invalid), Error);
    nlohmann::ordered_json bad_loss;
    bad_loss["loss"] = "hinge";
    CHECK_THROWS_AS(config_from_json(bad_loss), Error);
  }

  TEST_CASE("string overrides parse by field type") {
    const RunConfig cfg = apply_overrides(RunConfig{}, {{"finetune.epochs", "7"},
                                                        {"generate.temperature", "0.5"},
                                                        {"pretrain.full_sequence", "false"},
                                                        {"lora.target_maps", "q_proj,v_proj"},
                                                        {"loss", "annealed"}});
    CHECK(cfg.finetune.epochs == 7);
    CHECK(cfg.generate.temperature == 0.5);
    CHECK_FALSE(cfg.pretrain.full_sequence);
    CHECK(cfg.lora.target_maps == std::vector<std::string>{"q_proj", "v_proj"});
    CHECK(cfg.loss == LossKind::annealed);
    CHECK_THROWS_AS(apply_overrides(RunConfig{}, {{"finetune.epochs", "x"}}), Error);
    CHECK_THROWS_AS(apply_overrides(RunConfig{}, {{"nonsense", "1"}}), Error);
    CHECK_THROWS_AS(apply_overrides(RunConfig{}, {{"finetune", "1"}}), Error);
  }

  TEST_CASE("every leaf is listed and loadable from disk") {
    const auto leaves = config_leaves();
    CHECK(leaves.size() > 30);
    bool has_seed = false;
    for (const auto& [key, value] : leaves) has_seed = has_seed || key == "seed";
    CHECK(has_seed);
    const auto dir = uacal::testing::scratch_dir("config");
    {
      std::ofstream out(dir / "run.json");
      out << R"({"seed": 4, "world": {"n_entities": 250}})";
    }
    const RunConfig cfg = load_config(dir / "run.json");
    CHECK(cfg.seed == 4);
    CHECK(cfg.world.n_entities == 250);
    {
      std::ofstream out(dir / "broken.json");
      out << "{ seed: 4";
    }
    CHECK_THROWS_AS(load_config(dir / "broken.json"), Error);
    CHECK_THROWS_AS(load_config(dir / "missing.json"), Error);
    std::filesystem::remove_all(dir);
  }
}
