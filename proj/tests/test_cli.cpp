/*
 * Copyright 2026 The cmrsynth Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "commands.hpp"
#include "pipeline.hpp"
#include "test_util.hpp"

using namespace cmr;
using namespace cmr::cli;

namespace {

struct Run {
  int status;
  std::string out, err;
};

Run invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "cmrsynth");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int status = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {status, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small enough that every training stage finishes in seconds.
const char* kTinyConfig = R"({
  "vae": {"epochs": 1, "batch_size": 8, "widths": [4, 4, 8, 8], "fc_hidden": [16, 16, 16], "learning_rate": 0.001},
  "gan": {"epochs": 1, "generator_width": 4, "encoder_width": 4, "discriminator_width": 4, "spade_hidden": 4, "style_dim": 4},
  "segmentation": {"max_epochs": 1, "iterations_per_epoch": 1, "base_width": 4, "levels": 3, "batch_size": 2}
})";

struct Workspace {
  testing::TempDir tmp{"cmrsynth_cli"};
  fs::path root = tmp.path();
  fs::path config = root / "tiny.json";
  fs::path out = root / "out";

  Workspace() {
    std::ofstream(config) << kTinyConfig;
    unsetenv("CMRSYNTH_OUT");
  }
  Run operator()(std::vector<std::string> args) const {
    args.insert(args.begin(), {"--config", config.string(), "--out-root", out.string()});
    return invoke(std::move(args));
  }
};

}  // namespace

TEST_CASE("git-style content hashes") {
  CHECK(git_blob_sha1("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  CHECK(git_blob_sha1("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(sha1_hex("abc") == "a9993e364706816aba3e25717850c26c9cd0d89d");
}

TEST_CASE("pipeline configuration") {
  SUBCASE("partial files keep defaults") {
    const auto c = pipeline_config_from_json(nlohmann::json::parse(R"({"vae": {"epochs": 3}, "seed": 9})"));
    CHECK(c.vae.epochs == 3);
    CHECK(c.vae.beta == 15.0);
    CHECK(c.seed == 9);
    CHECK(c.synthesis.n_target == 32);
    CHECK(c.segmentation.plateau_factor == 5.0);
  }
  SUBCASE("top-level augment section feeds the segmenter") {
    const auto c = pipeline_config_from_json(nlohmann::json::parse(R"({"augment": {"p_rotate": 0.1}})"));
    CHECK(c.segmentation.augment.p_rotate == 0.1);
    CHECK(c.segmentation.augment.p_scale == 0.3);
  }
  SUBCASE("unknown keys and invalid nested values are rejected") {
    CHECK_THROWS_AS(pipeline_config_from_json(nlohmann::json::parse(R"({"vea": {}})")), InvalidArgumentError);
    CHECK_THROWS_AS(pipeline_config_from_json(nlohmann::json::parse(R"({"vae": {"n_z": 1}})")), InvalidArgumentError);
  }
  SUBCASE("round trip") {
    PipelineConfig c;
    c.seed = 4;
    c.synthesis.pathology_steps = 7;
    const auto j = to_json(c);
    CHECK(to_json(pipeline_config_from_json(j)) == j);
  }
}

TEST_CASE("exit statuses") {
  Workspace ws;
  SUBCASE("unknown subcommand prints usage and returns 2") {
    const auto r = invoke({"frobnicate"});
    CHECK(r.status == kExitUsage);
    CHECK(r.err.find("synth-pathology") != std::string::npos);
    CHECK(invoke({}).status == kExitUsage);
  }
  SUBCASE("invalid configuration returns 3") {
    std::ofstream(ws.root / "bad.json") << "{ not json";
    CHECK(invoke({"--config", (ws.root / "bad.json").string(), "phantom", "generate", "--preset", "NOR"}).status == kExitInvalidConfig);
    std::ofstream(ws.root / "bad2.json") << R"({"vae": {"beta": -1}})";
    CHECK(invoke({"--config", (ws.root / "bad2.json").string(), "phantom", "generate", "--preset", "NOR"}).status == kExitInvalidConfig);
    CHECK(ws({"phantom", "generate", "--preset", "XYZ"}).status == kExitInvalidConfig);
    CHECK(ws({"train-vae", "--data", (ws.root / "missing").string()}).status == kExitInvalidConfig);
    CHECK(ws({"train-vae", "--data", ws.root.string(), "--epochs", "abc"}).status == kExitInvalidConfig);
    CHECK(ws({"train-vae", "--data", ws.root.string(), "--lr", "0"}).status == kExitInvalidConfig);
  }
  SUBCASE("stage failure returns 1 and names the stage") {
    REQUIRE(ws({"phantom", "generate", "--preset", "NOR", "--count", "1"}).status == kExitOk);
    // Raw phantoms are not 128 px square, so training refuses them.
    const auto r = ws({"train-vae", "--data", (ws.out / "phantoms" / "NOR").string()});
    CHECK(r.status == kExitStageFailure);
    CHECK(r.err.find("stage 'train-vae' failed") != std::string::npos);
  }
}

TEST_CASE("phantom stage, provenance and restart") {
  Workspace ws;
  const fs::path dir = ws.out / "phantoms" / "HCM";
  auto r = ws({"phantom", "generate", "--preset", "HCM", "--count", "3"});
  REQUIRE(r.status == kExitOk);
  CHECK(r.out.find("3 written, 0 up to date") != std::string::npos);
  const auto entries = read_dataset_manifest(dir);
  REQUIRE(entries.size() == 3);
  CHECK(entries[0].pathology == Pathology::HCM);

  const fs::path img = io::image_path(dir, entries[1].subject_id);
  const auto side = nlohmann::json::parse(slurp(sidecar_path(img)));
  CHECK(side.at("output_sha1") == git_blob_sha1(slurp(img)));
  CHECK(side.at("seed") == 0);
  CHECK(side.at("config_hash") == config_hash(side.at("config")));
  CHECK(side.at("stage") == "phantom");

  const std::string before = slurp(img);
  fs::remove(io::label_path(dir, entries[1].subject_id));
  r = ws({"phantom", "generate", "--preset", "HCM", "--count", "3"});
  CHECK(r.out.find("1 written, 2 up to date") != std::string::npos);
  CHECK(slurp(img) == before);

  // A tampered artifact no longer matches its sidecar and is regenerated.
  std::ofstream(img, std::ios::app) << "x";
  r = ws({"phantom", "generate", "--preset", "HCM", "--count", "3"});
  CHECK(r.out.find("1 written") != std::string::npos);
  CHECK(slurp(img) == before);

  // The seed flag is accepted after the subcommand and changes the output.
  r = ws({"phantom", "generate", "--preset", "HCM", "--count", "3", "--seed", "5", "--out", (ws.root / "s5").string()});
  REQUIRE(r.status == kExitOk);
  CHECK(slurp(io::image_path(ws.root / "s5", entries[1].subject_id)) != before);
}

TEST_CASE("output root precedence") {
  Workspace ws;
  std::ofstream(ws.root / "paths.json") << R"({"paths": {"output_root": ")" + (ws.root / "from_file").string() + R"("}})";
  const std::string cfg = (ws.root / "paths.json").string();
  REQUIRE(invoke({"--config", cfg, "phantom", "generate", "--preset", "NOR", "--count", "1"}).status == kExitOk);
  CHECK(fs::exists(ws.root / "from_file" / "phantoms" / "NOR" / kManifestName));
  setenv("CMRSYNTH_OUT", (ws.root / "from_env").c_str(), 1);
  REQUIRE(invoke({"--config", cfg, "phantom", "generate", "--preset", "NOR", "--count", "1"}).status == kExitOk);
  CHECK(fs::exists(ws.root / "from_env" / "phantoms" / "NOR" / kManifestName));
  REQUIRE(invoke({"--config", cfg, "--out-root", (ws.root / "from_flag").string(), "phantom", "generate", "--preset", "NOR",
               "--count", "1"}).status == kExitOk);
  CHECK(fs::exists(ws.root / "from_flag" / "phantoms" / "NOR" / kManifestName));
  unsetenv("CMRSYNTH_OUT");
}

TEST_CASE("end-to-end pipeline on a tiny configuration") {
  Workspace ws;
  const auto o = [&](const std::string& rel) { return (ws.out / rel).string(); };
  for (const char* p : {"NOR", "HCM"}) {
    REQUIRE(ws({"phantom", "generate", "--preset", p, "--count", "3"}).status == kExitOk);
    REQUIRE(ws({"preprocess", "--in", o(std::string("phantoms/") + p)}).status == kExitOk);
  }
  REQUIRE(ws({"train-vae", "--data", o("preprocessed/NOR"), "--data", o("preprocessed/HCM")}).status == kExitOk);
  CHECK(ws({"train-vae", "--data", o("preprocessed/NOR"), "--data", o("preprocessed/HCM")}).out.find("up to date") != std::string::npos);
  const std::string vae = o("vae/vae.ckpt");
  REQUIRE(ws({"encode", "--model", vae, "--data", o("preprocessed/NOR")}).status == kExitOk);
  REQUIRE(ws({"encode", "--model", vae, "--data", o("preprocessed/HCM")}).status == kExitOk);

  SUBCASE("intra- and inter-subject synthesis") {
    REQUIRE(ws({"synth-intra", "--model", vae, "--latents", o("latents/NOR")}).status == kExitOk);
    const auto s = io::load_subject(io::image_path(ws.out / "intra/NOR", "ph_NOR_0000"));
    CHECK(s.labels.slices() == 32);
    const auto ids = read_dataset_manifest(ws.out / "intra/NOR");
    auto r = ws({"synth-inter", "--model", vae, "--latents", o("intra/NOR"), "--a", ids[0].subject_id, "--b", ids[1].subject_id,
                 "--alphas", "0,0.5,1"});
    REQUIRE(r.status == kExitOk);
    CHECK(read_dataset_manifest(ws.out / "inter" / (ids[0].subject_id + "__" + ids[1].subject_id)).size() == 3);
    r = ws({"synth-inter", "--model", vae, "--latents", o("intra/NOR"), "--a", ids[0].subject_id, "--b", "nobody"});
    CHECK(r.status == kExitInvalidConfig);
  }

  SUBCASE("pathology synthesis writes the requested steps and reruns byte-identically") {
    const std::vector<std::string> args{"synth-pathology", "--model", vae, "--nor", o("latents/NOR"), "--cohort",
                                        o("latents/HCM"), "--target", "HCM", "--nor-id", "ph_NOR_0000", "--steps", "5"};
    REQUIRE(ws(args).status == kExitOk);
    const fs::path dir = ws.out / "pathology/HCM/ph_NOR_0000";
    const auto entries = read_dataset_manifest(dir);
    REQUIRE(entries.size() == 5);
    for (const auto& e : entries) CHECK(e.pathology == Pathology::HCM);
    std::map<std::string, std::string> before;
    for (const auto& f : fs::directory_iterator(dir))
      if (f.path().extension() == ".latent" || f.path().extension() == ".bundle") before[f.path().string()] = slurp(f.path());
    CHECK(before.size() == 5 + 3);
    for (const auto& [path, content] : before) fs::remove(path);
    REQUIRE(ws(args).status == kExitOk);
    for (const auto& [path, content] : before) CHECK(slurp(path) == content);
    CHECK(ws(args).out.find("up to date") != std::string::npos);

    // Rendering, segmentation training, evaluation and plots on the synthetic cohort.
    REQUIRE(ws({"train-gan", "--data", o("preprocessed/NOR")}).status == kExitOk);
    REQUIRE(ws({"render", "--model", o("gan/gan.ckpt"), "--labels", dir.string(), "--style",
                io::image_path(ws.out / "preprocessed/NOR", "ph_NOR_0001").string()}).status == kExitOk);
    const auto rendered = io::load_subject(io::image_path(ws.out / "rendered/ph_NOR_0000", entries[2].subject_id));
    CHECK(rendered.image.slices() == 32);
    CHECK(rendered.meta.pathology == Pathology::HCM);
    REQUIRE(ws({"train-seg", "--data", o("preprocessed/NOR"), "--data", o("rendered/ph_NOR_0000")}).status == kExitOk);
    REQUIRE(ws({"evaluate", "--model", "seg=" + o("seg/seg.ckpt"), "--data", o("preprocessed/HCM")}).status == kExitOk);
    const std::string table = slurp(ws.out / "eval/report.csv");
    CHECK(table.find("model,class,dice_mean") != std::string::npos);
    CHECK(table.find("seg,LV,") != std::string::npos);
    REQUIRE(ws({"plot", "--kind", "scores", "--input", o("eval/scores.csv")}).status == kExitOk);
    CHECK(slurp(ws.out / "plots/scores/scores.ppm").substr(0, 2) == "P6");
    REQUIRE(ws({"plot", "--kind", "loss", "--input", o("vae/vae_log.csv")}).status == kExitOk);
    REQUIRE(ws({"plot", "--kind", "slices", "--input", io::image_path(ws.out / "rendered/ph_NOR_0000", entries[0].subject_id).string()}).status == kExitOk);
    CHECK(slurp(ws.out / "plots/slices/slices.pgm").substr(0, 2) == "P5");
    REQUIRE(ws({"plot", "--kind", "embedding", "--input", "NOR=" + o("latents/NOR"), "--input", "HCM=" + o("latents/HCM"),
                "--perplexity", "3"}).status == kExitOk);
    CHECK(fs::exists(sidecar_path(ws.out / "plots/embedding/embedding.csv")));
  }
}
