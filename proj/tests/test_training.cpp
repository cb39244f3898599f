#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mbridge/multis.hpp"
#include "mbridge/synthetic.hpp"
#include "mbridge/training.hpp"

using namespace mbridge;
namespace fs = std::filesystem;

namespace {

/// Shapes small enough for fast smoke runs; the acceptance suite exercises
/// the shipped desk defaults.
BundleConfig smoke_bundle_config(const std::string& media_root) {
  BundleConfig cfg;
  cfg.image_encoder.patch_size = 8;
  cfg.image_encoder.d_enc = 32;
  cfg.image_encoder.n_layers = 1;
  cfg.audio_encoder.sample_rate = 1000;
  cfg.audio_encoder.d_enc = 32;
  cfg.audio_encoder.n_layers = 1;
  cfg.perceiver.n_queries = 4;
  cfg.perceiver.d_model = 64;
  cfg.perceiver.d_llm = 64;
  cfg.perceiver.d_enc = 32;
  cfg.perceiver.n_layers = 1;
  cfg.lm.d_model = 64;
  cfg.lm.n_layers = 2;
  cfg.lm.n_heads = 2;
  cfg.lm.t_max = 256;
  cfg.n_queries = 4;
  cfg.media_root = media_root;
  return cfg;
}

synthetic::WorldConfig smoke_world_config() {
  synthetic::WorldConfig cfg;
  cfg.seed = 77;
  cfg.n_concepts = 6;
  cfg.stage1_pairs = 12;
  cfg.stage2_samples = 8;
  cfg.heldout_pairs = 4;
  cfg.corpus_caption_lines = 12;
  cfg.corpus_composition_lines = 8;
  cfg.corpus_dialogue_lines = 8;
  return cfg;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::vector<uint8_t> file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("checkpoint round trip is byte identical") {
  TempDir dir("mbridge_ckpt_test");
  Rng rng(1);
  ParameterSet params;
  params.add("w", Tensor::randn({4, 6}, rng, 1.0));
  params.add("b", Tensor::randn({6}, rng, 1.0));
  AdamW opt;
  params.at("w").tensor.ensure_grad();
  params.at("b").tensor.ensure_grad();
  opt.step({&params});

  const std::string p1 = (dir.path / "a.ckpt").string();
  const std::string p2 = (dir.path / "b.ckpt").string();
  save_checkpoint(p1, snapshot_checkpoint({{"m.", &params}}, &opt, "{\"cfg\":1}", "rngstate"));

  CheckpointData loaded = load_checkpoint(p1);
  CHECK(loaded.config_echo == "{\"cfg\":1}");
  CHECK(loaded.rng_state == "rngstate");
  CHECK(loaded.optimizer_step_count == 1);

  ParameterSet params2;
  params2.add("w", Tensor::zeros({4, 6}));
  params2.add("b", Tensor::zeros({6}));
  AdamW opt2;
  restore_checkpoint(loaded, {{"m.", &params2}}, &opt2);
  CHECK(params2.raw_bytes() == params.raw_bytes());
  CHECK(opt2.step_count() == 1);

  save_checkpoint(p2, snapshot_checkpoint({{"m.", &params2}}, &opt2, "{\"cfg\":1}", "rngstate"));
  CHECK(file_bytes(p1) == file_bytes(p2));
}

TEST_CASE("checkpoint rejects corruption, truncation and shape mismatch") {
  TempDir dir("mbridge_ckpt_err");
  ParameterSet params;
  params.add("w", Tensor::zeros({2, 2}));
  const std::string path = (dir.path / "x.ckpt").string();
  save_checkpoint(path, snapshot_checkpoint({{"m.", &params}}));

  auto bytes = file_bytes(path);
  {
    auto bad = bytes;
    bad[0] = 'X';
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<char*>(bad.data()), static_cast<std::streamsize>(bad.size()));
  }
  CHECK_THROWS_AS(load_checkpoint(path), LoadError);
  {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()) / 2);
  }
  CHECK_THROWS_AS(load_checkpoint(path), LoadError);
  {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }

  // Wrong destination width (the wrong-d_llm case).
  ParameterSet narrow;
  narrow.add("w", Tensor::zeros({2, 3}));
  CHECK_THROWS_AS(restore_checkpoint(load_checkpoint(path), {{"m.", &narrow}}), ConfigError);

  ParameterSet missing;
  missing.add("w", Tensor::zeros({2, 2}));
  missing.add("extra", Tensor::zeros({1}));
  CHECK_THROWS_AS(restore_checkpoint(load_checkpoint(path), {{"m.", &missing}}), ConfigError);
}

TEST_CASE("synthetic world: determinism, injectivity, held-out exclusion") {
  auto world = synthetic::make_synthetic_world(smoke_world_config());
  auto world2 = synthetic::make_synthetic_world(smoke_world_config());
  CHECK(world.names == world2.names);
  CHECK(world.corpus_lines == world2.corpus_lines);
  CHECK(world.heldout_concept_pairs == world2.heldout_concept_pairs);

  TempDir a("mbridge_world_a"), b("mbridge_world_b");
  synthetic::write_world(world, a.str());
  synthetic::write_world(world2, b.str());
  for (const char* f : {"stage1.jsonl", "stage2.jsonl", "heldout_joint.jsonl", "lm_corpus.txt",
                        "world.json", "media/img_0.ppm", "media/aud_3.wav"}) {
    CHECK(file_bytes((a.path / f).string()) == file_bytes((b.path / f).string()));
  }

  // Renderers are injective over the concept set.
  const int k = world.cfg.n_concepts;
  for (int i = 0; i < k; ++i) {
    for (int j = i + 1; j < k; ++j) {
      CHECK(world.render_image(i).pixels != world.render_image(j).pixels);
      CHECK(world.render_audio(i).samples != world.render_audio(j).samples);
      CHECK(world.names[static_cast<size_t>(i)] != world.names[static_cast<size_t>(j)]);
    }
  }

  // Training side never pairs image and audio; enforced by construction,
  // asserted exhaustively here.
  for (const auto& s : world.stage1) CHECK(s.modalities.size() == 1);
  for (const auto& s : world.stage2) CHECK(s.modalities.size() == 1);
  for (const auto& s : world.heldout_joint) {
    CHECK(s.modalities.size() == 2);
    CHECK(s.split == "heldout");
  }
  // The corpus never contains a held-out pair's combined caption in either order.
  for (const auto& [ia, ja] : world.heldout_concept_pairs) {
    for (const std::string& line : world.corpus_lines) {
      CHECK(line.find(world.joint_caption(ia, ja)) == std::string::npos);
      const std::string reversed = "a sound of " + world.names[static_cast<size_t>(ja)] +
                                   ". a photo of " + world.names[static_cast<size_t>(ia)] + ".";
      CHECK(line.find(reversed) == std::string::npos);
    }
  }
}

TEST_CASE("sequence_length_for matches the rendered length") {
  TempDir dir("mbridge_seqlen");
  auto world = synthetic::make_synthetic_world(smoke_world_config());
  synthetic::write_world(world, dir.str());
  ModelBundle bundle(smoke_bundle_config(dir.str()));

  SequenceBuilder builder = bundle.builder();
  for (const auto& sample : world.stage2) {
    auto outputs = bundle.perceive_sample(sample);
    auto seq = builder.render_stage2(sample, outputs);
    CHECK(seq.length() == sequence_length_for(sample, bundle.cfg.n_queries, 2));
  }
  for (const auto& sample : world.stage1) {
    auto outputs = bundle.perceive_sample(sample);
    auto seq = builder.render_stage1(sample, outputs);
    CHECK(seq.length() == sequence_length_for(sample, bundle.cfg.n_queries, 1));
  }
}

TEST_CASE("stage 1 trains only the bridge and is deterministic") {
  TempDir dir("mbridge_stage1");
  auto world = synthetic::make_synthetic_world(smoke_world_config());
  synthetic::write_world(world, dir.str());

  auto run_once = [&](ModelBundle& bundle) {
    bundle.lm.freeze();
    TrainConfig cfg;
    cfg.stage = 1;
    cfg.steps = 12;
    cfg.batch_size = 2;
    cfg.opt.lr = 1e-3;
    cfg.seed = 5;
    cfg.log_interval = 1;
    cfg.output_checkpoint = (dir.path / "bridge.ckpt").string();
    return run_stage1(bundle, cfg, world.stage1);
  };

  ModelBundle bundle(smoke_bundle_config(dir.str()));
  const auto lm_before = bundle.lm.params().raw_bytes();
  const auto img_before = bundle.encoders.image.params().raw_bytes();
  const auto aud_before = bundle.encoders.audio.params().raw_bytes();
  const auto queries_before = bundle.queries.params().raw_bytes();
  const auto perceiver_before = bundle.perceiver.params().raw_bytes();

  TrainReport report = run_once(bundle);
  REQUIRE(report.logs.size() == 12);

  CHECK(bundle.lm.params().raw_bytes() == lm_before);
  CHECK(bundle.encoders.image.params().raw_bytes() == img_before);
  CHECK(bundle.encoders.audio.params().raw_bytes() == aud_before);
  CHECK(bundle.queries.params().raw_bytes() != queries_before);
  CHECK(bundle.perceiver.params().raw_bytes() != perceiver_before);

  const auto ckpt_a = file_bytes((dir.path / "bridge.ckpt").string());
  ModelBundle bundle2(smoke_bundle_config(dir.str()));
  TrainReport report2 = run_once(bundle2);
  for (size_t i = 0; i < report.logs.size(); ++i)
    CHECK(report.logs[i].loss == report2.logs[i].loss);
  CHECK(file_bytes((dir.path / "bridge.ckpt").string()) == ckpt_a);
}

TEST_CASE("stage 1 rejects multi-modality and instruction-bearing samples") {
  TempDir dir("mbridge_stage1_err");
  auto world = synthetic::make_synthetic_world(smoke_world_config());
  synthetic::write_world(world, dir.str());
  ModelBundle bundle(smoke_bundle_config(dir.str()));
  bundle.lm.freeze();

  TrainConfig cfg;
  cfg.steps = 1;
  cfg.batch_size = 1;

  auto bad = world.stage1;
  bad.push_back(world.heldout_joint[0]);
  CHECK_THROWS_AS(run_stage1(bundle, cfg, bad), StageMismatchError);

  auto bad2 = world.stage1;
  bad2.push_back(world.stage2[0]);
  CHECK_THROWS_AS(run_stage1(bundle, cfg, bad2), StageMismatchError);

  ModelBundle thawed(smoke_bundle_config(dir.str()));
  CHECK_THROWS_AS(run_stage1(thawed, cfg, world.stage1), ConfigError);
}

TEST_CASE("checkpoint resume reproduces the uninterrupted loss sequence") {
  TempDir dir("mbridge_resume");
  auto world = synthetic::make_synthetic_world(smoke_world_config());
  synthetic::write_world(world, dir.str());

  TrainConfig cfg;
  cfg.stage = 1;
  cfg.steps = 16;
  cfg.batch_size = 2;
  cfg.opt.lr = 1e-3;
  cfg.seed = 9;
  cfg.log_interval = 1;

  // Uninterrupted run.
  ModelBundle full(smoke_bundle_config(dir.str()));
  full.lm.freeze();
  TrainConfig full_cfg = cfg;
  full_cfg.output_checkpoint = (dir.path / "full.ckpt").string();
  TrainReport full_report = run_stage1(full, full_cfg, world.stage1);

  // Split run: 8 steps, checkpoint, then resume for the rest.
  ModelBundle half(smoke_bundle_config(dir.str()));
  half.lm.freeze();
  TrainConfig first_half = cfg;
  first_half.steps = 8;
  first_half.output_checkpoint = (dir.path / "half.ckpt").string();
  run_stage1(half, first_half, world.stage1);

  ModelBundle resumed(smoke_bundle_config(dir.str()));
  resumed.lm.freeze();
  TrainConfig second_half = cfg;
  second_half.resume_checkpoint = (dir.path / "half.ckpt").string();
  second_half.output_checkpoint = (dir.path / "resumed.ckpt").string();
  TrainReport resumed_report = run_stage1(resumed, second_half, world.stage1);

  REQUIRE(full_report.logs.size() == 16);
  REQUIRE(resumed_report.logs.size() == 8);
  for (size_t i = 0; i < 8; ++i) {
    CHECK(resumed_report.logs[i].step == full_report.logs[i + 8].step);
    CHECK(resumed_report.logs[i].loss == full_report.logs[i + 8].loss);
  }

  // Final states coincide bitwise (the config echo differs by design).
  CheckpointData from_full = load_checkpoint((dir.path / "full.ckpt").string());
  CheckpointData from_resumed = load_checkpoint((dir.path / "resumed.ckpt").string());
  REQUIRE(from_full.entries.size() == from_resumed.entries.size());
  for (size_t i = 0; i < from_full.entries.size(); ++i) {
    CHECK(from_full.entries[i].name == from_resumed.entries[i].name);
    CHECK(from_full.entries[i].bytes == from_resumed.entries[i].bytes);
  }
  REQUIRE(from_full.moments.size() == from_resumed.moments.size());
  CHECK(from_full.optimizer_step_count == from_resumed.optimizer_step_count);
  for (size_t i = 0; i < from_full.moments.size(); ++i) {
    CHECK(from_full.moments[i].name == from_resumed.moments[i].name);
    CHECK(std::get<std::vector<float>>(from_full.moments[i].m) ==
          std::get<std::vector<float>>(from_resumed.moments[i].m));
    CHECK(std::get<std::vector<float>>(from_full.moments[i].v) ==
          std::get<std::vector<float>>(from_resumed.moments[i].v));
  }
}

TEST_CASE("stage 2 packs by token budget without splitting samples") {
  TempDir dir("mbridge_stage2");
  auto world = synthetic::make_synthetic_world(smoke_world_config());
  synthetic::write_world(world, dir.str());
  ModelBundle bundle(smoke_bundle_config(dir.str()));
  bundle.lm.freeze();

  // Uniform-length samples so the packing arithmetic is forced.
  std::vector<InstructionSample> uniform;
  for (int i = 0; i < 12; ++i) {
    InstructionSample s = world.stage2[0];
    s.id = "u" + std::to_string(i);
    uniform.push_back(s);
  }
  const int64_t len = sequence_length_for(uniform[0], bundle.cfg.n_queries, 2);

  TrainConfig cfg;
  cfg.stage = 2;
  cfg.steps = 1;
  cfg.token_budget = 4 * len;  // exactly four samples per batch
  cfg.opt.lr = 1e-3;
  cfg.seed = 3;
  cfg.log_interval = 1;
  TrainReport report = run_stage2(bundle, cfg, uniform);
  REQUIRE(report.logs.size() == 1);

  int64_t response_tokens = 0;
  {
    Tokenizer tok;
    auto turns = uniform[0].turns;
    if (turns.empty())
      response_tokens = static_cast<int64_t>(tok.tokenize(uniform[0].response).size());
    else
      for (const auto& t : turns) response_tokens += static_cast<int64_t>(tok.tokenize(t.assistant).size());
  }
  CHECK(report.logs[0].tokens_seen == 4 * response_tokens);
}

TEST_CASE("stage 2 rejects oversize samples with a report and keeps going") {
  TempDir dir("mbridge_stage2_rej");
  auto world = synthetic::make_synthetic_world(smoke_world_config());
  synthetic::write_world(world, dir.str());
  ModelBundle bundle(smoke_bundle_config(dir.str()));
  bundle.lm.freeze();

  auto dataset = world.stage2;
  InstructionSample huge = world.stage2[0];
  huge.id = "oversize";
  huge.response = std::string(5000, 'x');
  dataset.push_back(huge);

  TrainConfig cfg;
  cfg.stage = 2;
  cfg.steps = 2;
  cfg.token_budget = 512;
  cfg.seed = 1;
  cfg.log_interval = 1;
  TrainReport report = run_stage2(bundle, cfg, dataset);
  CHECK(report.rejected_samples == 1);
  REQUIRE(report.rejected_ids.size() == 1);
  CHECK(report.rejected_ids[0] == "oversize");
  CHECK(report.logs.size() == 2);
}

TEST_CASE("train config json round trip and paper-scale profiles") {
  TrainConfig cfg;
  cfg.stage = 2;
  cfg.steps = 123;
  cfg.opt.lr = 5e-4;
  cfg.data_path = "x.jsonl";
  TrainConfig back = TrainConfig::from_json_string(cfg.to_json_string());
  CHECK(back.stage == 2);
  CHECK(back.steps == 123);
  CHECK(back.opt.lr == 5e-4);
  CHECK(back.data_path == "x.jsonl");

  CHECK(TrainConfig::paper_scale_stage1().steps == 150000);
  CHECK(TrainConfig::paper_scale_stage1().batch_size == 256);
  CHECK(TrainConfig::paper_scale_stage2().steps == 10000);
  CHECK(TrainConfig::paper_scale_stage2().token_budget == 4096);
}

TEST_CASE("warmup schedule") {
  CHECK(lr_scale_for_step(1, 100, 0.03) == doctest::Approx(1.0 / 3.0));
  CHECK(lr_scale_for_step(3, 100, 0.03) == doctest::Approx(1.0));
  CHECK(lr_scale_for_step(50, 100, 0.03) == 1.0);
  CHECK(lr_scale_for_step(1, 100, 0.0) == 1.0);
}
