// mbridge command-line front end: LM pretraining, two-stage bridge training,
// dataset building, generation (one-shot and REPL), evaluation and judging.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mbridge/evaluation.hpp"
#include "mbridge/log.hpp"
#include "mbridge/multis.hpp"
#include "mbridge/synthetic.hpp"
#include "mbridge/training.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using namespace mbridge;

namespace {

struct AppConfig {
  ordered_json json;
  uint64_t seed = 0;

  const ordered_json& section(const std::string& name) const {
    static const ordered_json empty = ordered_json::object();
    auto it = json.find(name);
    return it == json.end() ? empty : *it;
  }
};

ordered_json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("config: cannot open " + path);
  ordered_json j;
  in >> j;
  return j;
}

/// Dotted-path override onto an existing key; unknown paths are usage errors.
void apply_override(ordered_json& j, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos)
    throw CLI::ValidationError("--override", "expected key.path=value, got '" + spec + "'");
  const std::string path = spec.substr(0, eq);
  const std::string value = spec.substr(eq + 1);

  ordered_json* node = &j;
  std::istringstream segments(path);
  std::string segment;
  std::vector<std::string> parts;
  while (std::getline(segments, segment, '.')) parts.push_back(segment);
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i]))
      throw CLI::ValidationError("--override", "no such config key: " + path);
    node = &(*node)[parts[i]];
  }
  if (parts.empty() || !node->contains(parts.back()))
    throw CLI::ValidationError("--override", "no such config key: " + path);
  ordered_json parsed;
  try {
    parsed = ordered_json::parse(value);
  } catch (const nlohmann::json::exception&) {
    parsed = value;  // plain string
  }
  (*node)[parts.back()] = parsed;
}

int64_t geti(const ordered_json& j, const char* key, int64_t fallback) {
  return j.contains(key) ? j[key].get<int64_t>() : fallback;
}
double getd(const ordered_json& j, const char* key, double fallback) {
  return j.contains(key) ? j[key].get<double>() : fallback;
}
std::string gets(const ordered_json& j, const char* key, const std::string& fallback) {
  return j.contains(key) ? j[key].get<std::string>() : fallback;
}

BundleConfig bundle_config_from(const AppConfig& app) {
  const ordered_json& m = app.section("model");
  BundleConfig cfg = BundleConfig::desk();

  const ordered_json& img = m.contains("image_encoder") ? m["image_encoder"] : ordered_json::object();
  cfg.image_encoder.patch_size = geti(img, "patch_size", cfg.image_encoder.patch_size);
  cfg.image_encoder.d_enc = geti(img, "d_enc", cfg.image_encoder.d_enc);
  cfg.image_encoder.n_layers = geti(img, "layers", cfg.image_encoder.n_layers);
  cfg.image_encoder.n_heads = geti(img, "heads", cfg.image_encoder.n_heads);
  cfg.image_encoder.seed = static_cast<uint64_t>(geti(img, "seed", 901));

  const ordered_json& aud = m.contains("audio_encoder") ? m["audio_encoder"] : ordered_json::object();
  cfg.audio_encoder.sample_rate = static_cast<int>(geti(aud, "sample_rate", cfg.audio_encoder.sample_rate));
  cfg.audio_encoder.d_enc = geti(aud, "d_enc", cfg.audio_encoder.d_enc);
  cfg.audio_encoder.n_layers = geti(aud, "layers", cfg.audio_encoder.n_layers);
  cfg.audio_encoder.n_heads = geti(aud, "heads", cfg.audio_encoder.n_heads);
  cfg.audio_encoder.seed = static_cast<uint64_t>(geti(aud, "seed", 902));

  const ordered_json& per = m.contains("perceiver") ? m["perceiver"] : ordered_json::object();
  cfg.perceiver.n_layers = geti(per, "layers", cfg.perceiver.n_layers);
  cfg.perceiver.n_heads = geti(per, "heads", cfg.perceiver.n_heads);
  cfg.perceiver.d_model = geti(per, "d_model", cfg.perceiver.d_model);
  cfg.perceiver.d_enc = geti(per, "d_enc", cfg.perceiver.d_enc);
  cfg.perceiver.seed = static_cast<uint64_t>(geti(per, "seed", 903));

  const ordered_json& lm = m.contains("lm") ? m["lm"] : ordered_json::object();
  cfg.lm.d_model = geti(lm, "d_model", cfg.lm.d_model);
  cfg.lm.n_layers = geti(lm, "layers", cfg.lm.n_layers);
  cfg.lm.n_heads = geti(lm, "heads", cfg.lm.n_heads);
  cfg.lm.t_max = geti(lm, "t_max", cfg.lm.t_max);
  cfg.lm.seed = static_cast<uint64_t>(geti(lm, "seed", 904));

  cfg.perceiver.d_llm = cfg.lm.d_model;
  cfg.n_queries = geti(m, "n_queries", cfg.n_queries);
  cfg.perceiver.n_queries = cfg.n_queries;
  cfg.query_seed = static_cast<uint64_t>(geti(m, "query_seed", 906));
  cfg.media_root = gets(m, "media_root", "");
  return cfg;
}

std::string path_of(const AppConfig& app, const char* key, const std::string& fallback = "") {
  return gets(app.section("paths"), key, fallback);
}

ModelBundle make_bundle(const AppConfig& app, bool need_lm, bool need_bridge) {
  ModelBundle bundle(bundle_config_from(app));
  const std::string lm_path = path_of(app, "lm_checkpoint");
  const std::string enc_path = path_of(app, "encoder_checkpoint");
  if (need_lm) {
    if (lm_path.empty() || !fs::exists(lm_path))
      throw ConfigError("missing LM checkpoint; run `mbridge pretrain-lm` first");
    load_lm_checkpoint(lm_path, bundle);
  }
  if (!enc_path.empty() && fs::exists(enc_path)) load_encoder_checkpoint(enc_path, bundle);
  if (need_bridge) {
    const std::string bridge_path = path_of(app, "bridge_checkpoint");
    if (bridge_path.empty() || !fs::exists(bridge_path))
      throw ConfigError("missing bridge checkpoint; run `mbridge train` first");
    load_bridge_checkpoint(bridge_path, bundle);
  }
  return bundle;
}

std::unique_ptr<ChatClient> make_client(const std::string& spec) {
  if (spec == "mock") {
    auto mock = std::make_unique<MockChatClient>();
    return mock;
  }
  if (spec.rfind("replay:", 0) == 0) return std::make_unique<ReplayChatClient>(spec.substr(7));
  if (spec == "live")
    return std::make_unique<HttpChatClient>(HttpChatClient::Endpoint::from_env(), ClientPolicy{});
  throw ConfigError("unknown client spec '" + spec + "' (mock | replay:<file> | live)");
}

/// Deterministic scoring stand-in for `judge --client mock`.
class ScoringMockClient : public ChatClient {
 public:
  ChatResponse complete(const ChatRequest& request) override {
    request.validate();
    const int score = 1 + static_cast<int>(request_fingerprint(request) % 10);
    return ChatResponse{"Score: " + std::to_string(score) + ". Deterministic mock verdict.", 0, 0};
  }
};

int cmd_pretrain_lm(const AppConfig& app) {
  const ordered_json& pc = app.section("pretrain");
  const std::string corpus_path = gets(pc, "corpus", "");
  if (corpus_path.empty()) throw ConfigError("pretrain: config needs pretrain.corpus");

  ModelBundle bundle(bundle_config_from(app));
  PretrainConfig cfg;
  cfg.max_steps = geti(pc, "max_steps", cfg.max_steps);
  cfg.batch_size = geti(pc, "batch_size", cfg.batch_size);
  cfg.lr = getd(pc, "lr", cfg.lr);
  cfg.loss_threshold = getd(pc, "loss_threshold", cfg.loss_threshold);
  cfg.seed = app.seed;

  auto corpus = synthetic::load_corpus(corpus_path);
  logging::info("pretraining on " + std::to_string(corpus.size()) + " corpus lines");
  PretrainReport report = pretrain_text_lm(bundle.lm, corpus, cfg);
  bundle.lm.freeze();

  const std::string lm_path = path_of(app, "lm_checkpoint", "lm.ckpt");
  const std::string enc_path = path_of(app, "encoder_checkpoint", "encoders.ckpt");
  save_frozen_checkpoints(lm_path, enc_path, bundle);
  std::cout << ordered_json{{"converged", report.converged},
                            {"final_loss", report.final_loss},
                            {"steps", report.steps},
                            {"lm_checkpoint", lm_path},
                            {"encoder_checkpoint", enc_path}}
                   .dump(2)
            << "\n";
  if (!report.converged)
    logging::warn("pretraining stopped at max_steps above the loss threshold");
  return 0;
}

int cmd_train(const AppConfig& app, int stage) {
  const ordered_json& tc =
      app.section("train").contains("stage" + std::to_string(stage))
          ? app.section("train")["stage" + std::to_string(stage)]
          : ordered_json::object();

  TrainConfig cfg;
  cfg.stage = stage;
  cfg.steps = geti(tc, "steps", stage == 1 ? 1000 : 400);
  cfg.batch_size = geti(tc, "batch_size", 8);
  cfg.token_budget = geti(tc, "token_budget", 4096);
  cfg.opt.lr = getd(tc, "lr", stage == 1 ? 1e-4 : 2e-5);
  cfg.opt.weight_decay = getd(tc, "weight_decay", cfg.opt.weight_decay);
  cfg.warmup_frac = getd(tc, "warmup_frac", cfg.warmup_frac);
  cfg.seed = app.seed;
  cfg.log_interval = geti(tc, "log_interval", 50);
  cfg.checkpoint_interval = geti(tc, "checkpoint_interval", 0);
  cfg.data_path = gets(tc, "data", "");
  cfg.report_path = gets(tc, "report", "");
  cfg.resume_checkpoint = gets(tc, "resume", "");

  if (cfg.data_path.empty()) throw ConfigError("train: config needs train.stageN.data");
  ModelBundle bundle = make_bundle(app, /*need_lm=*/true, /*need_bridge=*/false);

  const std::string bridge_path = path_of(app, "bridge_checkpoint", "bridge.ckpt");
  if (stage == 2) {
    cfg.init_checkpoint = gets(tc, "init", bridge_path);
    cfg.output_checkpoint = gets(tc, "output", path_of(app, "bridge_stage2_checkpoint",
                                                       "bridge_stage2.ckpt"));
  } else {
    cfg.output_checkpoint = gets(tc, "output", bridge_path);
  }

  auto dataset = multis::load_dataset(cfg.data_path);
  logging::info("stage " + std::to_string(stage) + ": " + std::to_string(dataset.size()) +
                " samples, " + std::to_string(cfg.steps) + " steps");
  TrainReport report = stage == 1 ? run_stage1(bundle, cfg, dataset)
                                  : run_stage2(bundle, cfg, dataset);
  std::cout << ordered_json{{"final_loss", report.final_loss},
                            {"smoothed_loss", report.smoothed_loss},
                            {"rejected_samples", report.rejected_samples},
                            {"checkpoint", cfg.output_checkpoint}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_build_data(const AppConfig& app, const std::string& world_dir,
                   const std::string& manifest_path, const std::string& templates_dir) {
  if (!templates_dir.empty()) {
    multis::emit_builtin_assets(templates_dir);
    std::cout << "wrote templates.json and seeds.json to " << templates_dir << "\n";
    return 0;
  }
  if (!world_dir.empty()) {
    const ordered_json& wc = app.section("data").contains("world") ? app.section("data")["world"]
                                                                   : ordered_json::object();
    synthetic::WorldConfig cfg;
    cfg.seed = app.seed;
    cfg.n_concepts = static_cast<int>(geti(wc, "concepts", cfg.n_concepts));
    cfg.image_size = geti(wc, "image_size", cfg.image_size);
    cfg.audio_rate = static_cast<int>(geti(wc, "audio_rate", cfg.audio_rate));
    cfg.stage1_pairs = static_cast<int>(geti(wc, "stage1_pairs", cfg.stage1_pairs));
    cfg.stage2_samples = static_cast<int>(geti(wc, "stage2_samples", cfg.stage2_samples));
    cfg.heldout_pairs = static_cast<int>(geti(wc, "heldout_pairs", cfg.heldout_pairs));
    auto world = synthetic::make_synthetic_world(cfg);
    synthetic::write_world(world, world_dir);
    std::cout << "wrote synthetic world (" << cfg.n_concepts << " concepts) to " << world_dir
              << "\n";
    return 0;
  }
  if (manifest_path.empty())
    throw ConfigError("build-data: pass --world <dir>, --manifest <file> or --emit-templates <dir>");

  const ordered_json manifest = load_json_file(manifest_path);
  const std::string records_path = manifest.at("records").get<std::string>();
  const std::string out_dir = manifest.at("out").get<std::string>();
  fs::create_directories(out_dir);
  auto records = multis::load_source_records(records_path);

  multis::TemplateSet templates =
      manifest.contains("templates")
          ? multis::TemplateSet::from_json_string(
                (std::stringstream() << std::ifstream(manifest["templates"].get<std::string>()).rdbuf()).str())
          : multis::TemplateSet::builtin();
  multis::SeedExemplars seeds =
      manifest.contains("seeds")
          ? multis::SeedExemplars::from_json_string(
                (std::stringstream() << std::ifstream(manifest["seeds"].get<std::string>()).rdbuf()).str())
          : multis::SeedExemplars::builtin();

  const uint64_t seed = manifest.value("seed", app.seed);
  Rng rng(seed);

  // Task-specific samples through the template pipeline.
  std::vector<InstructionSample> task_specific;
  for (const auto& record : records)
    task_specific.push_back(multis::instantiate_template(record, templates, rng));
  const std::string task_path = (fs::path(out_dir) / "task_specific.jsonl").string();
  multis::emit_dataset(task_specific, task_path);

  // Chat samples through annotate -> compose -> client.
  multis::ChatBuildResult chat;
  multis::Quarantine quarantine((fs::path(out_dir) / "quarantine.jsonl").string());
  if (manifest.contains("chat")) {
    const ordered_json& cj = manifest["chat"];
    multis::ChatBuildConfig cfg;
    if (cj.contains("proportions")) {
      cfg.proportion_conversation = cj["proportions"].value("conversation", 24);
      cfg.proportion_detailed = cj["proportions"].value("detailed_description", 18);
      cfg.proportion_reasoning = cj["proportions"].value("complex_reasoning", 9);
    }
    cfg.in_flight = static_cast<int>(cj.value("in_flight", 4));
    cfg.gen.seed = seed;

    std::unique_ptr<multis::Annotator> annotator;
    if (manifest.contains("annotations_dir"))
      annotator = std::make_unique<multis::FileAnnotator>(
          manifest["annotations_dir"].get<std::string>());
    else
      annotator = std::make_unique<multis::MockAnnotator>();
    auto client = make_client(manifest.value("client", std::string("mock")));
    chat = multis::build_chat_data(records, *annotator, *client, seeds, cfg, quarantine);
    multis::emit_dataset(chat.samples, (fs::path(out_dir) / "chat.jsonl").string());
  }

  // Review manifest in place of the out-of-band human curation step.
  ordered_json review{{"records", records.size()},
                      {"task_specific", task_specific.size()},
                      {"chat_samples", chat.samples.size()},
                      {"quarantined", quarantine.size()}};
  ordered_json per_type = ordered_json::object();
  for (const auto& [task, count] : chat.per_type_counts) per_type[task] = count;
  review["chat_per_type"] = per_type;
  std::ofstream review_out(fs::path(out_dir) / "review_manifest.json");
  review_out << review.dump(2) << "\n";
  std::cout << review.dump(2) << "\n";
  return 0;
}

int cmd_generate(const AppConfig& app, const std::vector<std::string>& images,
                 const std::vector<std::string>& videos, const std::vector<std::string>& audios,
                 const std::string& prompt, bool repl, int64_t max_new, int top_k,
                 double temperature) {
  ModelBundle bundle = make_bundle(app, true, true);
  DecodeStrategy strategy = top_k > 1 ? DecodeStrategy::top_k(top_k, temperature, app.seed)
                                      : DecodeStrategy::greedy();

  InstructionSample sample;
  sample.id = "cli";
  // Paths given on the command line are CWD-relative, not media_root-relative.
  for (const auto& p : images) sample.modalities.push_back({Modality::Image, fs::absolute(p).string()});
  for (const auto& p : videos) sample.modalities.push_back({Modality::Video, fs::absolute(p).string()});
  for (const auto& p : audios) sample.modalities.push_back({Modality::Audio, fs::absolute(p).string()});
  std::vector<Modality> kinds;
  for (const auto& m : sample.modalities) kinds.push_back(m.kind);
  sample.prompt_template = kinds.empty() ? "" : multis::modality_prompt(kinds);

  SequenceBuilder builder = bundle.builder();
  RenderOptions prompt_only;
  prompt_only.include_response = false;

  if (!repl) {
    if (prompt.empty()) throw ConfigError("generate: --prompt is required without --repl");
    sample.instruction = prompt;
    auto outputs = bundle.perceive_sample(sample);
    EmbeddingSequence prefix = builder.render_stage2(sample, outputs, prompt_only);
    auto ids = bundle.lm.generate(prefix, max_new, strategy);
    std::cout << bundle.tokenizer.detokenize(ids) << "\n";
    return 0;
  }

  // Multi-turn REPL: the dialogue history is re-rendered each turn in the
  // ###Human/###Assistant format, soft prompts included once at the front.
  std::cerr << "(repl: one message per line, ctrl-d to exit)\n";
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    sample.turns.push_back(DialogueTurn{line, ""});
    auto outputs = bundle.perceive_sample(sample);
    EmbeddingSequence prefix = builder.render_stage2(sample, outputs, prompt_only);
    auto ids = bundle.lm.generate(prefix, max_new, strategy);
    const std::string reply = bundle.tokenizer.detokenize(ids);
    sample.turns.back().assistant = reply;
    std::cout << reply << "\n" << std::flush;
  }
  return 0;
}

std::vector<std::vector<Modality>> parse_selectors(const std::string& spec) {
  std::vector<std::vector<Modality>> selectors;
  std::istringstream rows(spec);
  std::string row;
  while (std::getline(rows, row, ',')) {
    std::vector<Modality> kinds;
    std::istringstream parts(row);
    std::string part;
    while (std::getline(parts, part, '+')) kinds.push_back(modality_from_name(part));
    if (!kinds.empty()) selectors.push_back(kinds);
  }
  return selectors;
}

int cmd_evaluate(const AppConfig& app, const std::string& data_path, const std::string& metrics_csv,
                 const std::string& ablate_csv, const std::string& out_path,
                 const std::string& format) {
  ModelBundle bundle = make_bundle(app, true, true);
  auto dataset = multis::load_dataset(data_path);

  eval::AblationConfig cfg;
  cfg.format = format;
  cfg.metrics.clear();
  std::istringstream metrics(metrics_csv);
  std::string metric;
  while (std::getline(metrics, metric, ',')) cfg.metrics.push_back(metric);
  cfg.selectors = ablate_csv.empty()
                      ? std::vector<std::vector<Modality>>{{Modality::Image, Modality::Audio}}
                      : parse_selectors(ablate_csv);

  auto rows = eval::run_modality_ablation(bundle, dataset, cfg);
  ordered_json echo{{"data", data_path}, {"metrics", cfg.metrics}, {"format", format}};
  eval::EvalReport report = eval::make_eval_report(echo.dump(), app.seed, rows, 0);
  const std::string text = report.to_json_string();
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    out << text << "\n";
  }
  std::cout << text << "\n";
  return 0;
}

int cmd_judge(const AppConfig& app, const std::string& records_path, const std::string& client_spec,
              const std::string& out_path) {
  (void)app;
  std::ifstream in(records_path);
  if (!in) throw LoadError("judge: cannot open " + records_path);
  std::vector<eval::EvalRecord> records;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("judge records: ") + e.what(), line_no);
    }
    eval::EvalRecord r;
    r.id = j.at("id").get<std::string>();
    r.category = j.at("category").get<std::string>();
    r.response = j.at("response").get<std::string>();
    r.context = j.value("context", std::string{});
    r.references = j.value("references", std::vector<std::string>{});
    records.push_back(std::move(r));
  }

  std::unique_ptr<ChatClient> client;
  if (client_spec == "mock") client = std::make_unique<ScoringMockClient>();
  else client = make_client(client_spec);

  eval::JudgeReport report = eval::judge_evaluate(records, *client, eval::JudgeRubric::builtin());
  const std::string table = eval::judge_table_json({{records_path, report}});
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    out << table << "\n";
  }
  std::cout << table << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mbridge: frozen encoders and a frozen decoder LM bridged by a trainable "
               "perceiver resampler"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand name

  std::string config_path;
  std::vector<std::string> overrides;
  uint64_t seed = 0;
  bool seed_set = false;
  bool verbose = false;
  app.add_option("--config", config_path, "JSON config file")->capture_default_str();
  app.add_option("--override", overrides, "dotted-path config override, key.path=value");
  app.add_option("--seed", seed, "run seed (overrides config)")->each([&](const std::string&) {
    seed_set = true;
  });
  app.add_flag("--verbose", verbose, "debug logging to stderr");

  auto* pretrain = app.add_subcommand("pretrain-lm", "train and freeze the text LM");

  auto* train = app.add_subcommand("train", "bridge training (stage 1 or 2)");
  int stage = 1;
  train->add_option("--stage", stage, "training stage")->check(CLI::Range(1, 2))->required();

  auto* build = app.add_subcommand("build-data", "synthetic world or instruction-data pipeline");
  std::string world_dir, manifest_path, templates_dir;
  build->add_option("--world", world_dir, "write the synthetic world to this directory");
  build->add_option("--manifest", manifest_path, "run the dataset pipeline from a run manifest");
  build->add_option("--emit-templates", templates_dir, "export editable template/seed files");

  auto* generate = app.add_subcommand("generate", "one-shot or REPL generation");
  std::vector<std::string> images, videos, audios;
  std::string prompt;
  bool repl = false;
  int64_t max_new = 64;
  int top_k = 1;
  double temperature = 1.0;
  generate->add_option("--image", images, "image input (.ppm), repeatable");
  generate->add_option("--video", videos, "video input (frame dir or manifest), repeatable");
  generate->add_option("--audio", audios, "audio input (.wav), repeatable");
  generate->add_option("--prompt", prompt, "instruction text");
  generate->add_flag("--repl", repl, "multi-turn session on stdin");
  generate->add_option("--max-new", max_new, "generation budget in tokens");
  generate->add_option("--top-k", top_k, "sample from the top k (1 = greedy)");
  generate->add_option("--temperature", temperature, "sampling temperature");

  auto* evaluate = app.add_subcommand("evaluate", "metrics and modality ablations");
  std::string eval_data, metrics_csv = "token_accuracy", ablate_csv, eval_out, eval_format = "alignment";
  evaluate->add_option("--data", eval_data, "eval dataset (JSONL)")->required();
  evaluate->add_option("--metrics", metrics_csv, "comma-separated metric list");
  evaluate->add_option("--ablate", ablate_csv, "selectors, e.g. image,audio,image+audio");
  evaluate->add_option("--out", eval_out, "report file");
  evaluate->add_option("--format", eval_format, "render format: alignment | stage2");

  auto* judge = app.add_subcommand("judge", "LLM-as-judge chat scoring");
  std::string judge_records, judge_client = "mock", judge_out;
  judge->add_option("--records", judge_records, "eval records (JSONL)")->required();
  judge->add_option("--client", judge_client, "mock | replay:<file> | live");
  judge->add_option("--out", judge_out, "report file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (verbose) logging::set_threshold(logging::Level::Debug);

  try {
    AppConfig config;
    config.json = config_path.empty() ? ordered_json::object() : load_json_file(config_path);
    for (const std::string& spec : overrides) apply_override(config.json, spec);
    config.seed = seed_set ? seed : static_cast<uint64_t>(geti(config.json, "seed", 0));

    if (pretrain->parsed()) return cmd_pretrain_lm(config);
    if (train->parsed()) return cmd_train(config, stage);
    if (build->parsed()) return cmd_build_data(config, world_dir, manifest_path, templates_dir);
    if (generate->parsed())
      return cmd_generate(config, images, videos, audios, prompt, repl, max_new, top_k, temperature);
    if (evaluate->parsed())
      return cmd_evaluate(config, eval_data, metrics_csv, ablate_csv, eval_out, eval_format);
    if (judge->parsed()) return cmd_judge(config, judge_records, judge_client, judge_out);
    return 1;
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
