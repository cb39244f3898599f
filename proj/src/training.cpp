#include "mbridge/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "mbridge/log.hpp"
#include "mbridge/ops.hpp"

namespace mbridge {

using ordered_json = nlohmann::ordered_json;

BundleConfig BundleConfig::desk() {
  BundleConfig cfg;
  cfg.image_encoder.patch_size = 8;
  cfg.image_encoder.d_enc = 64;
  cfg.audio_encoder.sample_rate = 1000;
  cfg.audio_encoder.d_enc = 64;
  cfg.perceiver.n_queries = 8;
  cfg.perceiver.d_model = 128;
  cfg.perceiver.d_llm = 128;
  cfg.perceiver.d_enc = 64;
  cfg.n_queries = 8;
  return cfg;
}

ModelBundle::ModelBundle(BundleConfig config)
    : cfg(std::move(config)),
      encoders(cfg.image_encoder, cfg.audio_encoder),
      queries(init_query_bank(cfg.modalities, cfg.n_queries, cfg.perceiver.d_model,
                              cfg.query_seed)),
      perceiver(cfg.perceiver),
      lm(cfg.lm) {
  if (cfg.perceiver.d_llm != cfg.lm.d_model)
    throw ConfigError("bundle: perceiver d_llm " + std::to_string(cfg.perceiver.d_llm) +
                      " != lm d_model " + std::to_string(cfg.lm.d_model));
}

EncoderOutput ModelBundle::encode_ref(const ModalityRef& ref) {
  const std::string key = std::string(modality_name(ref.kind)) + ":" + ref.path;
  auto it = encoder_cache_.find(key);
  if (it != encoder_cache_.end()) return it->second;

  std::filesystem::path p(ref.path);
  if (!cfg.media_root.empty() && p.is_relative()) p = std::filesystem::path(cfg.media_root) / p;
  EncoderOutput out = encoders.encode(load_modality(ref.kind, p.string()));
  encoder_cache_.emplace(key, out);
  return out;
}

std::vector<ModalityEmbedding> ModelBundle::perceive_sample(const InstructionSample& sample) {
  std::vector<ModalityEmbedding> outputs;
  outputs.reserve(sample.modalities.size());
  for (const ModalityRef& ref : sample.modalities)
    outputs.push_back(perceiver.perceive(queries, encode_ref(ref)));
  return outputs;
}

std::vector<ParameterSet*> ModelBundle::trainable() {
  return {&queries.params(), &perceiver.params()};
}

namespace {

ordered_json adamw_to_json(const AdamWConfig& opt) {
  return ordered_json{{"lr", opt.lr},
                      {"beta1", opt.beta1},
                      {"beta2", opt.beta2},
                      {"eps", opt.eps},
                      {"weight_decay", opt.weight_decay}};
}

void adamw_from_json(const ordered_json& j, AdamWConfig& opt) {
  opt.lr = j.value("lr", opt.lr);
  opt.beta1 = j.value("beta1", opt.beta1);
  opt.beta2 = j.value("beta2", opt.beta2);
  opt.eps = j.value("eps", opt.eps);
  opt.weight_decay = j.value("weight_decay", opt.weight_decay);
}

}  // namespace

std::string TrainConfig::to_json_string() const {
  ordered_json j{{"stage", stage},
                 {"steps", steps},
                 {"batch_size", batch_size},
                 {"token_budget", token_budget},
                 {"opt", adamw_to_json(opt)},
                 {"warmup_frac", warmup_frac},
                 {"max_grad_norm", max_grad_norm},
                 {"seed", seed},
                 {"log_interval", log_interval},
                 {"checkpoint_interval", checkpoint_interval},
                 {"data_path", data_path},
                 {"lm_checkpoint", lm_checkpoint},
                 {"encoder_checkpoint", encoder_checkpoint},
                 {"init_checkpoint", init_checkpoint},
                 {"output_checkpoint", output_checkpoint},
                 {"resume_checkpoint", resume_checkpoint},
                 {"report_path", report_path}};
  return j.dump(2);
}

TrainConfig TrainConfig::from_json_string(const std::string& text) {
  ordered_json j = ordered_json::parse(text);
  TrainConfig cfg;
  cfg.stage = j.value("stage", cfg.stage);
  cfg.steps = j.value("steps", cfg.steps);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.token_budget = j.value("token_budget", cfg.token_budget);
  if (j.contains("opt")) adamw_from_json(j["opt"], cfg.opt);
  cfg.warmup_frac = j.value("warmup_frac", cfg.warmup_frac);
  cfg.max_grad_norm = j.value("max_grad_norm", cfg.max_grad_norm);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.log_interval = j.value("log_interval", cfg.log_interval);
  cfg.checkpoint_interval = j.value("checkpoint_interval", cfg.checkpoint_interval);
  cfg.data_path = j.value("data_path", cfg.data_path);
  cfg.lm_checkpoint = j.value("lm_checkpoint", cfg.lm_checkpoint);
  cfg.encoder_checkpoint = j.value("encoder_checkpoint", cfg.encoder_checkpoint);
  cfg.init_checkpoint = j.value("init_checkpoint", cfg.init_checkpoint);
  cfg.output_checkpoint = j.value("output_checkpoint", cfg.output_checkpoint);
  cfg.resume_checkpoint = j.value("resume_checkpoint", cfg.resume_checkpoint);
  cfg.report_path = j.value("report_path", cfg.report_path);
  return cfg;
}

TrainConfig TrainConfig::paper_scale_stage1() {
  TrainConfig cfg;
  cfg.stage = 1;
  cfg.steps = 150000;
  cfg.batch_size = 256;
  cfg.opt.lr = 1e-4;
  return cfg;
}

TrainConfig TrainConfig::paper_scale_stage2() {
  TrainConfig cfg;
  cfg.stage = 2;
  cfg.steps = 10000;
  cfg.token_budget = 4096;
  cfg.opt.lr = 2e-5;
  return cfg;
}

void write_report_jsonl(const TrainReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("report: cannot write " + path);
  for (const StepLog& log : report.logs) {
    ordered_json j{{"step", log.step},
                   {"loss", log.loss},
                   {"lr", log.lr},
                   {"tokens_seen", log.tokens_seen}};
    out << j.dump() << "\n";
  }
}

double lr_scale_for_step(int64_t step, int64_t total_steps, double warmup_frac) {
  const int64_t warmup = static_cast<int64_t>(std::ceil(warmup_frac * static_cast<double>(total_steps)));
  if (warmup <= 0) return 1.0;
  if (step >= warmup) return 1.0;
  return static_cast<double>(step) / static_cast<double>(warmup);
}

void save_bridge_checkpoint(const std::string& path, const ModelBundle& bundle,
                            const AdamW* optimizer, const std::string& config_echo,
                            const std::string& rng_state) {
  save_checkpoint(path, snapshot_checkpoint({{"query_bank.", &bundle.queries.params()},
                                             {"perceiver.", &bundle.perceiver.params()}},
                                            optimizer, config_echo, rng_state));
}

void load_bridge_checkpoint(const std::string& path, ModelBundle& bundle, AdamW* optimizer) {
  restore_checkpoint(load_checkpoint(path),
                     {{"query_bank.", &bundle.queries.params()},
                      {"perceiver.", &bundle.perceiver.params()}},
                     optimizer);
}

void save_frozen_checkpoints(const std::string& lm_path, const std::string& encoder_path,
                             const ModelBundle& bundle) {
  if (!lm_path.empty())
    save_checkpoint(lm_path, snapshot_checkpoint({{"lm.", &bundle.lm.params()}}));
  if (!encoder_path.empty())
    save_checkpoint(encoder_path,
                    snapshot_checkpoint({{"image_encoder.", &bundle.encoders.image.params()},
                                         {"audio_encoder.", &bundle.encoders.audio.params()}}));
}

void load_lm_checkpoint(const std::string& path, ModelBundle& bundle) {
  restore_checkpoint(load_checkpoint(path), {{"lm.", &bundle.lm.params()}});
  bundle.lm.freeze();
}

void load_encoder_checkpoint(const std::string& path, ModelBundle& bundle) {
  restore_checkpoint(load_checkpoint(path),
                     {{"image_encoder.", &bundle.encoders.image.params()},
                      {"audio_encoder.", &bundle.encoders.audio.params()}});
  bundle.clear_cache();
}

int64_t sequence_length_for(const InstructionSample& sample, int64_t n_queries, int stage) {
  Tokenizer tok;
  int64_t soft = static_cast<int64_t>(sample.modalities.size()) * n_queries;
  if (stage == 1) return soft + static_cast<int64_t>(tok.tokenize(sample.response).size());

  int64_t text = 0;
  std::vector<DialogueTurn> turns = sample.turns;
  if (turns.empty()) turns.push_back(DialogueTurn{sample.instruction, sample.response});
  std::string first_human = sample.prompt_template;
  for (const char* marker : {kImageMarker, kVideoMarker, kAudioMarker}) {
    size_t pos;
    while ((pos = first_human.find(marker)) != std::string::npos)
      first_human.erase(pos, std::string(marker).size());
  }
  if (!sample.prompt_template.empty() && !turns[0].human.empty()) first_human += ", ";
  first_human += turns[0].human;
  text += static_cast<int64_t>(std::string(kHumanSep).size() + first_human.size() +
                               std::string(kAssistantSep).size() + turns[0].assistant.size());
  for (size_t i = 1; i < turns.size(); ++i)
    text += static_cast<int64_t>(std::string(kHumanSep).size() + turns[i].human.size() +
                                 std::string(kAssistantSep).size() + turns[i].assistant.size());
  return soft + text;
}

namespace {

std::vector<size_t> epoch_permutation(size_t n, uint64_t seed, uint64_t stream, int64_t epoch) {
  std::vector<size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(Rng::mix(Rng::mix(seed, stream), static_cast<uint64_t>(epoch)));
  rng.shuffle(perm);
  return perm;
}

struct BatchAccumulator {
  double loss = 0.0;
  int64_t tokens = 0;
};

/// Forward/backward over one batch of rendered sequences; grads are
/// accumulated token-weighted so the batch loss is the mean over all masked
/// target tokens in the batch.
BatchAccumulator train_batch(ModelBundle& bundle, const std::vector<const InstructionSample*>& batch,
                             int stage) {
  SequenceBuilder builder = bundle.builder();
  std::vector<std::pair<Tensor, int64_t>> losses;
  int64_t total_tokens = 0;
  for (const InstructionSample* sample : batch) {
    auto outputs = bundle.perceive_sample(*sample);
    EmbeddingSequence seq = stage == 1 ? builder.render_stage1(*sample, outputs)
                                       : builder.render_stage2(*sample, outputs);
    Tensor loss = bundle.lm.sequence_loss(seq);
    int64_t tokens = 0;
    for (uint8_t m : seq.loss_mask) tokens += m ? 1 : 0;
    losses.emplace_back(loss, tokens);
    total_tokens += tokens;
  }
  BatchAccumulator acc;
  acc.tokens = total_tokens;
  for (auto& [loss, tokens] : losses) {
    const double w = static_cast<double>(tokens) / static_cast<double>(total_tokens);
    backward(loss, w);
    acc.loss += loss.item() * w;
  }
  return acc;
}

void require_frozen_backbones(const ModelBundle& bundle) {
  if (!bundle.lm.frozen())
    throw ConfigError("bridge training requires a frozen language model; pretrain and freeze it first");
  if (!bundle.encoders.image.params().all_frozen() || !bundle.encoders.audio.params().all_frozen())
    throw ConfigError("bridge training requires frozen encoders");
}

void finish_report(TrainReport& report) {
  if (report.logs.empty()) return;
  report.final_loss = report.logs.back().loss;
  const size_t window = std::min<size_t>(20, report.logs.size());
  double acc = 0.0;
  for (size_t i = report.logs.size() - window; i < report.logs.size(); ++i)
    acc += report.logs[i].loss;
  report.smoothed_loss = acc / static_cast<double>(window);
}

}  // namespace

TrainReport run_stage1(ModelBundle& bundle, const TrainConfig& config,
                       const std::vector<InstructionSample>& dataset) {
  require_frozen_backbones(bundle);
  if (dataset.empty()) throw ConfigError("stage 1: empty dataset");
  for (const InstructionSample& s : dataset) {
    if (s.modalities.size() != 1)
      throw StageMismatchError("stage 1 dataset must be single-modality; sample " + s.id +
                               " has " + std::to_string(s.modalities.size()));
    if (!s.instruction.empty() || !s.turns.empty())
      throw StageMismatchError("stage 1 dataset must be bare pairs; sample " + s.id +
                               " carries an instruction");
  }

  // Round-robin pools over the modalities present, image -> video -> audio.
  std::vector<std::vector<size_t>> pools;
  for (Modality kind : {Modality::Image, Modality::Video, Modality::Audio}) {
    std::vector<size_t> pool;
    for (size_t i = 0; i < dataset.size(); ++i)
      if (dataset[i].modalities[0].kind == kind) pool.push_back(i);
    if (!pool.empty()) pools.push_back(std::move(pool));
  }

  AdamW opt(config.opt);
  Rng rng(config.seed);
  int64_t start_step = 0;
  if (!config.resume_checkpoint.empty()) {
    load_bridge_checkpoint(config.resume_checkpoint, bundle, &opt);
    const CheckpointData data = load_checkpoint(config.resume_checkpoint);
    if (!data.rng_state.empty()) rng = Rng::deserialize(data.rng_state);
    start_step = opt.step_count();
  }

  TrainReport report;
  int64_t tokens_seen = 0;
  for (int64_t step = start_step; step < config.steps; ++step) {
    const auto& pool = pools[static_cast<size_t>(step % static_cast<int64_t>(pools.size()))];
    const int64_t batch_index = step / static_cast<int64_t>(pools.size());
    std::vector<const InstructionSample*> batch;
    for (int64_t b = 0; b < config.batch_size; ++b) {
      const int64_t j = batch_index * config.batch_size + b;
      const int64_t epoch = j / static_cast<int64_t>(pool.size());
      const auto perm = epoch_permutation(pool.size(), config.seed,
                                          static_cast<uint64_t>(step % static_cast<int64_t>(pools.size())),
                                          epoch);
      batch.push_back(&dataset[pool[perm[static_cast<size_t>(j % static_cast<int64_t>(pool.size()))]]]);
    }

    for (ParameterSet* set : bundle.trainable()) set->zero_grad();
    BatchAccumulator acc = train_batch(bundle, batch, 1);
    clip_grad_norm(bundle.trainable(), config.max_grad_norm);
    const double scale = lr_scale_for_step(step + 1, config.steps, config.warmup_frac);
    opt.step(bundle.trainable(), scale);
    tokens_seen += acc.tokens;

    if ((config.log_interval > 0 && step % config.log_interval == 0) || step + 1 == config.steps)
      report.logs.push_back(StepLog{step, acc.loss, config.opt.lr * scale, tokens_seen});
    if (config.checkpoint_interval > 0 && (step + 1) % config.checkpoint_interval == 0 &&
        !config.output_checkpoint.empty())
      save_bridge_checkpoint(config.output_checkpoint + ".step" + std::to_string(step + 1), bundle,
                             &opt, config.to_json_string(), rng.serialize());
  }

  if (!config.output_checkpoint.empty())
    save_bridge_checkpoint(config.output_checkpoint, bundle, &opt, config.to_json_string(),
                           rng.serialize());
  if (!config.report_path.empty()) write_report_jsonl(report, config.report_path);
  finish_report(report);
  return report;
}

TrainReport run_stage2(ModelBundle& bundle, const TrainConfig& config,
                       const std::vector<InstructionSample>& dataset) {
  require_frozen_backbones(bundle);
  if (dataset.empty()) throw ConfigError("stage 2: empty dataset");

  AdamW opt(config.opt);
  Rng rng(config.seed);
  int64_t start_step = 0;
  if (!config.resume_checkpoint.empty()) {
    load_bridge_checkpoint(config.resume_checkpoint, bundle, &opt);
    const CheckpointData data = load_checkpoint(config.resume_checkpoint);
    if (!data.rng_state.empty()) rng = Rng::deserialize(data.rng_state);
    start_step = opt.step_count();
  } else if (!config.init_checkpoint.empty()) {
    load_bridge_checkpoint(config.init_checkpoint, bundle);
  }

  // Reject anything that cannot render inside the context window.
  TrainReport report;
  std::vector<size_t> accepted;
  std::vector<int64_t> lengths;
  for (size_t i = 0; i < dataset.size(); ++i) {
    const int64_t len = sequence_length_for(dataset[i], bundle.cfg.n_queries, 2);
    if (len > bundle.lm.t_max()) {
      ++report.rejected_samples;
      report.rejected_ids.push_back(dataset[i].id);
      logging::warn("stage 2: rejecting sample " + dataset[i].id + " (length " +
                    std::to_string(len) + " > t_max " + std::to_string(bundle.lm.t_max()) + ")");
      continue;
    }
    accepted.push_back(i);
    lengths.push_back(len);
  }
  if (accepted.empty()) throw ConfigError("stage 2: every sample exceeded the context window");

  // Token-budget packing over a per-epoch shuffle; samples are never split.
  auto pack_epoch = [&](int64_t epoch) {
    const auto perm = epoch_permutation(accepted.size(), config.seed, 0x5747u, epoch);
    std::vector<std::vector<size_t>> batches;
    std::vector<size_t> current;
    int64_t current_tokens = 0;
    for (size_t pi : perm) {
      const int64_t len = lengths[pi];
      if (!current.empty() && current_tokens + len > config.token_budget) {
        batches.push_back(current);
        current.clear();
        current_tokens = 0;
      }
      current.push_back(pi);
      current_tokens += len;
    }
    if (!current.empty()) batches.push_back(current);
    return batches;
  };

  int64_t epoch = 0;
  std::vector<std::vector<size_t>> batches = pack_epoch(0);
  size_t batch_cursor = 0;
  // Fast-forward deterministically when resuming.
  for (int64_t s = 0; s < start_step; ++s) {
    if (++batch_cursor >= batches.size()) {
      batches = pack_epoch(++epoch);
      batch_cursor = 0;
    }
  }

  int64_t tokens_seen = 0;
  for (int64_t step = start_step; step < config.steps; ++step) {
    std::vector<const InstructionSample*> batch;
    for (size_t pi : batches[batch_cursor]) batch.push_back(&dataset[accepted[pi]]);
    if (++batch_cursor >= batches.size()) {
      batches = pack_epoch(++epoch);
      batch_cursor = 0;
    }

    for (ParameterSet* set : bundle.trainable()) set->zero_grad();
    BatchAccumulator acc = train_batch(bundle, batch, 2);
    clip_grad_norm(bundle.trainable(), config.max_grad_norm);
    const double scale = lr_scale_for_step(step + 1, config.steps, config.warmup_frac);
    opt.step(bundle.trainable(), scale);
    tokens_seen += acc.tokens;

    if ((config.log_interval > 0 && step % config.log_interval == 0) || step + 1 == config.steps)
      report.logs.push_back(StepLog{step, acc.loss, config.opt.lr * scale, tokens_seen});
    if (config.checkpoint_interval > 0 && (step + 1) % config.checkpoint_interval == 0 &&
        !config.output_checkpoint.empty())
      save_bridge_checkpoint(config.output_checkpoint + ".step" + std::to_string(step + 1), bundle,
                             &opt, config.to_json_string(), rng.serialize());
  }

  if (!config.output_checkpoint.empty())
    save_bridge_checkpoint(config.output_checkpoint, bundle, &opt, config.to_json_string(),
                           rng.serialize());
  if (!config.report_path.empty()) write_report_jsonl(report, config.report_path);
  finish_report(report);
  return report;
}

}  // namespace mbridge
