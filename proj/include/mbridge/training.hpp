#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mbridge/assembly.hpp"
#include "mbridge/checkpoint.hpp"
#include "mbridge/encoders.hpp"
#include "mbridge/language_model.hpp"
#include "mbridge/perceiver.hpp"
#include "mbridge/tokenizer.hpp"

namespace mbridge {

/// Model hyperparameters plus media location; everything needed to assemble
/// the full bridge from seeds or checkpoints.
struct BundleConfig {
  ImageEncoderConfig image_encoder;
  AudioEncoderConfig audio_encoder;
  PerceiverConfig perceiver;
  LMConfig lm;
  int64_t n_queries = 32;
  uint64_t query_seed = 906;
  std::vector<Modality> modalities = {Modality::Image, Modality::Video, Modality::Audio};
  std::string media_root;

  /// Small shapes used across the test suites (n_queries 8 etc).
  static BundleConfig desk();
};

/// The assembled system: frozen encoders and LM, trainable query bank and
/// perceiver, plus an encoder-output cache (frozen determinism makes encoder
/// features a pure function of the media file).
struct ModelBundle {
  BundleConfig cfg;
  Tokenizer tokenizer;
  EncoderSet encoders;
  QueryBank queries;
  Perceiver perceiver;
  LanguageModel lm;

  explicit ModelBundle(BundleConfig config);

  EncoderOutput encode_ref(const ModalityRef& ref);
  std::vector<ModalityEmbedding> perceive_sample(const InstructionSample& sample);
  SequenceBuilder builder() const { return SequenceBuilder(tokenizer, lm); }

  /// Trainable parameter sets (query bank + perceiver), the only weights any
  /// bridge-training stage may change.
  std::vector<ParameterSet*> trainable();

  void clear_cache() { encoder_cache_.clear(); }

 private:
  std::unordered_map<std::string, EncoderOutput> encoder_cache_;
};

struct TrainConfig {
  int stage = 1;
  int64_t steps = 1000;
  int64_t batch_size = 8;       // stage 1: samples per batch
  int64_t token_budget = 4096;  // stage 2: max tokens packed per batch
  AdamWConfig opt;
  double warmup_frac = 0.03;
  double max_grad_norm = 1.0;  // global-norm gradient clip; <= 0 disables
  uint64_t seed = 0;
  int64_t log_interval = 50;
  int64_t checkpoint_interval = 0;  // 0: final checkpoint only

  std::string data_path;
  std::string lm_checkpoint;
  std::string encoder_checkpoint;
  std::string init_checkpoint;    // stage 2: stage-1 output
  std::string output_checkpoint;
  std::string resume_checkpoint;  // optional mid-run state to continue from
  std::string report_path;

  std::string to_json_string() const;
  static TrainConfig from_json_string(const std::string& text);

  /// The documented full-scale profiles. Not used by any test; desk runs
  /// override steps/batch to tractable sizes.
  static TrainConfig paper_scale_stage1();
  static TrainConfig paper_scale_stage2();
};

struct StepLog {
  int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  int64_t tokens_seen = 0;
};

struct TrainReport {
  std::vector<StepLog> logs;
  double final_loss = 0.0;
  int64_t rejected_samples = 0;
  std::vector<std::string> rejected_ids;
  double smoothed_loss = 0.0;
};

void write_report_jsonl(const TrainReport& report, const std::string& path);

/// Stage 1: aligns each modality with language on single-modality pairs.
/// Optimizes the query bank and perceiver only; encoders and LM must be
/// frozen. Batches round-robin across the modalities present in the data.
TrainReport run_stage1(ModelBundle& bundle, const TrainConfig& config,
                       const std::vector<InstructionSample>& dataset);

/// Stage 2: instruction tuning in the dialogue format with token-budget
/// packing (samples are never split). Same freeze contract as stage 1.
TrainReport run_stage2(ModelBundle& bundle, const TrainConfig& config,
                       const std::vector<InstructionSample>& dataset);

/// Warmup-then-constant learning-rate scale for a given step (1-based).
double lr_scale_for_step(int64_t step, int64_t total_steps, double warmup_frac);

/// Rendered sequence length without building the tensor graph.
int64_t sequence_length_for(const InstructionSample& sample, int64_t n_queries, int stage);

// Checkpoint wiring for the bundle's components.
void save_bridge_checkpoint(const std::string& path, const ModelBundle& bundle,
                            const AdamW* optimizer, const std::string& config_echo,
                            const std::string& rng_state);
void load_bridge_checkpoint(const std::string& path, ModelBundle& bundle,
                            AdamW* optimizer = nullptr);
void save_frozen_checkpoints(const std::string& lm_path, const std::string& encoder_path,
                             const ModelBundle& bundle);
void load_lm_checkpoint(const std::string& path, ModelBundle& bundle);
void load_encoder_checkpoint(const std::string& path, ModelBundle& bundle);

}  // namespace mbridge
