#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mbridge/assembly.hpp"
#include "mbridge/media.hpp"

namespace mbridge::synthetic {

/// Deterministic latent-concept world. Every concept renders to an image
/// (colored shape raster), an audio clip (tone pattern) and a text name;
/// training data pairs each rendering with language ONLY one modality at a
/// time, while the held-out set pairs image+audio combinations that never
/// co-occur anywhere in training data or the text corpus.
struct WorldConfig {
  uint64_t seed = 1234;
  int n_concepts = 16;
  int64_t image_size = 16;
  int audio_rate = 1000;
  double audio_seconds = 1.0;
  int stage1_pairs = 32;  // split evenly between image-text and audio-text
  int stage2_samples = 16;
  int heldout_pairs = 12;
  int corpus_caption_lines = 96;
  int corpus_composition_lines = 128;
  int corpus_dialogue_lines = 96;
};

struct World {
  WorldConfig cfg;
  std::vector<std::string> names;

  std::vector<InstructionSample> stage1;        // single-modality pairs
  std::vector<InstructionSample> stage2;        // instruction samples
  std::vector<InstructionSample> heldout_joint; // image+audio -> combined caption
  std::vector<std::pair<int, int>> heldout_concept_pairs;
  std::vector<std::string> corpus_lines;        // LM pretraining text

  Image render_image(int concept_id) const;
  Audio render_audio(int concept_id) const;
  std::string image_caption(int concept_id) const;
  std::string audio_caption(int concept_id) const;
  std::string joint_caption(int image_concept, int audio_concept) const;

  std::string image_path(int concept_id) const;
  std::string audio_path(int concept_id) const;
};

World make_synthetic_world(const WorldConfig& config);

/// Writes media files, the three JSONL datasets, the LM corpus and a world
/// manifest under dir. Byte-identical for identical configs.
void write_world(const World& world, const std::string& dir);

std::vector<std::vector<int>> load_corpus(const std::string& path);
void write_corpus(const std::vector<std::string>& lines, const std::string& path);

}  // namespace mbridge::synthetic
