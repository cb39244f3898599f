#include "mbridge/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "mbridge/multis.hpp"
#include "mbridge/rng.hpp"
#include "mbridge/tokenizer.hpp"

namespace fs = std::filesystem;

namespace mbridge::synthetic {

namespace {

constexpr float kPalette[8][3] = {
    {0.90f, 0.15f, 0.15f}, {0.15f, 0.80f, 0.20f}, {0.20f, 0.30f, 0.95f}, {0.95f, 0.85f, 0.10f},
    {0.85f, 0.20f, 0.85f}, {0.10f, 0.85f, 0.85f}, {0.95f, 0.55f, 0.10f}, {0.90f, 0.90f, 0.90f},
};

std::string make_name(Rng& rng) {
  static const char* consonants = "bdfgklmnprstvz";
  static const char* vowels = "aeiou";
  std::string name;
  for (int s = 0; s < 3; ++s) {
    name += consonants[rng.uniform_int(0, 13)];
    name += vowels[rng.uniform_int(0, 4)];
  }
  return name;
}

}  // namespace

Image World::render_image(int concept_id) const {
  const int64_t n = cfg.image_size;
  Image img;
  img.height = img.width = n;
  img.pixels.assign(static_cast<size_t>(n * n * 3), 0.08f);

  const float* color = kPalette[concept_id % 8];
  const int shape = (concept_id / 8) % 4;
  const int64_t c0 = n / 2;
  const int64_t radius = n / 3;

  auto paint = [&](int64_t y, int64_t x) {
    if (y < 0 || y >= n || x < 0 || x >= n) return;
    img.set(y, x, 0, color[0]);
    img.set(y, x, 1, color[1]);
    img.set(y, x, 2, color[2]);
  };

  for (int64_t y = 0; y < n; ++y) {
    for (int64_t x = 0; x < n; ++x) {
      const int64_t dy = y - c0, dx = x - c0;
      bool inside = false;
      switch (shape) {
        case 0: inside = std::abs(dy) <= radius && std::abs(dx) <= radius; break;  // square
        case 1: inside = dy * dy + dx * dx <= radius * radius; break;              // disc
        case 2: inside = dy >= -radius && dy <= radius && std::abs(dx) <= (dy + radius) / 2; break;
        default: inside = std::abs(dy) <= 1 || std::abs(dx) <= 1; break;           // cross
      }
      if (inside) paint(y, x);
    }
  }
  return img;
}

Audio World::render_audio(int concept_id) const {
  Audio audio;
  audio.sample_rate = cfg.audio_rate;
  const size_t total = static_cast<size_t>(cfg.audio_seconds * cfg.audio_rate);
  audio.samples.resize(total);

  const double base = 60.0 + 30.0 * static_cast<double>(concept_id % 8);
  const int pattern = (concept_id / 8) % 4;
  const size_t seg = std::max<size_t>(1, total / 4);
  for (size_t i = 0; i < total; ++i) {
    const size_t segment = std::min<size_t>(3, i / seg);
    double freq = base;
    bool on = true;
    switch (pattern) {
      case 0: break;
      case 1: on = segment % 2 == 0; break;
      case 2: freq = segment % 2 == 0 ? base : base * 1.5; break;
      default:
        on = segment != 2;
        freq = segment == 0 ? base * 1.5 : base;
        break;
    }
    const double t = static_cast<double>(i) / cfg.audio_rate;
    audio.samples[i] = on ? static_cast<float>(0.4 * std::sin(2.0 * M_PI * freq * t)) : 0.0f;
  }
  return audio;
}

std::string World::image_caption(int concept_id) const {
  return "a photo of " + names[static_cast<size_t>(concept_id)] + ".";
}

std::string World::audio_caption(int concept_id) const {
  return "a sound of " + names[static_cast<size_t>(concept_id)] + ".";
}

std::string World::joint_caption(int image_concept, int audio_concept) const {
  return image_caption(image_concept) + " " + audio_caption(audio_concept);
}

std::string World::image_path(int concept_id) const {
  return "media/img_" + std::to_string(concept_id) + ".ppm";
}

std::string World::audio_path(int concept_id) const {
  return "media/aud_" + std::to_string(concept_id) + ".wav";
}

World make_synthetic_world(const WorldConfig& config) {
  World world;
  world.cfg = config;
  Rng rng(config.seed);

  std::set<std::string> used;
  while (static_cast<int>(world.names.size()) < config.n_concepts) {
    std::string name = make_name(rng);
    if (used.insert(name).second) world.names.push_back(name);
  }

  const int k = config.n_concepts;

  // Held-out joint pairs, fixed before any data so they can be excluded
  // everywhere else.
  std::set<std::pair<int, int>> heldout_set;
  std::set<std::pair<int, int>> heldout_unordered;
  while (static_cast<int>(world.heldout_concept_pairs.size()) < config.heldout_pairs) {
    const int a = static_cast<int>(rng.uniform_int(0, k - 1));
    const int b = static_cast<int>(rng.uniform_int(0, k - 1));
    if (a == b) continue;
    if (!heldout_set.insert({a, b}).second) continue;
    heldout_unordered.insert({std::min(a, b), std::max(a, b)});
    world.heldout_concept_pairs.emplace_back(a, b);
  }

  // Stage 1: bare <input><text> pairs, image-text and audio-text disjoint.
  const int per_modality = config.stage1_pairs / 2;
  for (int i = 0; i < per_modality; ++i) {
    const int c = i % k;
    InstructionSample s;
    s.id = "s1_img_" + std::to_string(i);
    s.task = "image_caption";
    s.modalities = {{Modality::Image, world.image_path(c)}};
    s.response = world.image_caption(c);
    s.source_dataset = "synthetic_world";
    world.stage1.push_back(std::move(s));
  }
  for (int i = 0; i < per_modality; ++i) {
    const int c = i % k;
    InstructionSample s;
    s.id = "s1_aud_" + std::to_string(i);
    s.task = "audio_caption";
    s.modalities = {{Modality::Audio, world.audio_path(c)}};
    s.response = world.audio_caption(c);
    s.source_dataset = "synthetic_world";
    world.stage1.push_back(std::move(s));
  }

  // Stage 2: instruction samples produced through the real template pipeline.
  const multis::TemplateSet templates = multis::TemplateSet::builtin();
  for (int i = 0; i < config.stage2_samples; ++i) {
    const int c = i % k;
    multis::SourceRecord record;
    record.id = "s2_" + std::to_string(i);
    record.source_dataset = "synthetic_world";
    const int flavor = i % 4;
    if (flavor == 0 || flavor == 1) {
      record.kind = multis::RecordKind::Caption;
      if (flavor == 0) {
        record.modalities = {{Modality::Image, world.image_path(c)}};
        record.captions = {world.image_caption(c)};
      } else {
        record.modalities = {{Modality::Audio, world.audio_path(c)}};
        record.captions = {world.audio_caption(c)};
      }
    } else {
      record.kind = multis::RecordKind::QA;
      if (flavor == 2) {
        record.modalities = {{Modality::Image, world.image_path(c)}};
        record.question = "What object does the image show?";
      } else {
        record.modalities = {{Modality::Audio, world.audio_path(c)}};
        record.question = "What is the sound in this clip?";
      }
      record.answers = {world.names[static_cast<size_t>(c)]};
    }
    world.stage2.push_back(multis::instantiate_template(record, templates, rng));
  }

  for (size_t i = 0; i < world.heldout_concept_pairs.size(); ++i) {
    const auto [a, b] = world.heldout_concept_pairs[i];
    InstructionSample s;
    s.id = "joint_" + std::to_string(i);
    s.task = "joint_caption";
    s.split = "heldout";
    s.modalities = {{Modality::Image, world.image_path(a)}, {Modality::Audio, world.audio_path(b)}};
    s.response = world.joint_caption(a, b);
    s.source_dataset = "synthetic_world";
    world.heldout_joint.push_back(std::move(s));
  }

  // Text corpus: caption grammar, two-concept compositions (held-out pairs
  // excluded in both orders), and ###-format dialogues so the frozen LM knows
  // the separators and emits "###" after a response.
  for (int i = 0; i < config.corpus_caption_lines; ++i) {
    const int c = i % k;
    world.corpus_lines.push_back(i % 2 == 0 ? world.image_caption(c) : world.audio_caption(c));
  }
  int emitted = 0;
  while (emitted < config.corpus_composition_lines) {
    const int a = static_cast<int>(rng.uniform_int(0, k - 1));
    const int b = static_cast<int>(rng.uniform_int(0, k - 1));
    if (a == b) continue;
    if (heldout_unordered.count({std::min(a, b), std::max(a, b)})) continue;
    world.corpus_lines.push_back(world.joint_caption(a, b));
    ++emitted;
  }
  const std::vector<std::string> ask_image = {
      "Generate a brief sentence to describe the content of the image.",
      "Caption this image.",
      "What does this image show? Reply with a sentence.",
      "Describe the image using a sentence.",
  };
  const std::vector<std::string> ask_audio = {
      "Listen to this audio and summarize its content in one sentence.",
      "Caption this audio clip.",
      "Describe the sound in a sentence.",
      "What can be heard here? Answer in one sentence.",
  };
  const std::vector<std::string> ask_name_image = {"What object does the image show?"};
  const std::vector<std::string> ask_name_audio = {"What is the sound in this clip?"};
  for (int i = 0; i < config.corpus_dialogue_lines; ++i) {
    const int c = static_cast<int>(rng.uniform_int(0, k - 1));
    const bool image_side = rng.uniform() < 0.5;
    const bool qa = rng.uniform() < 0.5;
    std::string prompt = image_side ? "Give image: ." : "Give audio: .";
    std::string instruction;
    std::string response;
    if (qa) {
      instruction = image_side ? ask_name_image[0] : ask_name_audio[0];
      response = world.names[static_cast<size_t>(c)];
    } else {
      const auto& bank = image_side ? ask_image : ask_audio;
      instruction = bank[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(bank.size()) - 1))];
      response = image_side ? world.image_caption(c) : world.audio_caption(c);
    }
    world.corpus_lines.push_back("###Human: " + prompt + ", " + instruction +
                                 "###Assistant: " + response + "###");
  }

  return world;
}

void write_world(const World& world, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "media");
  for (int c = 0; c < world.cfg.n_concepts; ++c) {
    save_ppm(world.render_image(c), (fs::path(dir) / world.image_path(c)).string());
    save_wav(world.render_audio(c), (fs::path(dir) / world.audio_path(c)).string());
  }
  multis::emit_dataset(world.stage1, (fs::path(dir) / "stage1.jsonl").string());
  multis::emit_dataset(world.stage2, (fs::path(dir) / "stage2.jsonl").string());
  multis::emit_dataset(world.heldout_joint, (fs::path(dir) / "heldout_joint.jsonl").string());
  write_corpus(world.corpus_lines, (fs::path(dir) / "lm_corpus.txt").string());

  nlohmann::ordered_json manifest{
      {"seed", world.cfg.seed},
      {"n_concepts", world.cfg.n_concepts},
      {"image_size", world.cfg.image_size},
      {"audio_rate", world.cfg.audio_rate},
      {"names", world.names},
  };
  nlohmann::ordered_json pairs = nlohmann::ordered_json::array();
  for (const auto& [a, b] : world.heldout_concept_pairs)
    pairs.push_back(nlohmann::ordered_json::array({a, b}));
  manifest["heldout_pairs"] = pairs;
  std::ofstream out(fs::path(dir) / "world.json");
  out << manifest.dump(2) << "\n";
}

void write_corpus(const std::vector<std::string>& lines, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("corpus: cannot write " + path);
  for (const std::string& line : lines) out << line << "\n";
}

std::vector<std::vector<int>> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("corpus: cannot open " + path);
  Tokenizer tok;
  std::vector<std::vector<int>> corpus;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) corpus.push_back(tok.tokenize(line));
  return corpus;
}

}  // namespace mbridge::synthetic
