#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mbridge/language_model.hpp"
#include "mbridge/media.hpp"
#include "mbridge/perceiver.hpp"
#include "mbridge/tokenizer.hpp"

namespace mbridge {

struct ModalityRef {
  Modality kind;
  std::string path;
};

struct DialogueTurn {
  std::string human;
  std::string assistant;
};

/// One unified training/eval record. For alignment (stage-1) samples the text
/// lives in `response` and `instruction` stays empty; dialogue samples carry
/// `turns` instead of a single instruction/response pair.
struct InstructionSample {
  std::string id;
  std::string task;
  std::string split = "train";
  std::vector<ModalityRef> modalities;
  std::string prompt_template;
  std::string instruction;
  std::string response;
  std::vector<DialogueTurn> turns;
  std::string style;
  std::string source_dataset;
};

// Template marker grammar.
inline constexpr const char* kImageMarker = "<image input>";
inline constexpr const char* kVideoMarker = "<video input>";
inline constexpr const char* kAudioMarker = "<audio input>";
inline constexpr const char* kQuestionMarker = "<QUESTION>";

inline constexpr const char* kHumanSep = "###Human: ";
inline constexpr const char* kAssistantSep = "###Assistant: ";

struct TemplatePiece {
  enum class Kind { Text, Placeholder };
  Kind kind = Kind::Text;
  std::string text;           // Kind::Text
  Modality modality = Modality::Image;  // Kind::Placeholder
};

/// Splits a prompt template into literal text and modality placeholders.
/// An unsubstituted <QUESTION> marker is a build bug and is rejected here.
std::vector<TemplatePiece> parse_prompt_template(const std::string& tmpl);

struct RenderOptions {
  bool include_response = true;  // false renders through the final "###Assistant: "
  /// Ablation filter: kinds not listed expand their placeholder to zero
  /// positions (input omitted entirely). Null means all modalities.
  const std::vector<Modality>* selected = nullptr;
};

/// Renders InstructionSamples into EmbeddingSequences against a tokenizer and
/// a language model's embedding table.
class SequenceBuilder {
 public:
  SequenceBuilder(const Tokenizer& tokenizer, const LanguageModel& lm)
      : tok_(&tokenizer), lm_(&lm) {}

  /// Alignment format: soft-prompt blocks in modality order, then the sample
  /// text, with the loss mask on the text tokens.
  EmbeddingSequence render_alignment(const InstructionSample& sample,
                                     const std::vector<ModalityEmbedding>& outputs,
                                     const RenderOptions& options = {}) const;

  /// Stage-1 rendering: alignment format restricted to exactly one modality
  /// and an empty instruction.
  EmbeddingSequence render_stage1(const InstructionSample& sample,
                                  const std::vector<ModalityEmbedding>& outputs) const;

  /// Stage-2 dialogue format:
  /// `###Human: <prompt>, <instruction>###Assistant: <response>`, repeated for
  /// every turn; the loss mask covers response tokens only.
  EmbeddingSequence render_stage2(const InstructionSample& sample,
                                  const std::vector<ModalityEmbedding>& outputs,
                                  const RenderOptions& options = {}) const;

  const Tokenizer& tokenizer() const { return *tok_; }

 private:
  const Tokenizer* tok_;
  const LanguageModel* lm_;
};

}  // namespace mbridge
