#include "mbridge/assembly.hpp"

#include <algorithm>

#include "mbridge/ops.hpp"

namespace mbridge {

namespace {

struct MarkerHit {
  size_t pos;
  Modality modality;
  size_t marker_len;
};

std::optional<MarkerHit> next_marker(const std::string& tmpl, size_t from) {
  const std::pair<const char*, Modality> markers[] = {
      {kImageMarker, Modality::Image},
      {kVideoMarker, Modality::Video},
      {kAudioMarker, Modality::Audio},
  };
  std::optional<MarkerHit> best;
  for (const auto& [text, kind] : markers) {
    const size_t p = tmpl.find(text, from);
    if (p == std::string::npos) continue;
    if (!best || p < best->pos) best = MarkerHit{p, kind, std::string(text).size()};
  }
  return best;
}

}  // namespace

std::vector<TemplatePiece> parse_prompt_template(const std::string& tmpl) {
  if (tmpl.find(kQuestionMarker) != std::string::npos)
    throw TemplateError("prompt template still contains " + std::string(kQuestionMarker) +
                        "; question substitution happens at data-build time");
  std::vector<TemplatePiece> pieces;
  size_t cursor = 0;
  while (cursor < tmpl.size()) {
    auto hit = next_marker(tmpl, cursor);
    if (!hit) {
      pieces.push_back(TemplatePiece{TemplatePiece::Kind::Text, tmpl.substr(cursor), {}});
      break;
    }
    if (hit->pos > cursor)
      pieces.push_back(
          TemplatePiece{TemplatePiece::Kind::Text, tmpl.substr(cursor, hit->pos - cursor), {}});
    pieces.push_back(TemplatePiece{TemplatePiece::Kind::Placeholder, "", hit->modality});
    cursor = hit->pos + hit->marker_len;
  }
  return pieces;
}

namespace {

/// Incremental sequence assembly: text spans and soft-prompt blocks, realized
/// at the end as one concat plus provenance/mask arrays.
class Assembler {
 public:
  Assembler(const Tokenizer& tok, const LanguageModel& lm) : tok_(tok), lm_(lm) {}

  void add_text(const std::string& text, bool masked) {
    for (int id : tok_.tokenize(text)) {
      token_ids_.push_back(id);
      positions_.push_back(PositionInfo::token(id));
      mask_.push_back(masked ? 1 : 0);
    }
  }

  void add_soft_block(const ModalityEmbedding& embedding) {
    flush_tokens();
    parts_.push_back(embedding.vectors);
    for (int64_t i = 0; i < embedding.vectors.dim(0); ++i) {
      positions_.push_back(PositionInfo::soft_prompt(embedding.kind));
      mask_.push_back(0);
    }
  }

  EmbeddingSequence finish() {
    flush_tokens();
    EmbeddingSequence seq;
    if (parts_.empty()) throw ShapeError("render: empty sequence");
    seq.embeddings = parts_.size() == 1 ? parts_[0] : ops::concat_rows(parts_);
    seq.positions = std::move(positions_);
    seq.loss_mask = std::move(mask_);
    if (seq.length() > lm_.t_max())
      throw ContextOverflowError("render: sequence length " + std::to_string(seq.length()) +
                                 " exceeds t_max " + std::to_string(lm_.t_max()) +
                                 "; sample must be rejected at build time");
    seq.validate();
    return seq;
  }

 private:
  void flush_tokens() {
    if (token_ids_.empty()) return;
    parts_.push_back(lm_.embed_tokens(token_ids_));
    token_ids_.clear();
  }

  const Tokenizer& tok_;
  const LanguageModel& lm_;
  std::vector<int> token_ids_;
  std::vector<Tensor> parts_;
  std::vector<PositionInfo> positions_;
  std::vector<uint8_t> mask_;
};

bool kind_selected(Modality kind, const RenderOptions& options) {
  if (!options.selected) return true;
  return std::find(options.selected->begin(), options.selected->end(), kind) !=
         options.selected->end();
}

void check_outputs(const InstructionSample& sample, const std::vector<ModalityEmbedding>& outputs) {
  if (outputs.size() != sample.modalities.size())
    throw ShapeError("render: " + std::to_string(outputs.size()) + " perceiver outputs for " +
                     std::to_string(sample.modalities.size()) + " modalities");
}

}  // namespace

EmbeddingSequence SequenceBuilder::render_alignment(const InstructionSample& sample,
                                                    const std::vector<ModalityEmbedding>& outputs,
                                                    const RenderOptions& options) const {
  check_outputs(sample, outputs);
  Assembler assembler(*tok_, *lm_);
  for (size_t i = 0; i < sample.modalities.size(); ++i) {
    if (!kind_selected(sample.modalities[i].kind, options)) continue;
    if (outputs[i].kind != sample.modalities[i].kind)
      throw ShapeError("render: perceiver output kind mismatch at slot " + std::to_string(i));
    assembler.add_soft_block(outputs[i]);
  }
  assembler.add_text(sample.response, /*masked=*/true);
  return assembler.finish();
}

EmbeddingSequence SequenceBuilder::render_stage1(const InstructionSample& sample,
                                                 const std::vector<ModalityEmbedding>& outputs) const {
  if (sample.modalities.size() != 1)
    throw StageMismatchError("stage 1 takes exactly one modality per sample, got " +
                             std::to_string(sample.modalities.size()) + " (sample " + sample.id +
                             ")");
  if (!sample.instruction.empty() || !sample.turns.empty())
    throw StageMismatchError("stage 1 samples carry bare <input><text> pairs, sample " +
                             sample.id + " has instruction/turns");
  return render_alignment(sample, outputs, {});
}

EmbeddingSequence SequenceBuilder::render_stage2(const InstructionSample& sample,
                                                 const std::vector<ModalityEmbedding>& outputs,
                                                 const RenderOptions& options) const {
  check_outputs(sample, outputs);
  if (sample.instruction.empty() && sample.turns.empty())
    throw TemplateError("stage 2 sample " + sample.id + " has neither instruction nor turns");

  const auto pieces = parse_prompt_template(sample.prompt_template);
  const size_t placeholder_count = static_cast<size_t>(
      std::count_if(pieces.begin(), pieces.end(), [](const TemplatePiece& p) {
        return p.kind == TemplatePiece::Kind::Placeholder;
      }));
  if (placeholder_count != sample.modalities.size())
    throw TemplateError("sample " + sample.id + ": template has " +
                        std::to_string(placeholder_count) + " placeholders for " +
                        std::to_string(sample.modalities.size()) + " modalities");

  // Effective turn list; single instruction/response pairs become one turn.
  std::vector<DialogueTurn> turns = sample.turns;
  if (turns.empty()) turns.push_back(DialogueTurn{sample.instruction, sample.response});

  Assembler assembler(*tok_, *lm_);
  for (size_t turn_idx = 0; turn_idx < turns.size(); ++turn_idx) {
    assembler.add_text(kHumanSep, false);
    if (turn_idx == 0) {
      size_t slot = 0;
      for (const TemplatePiece& piece : pieces) {
        if (piece.kind == TemplatePiece::Kind::Text) {
          assembler.add_text(piece.text, false);
          continue;
        }
        if (piece.modality != sample.modalities[slot].kind)
          throw TemplateError("sample " + sample.id + ": placeholder " + std::to_string(slot) +
                              " is " + modality_name(piece.modality) + " but sample lists " +
                              modality_name(sample.modalities[slot].kind));
        if (outputs[slot].kind != piece.modality)
          throw ShapeError("render: perceiver output kind mismatch at slot " +
                           std::to_string(slot));
        if (kind_selected(piece.modality, options)) assembler.add_soft_block(outputs[slot]);
        ++slot;
      }
      if (!sample.prompt_template.empty() && !turns[0].human.empty()) assembler.add_text(", ", false);
      assembler.add_text(turns[0].human, false);
    } else {
      assembler.add_text(turns[turn_idx].human, false);
    }
    assembler.add_text(kAssistantSep, false);
    const bool last = turn_idx + 1 == turns.size();
    if (!last || options.include_response) assembler.add_text(turns[turn_idx].assistant, true);
  }
  return assembler.finish();
}

}  // namespace mbridge
