#pragma once

#include <map>
#include <string>
#include <vector>

#include "mbridge/assembly.hpp"
#include "mbridge/llm_client.hpp"
#include "mbridge/media.hpp"
#include "mbridge/rng.hpp"

namespace mbridge::multis {

enum class RecordKind { Caption, QA, Dialogue };
const char* record_kind_name(RecordKind kind);
RecordKind record_kind_from_name(const std::string& name);

/// One row of a source dataset before unification.
struct SourceRecord {
  std::string id;
  std::string source_dataset;
  std::vector<ModalityRef> modalities;
  RecordKind kind = RecordKind::Caption;
  std::string question;               // QA / Dialogue
  std::vector<std::string> answers;   // QA / Dialogue
  std::vector<std::string> captions;  // Caption
  std::vector<std::string> labels;    // audio label sets
  std::string split = "train";

  void validate() const;
};

/// Canonical key for a modality combination: enum-ordered kinds joined by
/// '+', e.g. "image", "video+audio".
std::string modality_signature(const std::vector<Modality>& kinds);
std::string modality_signature(const std::vector<ModalityRef>& refs);

/// The modality-input prompt family ("Give image: <image input>." etc).
std::string modality_prompt(const std::vector<Modality>& kinds);

/// Instruction templates per (modality signature, record kind) plus the
/// response-style lexicon per kind. Templates may carry <QUESTION> (QA) and
/// <STYLE> (substituted from the lexicon) markers.
struct TemplateSet {
  std::map<std::pair<std::string, std::string>, std::vector<std::string>> templates;
  std::map<std::string, std::vector<std::string>> style_modifiers;

  static TemplateSet builtin();
  void validate() const;

  std::string to_json_string() const;
  static TemplateSet from_json_string(const std::string& text);

  const std::vector<std::string>& lookup(const std::string& signature,
                                         const std::string& kind) const;
};

/// Uniformly samples a template (and style modifier where the template asks
/// for one), substitutes <QUESTION>, attaches the modality-input prompt and
/// picks one reference answer/caption as the response.
InstructionSample instantiate_template(const SourceRecord& record, const TemplateSet& templates,
                                       Rng& rng);

struct FrameAnnotation {
  int temporal_index = 0;
  std::vector<std::string> region_semantics;
  std::vector<std::string> region_captions;
  std::string frame_caption;
};

struct MediaDescription {
  std::vector<std::string> global_captions;
  std::vector<FrameAnnotation> frames;  // strictly increasing temporal index
  std::vector<std::string> audio_labels;
  std::vector<std::string> audio_captions;

  void validate() const;
  std::string to_json_string() const;
  static MediaDescription from_json_string(const std::string& text);
};

/// Deterministic textual document: global captions header, per-frame blocks in
/// temporal order, audio labels/captions last.
std::string compose_media_description(const MediaDescription& description);

/// Produces MediaDescriptions for records. The real region/caption annotators
/// live behind this interface; shipping implementations are a deterministic
/// mock and a passthrough over pre-existing annotation files.
struct Annotator {
  virtual ~Annotator() = default;
  virtual MediaDescription annotate(const SourceRecord& record) = 0;
};

class MockAnnotator : public Annotator {
 public:
  MediaDescription annotate(const SourceRecord& record) override;
};

/// Reads <dir>/<record id>.json holding a MediaDescription.
class FileAnnotator : public Annotator {
 public:
  explicit FileAnnotator(std::string dir) : dir_(std::move(dir)) {}
  MediaDescription annotate(const SourceRecord& record) override;

 private:
  std::string dir_;
};

enum class ChatSampleType { Conversation, DetailedDescription, ComplexReasoning };
const char* chat_sample_type_name(ChatSampleType type);

/// Editable in-context material for the chat generator: per-type system
/// rubric and worked (description -> dialogue) exemplars.
struct SeedExemplars {
  struct Example {
    std::string description;
    std::string reply;
  };
  std::map<std::string, std::string> rubrics;             // type name -> system prompt
  std::map<std::string, std::vector<Example>> examples;   // type name -> exemplars

  static SeedExemplars builtin();
  std::string to_json_string() const;
  static SeedExemplars from_json_string(const std::string& text);
};

struct QuarantineEntry {
  std::string record_id;
  std::string raw_output;
  std::string reason;
};

/// Collects rejected generations; optionally appends them to a JSONL file.
class Quarantine {
 public:
  explicit Quarantine(std::string path = "") : path_(std::move(path)) {}
  void add(const std::string& record_id, const std::string& raw, const std::string& reason);
  const std::vector<QuarantineEntry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }

 private:
  std::string path_;
  std::vector<QuarantineEntry> entries_;
};

struct ChatGenConfig {
  double temperature = 0.7;
  int max_tokens = 1024;
  /// Assistant turns must not copy this many consecutive bytes verbatim from
  /// the composed description.
  size_t leak_threshold = 60;
  uint64_t seed = 0;
};

ChatRequest build_chat_request(const MediaDescription& description, ChatSampleType type,
                               const SeedExemplars& seeds, const ChatGenConfig& config);

/// Queries the client in an in-context-learning manner and parses the reply
/// into dialogue turns. Malformed output is quarantined, never fatal.
std::vector<InstructionSample> generate_chat_samples(const SourceRecord& record,
                                                     const MediaDescription& description,
                                                     ChatSampleType type, ChatClient& client,
                                                     const SeedExemplars& seeds,
                                                     const ChatGenConfig& config,
                                                     Quarantine& quarantine);

struct ChatBuildConfig {
  // Corpus mix, conversation : detailed description : complex reasoning.
  int proportion_conversation = 24;
  int proportion_detailed = 18;
  int proportion_reasoning = 9;
  int in_flight = 4;
  ChatGenConfig gen;
};

struct ChatBuildResult {
  std::vector<InstructionSample> samples;  // sorted by record id
  size_t quarantined = 0;
  std::map<std::string, size_t> per_type_counts;
};

/// Drives annotate -> compose -> generate over a record list, assigning sample
/// types by quota in sorted-id order and issuing client calls concurrently up
/// to the in-flight limit. Output order is deterministic.
ChatBuildResult build_chat_data(const std::vector<SourceRecord>& records, Annotator& annotator,
                                ChatClient& client, const SeedExemplars& seeds,
                                const ChatBuildConfig& config, Quarantine& quarantine);

// JSONL round trips. Validation errors carry the 1-based line number.
void emit_dataset(const std::vector<InstructionSample>& samples, const std::string& path);
std::vector<InstructionSample> load_dataset(const std::string& path);
void emit_source_records(const std::vector<SourceRecord>& records, const std::string& path);
std::vector<SourceRecord> load_source_records(const std::string& path);

/// Writes the editable template/seed files (templates.json, seeds.json).
void emit_builtin_assets(const std::string& dir);

}  // namespace mbridge::multis
