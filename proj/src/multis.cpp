#include "mbridge/multis.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "mbridge/log.hpp"

namespace mbridge::multis {

using ordered_json = nlohmann::ordered_json;

const char* record_kind_name(RecordKind kind) {
  switch (kind) {
    case RecordKind::Caption: return "caption";
    case RecordKind::QA: return "qa";
    default: return "dialogue";
  }
}

RecordKind record_kind_from_name(const std::string& name) {
  if (name == "caption") return RecordKind::Caption;
  if (name == "qa") return RecordKind::QA;
  if (name == "dialogue") return RecordKind::Dialogue;
  throw ConfigError("unknown record kind: " + name);
}

void SourceRecord::validate() const {
  if (id.empty()) throw ConfigError("source record: empty id");
  if (modalities.empty()) throw ConfigError("source record " + id + ": no modalities");
  if (kind == RecordKind::Caption && captions.empty())
    throw ConfigError("source record " + id + ": caption record without captions");
  if ((kind == RecordKind::QA || kind == RecordKind::Dialogue) && question.empty())
    throw ConfigError("source record " + id + ": QA/dialogue record without a question");
  if ((kind == RecordKind::QA || kind == RecordKind::Dialogue) && answers.empty())
    throw ConfigError("source record " + id + ": QA/dialogue record without answers");
}

std::string modality_signature(const std::vector<Modality>& kinds) {
  std::vector<Modality> sorted = kinds;
  std::sort(sorted.begin(), sorted.end(),
            [](Modality a, Modality b) { return static_cast<int>(a) < static_cast<int>(b); });
  std::string sig;
  for (Modality kind : sorted) {
    if (!sig.empty()) sig += "+";
    sig += modality_name(kind);
  }
  return sig;
}

std::string modality_signature(const std::vector<ModalityRef>& refs) {
  std::vector<Modality> kinds;
  for (const ModalityRef& r : refs) kinds.push_back(r.kind);
  return modality_signature(kinds);
}

std::string modality_prompt(const std::vector<Modality>& kinds) {
  const std::string sig = modality_signature(kinds);
  if (sig == "image") return "Give image: <image input>.";
  if (sig == "video") return "Give video: <video input>.";
  if (sig == "audio") return "Give audio: <audio input>.";
  if (sig == "video+audio")
    return "Give video: <video input> and its background audio: <audio input>.";
  // Every other combination composes from the same family.
  std::vector<Modality> sorted = kinds;
  std::sort(sorted.begin(), sorted.end(),
            [](Modality a, Modality b) { return static_cast<int>(a) < static_cast<int>(b); });
  std::string prompt = "Give ";
  for (size_t i = 0; i < sorted.size(); ++i) {
    if (i) prompt += " and ";
    prompt += std::string(modality_name(sorted[i])) + ": <" + modality_name(sorted[i]) + " input>";
  }
  return prompt + ".";
}

TemplateSet TemplateSet::builtin() {
  TemplateSet set;
  set.style_modifiers["qa"] = {"short", "brief", "concise", "one-word"};
  set.style_modifiers["dialogue"] = {"short", "brief"};
  set.style_modifiers["caption"] = {"a sentence", "single sentence", "one sentence",
                                    "a short sentence"};

  set.templates[{"image", "caption"}] = {
      "Generate a brief sentence to describe the content of the image.",
      "Write a single sentence that conveys what the image depicts.",
      "Summarize the image content in a single sentence.",
      "Describe the image using <STYLE>.",
      "In <STYLE>, state what the image shows.",
      "Give a short description of this picture.",
      "What does this image show? Reply with <STYLE>.",
      "Caption this image.",
      "Provide a one-sentence caption for the image.",
      "Express the main content of the image in <STYLE>.",
      "Write a caption that sums up the picture.",
      "Briefly describe the scene in the image.",
  };
  set.templates[{"image", "qa"}] = {
      "Use the visual aid to respond to the question briefly: <QUESTION>",
      "Analyze the picture and provide a brief answer to <QUESTION>",
      "Use the information presented in the image to shortly answer <QUESTION>",
      "Look at the image and give a <STYLE> answer to <QUESTION>",
      "Answer this question about the image: <QUESTION>",
      "Based on the picture, answer <QUESTION>",
      "With the image as context, respond to <QUESTION> with a <STYLE> answer.",
      "<QUESTION> Answer using the image, keeping it <STYLE>.",
      "Examine the image and answer <QUESTION>",
      "From what the image shows, give a <STYLE> reply to <QUESTION>",
      "Considering the image, what is the answer to <QUESTION>",
      "Study the picture and answer the question: <QUESTION>",
  };
  set.templates[{"video", "caption"}] = {
      "Generate a concise description for this video.",
      "Give a brief overview of the information presented in this video.",
      "Write a short summary that effectively conveys the main message of this video.",
      "Describe the video content in <STYLE>.",
      "Summarize what happens in the video using <STYLE>.",
      "Caption this video clip.",
      "What is this video about? Answer in <STYLE>.",
      "Provide a one-sentence description of the video.",
      "Sum up the events of the video in <STYLE>.",
      "Write a brief caption for this clip.",
      "State the main activity shown in the video.",
      "Give a compact summary of this video.",
  };
  set.templates[{"video", "qa"}] = {
      "Based on the information presented in the video, provide a short answer to question "
      "<QUESTION>",
      "Analyze the video and provide a one-word answer to question <QUESTION>",
      "With the aid of the given video, what is your simple answer to <QUESTION>",
      "Watch the clip and give a <STYLE> answer to <QUESTION>",
      "Answer this question about the video: <QUESTION>",
      "From the video content, respond to <QUESTION> with a <STYLE> reply.",
      "Using the video as evidence, answer <QUESTION>",
      "<QUESTION> Keep your answer <STYLE>, based on the video.",
      "After viewing the video, provide a <STYLE> answer to <QUESTION>",
      "What does the video suggest for the question: <QUESTION>",
      "Give a direct answer to <QUESTION> grounded in the video.",
      "Considering the footage, answer <QUESTION>",
  };
  set.templates[{"audio", "caption"}] = {
      "Listen to this audio and summarize its content in one sentence.",
      "Write a succinct summary of the key takeaways from this audio.",
      "After listening to the audio, generate a one-sentence overview of its main ideas.",
      "Describe the sound in <STYLE>.",
      "Caption this audio clip.",
      "What can be heard here? Answer in <STYLE>.",
      "Summarize the audio content using <STYLE>.",
      "Provide a brief description of this recording.",
      "State what the audio contains in <STYLE>.",
      "Write a short caption for the sound clip.",
      "Give a one-sentence account of what you hear.",
      "Briefly characterize this audio.",
  };
  set.templates[{"audio", "qa"}] = {
      "Listen to the audio and give a <STYLE> answer to <QUESTION>",
      "Based on the recording, answer <QUESTION>",
      "From what you hear, provide a <STYLE> reply to <QUESTION>",
      "Answer this question about the audio: <QUESTION>",
      "Using the sound as evidence, answer <QUESTION>",
      "<QUESTION> Answer briefly from the audio.",
      "What does the audio indicate for <QUESTION>",
      "After hearing the clip, give a <STYLE> answer to <QUESTION>",
      "Respond to <QUESTION> based on the audio content.",
      "Considering the recording, what is the answer to <QUESTION>",
  };
  set.templates[{"video+audio", "caption"}] = {
      "Combining the audiovisual information of this video, generate a sentence to describe its "
      "content.",
      "Synthesize the audio and visual data in this video to create a sentence that encapsulates "
      "its meaning.",
      "Describe the content of this video by integrating the audio and visual elements into a "
      "single sentence.",
      "Using both picture and sound, describe the clip in <STYLE>.",
      "Merge what you see and hear into <STYLE> describing this video.",
      "Caption this video, taking its soundtrack into account.",
      "Summarize the combined audio and visual content in <STYLE>.",
      "Write a single sentence covering both the visuals and the audio.",
      "Considering footage and sound together, give a brief description.",
      "Provide a one-sentence account of the video and its audio.",
  };
  set.templates[{"video+audio", "qa"}] = {
      "Based on the video and audio, could you provide a short answer to question: <QUESTION>",
      "Utilizing the video and audio content, briefly respond to <QUESTION>",
      "Analyze the video and audio and give me a short answer about <QUESTION>",
      "Drawing on both the footage and its sound, give a <STYLE> answer to <QUESTION>",
      "Answer <QUESTION> using everything you can see and hear.",
      "From the audiovisual content, provide a <STYLE> reply to <QUESTION>",
      "<QUESTION> Answer with the help of both video and audio.",
      "Considering the clip and its soundtrack, answer <QUESTION>",
      "Use the combined modalities to give a <STYLE> answer to <QUESTION>",
      "With both streams in mind, respond to <QUESTION>",
  };
  set.templates[{"video+audio", "dialogue"}] = {
      "Based on the video and audio, answer my following questions.",
      "Synthesize the audio and visual data in this video and answer my questions.",
      "Given this video together with its background audio, answer my next questions.",
      "Watch and listen, then answer the questions that follow.",
      "Use the video and its audio to respond to my questions.",
      "Keeping both the footage and the sound in mind, answer my questions below.",
      "I will ask about this clip and its audio; please answer each question.",
      "Answer my upcoming questions about what you see and hear.",
      "Ground your answers to my next questions in the video and audio.",
      "Respond to the following questions using the audiovisual content.",
  };
  set.validate();
  return set;
}

void TemplateSet::validate() const {
  for (const auto& [key, list] : templates) {
    if (list.empty()) throw ConfigError("template set: empty list for " + key.first + "/" + key.second);
    if (key.second == "qa") {
      for (const std::string& t : list)
        if (t.find(kQuestionMarker) == std::string::npos)
          throw ConfigError("template set: QA template without <QUESTION>: " + t);
    }
    for (const std::string& t : list) {
      if (t.find("<STYLE>") != std::string::npos && !style_modifiers.count(key.second))
        throw ConfigError("template set: <STYLE> used but no lexicon for kind " + key.second);
    }
  }
}

const std::vector<std::string>& TemplateSet::lookup(const std::string& signature,
                                                    const std::string& kind) const {
  auto it = templates.find({signature, kind});
  if (it == templates.end())
    throw CoverageError("no instruction templates for (" + signature + ", " + kind + ")");
  return it->second;
}

std::string TemplateSet::to_json_string() const {
  ordered_json j;
  j["templates"] = ordered_json::array();
  for (const auto& [key, list] : templates)
    j["templates"].push_back(
        ordered_json{{"modality", key.first}, {"kind", key.second}, {"instructions", list}});
  j["style_modifiers"] = ordered_json::object();
  for (const auto& [kind, words] : style_modifiers) j["style_modifiers"][kind] = words;
  return j.dump(2);
}

TemplateSet TemplateSet::from_json_string(const std::string& text) {
  TemplateSet set;
  ordered_json j = ordered_json::parse(text);
  for (const auto& entry : j.at("templates"))
    set.templates[{entry.at("modality").get<std::string>(), entry.at("kind").get<std::string>()}] =
        entry.at("instructions").get<std::vector<std::string>>();
  if (j.contains("style_modifiers"))
    for (const auto& [kind, words] : j["style_modifiers"].items())
      set.style_modifiers[kind] = words.get<std::vector<std::string>>();
  set.validate();
  return set;
}

namespace {

void replace_all(std::string& text, const std::string& from, const std::string& to) {
  size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
}

}  // namespace

InstructionSample instantiate_template(const SourceRecord& record, const TemplateSet& templates,
                                       Rng& rng) {
  record.validate();
  std::vector<Modality> kinds;
  for (const ModalityRef& r : record.modalities) kinds.push_back(r.kind);
  const std::string signature = modality_signature(kinds);
  const std::string kind = record_kind_name(record.kind);
  const auto& list = templates.lookup(signature, kind);

  std::string text = list[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(list.size()) - 1))];

  InstructionSample sample;
  if (text.find("<STYLE>") != std::string::npos) {
    const auto& lexicon = templates.style_modifiers.at(kind);
    sample.style = lexicon[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(lexicon.size()) - 1))];
    replace_all(text, "<STYLE>", sample.style);
  }
  if (record.kind != RecordKind::Caption) replace_all(text, kQuestionMarker, record.question);

  const std::vector<std::string>& refs =
      record.kind == RecordKind::Caption ? record.captions : record.answers;
  const std::string response =
      refs[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(refs.size()) - 1))];

  sample.id = record.id;
  sample.task = signature + "_" + kind;
  sample.split = record.split;
  sample.modalities = record.modalities;
  sample.prompt_template = modality_prompt(kinds);
  sample.source_dataset = record.source_dataset;
  if (record.kind == RecordKind::Dialogue) {
    // The dialogue instruction announces the Q&A; the exchange itself is a turn.
    sample.turns.push_back(DialogueTurn{text + " " + record.question, response});
  } else {
    sample.instruction = text;
    sample.response = response;
  }
  return sample;
}

void MediaDescription::validate() const {
  if (global_captions.empty() && frames.empty() && audio_labels.empty() && audio_captions.empty())
    throw ConfigError("media description: every annotation source is empty");
  for (size_t i = 1; i < frames.size(); ++i)
    if (frames[i].temporal_index <= frames[i - 1].temporal_index)
      throw ConfigError("media description: frame temporal indices must strictly increase");
}

std::string MediaDescription::to_json_string() const {
  ordered_json j;
  j["global_captions"] = global_captions;
  j["frames"] = ordered_json::array();
  for (const FrameAnnotation& f : frames)
    j["frames"].push_back(ordered_json{{"temporal_index", f.temporal_index},
                                       {"region_semantics", f.region_semantics},
                                       {"region_captions", f.region_captions},
                                       {"frame_caption", f.frame_caption}});
  j["audio_labels"] = audio_labels;
  j["audio_captions"] = audio_captions;
  return j.dump(2);
}

MediaDescription MediaDescription::from_json_string(const std::string& text) {
  ordered_json j = ordered_json::parse(text);
  MediaDescription d;
  d.global_captions = j.value("global_captions", std::vector<std::string>{});
  if (j.contains("frames")) {
    for (const auto& f : j["frames"]) {
      FrameAnnotation fa;
      fa.temporal_index = f.at("temporal_index").get<int>();
      fa.region_semantics = f.value("region_semantics", std::vector<std::string>{});
      fa.region_captions = f.value("region_captions", std::vector<std::string>{});
      fa.frame_caption = f.value("frame_caption", std::string{});
      d.frames.push_back(std::move(fa));
    }
  }
  d.audio_labels = j.value("audio_labels", std::vector<std::string>{});
  d.audio_captions = j.value("audio_captions", std::vector<std::string>{});
  d.validate();
  return d;
}

namespace {
std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}
}  // namespace

std::string compose_media_description(const MediaDescription& description) {
  description.validate();
  std::ostringstream out;
  if (!description.global_captions.empty()) {
    out << "Overall captions:\n";
    for (const std::string& c : description.global_captions) out << "- " << c << "\n";
  }
  for (const FrameAnnotation& f : description.frames) {
    out << "Frame " << f.temporal_index << ":\n";
    if (!f.region_semantics.empty())
      out << "  Region semantics: " << join(f.region_semantics, "; ") << "\n";
    if (!f.region_captions.empty())
      out << "  Region captions: " << join(f.region_captions, "; ") << "\n";
    if (!f.frame_caption.empty()) out << "  Frame caption: " << f.frame_caption << "\n";
  }
  if (!description.audio_labels.empty())
    out << "Audio labels: " << join(description.audio_labels, "; ") << "\n";
  if (!description.audio_captions.empty()) {
    out << "Audio captions:\n";
    for (const std::string& c : description.audio_captions) out << "- " << c << "\n";
  }
  return out.str();
}

MediaDescription MockAnnotator::annotate(const SourceRecord& record) {
  record.validate();
  MediaDescription desc;
  const std::vector<std::string>& base =
      record.kind == RecordKind::Caption ? record.captions : record.answers;
  bool has_visual = false, has_audio = false;
  for (const ModalityRef& r : record.modalities) {
    has_visual = has_visual || r.kind != Modality::Audio;
    has_audio = has_audio || r.kind == Modality::Audio;
  }
  if (has_visual) {
    desc.global_captions = base;
    for (int f = 0; f < 3; ++f) {
      FrameAnnotation fa;
      fa.temporal_index = f;
      fa.region_semantics = {"region(" + record.id + "," + std::to_string(f) + ",a)",
                             "region(" + record.id + "," + std::to_string(f) + ",b)"};
      fa.region_captions = {"close-up detail " + std::to_string(f) + " of " + record.id};
      fa.frame_caption = "frame " + std::to_string(f) + " view of " +
                         (base.empty() ? record.id : base[0]);
      desc.frames.push_back(std::move(fa));
    }
  }
  if (has_audio) {
    desc.audio_labels = record.labels.empty() ? std::vector<std::string>{"ambient sound"}
                                              : record.labels;
    desc.audio_captions = has_visual ? std::vector<std::string>{"background audio of " + record.id}
                                     : base;
  }
  return desc;
}

MediaDescription FileAnnotator::annotate(const SourceRecord& record) {
  const std::filesystem::path path = std::filesystem::path(dir_) / (record.id + ".json");
  std::ifstream in(path);
  if (!in) throw LoadError("annotator: missing annotation file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return MediaDescription::from_json_string(buf.str());
}

const char* chat_sample_type_name(ChatSampleType type) {
  switch (type) {
    case ChatSampleType::Conversation: return "conversation";
    case ChatSampleType::DetailedDescription: return "detailed_description";
    default: return "complex_reasoning";
  }
}

SeedExemplars SeedExemplars::builtin() {
  SeedExemplars seeds;
  seeds.rubrics["conversation"] =
      "You write multi-turn dialogues between a curious Human and a helpful Assistant who can "
      "see and hear the media clip described below. Using only the given facts, write 2 to 4 "
      "exchanges. Answers must be grounded in the facts but rephrased, never copied verbatim. "
      "Output strictly alternating lines beginning with 'Human: ' and 'Assistant: '.";
  seeds.rubrics["detailed_description"] =
      "You write a single exchange in which a Human asks for a thorough description of the media "
      "clip described below and the Assistant answers with a rich, multi-sentence description. "
      "Ground every statement in the given facts, rephrased rather than copied verbatim. Output "
      "one 'Human: ' line followed by one 'Assistant: ' line.";
  seeds.rubrics["complex_reasoning"] =
      "You write a single exchange in which a Human asks a question about the media clip "
      "described below whose answer requires reasoning beyond the stated facts, and the "
      "Assistant answers step by step, grounded in those facts without copying them verbatim. "
      "Output one 'Human: ' line followed by one 'Assistant: ' line.";

  seeds.examples["conversation"] = {
      {"Overall captions:\n- a man plays an acoustic guitar on a park bench\nAudio labels: "
       "guitar strumming; birdsong\n",
       "Human: What is the man doing?\nAssistant: He is sitting on a park bench playing an "
       "acoustic guitar.\nHuman: Can you hear anything else?\nAssistant: Yes, there are birds "
       "singing in the background while he strums."}};
  seeds.examples["detailed_description"] = {
      {"Overall captions:\n- a red tram crosses a rainy city square\nFrame 0:\n  Frame caption: "
       "tram approaching, wet cobblestones\n",
       "Human: Please describe this clip in detail.\nAssistant: A bright red tram glides across "
       "a rain-soaked city square. The cobblestones glisten with reflections, and the tram "
       "approaches steadily from the far side of the square."}};
  seeds.examples["complex_reasoning"] = {
      {"Overall captions:\n- a kettle whistles on a stove while steam rises\nAudio labels: "
       "high-pitched whistle\n",
       "Human: Is the water ready for tea, and how can you tell?\nAssistant: Most likely yes. "
       "The kettle is whistling, which happens when steam pressure builds, and steam is already "
       "rising, so the water has reached a boil."}};
  return seeds;
}

std::string SeedExemplars::to_json_string() const {
  ordered_json j;
  j["rubrics"] = ordered_json::object();
  for (const auto& [type, rubric] : rubrics) j["rubrics"][type] = rubric;
  j["examples"] = ordered_json::object();
  for (const auto& [type, list] : examples) {
    j["examples"][type] = ordered_json::array();
    for (const Example& e : list)
      j["examples"][type].push_back(
          ordered_json{{"description", e.description}, {"reply", e.reply}});
  }
  return j.dump(2);
}

SeedExemplars SeedExemplars::from_json_string(const std::string& text) {
  SeedExemplars seeds;
  ordered_json j = ordered_json::parse(text);
  for (const auto& [type, rubric] : j.at("rubrics").items())
    seeds.rubrics[type] = rubric.get<std::string>();
  for (const auto& [type, list] : j.at("examples").items())
    for (const auto& e : list)
      seeds.examples[type].push_back(
          Example{e.at("description").get<std::string>(), e.at("reply").get<std::string>()});
  return seeds;
}

void Quarantine::add(const std::string& record_id, const std::string& raw,
                     const std::string& reason) {
  entries_.push_back(QuarantineEntry{record_id, raw, reason});
  if (!path_.empty()) {
    std::ofstream out(path_, std::ios::app);
    out << ordered_json{{"record_id", record_id}, {"raw_output", raw}, {"reason", reason}}.dump()
        << "\n";
  }
}

ChatRequest build_chat_request(const MediaDescription& description, ChatSampleType type,
                               const SeedExemplars& seeds, const ChatGenConfig& config) {
  const std::string type_name = chat_sample_type_name(type);
  ChatRequest request;
  request.temperature = config.temperature;
  request.max_tokens = config.max_tokens;
  auto rubric = seeds.rubrics.find(type_name);
  if (rubric == seeds.rubrics.end())
    throw ConfigError("chat generation: no rubric for type " + type_name);
  request.messages.push_back({"system", rubric->second});
  auto examples = seeds.examples.find(type_name);
  if (examples != seeds.examples.end()) {
    for (const SeedExemplars::Example& e : examples->second) {
      request.messages.push_back({"user", e.description});
      request.messages.push_back({"assistant", e.reply});
    }
  }
  request.messages.push_back({"user", compose_media_description(description)});
  return request;
}

namespace {

struct ParsedReply {
  std::vector<DialogueTurn> turns;
  std::string failure;  // empty on success
};

ParsedReply parse_chat_reply(const std::string& text) {
  ParsedReply out;
  std::istringstream in(text);
  std::string line;
  std::string role;  // "human" | "assistant" | ""
  std::string content;
  DialogueTurn turn;
  bool have_human = false;

  auto commit = [&]() {
    if (role == "human") {
      turn.human = content;
      have_human = true;
    } else if (role == "assistant") {
      if (!have_human) {
        out.failure = "assistant line before any human line";
        return false;
      }
      turn.assistant = content;
      out.turns.push_back(turn);
      turn = DialogueTurn{};
      have_human = false;
    }
    return true;
  };

  while (std::getline(in, line)) {
    if (line.rfind("Human:", 0) == 0) {
      if (role == "human") {
        out.failure = "two consecutive human lines";
        return out;
      }
      if (!commit()) return out;
      role = "human";
      content = line.substr(6);
      if (!content.empty() && content[0] == ' ') content.erase(0, 1);
    } else if (line.rfind("Assistant:", 0) == 0) {
      if (role == "assistant") {
        out.failure = "two consecutive assistant lines";
        return out;
      }
      if (role.empty()) {
        out.failure = "reply does not start with a human line";
        return out;
      }
      if (!commit()) return out;
      role = "assistant";
      content = line.substr(10);
      if (!content.empty() && content[0] == ' ') content.erase(0, 1);
    } else if (!role.empty()) {
      content += "\n" + line;  // continuation of the current message
    } else if (!line.empty()) {
      out.failure = "leading text before the first human line";
      return out;
    }
  }
  if (role == "human") {
    out.failure = "dangling human line without an assistant reply";
    return out;
  }
  if (!commit()) return out;
  if (out.turns.empty()) {
    out.failure = "no turns parsed";
    return out;
  }
  for (const DialogueTurn& t : out.turns)
    if (t.human.empty() || t.assistant.empty()) {
      out.failure = "empty turn content";
      return out;
    }
  return out;
}

bool leaks_verbatim(const std::string& reply, const std::string& document, size_t threshold) {
  if (threshold == 0 || reply.size() < threshold) return false;
  for (size_t i = 0; i + threshold <= reply.size(); ++i) {
    if (document.find(reply.substr(i, threshold)) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

std::vector<InstructionSample> generate_chat_samples(const SourceRecord& record,
                                                     const MediaDescription& description,
                                                     ChatSampleType type, ChatClient& client,
                                                     const SeedExemplars& seeds,
                                                     const ChatGenConfig& config,
                                                     Quarantine& quarantine) {
  ChatRequest request = build_chat_request(description, type, seeds, config);
  std::string reply;
  try {
    reply = client.complete(request).content;
  } catch (const Error& e) {
    quarantine.add(record.id, "", std::string("client failure: ") + e.what());
    return {};
  }

  ParsedReply parsed = parse_chat_reply(reply);
  if (!parsed.failure.empty()) {
    quarantine.add(record.id, reply, parsed.failure);
    return {};
  }
  const std::string document = compose_media_description(description);
  for (const DialogueTurn& t : parsed.turns) {
    if (leaks_verbatim(t.assistant, document, config.leak_threshold)) {
      quarantine.add(record.id, reply, "assistant turn copies the description verbatim");
      return {};
    }
  }

  std::vector<Modality> kinds;
  for (const ModalityRef& r : record.modalities) kinds.push_back(r.kind);

  InstructionSample sample;
  sample.id = record.id;
  sample.task = std::string("chat_") + chat_sample_type_name(type);
  sample.split = record.split;
  sample.modalities = record.modalities;
  sample.prompt_template = modality_prompt(kinds);
  sample.source_dataset = record.source_dataset;
  sample.turns = parsed.turns;
  return {sample};
}

ChatBuildResult build_chat_data(const std::vector<SourceRecord>& records, Annotator& annotator,
                                ChatClient& client, const SeedExemplars& seeds,
                                const ChatBuildConfig& config, Quarantine& quarantine) {
  std::vector<const SourceRecord*> ordered;
  for (const SourceRecord& r : records) ordered.push_back(&r);
  std::sort(ordered.begin(), ordered.end(),
            [](const SourceRecord* a, const SourceRecord* b) { return a->id < b->id; });

  // Type quotas by largest remainder against the configured proportions.
  const size_t n = ordered.size();
  const double total_weight = static_cast<double>(config.proportion_conversation +
                                                  config.proportion_detailed +
                                                  config.proportion_reasoning);
  const double weights[3] = {static_cast<double>(config.proportion_conversation),
                             static_cast<double>(config.proportion_detailed),
                             static_cast<double>(config.proportion_reasoning)};
  size_t counts[3];
  double remainders[3];
  size_t assigned = 0;
  for (int t = 0; t < 3; ++t) {
    const double exact = static_cast<double>(n) * weights[t] / total_weight;
    counts[t] = static_cast<size_t>(exact);
    remainders[t] = exact - static_cast<double>(counts[t]);
    assigned += counts[t];
  }
  while (assigned < n) {
    int best = 0;
    for (int t = 1; t < 3; ++t)
      if (remainders[t] > remainders[best]) best = t;
    ++counts[best];
    remainders[best] = -1;
    ++assigned;
  }

  std::vector<ChatSampleType> type_of(n);
  size_t cursor = 0;
  const ChatSampleType types[3] = {ChatSampleType::Conversation,
                                   ChatSampleType::DetailedDescription,
                                   ChatSampleType::ComplexReasoning};
  for (int t = 0; t < 3; ++t)
    for (size_t i = 0; i < counts[t]; ++i) type_of[cursor++] = types[t];

  // Concurrent generation with per-slot results; quarantine entries are
  // merged in record order afterwards so output is deterministic.
  std::vector<std::vector<InstructionSample>> slots(n);
  std::vector<std::unique_ptr<Quarantine>> local(n);
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= n) return;
      local[i] = std::make_unique<Quarantine>();
      try {
        MediaDescription desc = annotator.annotate(*ordered[i]);
        slots[i] = generate_chat_samples(*ordered[i], desc, type_of[i], client, seeds, config.gen,
                                         *local[i]);
      } catch (const Error& e) {
        local[i]->add(ordered[i]->id, "", std::string("pipeline failure: ") + e.what());
      }
    }
  };
  const int n_workers = std::max(1, std::min<int>(config.in_flight, static_cast<int>(n)));
  std::vector<std::thread> threads;
  for (int w = 0; w < n_workers; ++w) threads.emplace_back(worker);
  for (std::thread& t : threads) t.join();

  ChatBuildResult result;
  for (size_t i = 0; i < n; ++i) {
    for (const QuarantineEntry& q : local[i]->entries())
      quarantine.add(q.record_id, q.raw_output, q.reason);
    for (InstructionSample& s : slots[i]) {
      result.per_type_counts[s.task] += 1;
      result.samples.push_back(std::move(s));
    }
  }
  result.quarantined = quarantine.size();
  return result;
}

namespace {

ordered_json modalities_to_json(const std::vector<ModalityRef>& refs) {
  ordered_json arr = ordered_json::array();
  for (const ModalityRef& r : refs)
    arr.push_back(ordered_json{{"kind", modality_name(r.kind)}, {"path", r.path}});
  return arr;
}

std::vector<ModalityRef> modalities_from_json(const ordered_json& arr) {
  std::vector<ModalityRef> refs;
  for (const auto& m : arr)
    refs.push_back(
        ModalityRef{modality_from_name(m.at("kind").get<std::string>()), m.at("path").get<std::string>()});
  return refs;
}

template <class T>
T required(const ordered_json& j, const char* field, long line) {
  if (!j.contains(field)) throw ValidationError(std::string("missing field '") + field + "'", line);
  try {
    return j.at(field).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(std::string("field '") + field + "' has the wrong type", line);
  }
}

}  // namespace

void emit_dataset(const std::vector<InstructionSample>& samples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("dataset: cannot write " + path);
  for (const InstructionSample& s : samples) {
    ordered_json j{{"id", s.id},
                   {"task", s.task},
                   {"split", s.split},
                   {"modalities", modalities_to_json(s.modalities)},
                   {"prompt_template", s.prompt_template},
                   {"instruction", s.instruction},
                   {"response", s.response}};
    if (!s.turns.empty()) {
      ordered_json turns = ordered_json::array();
      for (const DialogueTurn& t : s.turns)
        turns.push_back(ordered_json{{"human", t.human}, {"assistant", t.assistant}});
      j["turns"] = turns;
    }
    if (!s.style.empty()) j["style"] = s.style;
    j["source_dataset"] = s.source_dataset;
    out << j.dump() << "\n";
  }
}

std::vector<InstructionSample> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("dataset: cannot open " + path);
  std::vector<InstructionSample> samples;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    InstructionSample s;
    s.id = required<std::string>(j, "id", line_no);
    s.task = required<std::string>(j, "task", line_no);
    s.split = required<std::string>(j, "split", line_no);
    if (!j.contains("modalities") || !j["modalities"].is_array())
      throw ValidationError("missing or non-array 'modalities'", line_no);
    try {
      s.modalities = modalities_from_json(j["modalities"]);
    } catch (const std::exception& e) {
      throw ValidationError(std::string("bad modalities entry: ") + e.what(), line_no);
    }
    s.prompt_template = required<std::string>(j, "prompt_template", line_no);
    s.instruction = required<std::string>(j, "instruction", line_no);
    s.response = required<std::string>(j, "response", line_no);
    if (j.contains("turns")) {
      if (!j["turns"].is_array()) throw ValidationError("'turns' must be an array", line_no);
      for (const auto& t : j["turns"]) {
        if (!t.contains("human") || !t.contains("assistant"))
          throw ValidationError("turn entries need 'human' and 'assistant'", line_no);
        s.turns.push_back(DialogueTurn{t["human"].get<std::string>(),
                                       t["assistant"].get<std::string>()});
      }
    }
    s.style = j.value("style", std::string{});
    s.source_dataset = required<std::string>(j, "source_dataset", line_no);
    if (s.split == "train" && s.response.empty() && s.turns.empty())
      throw ValidationError("training sample '" + s.id + "' has an empty response", line_no);
    samples.push_back(std::move(s));
  }
  return samples;
}

void emit_source_records(const std::vector<SourceRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("records: cannot write " + path);
  for (const SourceRecord& r : records) {
    ordered_json j{{"id", r.id},
                   {"source_dataset", r.source_dataset},
                   {"modalities", modalities_to_json(r.modalities)},
                   {"kind", record_kind_name(r.kind)},
                   {"question", r.question},
                   {"answers", r.answers},
                   {"captions", r.captions},
                   {"labels", r.labels},
                   {"split", r.split}};
    out << j.dump() << "\n";
  }
}

std::vector<SourceRecord> load_source_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("records: cannot open " + path);
  std::vector<SourceRecord> records;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    SourceRecord r;
    r.id = required<std::string>(j, "id", line_no);
    r.source_dataset = required<std::string>(j, "source_dataset", line_no);
    if (!j.contains("modalities") || !j["modalities"].is_array())
      throw ValidationError("missing or non-array 'modalities'", line_no);
    r.modalities = modalities_from_json(j["modalities"]);
    r.kind = record_kind_from_name(required<std::string>(j, "kind", line_no));
    r.question = j.value("question", std::string{});
    r.answers = j.value("answers", std::vector<std::string>{});
    r.captions = j.value("captions", std::vector<std::string>{});
    r.labels = j.value("labels", std::vector<std::string>{});
    r.split = j.value("split", std::string{"train"});
    try {
      r.validate();
    } catch (const Error& e) {
      throw ValidationError(e.what(), line_no);
    }
    records.push_back(std::move(r));
  }
  return records;
}

void emit_builtin_assets(const std::string& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(std::filesystem::path(dir) / "templates.json");
    out << TemplateSet::builtin().to_json_string() << "\n";
  }
  {
    std::ofstream out(std::filesystem::path(dir) / "seeds.json");
    out << SeedExemplars::builtin().to_json_string() << "\n";
  }
}

}  // namespace mbridge::multis
