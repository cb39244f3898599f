#include "mbridge/tokenizer.hpp"

#include "mbridge/error.hpp"

namespace mbridge {

std::vector<int> Tokenizer::tokenize(std::string_view text) const {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<int>(c));
  return ids;
}

std::string Tokenizer::detokenize(std::span<const int> ids) const {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id >= 0 && id < 256) {
      out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    } else if (id == kPad) {
      out += "<pad>";
    } else if (id == kBos) {
      out += "<bos>";
    } else if (id == kImagePlaceholder) {
      out += "<img>";
    } else if (id == kVideoPlaceholder) {
      out += "<vid>";
    } else if (id == kAudioPlaceholder) {
      out += "<aud>";
    } else {
      out += "<bad:" + std::to_string(id) + ">";
    }
  }
  return out;
}

int Tokenizer::placeholder_id(Modality kind) const {
  switch (kind) {
    case Modality::Image: return kImagePlaceholder;
    case Modality::Video: return kVideoPlaceholder;
    default: return kAudioPlaceholder;
  }
}

Modality Tokenizer::placeholder_modality(int id) const {
  switch (id) {
    case kImagePlaceholder: return Modality::Image;
    case kVideoPlaceholder: return Modality::Video;
    case kAudioPlaceholder: return Modality::Audio;
    default: throw ConfigError("not a placeholder id: " + std::to_string(id));
  }
}

}  // namespace mbridge
