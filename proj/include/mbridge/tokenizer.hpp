#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mbridge/media.hpp"

namespace mbridge {

/// Byte-level tokenizer: ids 0..255 are raw bytes, followed by reserved
/// specials. tokenize never emits a special; detokenize renders specials as
/// the documented escapes (<pad>, <bos>, <img>, <vid>, <aud>) instead of
/// failing, so arbitrary id streams are always printable.
class Tokenizer {
 public:
  static constexpr int kPad = 256;
  static constexpr int kBos = 257;
  static constexpr int kImagePlaceholder = 258;
  static constexpr int kVideoPlaceholder = 259;
  static constexpr int kAudioPlaceholder = 260;

  int vocab_size() const { return 261; }
  static bool is_special(int id) { return id >= 256; }

  std::vector<int> tokenize(std::string_view text) const;
  std::string detokenize(std::span<const int> ids) const;

  int placeholder_id(Modality kind) const;
  Modality placeholder_modality(int id) const;
};

}  // namespace mbridge
