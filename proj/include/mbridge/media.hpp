#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "mbridge/error.hpp"

namespace mbridge {

enum class Modality { Image, Video, Audio };

const char* modality_name(Modality kind);
Modality modality_from_name(const std::string& name);

/// H x W x 3 RGB raster, row-major, values in [0, 1].
struct Image {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<float> pixels;

  float at(int64_t y, int64_t x, int64_t c) const {
    return pixels[static_cast<size_t>((y * width + x) * 3 + c)];
  }
  void set(int64_t y, int64_t x, int64_t c, float v) {
    pixels[static_cast<size_t>((y * width + x) * 3 + c)] = v;
  }
  void validate() const;
};

struct VideoClip {
  std::vector<Image> frames;
  double fps = 25.0;
  void validate() const;
};

/// Mono PCM, float samples in [-1, 1].
struct Audio {
  std::vector<float> samples;
  int sample_rate = 16000;
  double duration_seconds() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
  void validate() const;
};

struct RawModality {
  Modality kind;
  std::variant<Image, VideoClip, Audio> payload;

  static RawModality from_image(Image img);
  static RawModality from_video(VideoClip vid);
  static RawModality from_audio(Audio aud);

  const Image& image() const { return std::get<Image>(payload); }
  const VideoClip& video() const { return std::get<VideoClip>(payload); }
  const Audio& audio() const { return std::get<Audio>(payload); }
};

// Binary PPM (P6), 8-bit.
Image load_ppm(const std::string& path);
void save_ppm(const Image& img, const std::string& path);

// WAV, PCM16 mono.
Audio load_wav(const std::string& path);
void save_wav(const Audio& audio, const std::string& path);

/// Directory of ordered .ppm frames with an optional one-line `fps.txt`
/// sidecar, or a manifest file whose first line is `fps: <value>` followed by
/// one frame path per line (relative to the manifest).
VideoClip load_video(const std::string& path);
void save_video(const VideoClip& video, const std::string& dir_path);

RawModality load_modality(Modality kind, const std::string& path);

}  // namespace mbridge
