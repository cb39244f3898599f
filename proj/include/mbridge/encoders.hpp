#pragma once

#include <cstdint>
#include <vector>

#include "mbridge/media.hpp"
#include "mbridge/params.hpp"
#include "mbridge/tensor.hpp"

namespace mbridge {

/// Variable-length feature sequence from a frozen encoder. Detached from any
/// tape: encoder weights are never reachable from a training loss.
struct EncoderOutput {
  Modality kind;
  Tensor features;  // [L x d_enc]
  int64_t length() const { return features.dim(0); }
};

struct ImageEncoderConfig {
  int64_t patch_size = 8;
  int64_t d_enc = 64;
  int64_t n_layers = 2;
  int64_t n_heads = 4;
  int64_t ffn_mult = 4;
  uint64_t seed = 901;
};

/// Patchify + linear embed + fixed pre-norm transformer blocks. Weights are
/// seeded at construction and registered frozen; identical input gives
/// identical output.
class ImageEncoder {
 public:
  explicit ImageEncoder(ImageEncoderConfig config = {});

  EncoderOutput encode(const Image& img) const;
  /// Patch count after reflect padding to the next patch multiple.
  int64_t patches_for(int64_t height, int64_t width) const;

  const ImageEncoderConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  ImageEncoderConfig cfg_;
  ParameterSet params_;
};

struct AudioEncoderConfig {
  int sample_rate = 16000;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  double clip_seconds = 10.0;
  int64_t d_enc = 64;
  int64_t n_layers = 2;
  int64_t n_heads = 4;
  int64_t ffn_mult = 4;
  uint64_t seed = 902;
};

/// Splits audio into fixed-duration clips (last clip zero-padded), featurizes
/// each clip as a framed magnitude spectrogram -> linear embed -> fixed
/// blocks, and concatenates the per-clip sequences.
class AudioEncoder {
 public:
  explicit AudioEncoder(AudioEncoderConfig config = {});

  EncoderOutput encode(const Audio& audio) const;

  int64_t clips_for(size_t n_samples) const;
  int64_t frames_per_clip() const;
  int64_t spectrum_bins() const;

  const AudioEncoderConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  AudioEncoderConfig cfg_;
  ParameterSet params_;
  int64_t window_samples_ = 0;
  int64_t hop_samples_ = 0;
  int64_t clip_samples_ = 0;
};

/// Uniform endpoint-inclusive frame picks, round-to-nearest; short videos
/// repeat indices (a 1-frame video yields {0,0,0,0}).
std::vector<int64_t> sample_frame_indices(int64_t frame_count, int64_t n_samples = 4);

/// Encodes the sampled frames and concatenates along the sequence:
/// L = n_samples * L_frame.
EncoderOutput encode_video(const VideoClip& video, const ImageEncoder& image_encoder);

/// The frozen encoder pair serving all three modality kinds.
struct EncoderSet {
  ImageEncoder image;
  AudioEncoder audio;

  EncoderSet(ImageEncoderConfig img_cfg = {}, AudioEncoderConfig aud_cfg = {})
      : image(img_cfg), audio(aud_cfg) {}

  EncoderOutput encode(const RawModality& raw) const;
};

}  // namespace mbridge
