#include "mbridge/encoders.hpp"

#include <cmath>

#include "mbridge/nn.hpp"
#include "mbridge/ops.hpp"

namespace mbridge {

namespace {

// Symmetric reflection with edge repeat; total period 2n, so n=1 is legal.
int64_t mirror_index(int64_t i, int64_t n) {
  const int64_t period = 2 * n;
  int64_t j = i % period;
  return j < n ? j : period - 1 - j;
}

Tensor encoder_trunk(const ParameterSet& params, Tensor x, int64_t n_layers, int64_t n_heads) {
  for (int64_t l = 0; l < n_layers; ++l)
    x = nn::self_block(params, "block" + std::to_string(l), x, n_heads);
  return nn::norm(params, "final_norm", x);
}

}  // namespace

ImageEncoder::ImageEncoder(ImageEncoderConfig config) : cfg_(config) {
  Rng rng(cfg_.seed);
  const int64_t patch_dim = cfg_.patch_size * cfg_.patch_size * 3;
  nn::init_linear(params_, "embed", patch_dim, cfg_.d_enc, rng, 0.02, /*frozen=*/true);
  for (int64_t l = 0; l < cfg_.n_layers; ++l)
    nn::init_self_block(params_, "block" + std::to_string(l), cfg_.d_enc, cfg_.ffn_mult, rng, 0.02,
                        /*frozen=*/true);
  nn::init_norm(params_, "final_norm", cfg_.d_enc, /*frozen=*/true);
}

int64_t ImageEncoder::patches_for(int64_t height, int64_t width) const {
  const int64_t p = cfg_.patch_size;
  const int64_t ph = (height + p - 1) / p;
  const int64_t pw = (width + p - 1) / p;
  return ph * pw;
}

EncoderOutput ImageEncoder::encode(const Image& img) const {
  img.validate();
  autodiff::NoGradGuard no_grad;

  const int64_t p = cfg_.patch_size;
  const int64_t ph = (img.height + p - 1) / p;
  const int64_t pw = (img.width + p - 1) / p;
  const int64_t n_patches = ph * pw;
  const int64_t patch_dim = p * p * 3;

  Tensor patches = Tensor::zeros({n_patches, patch_dim});
  auto pv = patches.values_mut<float>();
  for (int64_t py = 0; py < ph; ++py) {
    for (int64_t px = 0; px < pw; ++px) {
      const int64_t row = py * pw + px;
      for (int64_t dy = 0; dy < p; ++dy) {
        const int64_t sy = mirror_index(py * p + dy, img.height);
        for (int64_t dx = 0; dx < p; ++dx) {
          const int64_t sx = mirror_index(px * p + dx, img.width);
          for (int64_t c = 0; c < 3; ++c)
            pv[row * patch_dim + (dy * p + dx) * 3 + c] = img.at(sy, sx, c);
        }
      }
    }
  }

  Tensor x = nn::linear(params_, "embed", patches);
  x = ops::add(x, ops::sinusoidal_encoding(n_patches, cfg_.d_enc));
  x = encoder_trunk(params_, x, cfg_.n_layers, cfg_.n_heads);
  return EncoderOutput{Modality::Image, x.detach()};
}

AudioEncoder::AudioEncoder(AudioEncoderConfig config) : cfg_(config) {
  window_samples_ = std::max<int64_t>(1, std::llround(cfg_.sample_rate * cfg_.window_ms / 1000.0));
  hop_samples_ = std::max<int64_t>(1, std::llround(cfg_.sample_rate * cfg_.hop_ms / 1000.0));
  clip_samples_ = std::llround(cfg_.sample_rate * cfg_.clip_seconds);

  Rng rng(cfg_.seed);
  nn::init_linear(params_, "embed", spectrum_bins(), cfg_.d_enc, rng, 0.02, /*frozen=*/true);
  for (int64_t l = 0; l < cfg_.n_layers; ++l)
    nn::init_self_block(params_, "block" + std::to_string(l), cfg_.d_enc, cfg_.ffn_mult, rng, 0.02,
                        /*frozen=*/true);
  nn::init_norm(params_, "final_norm", cfg_.d_enc, /*frozen=*/true);
}

int64_t AudioEncoder::clips_for(size_t n_samples) const {
  return static_cast<int64_t>((n_samples + static_cast<size_t>(clip_samples_) - 1) /
                              static_cast<size_t>(clip_samples_));
}

int64_t AudioEncoder::frames_per_clip() const {
  return 1 + (clip_samples_ - window_samples_) / hop_samples_;
}

int64_t AudioEncoder::spectrum_bins() const { return window_samples_ / 2 + 1; }

EncoderOutput AudioEncoder::encode(const Audio& audio) const {
  audio.validate();
  if (audio.sample_rate != cfg_.sample_rate)
    throw ConfigError("audio encoder built for " + std::to_string(cfg_.sample_rate) +
                      " Hz, input is " + std::to_string(audio.sample_rate) + " Hz");
  autodiff::NoGradGuard no_grad;

  const int64_t n_clips = clips_for(audio.samples.size());
  const int64_t frames = frames_per_clip();
  const int64_t bins = spectrum_bins();

  // Hann window, precomputed once per call.
  std::vector<double> hann(static_cast<size_t>(window_samples_));
  for (int64_t i = 0; i < window_samples_; ++i)
    hann[static_cast<size_t>(i)] =
        0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) /
                             std::max<int64_t>(1, window_samples_ - 1));

  std::vector<Tensor> clip_features;
  clip_features.reserve(static_cast<size_t>(n_clips));
  for (int64_t clip = 0; clip < n_clips; ++clip) {
    Tensor spec = Tensor::zeros({frames, bins});
    auto sv = spec.values_mut<float>();
    const int64_t clip_start = clip * clip_samples_;
    for (int64_t f = 0; f < frames; ++f) {
      const int64_t frame_start = clip_start + f * hop_samples_;
      for (int64_t k = 0; k < bins; ++k) {
        double re = 0.0, im = 0.0;
        for (int64_t t = 0; t < window_samples_; ++t) {
          const int64_t idx = frame_start + t;
          // Final partial clip is zero-padded to the full duration.
          const double s = idx < static_cast<int64_t>(audio.samples.size())
                               ? static_cast<double>(audio.samples[static_cast<size_t>(idx)])
                               : 0.0;
          const double x = s * hann[static_cast<size_t>(t)];
          const double ang = -2.0 * M_PI * static_cast<double>(k * t) /
                             static_cast<double>(window_samples_);
          re += x * std::cos(ang);
          im += x * std::sin(ang);
        }
        sv[f * bins + k] = static_cast<float>(std::sqrt(re * re + im * im));
      }
    }
    Tensor x = nn::linear(params_, "embed", spec);
    x = ops::add(x, ops::sinusoidal_encoding(frames, cfg_.d_enc));
    clip_features.push_back(encoder_trunk(params_, x, cfg_.n_layers, cfg_.n_heads));
  }

  Tensor features =
      clip_features.size() == 1 ? clip_features[0] : ops::concat_rows(clip_features);
  return EncoderOutput{Modality::Audio, features.detach()};
}

std::vector<int64_t> sample_frame_indices(int64_t frame_count, int64_t n_samples) {
  std::vector<int64_t> indices;
  indices.reserve(static_cast<size_t>(n_samples));
  for (int64_t i = 0; i < n_samples; ++i) {
    if (frame_count == 1) {
      indices.push_back(0);
    } else {
      const double pos = static_cast<double>(i) * static_cast<double>(frame_count - 1) /
                         static_cast<double>(n_samples - 1);
      indices.push_back(std::llround(pos));
    }
  }
  return indices;
}

EncoderOutput encode_video(const VideoClip& video, const ImageEncoder& image_encoder) {
  video.validate();
  const auto indices = sample_frame_indices(static_cast<int64_t>(video.frames.size()));
  std::vector<Tensor> parts;
  parts.reserve(indices.size());
  for (int64_t idx : indices)
    parts.push_back(image_encoder.encode(video.frames[static_cast<size_t>(idx)]).features);
  autodiff::NoGradGuard no_grad;
  return EncoderOutput{Modality::Video, ops::concat_rows(parts).detach()};
}

EncoderOutput EncoderSet::encode(const RawModality& raw) const {
  switch (raw.kind) {
    case Modality::Image: return image.encode(raw.image());
    case Modality::Video: return encode_video(raw.video(), image);
    default: return audio.encode(raw.audio());
  }
}

}  // namespace mbridge
