#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "mbridge/encoders.hpp"
#include "mbridge/media.hpp"

using namespace mbridge;

namespace {

Image solid_image(int64_t h, int64_t w, float r, float g, float b) {
  Image img;
  img.height = h;
  img.width = w;
  img.pixels.resize(static_cast<size_t>(h * w * 3));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      img.set(y, x, 0, r);
      img.set(y, x, 1, g);
      img.set(y, x, 2, b);
    }
  return img;
}

AudioEncoderConfig desk_audio_config() {
  AudioEncoderConfig cfg;
  cfg.sample_rate = 1000;  // keeps the spectrogram cheap in tests
  return cfg;
}

}  // namespace

TEST_CASE("image patch arithmetic") {
  ImageEncoder enc;
  CHECK(enc.encode(solid_image(16, 16, 0.2f, 0.4f, 0.6f)).length() == 4);
  CHECK(enc.encode(solid_image(8, 8, 0.1f, 0.1f, 0.1f)).length() == 1);
  CHECK(enc.encode(solid_image(16, 16, 0, 0, 0)).features.dim(1) == enc.config().d_enc);
}

TEST_CASE("non-divisible image dims are padded, never an error") {
  ImageEncoder enc;
  CHECK(enc.encode(solid_image(10, 10, 0.5f, 0.5f, 0.5f)).length() == 4);  // padded to 16x16
  CHECK(enc.encode(solid_image(1, 1, 0.5f, 0.5f, 0.5f)).length() == 1);
  CHECK(enc.patches_for(17, 8) == 3 * 1);
}

TEST_CASE("frozen determinism: identical input, identical bytes") {
  ImageEncoder enc;
  Image img = solid_image(16, 16, 0.3f, 0.9f, 0.1f);
  img.set(3, 5, 0, 0.77f);
  auto a = enc.encode(img).features.raw_bytes();
  auto b = enc.encode(img).features.raw_bytes();
  CHECK(a == b);

  ImageEncoder enc2;  // same seed, separate instance
  CHECK(enc2.encode(img).features.raw_bytes() == a);
}

TEST_CASE("encoder parameters are registered frozen") {
  ImageEncoder img;
  AudioEncoder aud(desk_audio_config());
  CHECK(img.params().all_frozen());
  CHECK(aud.params().all_frozen());
  CHECK(img.params().size() > 0);
}

TEST_CASE("video frame sampling rule") {
  CHECK(sample_frame_indices(16) == std::vector<int64_t>{0, 5, 10, 15});
  CHECK(sample_frame_indices(1) == std::vector<int64_t>{0, 0, 0, 0});
  CHECK(sample_frame_indices(4) == std::vector<int64_t>{0, 1, 2, 3});
  CHECK(sample_frame_indices(2) == std::vector<int64_t>{0, 0, 1, 1});
  CHECK(sample_frame_indices(100)[3] == 99);
}

TEST_CASE("video features concatenate 4 sampled frames") {
  ImageEncoder enc;
  VideoClip video;
  for (int i = 0; i < 6; ++i)
    video.frames.push_back(solid_image(16, 16, 0.1f * static_cast<float>(i), 0.2f, 0.3f));
  auto out = encode_video(video, enc);
  CHECK(out.kind == Modality::Video);
  CHECK(out.length() == 4 * 4);  // 4 frames x 4 patches each

  VideoClip single;
  single.frames.push_back(solid_image(16, 16, 0.5f, 0.5f, 0.5f));
  CHECK(encode_video(single, enc).length() == 4 * 4);
}

TEST_CASE("audio clip chunking") {
  AudioEncoder enc(desk_audio_config());
  const int rate = enc.config().sample_rate;

  CHECK(enc.clips_for(static_cast<size_t>(25 * rate)) == 3);  // 25 s -> 3 clips
  CHECK(enc.clips_for(static_cast<size_t>(10 * rate)) == 1);  // exact fit, no padding
  CHECK(enc.clips_for(1) == 1);

  Audio audio;
  audio.sample_rate = rate;
  audio.samples.assign(static_cast<size_t>(25 * rate), 0.0f);
  for (size_t i = 0; i < audio.samples.size(); ++i)
    audio.samples[i] = 0.25f * std::sin(static_cast<float>(i) * 0.05f);
  auto out = enc.encode(audio);
  CHECK(out.kind == Modality::Audio);
  CHECK(out.length() == 3 * enc.frames_per_clip());
  CHECK(out.features.dim(1) == enc.config().d_enc);
}

TEST_CASE("silence is deterministic and sample-rate mismatch rejected") {
  AudioEncoder enc(desk_audio_config());
  Audio silence;
  silence.sample_rate = enc.config().sample_rate;
  silence.samples.assign(500, 0.0f);
  auto a = enc.encode(silence).features.raw_bytes();
  auto b = enc.encode(silence).features.raw_bytes();
  CHECK(a == b);

  Audio wrong_rate = silence;
  wrong_rate.sample_rate = 44100;
  CHECK_THROWS_AS(enc.encode(wrong_rate), ConfigError);
}

TEST_CASE("ppm and wav round trips") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "mbridge_media_test";
  fs::create_directories(dir);

  Image img = solid_image(5, 7, 0.0f, 0.5f, 1.0f);
  img.set(2, 3, 1, 0.25f);
  const std::string ppm = (dir / "img.ppm").string();
  save_ppm(img, ppm);
  Image back = load_ppm(ppm);
  CHECK(back.height == 5);
  CHECK(back.width == 7);
  CHECK(back.at(2, 3, 1) == doctest::Approx(0.25f).epsilon(0.01));

  Audio audio;
  audio.sample_rate = 8000;
  for (int i = 0; i < 200; ++i) audio.samples.push_back(0.5f * std::sin(0.02f * static_cast<float>(i)));
  const std::string wav = (dir / "a.wav").string();
  save_wav(audio, wav);
  Audio audio_back = load_wav(wav);
  CHECK(audio_back.sample_rate == 8000);
  REQUIRE(audio_back.samples.size() == 200);
  for (size_t i = 0; i < 200; ++i)
    CHECK(audio_back.samples[i] == doctest::Approx(audio.samples[i]).epsilon(1e-3));

  VideoClip video;
  video.fps = 12.5;
  for (int i = 0; i < 3; ++i) video.frames.push_back(solid_image(8, 8, 0.1f * (float)i, 0.2f, 0.3f));
  const std::string vdir = (dir / "vid").string();
  save_video(video, vdir);
  VideoClip video_back = load_video(vdir);
  CHECK(video_back.frames.size() == 3);
  CHECK(video_back.fps == doctest::Approx(12.5));

  fs::remove_all(dir);
}

TEST_CASE("modality payload invariants") {
  Image empty;
  CHECK_THROWS_AS(RawModality::from_image(empty), ConfigError);
  VideoClip no_frames;
  CHECK_THROWS_AS(RawModality::from_video(no_frames), ConfigError);
  Audio no_samples;
  CHECK_THROWS_AS(RawModality::from_audio(no_samples), ConfigError);

  Image bad = solid_image(2, 2, 0.5f, 0.5f, 0.5f);
  bad.pixels[0] = 1.5f;
  CHECK_THROWS_AS(RawModality::from_image(bad), ConfigError);
}
