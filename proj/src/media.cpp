#include "mbridge/media.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mbridge/log.hpp"

namespace fs = std::filesystem;

namespace mbridge {

const char* modality_name(Modality kind) {
  switch (kind) {
    case Modality::Image: return "image";
    case Modality::Video: return "video";
    default: return "audio";
  }
}

Modality modality_from_name(const std::string& name) {
  if (name == "image") return Modality::Image;
  if (name == "video") return Modality::Video;
  if (name == "audio") return Modality::Audio;
  throw ConfigError("unknown modality: " + name);
}

void Image::validate() const {
  if (height < 1 || width < 1) throw ConfigError("image: empty raster");
  if (static_cast<int64_t>(pixels.size()) != height * width * 3)
    throw ConfigError("image: pixel buffer size mismatch");
  for (float v : pixels)
    if (!(v >= 0.0f && v <= 1.0f)) throw ConfigError("image: pixel outside [0,1]");
}

void VideoClip::validate() const {
  if (frames.empty()) throw ConfigError("video: needs at least one frame");
  for (const Image& f : frames) f.validate();
}

void Audio::validate() const {
  if (samples.empty()) throw ConfigError("audio: needs at least one sample");
  if (sample_rate < 1) throw ConfigError("audio: bad sample rate");
}

RawModality RawModality::from_image(Image img) {
  img.validate();
  return RawModality{Modality::Image, std::move(img)};
}

RawModality RawModality::from_video(VideoClip vid) {
  vid.validate();
  return RawModality{Modality::Video, std::move(vid)};
}

RawModality RawModality::from_audio(Audio aud) {
  aud.validate();
  return RawModality{Modality::Audio, std::move(aud)};
}

namespace {

int next_ppm_int(std::istream& in, const std::string& path) {
  // PPM headers allow '#' comments anywhere between tokens.
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  if (c == EOF) throw LoadError("ppm: truncated header in " + path);
  int value = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = in.get();
  }
  if (!any) throw LoadError("ppm: malformed header in " + path);
  return value;
}

template <class T>
void write_le(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_le(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw LoadError("wav: truncated file " + path);
  return v;
}

}  // namespace

Image load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("ppm: cannot open " + path);
  char magic[2];
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '6') throw LoadError("ppm: not a P6 file: " + path);
  const int width = next_ppm_int(in, path);
  const int height = next_ppm_int(in, path);
  const int maxval = next_ppm_int(in, path);
  if (maxval != 255) throw LoadError("ppm: only maxval 255 supported: " + path);

  Image img;
  img.width = width;
  img.height = height;
  const size_t n = static_cast<size_t>(width) * static_cast<size_t>(height) * 3;
  std::vector<unsigned char> raw(n);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
  if (!in) throw LoadError("ppm: truncated pixel data in " + path);
  img.pixels.resize(n);
  for (size_t i = 0; i < n; ++i) img.pixels[i] = static_cast<float>(raw[i]) / 255.0f;
  return img;
}

void save_ppm(const Image& img, const std::string& path) {
  img.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("ppm: cannot write " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.pixels.size());
  for (size_t i = 0; i < raw.size(); ++i)
    raw[i] = static_cast<unsigned char>(std::lround(img.pixels[i] * 255.0f));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

Audio load_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("wav: cannot open " + path);
  char id[4];
  in.read(id, 4);
  if (!in || std::memcmp(id, "RIFF", 4) != 0) throw LoadError("wav: not a RIFF file: " + path);
  read_le<uint32_t>(in, path);  // total size
  in.read(id, 4);
  if (!in || std::memcmp(id, "WAVE", 4) != 0) throw LoadError("wav: not a WAVE file: " + path);

  int sample_rate = 0;
  int channels = 0;
  int bits = 0;
  std::vector<int16_t> pcm;
  bool have_fmt = false, have_data = false;
  while (in.read(id, 4)) {
    const uint32_t size = read_le<uint32_t>(in, path);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      const uint16_t format = read_le<uint16_t>(in, path);
      channels = read_le<uint16_t>(in, path);
      sample_rate = static_cast<int>(read_le<uint32_t>(in, path));
      read_le<uint32_t>(in, path);  // byte rate
      read_le<uint16_t>(in, path);  // block align
      bits = read_le<uint16_t>(in, path);
      if (size > 16) in.seekg(size - 16, std::ios::cur);
      if (format != 1) throw LoadError("wav: only PCM supported: " + path);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      pcm.resize(size / 2);
      in.read(reinterpret_cast<char*>(pcm.data()), size);
      if (!in) throw LoadError("wav: truncated data chunk in " + path);
      have_data = true;
    } else {
      in.seekg(size + (size & 1), std::ios::cur);
    }
  }
  if (!have_fmt || !have_data) throw LoadError("wav: missing fmt/data chunk in " + path);
  if (channels != 1 || bits != 16) throw LoadError("wav: only PCM16 mono supported: " + path);

  Audio audio;
  audio.sample_rate = sample_rate;
  audio.samples.resize(pcm.size());
  for (size_t i = 0; i < pcm.size(); ++i)
    audio.samples[i] = static_cast<float>(pcm[i]) / 32768.0f;
  return audio;
}

void save_wav(const Audio& audio, const std::string& path) {
  audio.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("wav: cannot write " + path);
  const uint32_t data_size = static_cast<uint32_t>(audio.samples.size() * 2);
  out.write("RIFF", 4);
  write_le<uint32_t>(out, 36 + data_size);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_le<uint32_t>(out, 16);
  write_le<uint16_t>(out, 1);  // PCM
  write_le<uint16_t>(out, 1);  // mono
  write_le<uint32_t>(out, static_cast<uint32_t>(audio.sample_rate));
  write_le<uint32_t>(out, static_cast<uint32_t>(audio.sample_rate * 2));
  write_le<uint16_t>(out, 2);
  write_le<uint16_t>(out, 16);
  out.write("data", 4);
  write_le<uint32_t>(out, data_size);
  for (float v : audio.samples) {
    const float clamped = std::min(1.0f, std::max(-1.0f, v));
    write_le<int16_t>(out, static_cast<int16_t>(std::lround(clamped * 32767.0f)));
  }
}

VideoClip load_video(const std::string& path) {
  VideoClip video;
  if (fs::is_directory(path)) {
    std::vector<std::string> frame_paths;
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.path().extension() == ".ppm") frame_paths.push_back(entry.path().string());
    }
    std::sort(frame_paths.begin(), frame_paths.end());
    if (frame_paths.empty()) throw LoadError("video: no .ppm frames in " + path);
    for (const std::string& p : frame_paths) video.frames.push_back(load_ppm(p));
    const fs::path sidecar = fs::path(path) / "fps.txt";
    if (fs::exists(sidecar)) {
      std::ifstream in(sidecar);
      in >> video.fps;
      if (!in || video.fps <= 0) throw LoadError("video: malformed fps sidecar in " + path);
    } else {
      logging::warn("video: no fps.txt in " + path + ", assuming 25");
      video.fps = 25.0;
    }
    return video;
  }

  // Manifest form.
  std::ifstream in(path);
  if (!in) throw LoadError("video: cannot open manifest " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("fps:", 0) != 0)
    throw LoadError("video: manifest must start with 'fps: <value>': " + path);
  video.fps = std::stod(line.substr(4));
  if (video.fps <= 0) throw LoadError("video: bad fps in manifest " + path);
  const fs::path base = fs::path(path).parent_path();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    video.frames.push_back(load_ppm((base / line).string()));
  }
  if (video.frames.empty()) throw LoadError("video: manifest lists no frames: " + path);
  return video;
}

void save_video(const VideoClip& video, const std::string& dir_path) {
  video.validate();
  fs::create_directories(dir_path);
  char name[32];
  for (size_t i = 0; i < video.frames.size(); ++i) {
    std::snprintf(name, sizeof(name), "frame_%05zu.ppm", i);
    save_ppm(video.frames[i], (fs::path(dir_path) / name).string());
  }
  std::ofstream fps((fs::path(dir_path) / "fps.txt").string());
  fps << video.fps << "\n";
}

RawModality load_modality(Modality kind, const std::string& path) {
  switch (kind) {
    case Modality::Image: return RawModality::from_image(load_ppm(path));
    case Modality::Video: return RawModality::from_video(load_video(path));
    default: return RawModality::from_audio(load_wav(path));
  }
}

}  // namespace mbridge
