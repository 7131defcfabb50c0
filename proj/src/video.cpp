#include "nrsteg/video.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <numbers>

#include "nrsteg/error.hpp"
#include "nrsteg/rng.hpp"

namespace nrsteg {

namespace fs = std::filesystem;

void RawVideo::validate() const {
  if (width < 1 || height < 1) throw ValidationError("video dims must be positive");
  if (frames.empty()) throw ValidationError("video has no frames");
  if (fps_num == 0 || fps_den == 0) throw ValidationError("video frame rate must be positive");
  for (std::size_t i = 0; i < frames.size(); ++i)
    if (frames[i].width != width || frames[i].height != height)
      throw ValidationError("frame " + std::to_string(i) + " dims differ from video dims");
}

Frame to_gray(const Raster& raster) {
  Frame f(raster.width, raster.height);
  if (raster.channels == 1) {
    f.pixels = raster.data;
    return f;
  }
  if (raster.channels != 3) throw ValidationError("raster must have 1 or 3 channels");
  for (std::size_t i = 0; i < f.pixels.size(); ++i)
    f.pixels[i] = luma(raster.data[3 * i], raster.data[3 * i + 1], raster.data[3 * i + 2]);
  return f;
}

// ---------------------------------------------------------------------------
// .y8v

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

Y8vHeader parse_header(const std::uint8_t* b, const fs::path& path) {
  if (!std::equal(b, b + 4, "Y8V1")) throw IoError(path.string() + ": bad magic (expected Y8V1)");
  Y8vHeader h{get_u32(b + 4), get_u32(b + 8), get_u32(b + 12), get_u32(b + 16), get_u32(b + 20)};
  if (h.width == 0 || h.height == 0) throw IoError(path.string() + ": zero frame dims");
  if (h.fps_num == 0 || h.fps_den == 0) throw IoError(path.string() + ": zero frame rate");
  return h;
}

Y8vHeader open_y8v(std::ifstream& in, const fs::path& path) {
  in.open(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<std::uint8_t, kY8vHeaderBytes> b{};
  in.read(reinterpret_cast<char*>(b.data()), b.size());
  if (in.gcount() != std::streamsize(b.size())) throw IoError(path.string() + ": truncated header");
  Y8vHeader h = parse_header(b.data(), path);
  const auto expected = kY8vHeaderBytes + std::uintmax_t(h.width) * h.height * h.frame_count;
  const auto actual = fs::file_size(path);
  if (actual < expected)
    throw IoError(path.string() + ": truncated: header promises " + std::to_string(expected) + " bytes, file has " +
                  std::to_string(actual));
  return h;
}

}  // namespace

std::vector<std::uint8_t> encode_y8v(const RawVideo& video) {
  video.validate();
  std::vector<std::uint8_t> out{'Y', '8', 'V', '1'};
  put_u32(out, std::uint32_t(video.width));
  put_u32(out, std::uint32_t(video.height));
  put_u32(out, video.fps_num);
  put_u32(out, video.fps_den);
  put_u32(out, std::uint32_t(video.frames.size()));
  out.reserve(out.size() + video.frames.size() * video.frames[0].size());
  for (const auto& f : video.frames) out.insert(out.end(), f.pixels.begin(), f.pixels.end());
  return out;
}

void write_y8v(const RawVideo& video, const fs::path& path) {
  const auto bytes = encode_y8v(video);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Y8vHeader read_y8v_header(const fs::path& path) {
  std::ifstream in;
  return open_y8v(in, path);
}

RawVideo read_y8v(const fs::path& path) {
  std::ifstream in;
  const Y8vHeader h = open_y8v(in, path);
  RawVideo v;
  v.width = int(h.width);
  v.height = int(h.height);
  v.fps_num = h.fps_num;
  v.fps_den = h.fps_den;
  v.frames.reserve(h.frame_count);
  for (std::uint32_t i = 0; i < h.frame_count; ++i) {
    Frame f(v.width, v.height);
    in.read(reinterpret_cast<char*>(f.pixels.data()), std::streamsize(f.size()));
    if (in.gcount() != std::streamsize(f.size())) throw IoError(path.string() + ": truncated in frame " + std::to_string(i));
    v.frames.push_back(std::move(f));
  }
  if (v.frames.empty()) throw IoError(path.string() + ": zero frames");
  return v;
}

Frame read_y8v_frame(const fs::path& path, std::uint32_t index) {
  std::ifstream in;
  const Y8vHeader h = open_y8v(in, path);
  if (index >= h.frame_count)
    throw IoError(path.string() + ": frame " + std::to_string(index) + " out of range (" +
                  std::to_string(h.frame_count) + " frames)");
  Frame f(int(h.width), int(h.height));
  in.seekg(std::streamoff(kY8vHeaderBytes + std::uint64_t(index) * f.size()));
  in.read(reinterpret_cast<char*>(f.pixels.data()), std::streamsize(f.size()));
  if (in.gcount() != std::streamsize(f.size())) throw IoError(path.string() + ": truncated frame " + std::to_string(index));
  return f;
}

RawVideo read_y8v_range(const fs::path& path, std::uint32_t first, std::uint32_t count) {
  std::ifstream in;
  const Y8vHeader h = open_y8v(in, path);
  if (count == 0 || std::uint64_t(first) + count > h.frame_count)
    throw IoError(path.string() + ": frames [" + std::to_string(first) + ", " + std::to_string(first + count) +
                  ") out of range (" + std::to_string(h.frame_count) + " frames)");
  RawVideo v;
  v.width = int(h.width);
  v.height = int(h.height);
  v.fps_num = h.fps_num;
  v.fps_den = h.fps_den;
  const std::size_t n = std::size_t(h.width) * h.height;
  in.seekg(std::streamoff(kY8vHeaderBytes + std::uint64_t(first) * n));
  for (std::uint32_t i = 0; i < count; ++i) {
    Frame f(v.width, v.height);
    in.read(reinterpret_cast<char*>(f.pixels.data()), std::streamsize(n));
    if (in.gcount() != std::streamsize(n)) throw IoError(path.string() + ": truncated in frame " + std::to_string(first + i));
    v.frames.push_back(std::move(f));
  }
  return v;
}

// ---------------------------------------------------------------------------
// netpbm (P2/P3/P5/P6, maxval <= 255)

namespace {

int next_token(std::istream& in, const fs::path& path) {
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  if (c == EOF || !std::isdigit(c)) throw IoError(path.string() + ": malformed netpbm header");
  int v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = in.get();
  }
  return v;
}

}  // namespace

Raster read_netpbm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[2] = {};
  in.read(magic, 2);
  if (magic[0] != 'P' || (magic[1] != '2' && magic[1] != '3' && magic[1] != '5' && magic[1] != '6'))
    throw IoError(path.string() + ": bad magic (expected P2/P3/P5/P6)");
  Raster r;
  r.channels = (magic[1] == '3' || magic[1] == '6') ? 3 : 1;
  r.width = next_token(in, path);
  r.height = next_token(in, path);
  const int maxval = next_token(in, path);
  if (r.width < 1 || r.height < 1) throw IoError(path.string() + ": zero image dims");
  if (maxval < 1 || maxval > 255) throw IoError(path.string() + ": only 8-bit netpbm is supported");
  r.data.resize(std::size_t(r.width) * r.height * r.channels);
  if (magic[1] == '5' || magic[1] == '6') {
    in.read(reinterpret_cast<char*>(r.data.data()), std::streamsize(r.data.size()));
    if (in.gcount() != std::streamsize(r.data.size())) throw IoError(path.string() + ": truncated pixel data");
  } else {
    for (auto& v : r.data) v = std::uint8_t(next_token(in, path));
  }
  if (maxval != 255)
    for (auto& v : r.data) v = std::uint8_t((unsigned(v) * 255u + unsigned(maxval) / 2) / unsigned(maxval));
  return r;
}

void write_pgm(const Frame& frame, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << frame.width << ' ' << frame.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(frame.pixels.data()), std::streamsize(frame.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

RawVideo load_frames(const fs::path& source, std::uint32_t fps_num, std::uint32_t fps_den) {
  if (fs::is_directory(source)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(source)) {
      if (!entry.is_regular_file()) continue;
      const auto ext = entry.path().extension().string();
      if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") files.push_back(entry.path());
    }
    if (files.empty()) throw IoError(source.string() + ": directory contains no .pgm/.ppm/.pnm images");
    std::sort(files.begin(), files.end());
    RawVideo v;
    v.fps_num = fps_num;
    v.fps_den = fps_den;
    for (const auto& f : files) {
      Frame g = to_gray(read_netpbm(f));
      if (v.frames.empty()) {
        v.width = g.width;
        v.height = g.height;
      } else if (g.width != v.width || g.height != v.height) {
        throw IoError(f.string() + ": mixed dims (" + std::to_string(g.width) + "x" + std::to_string(g.height) +
                      " vs " + std::to_string(v.width) + "x" + std::to_string(v.height) + ")");
      }
      v.frames.push_back(std::move(g));
    }
    return v;
  }
  if (!fs::exists(source)) throw IoError(source.string() + ": no such file or directory");
  if (source.extension() == ".y8v") return read_y8v(source);
  if (source.extension() == ".pgm" || source.extension() == ".ppm" || source.extension() == ".pnm") {
    RawVideo v;
    v.frames.push_back(to_gray(read_netpbm(source)));
    v.width = v.frames[0].width;
    v.height = v.frames[0].height;
    v.fps_num = fps_num;
    v.fps_den = fps_den;
    return v;
  }
  throw IoError(source.string() + ": unsupported source (expected .y8v or an image directory)");
}

// ---------------------------------------------------------------------------
// Synthetic footage

SyntheticKind parse_synthetic_kind(const std::string& s) {
  if (s == "noise") return SyntheticKind::Noise;
  if (s == "gradient") return SyntheticKind::Gradient;
  if (s == "blocks") return SyntheticKind::Blocks;
  if (s == "mixed") return SyntheticKind::Mixed;
  throw ValidationError("unknown synthetic kind '" + s + "' (noise|gradient|blocks|mixed)");
}

const char* synthetic_kind_name(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::Noise: return "noise";
    case SyntheticKind::Gradient: return "gradient";
    case SyntheticKind::Blocks: return "blocks";
    case SyntheticKind::Mixed: return "mixed";
  }
  return "?";
}

namespace {

constexpr double kGrainSigma = 1.5;

double uniform_in(SplitMix64& g, double lo, double hi) { return lo + (hi - lo) * g.uniform(); }

// Intensity field over (x, y, frame index) before grain and quantization.
using Field = std::function<void(int t, std::vector<double>& out)>;

// Periodic value-noise lattice with smoothstep interpolation.
class Lattice {
 public:
  Lattice(int w, int h, SplitMix64& g) : w_(w), h_(h), v_(std::size_t(w) * h) {
    for (auto& x : v_) x = standard_normal(g);
  }
  double sample(double u, double v) const {
    const double fu = std::floor(u), fv = std::floor(v);
    const double su = smooth(u - fu), sv = smooth(v - fv);
    const int x0 = wrap(int(fu), w_), y0 = wrap(int(fv), h_);
    const int x1 = wrap(x0 + 1, w_), y1 = wrap(y0 + 1, h_);
    const double a = at(x0, y0) + su * (at(x1, y0) - at(x0, y0));
    const double b = at(x0, y1) + su * (at(x1, y1) - at(x0, y1));
    return a + sv * (b - a);
  }

 private:
  static double smooth(double t) { return t * t * (3 - 2 * t); }
  static int wrap(int i, int n) { return ((i % n) + n) % n; }
  double at(int x, int y) const { return v_[std::size_t(y) * w_ + x]; }
  int w_, h_;
  std::vector<double> v_;
};

Field noise_field(int width, int height, SplitMix64& g) {
  struct Octave {
    std::shared_ptr<Lattice> lattice;
    double cell, vx, vy, weight;
  };
  std::vector<Octave> octaves;
  for (auto [cell, weight] : {std::pair{40.0, 1.0}, std::pair{12.0, 0.5}}) {
    const int lw = int(std::ceil(width / cell)) + 2, lh = int(std::ceil(height / cell)) + 2;
    octaves.push_back({std::make_shared<Lattice>(lw, lh, g), cell, uniform_in(g, -1.5, 1.5),
                       uniform_in(g, -1.5, 1.5), weight});
  }
  const double mean = uniform_in(g, 90, 160);
  const double contrast = uniform_in(g, 28, 48);
  const double flicker = uniform_in(g, 0.0, 6.0), flicker_rate = uniform_in(g, 0.01, 0.05);
  auto raw = [=](int t, std::vector<double>& out) {
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        double v = 0;
        for (const auto& o : octaves) v += o.weight * o.lattice->sample((x + o.vx * t) / o.cell, (y + o.vy * t) / o.cell);
        out[std::size_t(y) * width + x] = v;
      }
  };
  std::vector<double> first(std::size_t(width) * height);
  raw(0, first);
  double m = 0, s = 0;
  for (double v : first) m += v / double(first.size());
  for (double v : first) s += (v - m) * (v - m) / double(first.size());
  const double scale = contrast / std::max(std::sqrt(s), 1e-6);
  return [=](int t, std::vector<double>& out) {
    raw(t, out);
    const double level = mean + flicker * std::sin(2 * std::numbers::pi * flicker_rate * t);
    for (auto& v : out) v = level + scale * (v - m);
  };
}

Field gradient_field(int width, int height, SplitMix64& g) {
  const double theta = uniform_in(g, 0, 2 * std::numbers::pi);
  const double period = uniform_in(g, 80, 240);
  const double speed = uniform_in(g, 0.002, 0.02) * (g.coin() ? 1 : -1);
  const double amplitude = uniform_in(g, 60, 110);
  const double c = std::cos(theta), s = std::sin(theta);
  return [=](int t, std::vector<double>& out) {
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double phase = (x * c + y * s) / period + speed * t;
        const double tri = 4 * std::abs(phase - std::floor(phase) - 0.5) - 1;
        out[std::size_t(y) * width + x] = 128 + amplitude * tri;
      }
  };
}

Field blocks_field(int width, int height, SplitMix64& g) {
  struct Rect {
    double x, y, w, h, vx, vy, level;
  };
  const double bg = uniform_in(g, 40, 200), ramp = uniform_in(g, -0.2, 0.2);
  std::vector<Rect> rects(4 + g.below(3));
  for (auto& r : rects) {
    r.w = uniform_in(g, width / 8.0, width / 3.0);
    r.h = uniform_in(g, height / 8.0, height / 3.0);
    r.x = uniform_in(g, 0, width - r.w);
    r.y = uniform_in(g, 0, height - r.h);
    r.vx = uniform_in(g, -3, 3);
    r.vy = uniform_in(g, -3, 3);
    r.level = uniform_in(g, 0, 255);
  }
  // Position moving with constant speed and reflecting at [0, span].
  auto bounce = [](double p0, double v, int t, double span) {
    if (span <= 0) return 0.0;
    double p = std::fmod(p0 + v * t, 2 * span);
    if (p < 0) p += 2 * span;
    return p <= span ? p : 2 * span - p;
  };
  return [=](int t, std::vector<double>& out) {
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) out[std::size_t(y) * width + x] = bg + ramp * (x - width / 2.0);
    for (const auto& r : rects) {
      const int x0 = int(bounce(r.x, r.vx, t, width - r.w)), y0 = int(bounce(r.y, r.vy, t, height - r.h));
      const int x1 = std::min(width, x0 + int(r.w)), y1 = std::min(height, y0 + int(r.h));
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) out[std::size_t(y) * width + x] = r.level;
    }
  };
}

Field make_field(SyntheticKind kind, int width, int height, std::uint32_t fps, SplitMix64& g) {
  switch (kind) {
    case SyntheticKind::Noise: return noise_field(width, height, g);
    case SyntheticKind::Gradient: return gradient_field(width, height, g);
    case SyntheticKind::Blocks: return blocks_field(width, height, g);
    case SyntheticKind::Mixed: {
      std::array<Field, 3> parts{noise_field(width, height, g), gradient_field(width, height, g),
                                 blocks_field(width, height, g)};
      const int offset = int(g.below(3));
      const int segment = int(std::max<std::uint32_t>(fps, 1));
      return [=](int t, std::vector<double>& out) { parts[(t / segment + offset) % 3](t, out); };
    }
  }
  throw ValidationError("unknown synthetic kind");
}

}  // namespace

RawVideo gen_synthetic_video(SyntheticKind kind, int width, int height, std::uint32_t fps, double seconds,
                             std::uint64_t seed) {
  if (width < 1 || height < 1) throw ValidationError("gen_synthetic_video: dims must be positive");
  if (fps < 1) throw ValidationError("gen_synthetic_video: fps must be positive");
  if (!(seconds > 0)) throw ValidationError("gen_synthetic_video: seconds must be positive");
  const long count = std::lround(double(fps) * seconds);
  if (count < 1) throw ValidationError("gen_synthetic_video: duration shorter than one frame");

  SplitMix64 g(derive_seed(seed, 0x5EED));
  const Field field = make_field(kind, width, height, fps, g);
  RawVideo v;
  v.width = width;
  v.height = height;
  v.fps_num = fps;
  v.fps_den = 1;
  v.frames.reserve(std::size_t(count));
  std::vector<double> buf(std::size_t(width) * height);
  for (int t = 0; t < count; ++t) {
    field(t, buf);
    SplitMix64 grain(derive_seed(seed, 0x10000 + std::uint64_t(t)));
    Frame f(width, height);
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const double v = std::round(buf[i] + kGrainSigma * standard_normal(grain));
      f.pixels[i] = std::uint8_t(std::clamp(v, 0.0, 255.0));
    }
    v.frames.push_back(std::move(f));
  }
  return v;
}

std::vector<RawVideo> split_clips(const RawVideo& video, double clip_seconds) {
  video.validate();
  if (!(clip_seconds > 0)) throw ValidationError("split_clips: clip length must be positive");
  const long per_clip = std::lround(clip_seconds * video.fps());
  if (per_clip < 1) throw ValidationError("split_clips: clip shorter than one frame");
  if (long(video.frames.size()) < per_clip)
    throw ValidationError("split_clips: video has " + std::to_string(video.frames.size()) +
                          " frames, one clip needs " + std::to_string(per_clip));
  std::vector<RawVideo> clips;
  for (std::size_t start = 0; start + std::size_t(per_clip) <= video.frames.size(); start += std::size_t(per_clip)) {
    RawVideo c;
    c.width = video.width;
    c.height = video.height;
    c.fps_num = video.fps_num;
    c.fps_den = video.fps_den;
    c.frames.assign(video.frames.begin() + long(start), video.frames.begin() + long(start) + per_clip);
    clips.push_back(std::move(c));
  }
  return clips;
}

}  // namespace nrsteg
