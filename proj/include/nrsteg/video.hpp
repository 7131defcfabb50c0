#pragma once

// 8-bit grayscale frames and videos: the .y8v raw container, netpbm image
// directories, synthetic video generation and clip splitting.
//
// .y8v layout: "Y8V1", then u32 LE width, height, fps_num, fps_den,
// frame_count, then frame_count rasters of width*height bytes, row-major,
// top-left origin.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace nrsteg {

struct Frame {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  Frame() = default;
  Frame(int w, int h, std::uint8_t fill = 0) : width(w), height(h), pixels(std::size_t(w) * h, fill) {}

  std::size_t size() const { return pixels.size(); }
  std::uint8_t& at(int x, int y) { return pixels[std::size_t(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return pixels[std::size_t(y) * width + x]; }
  friend bool operator==(const Frame&, const Frame&) = default;
};

// Decoded image before luma conversion; channels is 1 (gray) or 3 (RGB, interleaved).
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> data;
};

struct RawVideo {
  int width = 0;
  int height = 0;
  std::uint32_t fps_num = 25;
  std::uint32_t fps_den = 1;
  std::vector<Frame> frames;

  double fps() const { return double(fps_num) / double(fps_den); }
  void validate() const;
  friend bool operator==(const RawVideo&, const RawVideo&) = default;
};

struct Y8vHeader {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t fps_num = 0;
  std::uint32_t fps_den = 0;
  std::uint32_t frame_count = 0;
};

inline constexpr std::size_t kY8vHeaderBytes = 24;

// BT.601 luma, rounded half-up, in integer arithmetic.
constexpr std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return std::uint8_t((299u * r + 587u * g + 114u * b + 500u) / 1000u);
}

Frame to_gray(const Raster& raster);

void write_y8v(const RawVideo& video, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_y8v(const RawVideo& video);
RawVideo read_y8v(const std::filesystem::path& path);
Y8vHeader read_y8v_header(const std::filesystem::path& path);
Frame read_y8v_frame(const std::filesystem::path& path, std::uint32_t index);
// Frames [first, first + count) of a .y8v file.
RawVideo read_y8v_range(const std::filesystem::path& path, std::uint32_t first, std::uint32_t count);

Raster read_netpbm(const std::filesystem::path& path);
void write_pgm(const Frame& frame, const std::filesystem::path& path);

/// A .y8v file, or a directory of .pgm/.ppm/.pnm images taken in lexicographic
/// filename order (color converted to luma; directory videos get `fps_num/fps_den`).
RawVideo load_frames(const std::filesystem::path& source, std::uint32_t fps_num = 25, std::uint32_t fps_den = 1);

enum class SyntheticKind { Noise, Gradient, Blocks, Mixed };

SyntheticKind parse_synthetic_kind(const std::string& s);
const char* synthetic_kind_name(SyntheticKind k);

/// Deterministic synthetic footage: smoothed drifting random fields (noise),
/// moving ramps (gradient), moving rectangles (blocks) or a per-second
/// rotation of the three (mixed). Every kind carries mild sensor grain.
RawVideo gen_synthetic_video(SyntheticKind kind, int width, int height, std::uint32_t fps, double seconds,
                             std::uint64_t seed);

/// Consecutive non-overlapping clips of round(clip_seconds * fps) frames; a
/// trailing remainder shorter than one clip is dropped.
std::vector<RawVideo> split_clips(const RawVideo& video, double clip_seconds);

}  // namespace nrsteg
