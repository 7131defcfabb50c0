#pragma once

// Three-class clip dataset: regular clips, image-in-image stego clips and
// spread-spectrum stego clips, split at the clip level into train/val/test
// and sampled into per-segment frames listed in a TSV manifest.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "nrsteg/embedders.hpp"
#include "nrsteg/tensor.hpp"
#include "nrsteg/video.hpp"

namespace nrsteg {

enum class Split { Train, Val, Test };

Split parse_split(const std::string& s);
const char* split_name(Split s);

// Reference split sizes out of 3555 clips.
inline constexpr std::array<int, 3> kReferenceSplit{1700, 174, 1681};

struct SplitSizes {
  int train = 0;
  int val = 0;
  int test = 0;
};

/// Cumulative rounding of the reference fractions, so the three sizes always sum to k.
SplitSizes split_sizes(int k);

struct DatasetConfig {
  int k = 3555;
  double clip_seconds = 10.0;
  std::uint64_t seed = 0;
  int segments_train = 5;
  int segments_eval = 20;
  int image_bits = 2;
  int ss_redundancy = 2;
  int ss_amplitude = 4;
  double ss_bpp = kDefaultStegoBpp;
  std::uint32_t fps_num = 25;  // frame rate assumed for image directories
  std::uint32_t fps_den = 1;

  void validate() const;
};

struct SampledFrame {
  int segment = 0;
  int frame_index = 0;
  friend bool operator==(const SampledFrame&, const SampledFrame&) = default;
};

/// [begin, end) bounds of n near-equal contiguous segments, larger segments first.
std::vector<std::pair<int, int>> segment_bounds(int frame_count, int n_segments);

// One keyed-uniform frame per segment.
std::vector<SampledFrame> sample_frames(int frame_count, int n_segments, std::uint64_t seed);

// Bilinear resize with half-pixel centres and edge clamping.
Frame resize_bilinear(const Frame& src, int width, int height);

/// Luma (color input), resize to 224x224, scale to [0,1]. Rejects inputs below 8x8.
Tensor<float> preprocess(const Frame& frame);
Tensor<float> preprocess(const Raster& raster);

struct ManifestRecord {
  std::string path;  // relative to the manifest's directory
  int clip_id = 0;
  int segment = 0;
  int frame_index = 0;
  int label = 0;
  Split split = Split::Train;
  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct DatasetManifest {
  std::vector<std::pair<std::string, std::string>> header;  // "# key=value" lines, in order
  std::vector<ManifestRecord> records;
  std::filesystem::path base;  // directory the record paths are relative to

  std::vector<ManifestRecord> split(Split s) const;
  std::filesystem::path resolve(const ManifestRecord& r) const { return base / r.path; }

  std::string encode() const;
  void write(const std::filesystem::path& file) const;
  static DatasetManifest read(const std::filesystem::path& file);
};

inline constexpr const char* kManifestColumns = "path\tclip_id\tsegment\tframe_index\tlabel\tsplit";

/// .y8v files and image directories directly inside `dir`, in lexicographic order.
std::vector<std::filesystem::path> list_videos(const std::filesystem::path& dir);

/// Source clips required for k: k/3 regular, 2k/3 cover/secret pairs, k/3 spread-spectrum.
int required_source_clips(int k);

/// Splits every source into clips, draws the class pools by seeded shuffle,
/// embeds, writes clips to out/clips/cNNNNN.y8v and the manifest to
/// out/manifest.tsv, and returns the manifest.
DatasetManifest build_dataset(const std::vector<std::filesystem::path>& videos, const DatasetConfig& cfg,
                              const std::filesystem::path& out, int threads = 1);

// Loads and preprocesses the frame a record points at.
Tensor<float> load_record(const DatasetManifest& m, const ManifestRecord& r);

}  // namespace nrsteg
