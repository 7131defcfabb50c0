#pragma once

// Spatial-domain embedders with matching extractors:
//  - image-in-image: the secret's top n bits replace the cover's n LSBs (dense, 1-4 bpp)
//  - LSB matching: keyed +-1 embedding at a chosen rate
//  - spread spectrum: each payload bit spread over 64*redundancy keyed chips of
//    +-amplitude, decoded by correlation (sparse, ~0.1 bpp)

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "nrsteg/video.hpp"

namespace nrsteg {

struct StegoKey {
  std::uint64_t seed = 0;

  // Up to 16 hex digits, optional 0x prefix.
  static StegoKey parse_hex(const std::string& hex);
  std::string hex() const;
};

Frame embed_image_in_image(const Frame& cover, const Frame& secret, int n_bits);
Frame extract_image(const Frame& stego, int n_bits);

// Frame `index` of a sequence draws from its own keyed stream.
Frame embed_lsb_matching(const Frame& cover, double rate, StegoKey key, std::uint64_t index = 0);
std::vector<Frame> embed_lsb_matching(const std::vector<Frame>& covers, double rate, StegoKey key);
std::size_t lsb_matching_count(int width, int height, double rate);

inline constexpr int kChipsPerBit = 64;
// Chips of different bits may share pixels; the average number of chips per
// pixel is capped at this load.
inline constexpr int kMaxChipLoad = 16;
inline constexpr double kDefaultStegoBpp = 0.1;

struct SpreadSpectrumConfig {
  int redundancy = 2;
  int amplitude = 4;
  std::vector<std::uint8_t> payload;
  StegoKey key;

  int chips() const { return kChipsPerBit * redundancy; }
  void validate() const;
};

std::uint64_t spread_spectrum_capacity_bits(std::uint64_t pixels, int redundancy);
std::uint64_t total_pixels(const std::vector<Frame>& frames);

// Whole bytes of payload giving `bpp` bits per cover pixel.
std::size_t payload_bytes_for_rate(std::uint64_t pixels, double bpp = kDefaultStegoBpp);
std::vector<std::uint8_t> keyed_payload(std::size_t bytes, std::uint64_t seed);

// Default configuration for a cover of `pixels` pixels: redundancy 2,
// amplitude 4, keyed pseudorandom payload at 0.1 bpp.
SpreadSpectrumConfig default_spread_spectrum(std::uint64_t pixels, StegoKey key);

/// Bit j (MSB first within each byte) is assigned to the frame containing the
/// j-th of payload_bits evenly spaced positions over the concatenated pixels, and
/// spread over chips() distinct keyed positions of that frame with keyed signs
/// s_i. A pixel's stego value is cover + amplitude * sign(sum of s_i (2b - 1))
/// over the chips it holds, clamped to [0, 255].
std::vector<Frame> embed_spread_spectrum(const std::vector<Frame>& covers, const SpreadSpectrumConfig& cfg);

// Frame-at-a-time form of embed_spread_spectrum for sequences too long to hold
// in memory; `frame_pixels` lists the pixel count of every frame in order.
class SpreadSpectrumEmbedder {
 public:
  SpreadSpectrumEmbedder(SpreadSpectrumConfig cfg, const std::vector<std::uint64_t>& frame_pixels);
  Frame embed(const Frame& cover, std::size_t frame) const;

 private:
  SpreadSpectrumConfig cfg_;
  std::vector<std::uint64_t> first_bit_;  // bits [first_bit_[f], first_bit_[f+1]) live in frame f
  std::vector<std::uint64_t> frame_pixels_;
};

struct ExtractedPayload {
  std::vector<std::uint8_t> bytes;
  std::vector<double> confidence;  // |correlation| / chips, one per bit
};

// Each bit is the sign of sum s_i (p_i - mean of p_i's 8-neighbourhood).
ExtractedPayload extract_spread_spectrum(const std::vector<Frame>& stego, StegoKey key, int redundancy,
                                         std::size_t payload_len);

struct ImageInImageConfig {
  int n_bits = 2;
};
struct LsbMatchingConfig {
  double rate = 0.1;
};
using EmbedderConfig = std::variant<ImageInImageConfig, LsbMatchingConfig, SpreadSpectrumConfig>;

// Payload bits divided by the number of cover pixels across `frames` frames.
double measure_bpp(const EmbedderConfig& cfg, int width, int height, std::size_t frames);

}  // namespace nrsteg
