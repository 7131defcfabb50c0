#include "nrsteg/embedders.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <numeric>

#include "nrsteg/error.hpp"
#include "nrsteg/rng.hpp"

namespace nrsteg {

StegoKey StegoKey::parse_hex(const std::string& hex) {
  std::string s = hex;
  if (s.starts_with("0x") || s.starts_with("0X")) s = s.substr(2);
  if (s.empty() || s.size() > 16) throw ValidationError("key must be 1-16 hex digits, got '" + hex + "'");
  std::uint64_t v = 0;
  for (char c : s) {
    int d;
    if (c >= '0' && c <= '9') d = c - '0';
    else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') d = c - 'A' + 10;
    else throw ValidationError("key must be hexadecimal, got '" + hex + "'");
    v = (v << 4) | std::uint64_t(d);
  }
  return {v};
}

std::string StegoKey::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(seed));
  return buf;
}

// ---------------------------------------------------------------------------

namespace {

void check_bits(int n_bits) {
  if (n_bits < 1 || n_bits > 4) throw ValidationError("n_bits must be in [1,4], got " + std::to_string(n_bits));
}

}  // namespace

Frame embed_image_in_image(const Frame& cover, const Frame& secret, int n_bits) {
  check_bits(n_bits);
  if (cover.width != secret.width || cover.height != secret.height)
    throw ValidationError("image-in-image: cover " + std::to_string(cover.width) + "x" + std::to_string(cover.height) +
                          " and secret " + std::to_string(secret.width) + "x" + std::to_string(secret.height) +
                          " differ");
  const std::uint8_t low = std::uint8_t((1u << n_bits) - 1);
  Frame out = cover;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.pixels[i] = std::uint8_t((cover.pixels[i] & ~low) | (secret.pixels[i] >> (8 - n_bits)));
  return out;
}

Frame extract_image(const Frame& stego, int n_bits) {
  check_bits(n_bits);
  const std::uint8_t low = std::uint8_t((1u << n_bits) - 1);
  Frame out = stego;
  for (auto& p : out.pixels) p = std::uint8_t((p & low) << (8 - n_bits));
  return out;
}

// ---------------------------------------------------------------------------

std::size_t lsb_matching_count(int width, int height, double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ValidationError("lsb matching rate must be in [0,1]");
  return std::size_t(std::llround(rate * double(width) * double(height)));
}

Frame embed_lsb_matching(const Frame& cover, double rate, StegoKey key, std::uint64_t index) {
  const std::size_t count = lsb_matching_count(cover.width, cover.height, rate);
  Frame out = cover;
  if (count == 0) return out;
  SplitMix64 g(derive_seed(key.seed, index));
  std::vector<std::uint32_t> order(cover.size());
  std::iota(order.begin(), order.end(), 0u);
  for (std::size_t i = 0; i < count; ++i) {  // partial Fisher-Yates
    const std::size_t j = i + std::size_t(g.below(order.size() - i));
    std::swap(order[i], order[j]);
    const std::uint32_t pos = order[i];
    const unsigned bit = unsigned(g.next() & 1u);
    const bool up = g.coin();
    std::uint8_t& p = out.pixels[pos];
    if ((p & 1u) == bit) continue;
    if (p == 0) p = 1;
    else if (p == 255) p = 254;
    else p = std::uint8_t(up ? p + 1 : p - 1);
  }
  return out;
}

std::vector<Frame> embed_lsb_matching(const std::vector<Frame>& covers, double rate, StegoKey key) {
  std::vector<Frame> out;
  out.reserve(covers.size());
  for (std::size_t i = 0; i < covers.size(); ++i) out.push_back(embed_lsb_matching(covers[i], rate, key, i));
  return out;
}

// ---------------------------------------------------------------------------

void SpreadSpectrumConfig::validate() const {
  if (redundancy < 1) throw ValidationError("spread spectrum redundancy must be >= 1");
  if (amplitude < 1 || amplitude > 32) throw ValidationError("spread spectrum amplitude must be in [1,32]");
}

std::uint64_t spread_spectrum_capacity_bits(std::uint64_t pixels, int redundancy) {
  if (redundancy < 1) throw ValidationError("spread spectrum redundancy must be >= 1");
  return pixels * kMaxChipLoad / (std::uint64_t(kChipsPerBit) * std::uint64_t(redundancy));
}

std::uint64_t total_pixels(const std::vector<Frame>& frames) {
  std::uint64_t n = 0;
  for (const auto& f : frames) n += f.size();
  return n;
}

std::size_t payload_bytes_for_rate(std::uint64_t pixels, double bpp) {
  return std::size_t(double(pixels) * bpp / 8.0 + 1e-9);
}

std::vector<std::uint8_t> keyed_payload(std::size_t bytes, std::uint64_t seed) {
  SplitMix64 g(derive_seed(seed, 0x9A710AD));
  std::vector<std::uint8_t> out(bytes);
  for (auto& b : out) b = std::uint8_t(g.next() >> 56);
  return out;
}

SpreadSpectrumConfig default_spread_spectrum(std::uint64_t pixels, StegoKey key) {
  SpreadSpectrumConfig cfg;
  cfg.key = key;
  cfg.payload = keyed_payload(payload_bytes_for_rate(pixels), key.seed);
  return cfg;
}

namespace {

// Generates the distinct chip positions and signs of one bit inside a frame.
class ChipStream {
 public:
  void reset(StegoKey key, std::uint64_t bit, std::uint64_t frame_pixels, int chips) {
    g_ = SplitMix64(derive_seed(key.seed, bit));
    n_ = frame_pixels;
    left_ = chips;
    ++stamp_;
  }

  // Returns false once all chips of the bit have been produced.
  bool next(std::uint32_t& pos, int& sign) {
    if (left_ == 0) return false;
    for (;;) {
      const std::uint64_t p = g_.below(n_);
      if (insert(p)) {
        pos = std::uint32_t(p);
        break;
      }
    }
    sign = g_.coin() ? 1 : -1;
    --left_;
    return true;
  }

 private:
  bool insert(std::uint64_t p) {
    std::size_t h = std::size_t((p * 0x9E3779B97F4A7C15ULL) >> 55);  // 9 bits
    for (;;) {
      auto& slot = table_[h];
      if (slot.stamp != stamp_) {
        slot = {p, stamp_};
        return true;
      }
      if (slot.pos == p) return false;
      h = (h + 1) & (table_.size() - 1);
    }
  }

  struct Slot {
    std::uint64_t pos = 0;
    std::uint64_t stamp = 0;
  };
  SplitMix64 g_{0};
  std::uint64_t n_ = 1;
  int left_ = 0;
  std::uint64_t stamp_ = 0;
  std::array<Slot, 512> table_{};
};

// Bit j goes to the frame holding the centre of its share of the pixel range;
// returns the first bit of every frame plus a final sentinel.
std::vector<std::uint64_t> first_bits(const std::vector<std::uint64_t>& frame_pixels, std::uint64_t bits) {
  std::vector<std::uint64_t> starts;
  std::uint64_t pixels = 0;
  for (auto n : frame_pixels) {
    starts.push_back(pixels);
    pixels += n;
  }
  std::vector<std::uint64_t> first(frame_pixels.size() + 1, bits);
  std::size_t f = 0;
  for (std::uint64_t j = 0; j < bits; ++j) {
    const auto centre = std::uint64_t((static_cast<unsigned __int128>(2 * j + 1) * pixels) / (2 * bits));
    const std::size_t fj = std::size_t(std::upper_bound(starts.begin(), starts.end(), centre) - starts.begin()) - 1;
    while (f <= fj) first[f++] = j;
  }
  return first;
}

std::vector<std::uint64_t> pixel_counts(const std::vector<Frame>& frames) {
  std::vector<std::uint64_t> n;
  for (const auto& f : frames) n.push_back(f.size());
  return n;
}

void check_layout(const std::vector<std::uint64_t>& frame_pixels, std::uint64_t payload_bits, int redundancy,
                  int chips) {
  const std::uint64_t pixels = std::accumulate(frame_pixels.begin(), frame_pixels.end(), std::uint64_t(0));
  const std::uint64_t capacity = spread_spectrum_capacity_bits(pixels, redundancy);
  if (payload_bits > capacity)
    throw ValidationError("spread spectrum payload of " + std::to_string(payload_bits) +
                          " bits exceeds capacity of " + std::to_string(capacity) + " bits");
  if (payload_bits == 0) return;
  for (auto n : frame_pixels)
    if (n < std::uint64_t(chips))
      throw ValidationError("spread spectrum needs at least " + std::to_string(chips) + " pixels per frame");
}

}  // namespace

SpreadSpectrumEmbedder::SpreadSpectrumEmbedder(SpreadSpectrumConfig cfg, const std::vector<std::uint64_t>& frame_pixels)
    : cfg_(std::move(cfg)), frame_pixels_(frame_pixels) {
  cfg_.validate();
  const std::uint64_t bits = std::uint64_t(cfg_.payload.size()) * 8;
  check_layout(frame_pixels_, bits, cfg_.redundancy, cfg_.chips());
  first_bit_ = first_bits(frame_pixels_, bits);
}

Frame SpreadSpectrumEmbedder::embed(const Frame& cover, std::size_t f) const {
  if (f >= frame_pixels_.size() || cover.size() != frame_pixels_[f])
    throw ValidationError("spread spectrum: frame " + std::to_string(f) + " does not match the embedding plan");
  Frame out = cover;
  if (first_bit_[f] == first_bit_[f + 1]) return out;
  thread_local ChipStream chips;
  std::vector<std::int16_t> acc(cover.size(), 0);
  for (std::uint64_t j = first_bit_[f]; j < first_bit_[f + 1]; ++j) {
    const int value = (cfg_.payload[j / 8] >> (7 - j % 8)) & 1 ? 1 : -1;
    chips.reset(cfg_.key, j, cover.size(), cfg_.chips());
    std::uint32_t pos;
    int sign;
    while (chips.next(pos, sign)) acc[pos] = std::int16_t(acc[pos] + sign * value);
  }
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    if (acc[i] == 0) continue;
    const int delta = acc[i] > 0 ? cfg_.amplitude : -cfg_.amplitude;
    out.pixels[i] = std::uint8_t(std::clamp(int(out.pixels[i]) + delta, 0, 255));
  }
  return out;
}

std::vector<Frame> embed_spread_spectrum(const std::vector<Frame>& covers, const SpreadSpectrumConfig& cfg) {
  const SpreadSpectrumEmbedder embedder(cfg, pixel_counts(covers));
  std::vector<Frame> out;
  out.reserve(covers.size());
  for (std::size_t f = 0; f < covers.size(); ++f) out.push_back(embedder.embed(covers[f], f));
  return out;
}

ExtractedPayload extract_spread_spectrum(const std::vector<Frame>& stego, StegoKey key, int redundancy,
                                         std::size_t payload_len) {
  SpreadSpectrumConfig shape;
  shape.redundancy = redundancy;
  shape.validate();
  const std::uint64_t bits = std::uint64_t(payload_len) * 8;
  const auto frame_pixels = pixel_counts(stego);
  check_layout(frame_pixels, bits, redundancy, shape.chips());
  ExtractedPayload out{std::vector<std::uint8_t>(payload_len, 0), std::vector<double>(bits, 0.0)};
  if (bits == 0) return out;

  const auto first = first_bits(frame_pixels, bits);
  ChipStream chips;
  std::vector<float> residual;
  for (std::size_t f = 0; f < stego.size(); ++f) {
    if (first[f] == first[f + 1]) continue;
    const Frame& fr = stego[f];
    residual.assign(fr.size(), 0.f);
    for (int y = 0; y < fr.height; ++y)
      for (int x = 0; x < fr.width; ++x) {
        int sum = 0, n = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if ((dx == 0 && dy == 0) || x + dx < 0 || y + dy < 0 || x + dx >= fr.width || y + dy >= fr.height) continue;
            sum += fr.at(x + dx, y + dy);
            ++n;
          }
        residual[std::size_t(y) * fr.width + x] = n ? float(fr.at(x, y)) - float(sum) / float(n) : 0.f;
      }
    for (std::uint64_t j = first[f]; j < first[f + 1]; ++j) {
      chips.reset(key, j, fr.size(), shape.chips());
      double corr = 0;
      std::uint32_t pos;
      int sign;
      while (chips.next(pos, sign)) corr += sign * double(residual[pos]);
      if (corr > 0) out.bytes[j / 8] = std::uint8_t(out.bytes[j / 8] | (1u << (7 - j % 8)));
      out.confidence[j] = std::abs(corr) / shape.chips();
    }
  }
  return out;
}

double measure_bpp(const EmbedderConfig& cfg, int width, int height, std::size_t frames) {
  const double pixels = double(width) * double(height) * double(frames);
  if (!(pixels > 0)) throw ValidationError("measure_bpp: empty cover");
  return std::visit(
      [&](const auto& c) -> double {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, ImageInImageConfig>) {
          check_bits(c.n_bits);
          return double(c.n_bits);
        } else if constexpr (std::is_same_v<T, LsbMatchingConfig>) {
          return double(lsb_matching_count(width, height, c.rate)) * double(frames) / pixels;
        } else {
          c.validate();
          return double(c.payload.size()) * 8.0 / pixels;
        }
      },
      cfg);
}

}  // namespace nrsteg
