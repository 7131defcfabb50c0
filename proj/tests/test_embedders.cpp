#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <random>

#include "nrsteg/embedders.hpp"
#include "nrsteg/error.hpp"
#include "nrsteg/rng.hpp"

using namespace nrsteg;

namespace {

Frame random_frame(int w, int h, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  Frame f(w, h);
  for (auto& p : f.pixels) p = std::uint8_t(gen() & 0xFF);
  return f;
}

std::vector<Frame> flat_frames(int n, int w, int h, std::uint8_t level = 128) {
  return std::vector<Frame>(std::size_t(n), Frame(w, h, level));
}

double bit_error_rate(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  REQUIRE(a.size() == b.size());
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < a.size(); ++i) wrong += std::size_t(__builtin_popcount(unsigned(a[i] ^ b[i])));
  return double(wrong) / double(a.size() * 8);
}

int max_deviation(const Frame& a, const Frame& b) {
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(int(a.pixels[i]) - int(b.pixels[i])));
  return d;
}

// Bytes filling the spread-spectrum capacity of `pixels` at redundancy r without chip sharing.
std::size_t unshared_bytes(std::uint64_t pixels, int r) { return std::size_t(pixels / (kChipsPerBit * r) / 8); }

}  // namespace

TEST_CASE("stego key hex round trip") {
  CHECK(StegoKey::parse_hex("0x1F").seed == 0x1F);
  CHECK(StegoKey::parse_hex("deadBEEF").seed == 0xDEADBEEF);
  CHECK(StegoKey{0xABC}.hex() == "0000000000000abc");
  CHECK(StegoKey::parse_hex(StegoKey{0x0123456789ABCDEF}.hex()).seed == 0x0123456789ABCDEF);
  CHECK_THROWS_AS(StegoKey::parse_hex(""), ValidationError);
  CHECK_THROWS_AS(StegoKey::parse_hex("12345678901234567"), ValidationError);
  CHECK_THROWS_AS(StegoKey::parse_hex("xyz"), ValidationError);
}

TEST_CASE("image-in-image bit arithmetic") {
  Frame cover(1, 1, 182), secret(1, 1, 200);
  const auto stego = embed_image_in_image(cover, secret, 2);
  CHECK(stego.pixels[0] == 183);
  CHECK(extract_image(stego, 2).pixels[0] == 192);
}

TEST_CASE("image-in-image round trips the top bit plane") {
  const auto cover = random_frame(64, 48, 1), secret = random_frame(64, 48, 2);
  for (int n = 1; n <= 4; ++n) {
    const auto stego = embed_image_in_image(cover, secret, n);
    const auto back = extract_image(stego, n);
    const std::uint8_t top = std::uint8_t(0xFF << (8 - n));
    const std::uint8_t low = std::uint8_t((1 << n) - 1);
    for (std::size_t i = 0; i < cover.size(); ++i) {
      REQUIRE(back.pixels[i] == (secret.pixels[i] & top));
      REQUIRE((stego.pixels[i] & ~low & 0xFF) == (cover.pixels[i] & ~low & 0xFF));
    }
    CHECK(max_deviation(stego, cover) <= (1 << n) - 1);
    CHECK(measure_bpp(ImageInImageConfig{n}, 64, 48, 10) == double(n));
  }
  const auto same = embed_image_in_image(cover, cover, 3);
  for (std::size_t i = 0; i < cover.size(); ++i) CHECK((same.pixels[i] ^ cover.pixels[i]) < 8);
}

TEST_CASE("image-in-image rejects bad input") {
  CHECK_THROWS_AS(embed_image_in_image(Frame(4, 4), Frame(4, 5), 2), ValidationError);
  CHECK_THROWS_AS(embed_image_in_image(Frame(4, 4), Frame(4, 4), 0), ValidationError);
  CHECK_THROWS_AS(embed_image_in_image(Frame(4, 4), Frame(4, 4), 5), ValidationError);
  CHECK_THROWS_AS(extract_image(Frame(4, 4), 5), ValidationError);
}

TEST_CASE("lsb matching") {
  const auto cover = random_frame(100, 100, 3);
  CHECK(embed_lsb_matching(cover, 0.0, StegoKey{1}) == cover);

  const auto full = embed_lsb_matching(cover, 1.0, StegoKey{1});
  std::size_t changed = 0;
  for (std::size_t i = 0; i < cover.size(); ++i) changed += full.pixels[i] != cover.pixels[i];
  CHECK(double(changed) / double(cover.size()) == doctest::Approx(0.5).epsilon(0.04));
  CHECK(max_deviation(full, cover) == 1);

  CHECK(embed_lsb_matching(cover, 0.3, StegoKey{9}) == embed_lsb_matching(cover, 0.3, StegoKey{9}));
  CHECK(embed_lsb_matching(cover, 0.3, StegoKey{9}) != embed_lsb_matching(cover, 0.3, StegoKey{10}));
  CHECK(embed_lsb_matching(cover, 0.3, StegoKey{9}, 0) != embed_lsb_matching(cover, 0.3, StegoKey{9}, 1));

  const auto low = embed_lsb_matching(cover, 0.1, StegoKey{4});
  std::size_t touched = 0;
  for (std::size_t i = 0; i < cover.size(); ++i) touched += low.pixels[i] != cover.pixels[i];
  CHECK(touched <= lsb_matching_count(100, 100, 0.1));
  CHECK(lsb_matching_count(100, 100, 0.1) == 1000);
  CHECK(measure_bpp(LsbMatchingConfig{0.1}, 100, 100, 7) == doctest::Approx(0.1));

  CHECK_THROWS_AS(embed_lsb_matching(cover, 1.5, StegoKey{1}), ValidationError);
  CHECK_THROWS_AS(embed_lsb_matching(cover, -0.1, StegoKey{1}), ValidationError);
}

TEST_CASE("lsb matching boundary pixels stay in range") {
  for (std::uint8_t level : {std::uint8_t(0), std::uint8_t(255)}) {
    const Frame cover(50, 50, level);
    const auto stego = embed_lsb_matching(cover, 1.0, StegoKey{5});
    std::size_t changed = 0;
    for (auto p : stego.pixels) {
      if (p != level) {
        ++changed;
        CHECK(int(p) == (level == 0 ? 1 : 254));
      }
    }
    CHECK(changed > 0);
  }
}

TEST_CASE("spread spectrum: empty payload leaves frames unchanged") {
  const auto covers = flat_frames(2, 32, 32, 90);
  SpreadSpectrumConfig cfg;
  cfg.key = StegoKey{3};
  CHECK(embed_spread_spectrum(covers, cfg) == covers);
}

TEST_CASE("spread spectrum: one bit on a flat cover") {
  const auto covers = flat_frames(1, 512, 512);
  SpreadSpectrumConfig cfg;
  cfg.key = StegoKey{11};
  cfg.payload = {0x80};  // first bit 1, the rest 0; chips of different bits rarely collide at this size
  const auto stego = embed_spread_spectrum(covers, cfg);
  std::size_t changed = 0;
  for (auto p : stego[0].pixels) {
    if (p != 128) {
      ++changed;
      CHECK((p == 124 || p == 132));
    }
  }
  CHECK(changed <= std::size_t(8 * cfg.chips()));
  CHECK(changed + 16 >= std::size_t(8 * cfg.chips()));
  const auto back = extract_spread_spectrum(stego, cfg.key, cfg.redundancy, 1);
  CHECK(back.bytes == cfg.payload);
  for (double c : back.confidence) CHECK(c > 0);
}

TEST_CASE("spread spectrum: exact recovery on flat covers") {
  const auto covers = flat_frames(8, 224, 224);
  const std::uint64_t pixels = total_pixels(covers);
  SpreadSpectrumConfig cfg;
  cfg.key = StegoKey{0x5EED};
  cfg.payload = keyed_payload(unshared_bytes(pixels, 2), 77);
  REQUIRE(cfg.payload.size() * 8 >= 1000);
  const auto stego = embed_spread_spectrum(covers, cfg);
  for (std::size_t f = 0; f < covers.size(); ++f) CHECK(max_deviation(stego[f], covers[f]) <= cfg.amplitude);
  const auto back = extract_spread_spectrum(stego, cfg.key, 2, cfg.payload.size());
  CHECK(bit_error_rate(back.bytes, cfg.payload) == 0.0);

  const auto wrong = extract_spread_spectrum(stego, StegoKey{0x5EEE}, 2, cfg.payload.size());
  const double ber = bit_error_rate(wrong.bytes, cfg.payload);
  CHECK(ber == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("spread spectrum: noisy covers, amplitude 8") {
  const auto video = gen_synthetic_video(SyntheticKind::Noise, 224, 224, 10, 0.4, 21);
  const std::uint64_t pixels = total_pixels(video.frames);
  SpreadSpectrumConfig cfg;
  cfg.amplitude = 8;
  cfg.key = StegoKey{0xC0FFEE};
  cfg.payload = keyed_payload(unshared_bytes(pixels, 2), 5);
  REQUIRE(cfg.payload.size() * 8 >= 1000);
  const auto stego = embed_spread_spectrum(video.frames, cfg);
  for (std::size_t f = 0; f < stego.size(); ++f) CHECK(max_deviation(stego[f], video.frames[f]) <= 8);
  const auto back = extract_spread_spectrum(stego, cfg.key, 2, cfg.payload.size());
  const double ber = bit_error_rate(back.bytes, cfg.payload);
  INFO("ber ", ber);
  CHECK(ber < 0.01);
  const double wrong = bit_error_rate(extract_spread_spectrum(stego, StegoKey{1}, 2, cfg.payload.size()).bytes,
                                      cfg.payload);
  CHECK(std::abs(wrong - 0.5) < 0.05);
}

TEST_CASE("spread spectrum: keyed determinism") {
  const auto covers = flat_frames(2, 64, 64, 100);
  SpreadSpectrumConfig cfg;
  cfg.key = StegoKey{8};
  cfg.payload = keyed_payload(8, 1);
  const auto a = embed_spread_spectrum(covers, cfg), b = embed_spread_spectrum(covers, cfg);
  CHECK(a == b);
  SpreadSpectrumEmbedder streaming(cfg, {64 * 64, 64 * 64});
  CHECK(streaming.embed(covers[0], 0) == a[0]);
  CHECK(streaming.embed(covers[1], 1) == a[1]);
  cfg.key = StegoKey{9};
  CHECK(embed_spread_spectrum(covers, cfg) != a);
}

TEST_CASE("spread spectrum: capacity and configuration") {
  CHECK(spread_spectrum_capacity_bits(224 * 224 * 250, 2) == 224ull * 224 * 250 * kMaxChipLoad / 128);
  CHECK(spread_spectrum_capacity_bits(1280, 1) == 320);

  SpreadSpectrumConfig cfg;
  cfg.payload.assign(100, 0xA5);
  CHECK_THROWS_AS(embed_spread_spectrum(flat_frames(1, 16, 16), cfg), ValidationError);
  try {
    embed_spread_spectrum(flat_frames(1, 16, 16), cfg);
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("32 bits") != std::string::npos);
  }
  CHECK_THROWS_AS(extract_spread_spectrum(flat_frames(1, 16, 16), cfg.key, 2, 100), ValidationError);

  cfg.redundancy = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg.redundancy = 2;
  cfg.amplitude = 33;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg.amplitude = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("default spread-spectrum config runs at 0.1 bpp") {
  const std::uint64_t pixels = 224ull * 224 * 250;
  const auto cfg = default_spread_spectrum(pixels, StegoKey{1});
  CHECK(cfg.redundancy == 2);
  CHECK(cfg.amplitude == 4);
  const double bpp = measure_bpp(cfg, 224, 224, 250);
  CHECK(std::abs(bpp - 0.1) <= 0.001);
  CHECK(cfg.payload.size() == pixels / 80);
  CHECK(payload_bytes_for_rate(80, 0.1) == 1);
  CHECK(payload_bytes_for_rate(79, 0.1) == 0);
}
