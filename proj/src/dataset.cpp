#include "nrsteg/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "nrsteg/error.hpp"
#include "nrsteg/model.hpp"
#include "nrsteg/parallel.hpp"
#include "nrsteg/rng.hpp"

namespace fs = std::filesystem;

namespace nrsteg {

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ValidationError("unknown split '" + s + "' (expected train, val or test)");
}

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

SplitSizes split_sizes(int k) {
  if (k < 0) throw ValidationError("k must be nonnegative");
  const double total = kReferenceSplit[0] + kReferenceSplit[1] + kReferenceSplit[2];
  const int a = int(std::lround(k * kReferenceSplit[0] / total));
  const int b = int(std::lround(k * (kReferenceSplit[0] + kReferenceSplit[1]) / total));
  return {a, b - a, k - b};
}

void DatasetConfig::validate() const {
  if (k < 3 || k % 3 != 0) throw ValidationError("k must be a positive multiple of 3, got " + std::to_string(k));
  if (!(clip_seconds > 0)) throw ValidationError("clip_seconds must be positive");
  if (segments_train < 1 || segments_eval < 1) throw ValidationError("segment counts must be positive");
  if (image_bits < 1 || image_bits > 4) throw ValidationError("image_bits must be in [1,4]");
  SpreadSpectrumConfig ss;
  ss.redundancy = ss_redundancy;
  ss.amplitude = ss_amplitude;
  ss.validate();
  const double max_bpp = double(kMaxChipLoad) / double(ss.chips());
  if (!(ss_bpp > 0 && ss_bpp <= max_bpp))
    throw ValidationError("ss_bpp must be in (0, " + std::to_string(max_bpp) + "] for redundancy " +
                          std::to_string(ss_redundancy));
  if (fps_num == 0 || fps_den == 0) throw ValidationError("fps must be positive");
}

// ---------------------------------------------------------------------------

std::vector<std::pair<int, int>> segment_bounds(int frame_count, int n_segments) {
  if (n_segments < 1) throw ValidationError("n_segments must be positive");
  if (n_segments > frame_count)
    throw ValidationError("cannot split " + std::to_string(frame_count) + " frames into " +
                          std::to_string(n_segments) + " segments");
  const int base = frame_count / n_segments, extra = frame_count % n_segments;
  std::vector<std::pair<int, int>> out;
  int begin = 0;
  for (int i = 0; i < n_segments; ++i) {
    const int len = base + (i < extra ? 1 : 0);
    out.emplace_back(begin, begin + len);
    begin += len;
  }
  return out;
}

std::vector<SampledFrame> sample_frames(int frame_count, int n_segments, std::uint64_t seed) {
  SplitMix64 g(seed);
  std::vector<SampledFrame> picks;
  int s = 0;
  for (auto [b, e] : segment_bounds(frame_count, n_segments))
    picks.push_back({s++, b + int(g.below(std::uint64_t(e - b)))});
  return picks;
}

// ---------------------------------------------------------------------------

namespace {

template <typename Out>
void bilinear(const Frame& src, int width, int height, Out&& out) {
  const double sx = double(src.width) / width, sy = double(src.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(src.height - 1));
    const int y0 = int(fy), y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(src.width - 1));
      const int x0 = int(fx), x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      const double top = src.at(x0, y0) * (1 - wx) + src.at(x1, y0) * wx;
      const double bot = src.at(x0, y1) * (1 - wx) + src.at(x1, y1) * wx;
      out(x, y, top * (1 - wy) + bot * wy);
    }
  }
}

}  // namespace

Frame resize_bilinear(const Frame& src, int width, int height) {
  if (src.width < 1 || src.height < 1 || width < 1 || height < 1)
    throw ValidationError("resize: dims must be positive");
  if (src.width == width && src.height == height) return src;
  Frame out(width, height);
  bilinear(src, width, height, [&](int x, int y, double v) { out.at(x, y) = std::uint8_t(std::lround(v)); });
  return out;
}

Tensor<float> preprocess(const Frame& frame) {
  if (frame.width < 8 || frame.height < 8)
    throw ValidationError("preprocess: frame " + std::to_string(frame.width) + "x" + std::to_string(frame.height) +
                          " is below 8x8");
  Tensor<float> t(1, 1, kInputSize, kInputSize);
  bilinear(frame, kInputSize, kInputSize,
           [&](int x, int y, double v) { t(0, 0, y, x) = float(v / 255.0); });
  return t;
}

Tensor<float> preprocess(const Raster& raster) { return preprocess(to_gray(raster)); }

// ---------------------------------------------------------------------------

std::vector<ManifestRecord> DatasetManifest::split(Split s) const {
  std::vector<ManifestRecord> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(r);
  return out;
}

std::string DatasetManifest::encode() const {
  std::ostringstream os;
  for (const auto& [k, v] : header) os << "# " << k << "=" << v << "\n";
  os << kManifestColumns << "\n";
  for (const auto& r : records)
    os << r.path << "\t" << r.clip_id << "\t" << r.segment << "\t" << r.frame_index << "\t" << r.label << "\t"
       << split_name(r.split) << "\n";
  return os.str();
}

void DatasetManifest::write(const fs::path& file) const {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError(file.string() + ": cannot open for writing");
  out << encode();
  if (!out) throw IoError(file.string() + ": write failed");
}

namespace {

int parse_int(const std::string& s, const fs::path& file, std::size_t line) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw IoError(file.string() + ":" + std::to_string(line) + ": bad integer '" + s + "'");
  return v;
}

}  // namespace

DatasetManifest DatasetManifest::read(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError(file.string() + ": cannot open manifest");
  DatasetManifest m;
  m.base = file.parent_path();
  std::string line;
  std::size_t n = 0;
  bool columns = false;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.starts_with("#")) {
      const auto body = line.substr(line.starts_with("# ") ? 2 : 1);
      const auto eq = body.find('=');
      if (eq == std::string::npos) continue;
      m.header.emplace_back(body.substr(0, eq), body.substr(eq + 1));
      continue;
    }
    if (!columns) {
      if (line != kManifestColumns) throw IoError(file.string() + ":" + std::to_string(n) + ": bad column header");
      columns = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, '\t');) f.push_back(cell);
    if (f.size() != 6)
      throw IoError(file.string() + ":" + std::to_string(n) + ": expected 6 fields, got " + std::to_string(f.size()));
    ManifestRecord r;
    r.path = f[0];
    r.clip_id = parse_int(f[1], file, n);
    r.segment = parse_int(f[2], file, n);
    r.frame_index = parse_int(f[3], file, n);
    r.label = parse_int(f[4], file, n);
    if (r.label < 0 || r.label >= kClasses)
      throw IoError(file.string() + ":" + std::to_string(n) + ": label out of range");
    try {
      r.split = parse_split(f[5]);
    } catch (const ValidationError& e) {
      throw IoError(file.string() + ":" + std::to_string(n) + ": " + e.what());
    }
    m.records.push_back(std::move(r));
  }
  if (!columns) throw IoError(file.string() + ": missing column header");
  return m;
}

Tensor<float> load_record(const DatasetManifest& m, const ManifestRecord& r) {
  if (r.frame_index < 0) throw IoError(m.resolve(r).string() + ": negative frame index");
  return preprocess(read_y8v_frame(m.resolve(r), std::uint32_t(r.frame_index)));
}

// ---------------------------------------------------------------------------

std::vector<fs::path> list_videos(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + ": not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() || (e.is_regular_file() && e.path().extension() == ".y8v")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

int required_source_clips(int k) { return k / 3 * 4; }

namespace {

struct SourceClip {
  std::size_t video = 0;
  std::uint32_t first = 0;
  std::uint32_t count = 0;
  int width = 0;
  int height = 0;
};

struct SourceSet {
  std::vector<fs::path> paths;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> fps;
  std::vector<SourceClip> clips;

  RawVideo load(const SourceClip& c) const {
    const fs::path& p = paths[c.video];
    RawVideo v;
    if (fs::is_directory(p)) {
      RawVideo all = load_frames(p, fps[c.video].first, fps[c.video].second);
      v = all;
      v.frames.assign(all.frames.begin() + c.first, all.frames.begin() + c.first + c.count);
    } else {
      v = read_y8v_range(p, c.first, c.count);
    }
    return v;
  }
};

SourceSet index_sources(const std::vector<fs::path>& videos, const DatasetConfig& cfg) {
  SourceSet s;
  for (const auto& p : videos) {
    std::uint32_t frames, fn, fd;
    int w, h;
    if (fs::is_directory(p)) {
      const RawVideo v = load_frames(p, cfg.fps_num, cfg.fps_den);
      frames = std::uint32_t(v.frames.size());
      w = v.width;
      h = v.height;
      fn = v.fps_num;
      fd = v.fps_den;
    } else {
      const Y8vHeader hd = read_y8v_header(p);
      frames = hd.frame_count;
      w = int(hd.width);
      h = int(hd.height);
      fn = hd.fps_num;
      fd = hd.fps_den;
    }
    const auto per_clip = std::uint32_t(std::lround(cfg.clip_seconds * double(fn) / double(fd)));
    if (per_clip == 0) throw ValidationError(p.string() + ": clip_seconds shorter than one frame");
    const std::size_t idx = s.paths.size();
    s.paths.push_back(p);
    s.fps.emplace_back(fn, fd);
    for (std::uint32_t start = 0; start + per_clip <= frames; start += per_clip) s.clips.push_back({idx, start, per_clip, w, h});
  }
  return s;
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <typename T>
void keyed_shuffle(std::vector<T>& v, std::uint64_t seed) {
  SplitMix64 g(seed);
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[std::size_t(g.below(i))]);
}

struct OutputClip {
  int label = 0;
  std::vector<std::size_t> sources;  // cover (and secret for label 1)
};

}  // namespace

DatasetManifest build_dataset(const std::vector<fs::path>& videos, const DatasetConfig& cfg, const fs::path& out,
                              int threads) {
  cfg.validate();
  const SourceSet src = index_sources(videos, cfg);
  const int per_class = cfg.k / 3;
  const int need = required_source_clips(cfg.k);
  if (int(src.clips.size()) < need)
    throw ValidationError("build_dataset: k=" + std::to_string(cfg.k) + " needs " + std::to_string(need) +
                          " source clips, found " + std::to_string(src.clips.size()));

  std::vector<std::size_t> pool(src.clips.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  keyed_shuffle(pool, derive_seed(cfg.seed, 0xC11B));

  std::vector<OutputClip> clips;
  std::size_t next = 0;
  for (int i = 0; i < per_class; ++i) clips.push_back({0, {pool[next++]}});
  for (int i = 0; i < per_class; ++i, next += 2) clips.push_back({1, {pool[next], pool[next + 1]}});
  for (int i = 0; i < per_class; ++i) clips.push_back({2, {pool[next++]}});

  // The spread-spectrum class is one concatenated sequence carrying a single payload.
  std::vector<std::uint64_t> ss_pixels;
  std::vector<std::size_t> ss_offset;
  for (const auto& c : clips) {
    if (c.label != 2) continue;
    const SourceClip& sc = src.clips[c.sources[0]];
    ss_offset.push_back(ss_pixels.size());
    for (std::uint32_t f = 0; f < sc.count; ++f) ss_pixels.push_back(std::uint64_t(sc.width) * sc.height);
  }
  const std::uint64_t ss_total = std::accumulate(ss_pixels.begin(), ss_pixels.end(), std::uint64_t(0));
  SpreadSpectrumConfig ss;
  ss.redundancy = cfg.ss_redundancy;
  ss.amplitude = cfg.ss_amplitude;
  ss.key = {derive_seed(cfg.seed, 0x55)};
  ss.payload = keyed_payload(payload_bytes_for_rate(ss_total, cfg.ss_bpp), derive_seed(cfg.seed, 0x10AE));
  const SpreadSpectrumEmbedder embedder(ss, ss_pixels);

  std::error_code ec;
  fs::create_directories(out / "clips", ec);
  if (ec) throw IoError((out / "clips").string() + ": " + ec.message());

  auto clip_path = [](int id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "clips/c%05d.y8v", id);
    return std::string(buf);
  };

  parallel_for(int(clips.size()), threads, [&](int id) {
    const OutputClip& c = clips[std::size_t(id)];
    RawVideo v = src.load(src.clips[c.sources[0]]);
    if (c.label == 1) {
      const RawVideo secret = src.load(src.clips[c.sources[1]]);
      for (std::size_t i = 0; i < v.frames.size(); ++i) {
        const Frame s = resize_bilinear(secret.frames[i % secret.frames.size()], v.width, v.height);
        v.frames[i] = embed_image_in_image(v.frames[i], s, cfg.image_bits);
      }
    } else if (c.label == 2) {
      const std::size_t base = ss_offset[std::size_t(id - 2 * per_class)];
      for (std::size_t i = 0; i < v.frames.size(); ++i) v.frames[i] = embedder.embed(v.frames[i], base + i);
    }
    write_y8v(v, out / clip_path(id));
  });

  std::vector<int> order(clips.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  keyed_shuffle(order, derive_seed(cfg.seed, 0x5B17));
  const SplitSizes sizes = split_sizes(cfg.k);
  std::vector<Split> split_of(clips.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    split_of[std::size_t(order[i])] = int(i) < sizes.train                ? Split::Train
                                      : int(i) < sizes.train + sizes.val ? Split::Val
                                                                         : Split::Test;

  DatasetManifest m;
  m.base = out;
  m.header = {{"k", std::to_string(cfg.k)},
              {"seed", std::to_string(cfg.seed)},
              {"clip_seconds", format_double(cfg.clip_seconds)},
              {"segments_train", std::to_string(cfg.segments_train)},
              {"segments_eval", std::to_string(cfg.segments_eval)},
              {"train_clips", std::to_string(sizes.train)},
              {"val_clips", std::to_string(sizes.val)},
              {"test_clips", std::to_string(sizes.test)},
              {"source_clips", std::to_string(src.clips.size())},
              {"image_bits", std::to_string(cfg.image_bits)},
              {"ss_redundancy", std::to_string(cfg.ss_redundancy)},
              {"ss_amplitude", std::to_string(cfg.ss_amplitude)},
              {"ss_bpp", format_double(cfg.ss_bpp)},
              {"ss_payload_bytes", std::to_string(ss.payload.size())},
              {"ss_key", ss.key.hex()}};
  const std::uint64_t sample_seed = derive_seed(cfg.seed, 0x5A3);
  for (std::size_t id = 0; id < clips.size(); ++id) {
    const Split sp = split_of[id];
    const int segments = sp == Split::Train ? cfg.segments_train : cfg.segments_eval;
    const int frames = int(src.clips[clips[id].sources[0]].count);
    for (const auto& s : sample_frames(frames, segments, derive_seed(sample_seed, id)))
      m.records.push_back({clip_path(int(id)), int(id), s.segment, s.frame_index, clips[id].label, sp});
  }
  m.write(out / "manifest.tsv");
  return m;
}

}  // namespace nrsteg
