#include "nrsteg/evaluator.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "nrsteg/error.hpp"

namespace fs = std::filesystem;

namespace nrsteg {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (const auto& row : counts)
    for (auto c : row) n += c;
  return n;
}

std::uint64_t ConfusionMatrix::correct() const {
  std::uint64_t n = 0;
  for (int i = 0; i < kClasses; ++i) n += counts[i][i];
  return n;
}

std::uint64_t ConfusionMatrix::row_sum(int label) const {
  std::uint64_t n = 0;
  for (auto c : counts.at(std::size_t(label))) n += c;
  return n;
}

ConfusionMatrix confusion_matrix(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size())
    throw ValidationError("confusion_matrix: " + std::to_string(predictions.size()) + " predictions for " +
                          std::to_string(labels.size()) + " labels");
  ConfusionMatrix m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= kClasses || predictions[i] < 0 || predictions[i] >= kClasses)
      throw ValidationError("confusion_matrix: class out of range at index " + std::to_string(i));
    ++m.counts[std::size_t(labels[i])][std::size_t(predictions[i])];
  }
  return m;
}

double accuracy(const ConfusionMatrix& m) {
  const auto n = m.total();
  if (n == 0) throw ValidationError("accuracy: empty confusion matrix");
  return double(m.correct()) / double(n);
}

double recall(const ConfusionMatrix& m, int label) {
  const auto n = m.row_sum(label);
  return n ? double(m.counts[std::size_t(label)][std::size_t(label)]) / double(n) : 0.0;
}

std::string format_report(const ConfusionMatrix& m, const std::string& split) {
  std::string title = split;
  if (!title.empty()) title[0] = char(std::toupper(static_cast<unsigned char>(title[0])));
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-28s", (title + " labels \\ Predictions").c_str());
  os << buf;
  for (const char* name : kClassNames) {
    std::snprintf(buf, sizeof buf, "%12s", name);
    os << buf;
  }
  os << "\n";
  for (int i = 0; i < kClasses; ++i) {
    std::snprintf(buf, sizeof buf, "%-28s", kClassNames[std::size_t(i)]);
    os << buf;
    for (int j = 0; j < kClasses; ++j) {
      std::snprintf(buf, sizeof buf, "%12llu", static_cast<unsigned long long>(m.counts[i][j]));
      os << buf;
    }
    os << "\n";
  }
  os << "\n";
  std::snprintf(buf, sizeof buf, "frames: %llu\naccuracy: %.2f%% (%llu wrong predictions)\n",
                static_cast<unsigned long long>(m.total()), 100.0 * accuracy(m),
                static_cast<unsigned long long>(m.wrong()));
  os << buf;
  for (int i = 0; i < kClasses; ++i) {
    std::snprintf(buf, sizeof buf, "recall %s: %.4f\n", kClassNames[std::size_t(i)], recall(m, i));
    os << buf;
  }
  return os.str();
}

namespace {

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError(p.string() + ": cannot open for writing");
  return out;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError(dir.string() + ": cannot create directory");
}

}  // namespace

void write_report(const ConfusionMatrix& m, const std::string& split, const fs::path& dir) {
  make_dir(dir);
  open_out(dir / "report.txt") << format_report(m, split);
  auto cells = open_out(dir / "confusion.tsv");
  cells << "label";
  for (const char* name : kClassNames) cells << "\t" << name;
  cells << "\n";
  for (int i = 0; i < kClasses; ++i) {
    cells << kClassNames[std::size_t(i)];
    for (int j = 0; j < kClasses; ++j) cells << "\t" << m.counts[i][j];
    cells << "\n";
  }
  auto summary = open_out(dir / "summary.tsv");
  char buf[64];
  summary << "metric\tvalue\n";
  summary << "split\t" << split << "\n";
  summary << "frames\t" << m.total() << "\n";
  summary << "correct\t" << m.correct() << "\n";
  std::snprintf(buf, sizeof buf, "%.6f", accuracy(m));
  summary << "accuracy\t" << buf << "\n";
  for (int i = 0; i < kClasses; ++i) {
    std::snprintf(buf, sizeof buf, "%.6f", recall(m, i));
    summary << "recall_" << kClassNames[std::size_t(i)] << "\t" << buf << "\n";
  }
}

Evaluation evaluate(const Model<float>& model, const DatasetManifest& manifest, Split split, int threads) {
  Evaluation e;
  e.records = manifest.split(split);
  if (e.records.empty()) throw ValidationError(std::string("manifest has no ") + split_name(split) + " records");
  const LabelledFrames data = load_records(manifest, e.records, threads);
  e.result = validate(model, data, threads);
  e.matrix = confusion_matrix(e.result.predictions, data.labels);
  return e;
}

// ---------------------------------------------------------------------------

int video_verdict(const std::array<int, kClasses>& votes, const std::array<double, kClasses>& prob_sum) {
  int best = 0;
  for (int c = 1; c < kClasses; ++c)
    if (votes[c] > votes[best] || (votes[c] == votes[best] && prob_sum[c] > prob_sum[best])) best = c;
  return best;
}

VideoVerdict classify_frames(const Model<float>& model, const RawVideo& video, int n_segments, std::uint64_t seed,
                             int threads) {
  video.validate();
  const auto picks = sample_frames(int(video.frames.size()), n_segments, seed);
  Tensor<float> batch(int(picks.size()), 1, kInputSize, kInputSize);
  const Eigen::Index item = batch.shape().item();
  for (std::size_t i = 0; i < picks.size(); ++i)
    batch.values().segment(item * Eigen::Index(i), item) =
        preprocess(video.frames[std::size_t(picks[i].frame_index)]).values();
  const RowMatrix<float> probs = probabilities(infer(model, batch, threads));
  VideoVerdict v;
  for (std::size_t i = 0; i < picks.size(); ++i) {
    FrameVerdict f{picks[i].segment, picks[i].frame_index, argmax_lowest(probs.row(Eigen::Index(i))), {}};
    for (int c = 0; c < kClasses; ++c) {
      f.probs[c] = probs(Eigen::Index(i), c);
      v.prob_sum[c] += f.probs[c];
    }
    ++v.votes[f.predicted];
    v.frames.push_back(f);
  }
  v.verdict = video_verdict(v.votes, v.prob_sum);
  return v;
}

VideoVerdict classify_video(const Model<float>& model, const fs::path& source, int n_segments, std::uint64_t seed,
                            int threads) {
  return classify_frames(model, load_frames(source), n_segments, seed, threads);
}

// ---------------------------------------------------------------------------

FrameStats frame_stats(const Frame& frame, const FrameStatThresholds& t) {
  if (frame.size() == 0) throw ValidationError("frame_stats: empty frame");
  FrameStats s;
  double sum = 0, sq = 0;
  for (auto p : frame.pixels) {
    sum += p;
    sq += double(p) * p;
  }
  const double n = double(frame.size());
  s.mean = sum / n / 255.0;
  s.stddev = std::sqrt(std::max(0.0, sq / n - (sum / n) * (sum / n))) / 255.0;
  double vert = 0, horiz = 0;
  std::size_t nv = 0, nh = 0;
  for (int y = 0; y < frame.height; ++y)
    for (int x = 0; x < frame.width; ++x) {
      if (y + 1 < frame.height) {
        vert += std::abs(int(frame.at(x, y + 1)) - int(frame.at(x, y)));
        ++nv;
      }
      if (x + 1 < frame.width) {
        horiz += std::abs(int(frame.at(x + 1, y)) - int(frame.at(x, y)));
        ++nh;
      }
    }
  const double mv = nv ? vert / double(nv) / 255.0 : 0.0;
  const double mh = nh ? horiz / double(nh) / 255.0 : 0.0;
  s.line_score = mv / (mh + 1e-6);
  s.black = s.mean < t.black_mean && s.stddev < t.black_stddev;
  return s;
}

ErrorReport inspect_errors(const Model<float>& model, const DatasetManifest& manifest, Split split,
                           const fs::path& out, int threads, const FrameStatThresholds& t) {
  make_dir(out);
  auto tsv = open_out(out / "errors.tsv");
  tsv << kErrorColumns << "\n";
  const Evaluation e = evaluate(model, manifest, split, threads);
  ErrorReport report;
  for (std::size_t i = 0; i < e.records.size(); ++i) {
    const int pred = e.result.predictions[i];
    const ManifestRecord& r = e.records[i];
    if (pred == r.label) continue;
    ErrorEntry entry;
    entry.record = r;
    entry.predicted = pred;
    for (int c = 0; c < kClasses; ++c) entry.probs[c] = e.result.probs(Eigen::Index(i), c);
    const Frame frame = read_y8v_frame(manifest.resolve(r), std::uint32_t(r.frame_index));
    entry.stats = frame_stats(frame, t);
    char name[64];
    std::snprintf(name, sizeof name, "err_%04zu_c%05d_f%04d.pgm", report.entries.size(), r.clip_id, r.frame_index);
    entry.raster = name;
    write_pgm(frame, out / name);
    char line[256];
    std::snprintf(line, sizeof line, "%s\t%d\t%d\t%d\t%d\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\t%.4f\t%d\n", name, r.clip_id,
                  r.frame_index, r.label, pred, entry.probs[0], entry.probs[1], entry.probs[2], entry.stats.mean,
                  entry.stats.stddev, entry.stats.line_score, entry.stats.black ? 1 : 0);
    tsv << line;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace nrsteg
