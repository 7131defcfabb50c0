#pragma once

// Confusion-matrix evaluation, whole-video verdicts and diagnostics for
// misclassified frames.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nrsteg/dataset.hpp"
#include "nrsteg/model.hpp"
#include "nrsteg/trainer.hpp"

namespace nrsteg {

// Rows are true classes, columns predictions.
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kClasses>, kClasses> counts{};

  std::uint64_t total() const;
  std::uint64_t correct() const;
  std::uint64_t row_sum(int label) const;
  std::uint64_t wrong() const { return total() - correct(); }
};

ConfusionMatrix confusion_matrix(const std::vector<int>& predictions, const std::vector<int>& labels);
double accuracy(const ConfusionMatrix& m);
// Fraction of class `label` predicted correctly; 0 when the class is absent.
double recall(const ConfusionMatrix& m, int label);

/// Human-readable table with one row per true class, followed by the accuracy line.
std::string format_report(const ConfusionMatrix& m, const std::string& split);

// report.txt, confusion.tsv and summary.tsv inside `dir`.
void write_report(const ConfusionMatrix& m, const std::string& split, const std::filesystem::path& dir);

struct Evaluation {
  ConfusionMatrix matrix;
  std::vector<ManifestRecord> records;
  ValidationResult result;
};

Evaluation evaluate(const Model<float>& model, const DatasetManifest& manifest, Split split, int threads = 1);

struct FrameVerdict {
  int segment = 0;
  int frame_index = 0;
  int predicted = 0;
  std::array<float, kClasses> probs{};
};

struct VideoVerdict {
  std::vector<FrameVerdict> frames;
  std::array<int, kClasses> votes{};
  std::array<double, kClasses> prob_sum{};
  int verdict = 0;
};

/// Majority class; ties go to the highest summed probability, then the lowest index.
int video_verdict(const std::array<int, kClasses>& votes, const std::array<double, kClasses>& prob_sum);

VideoVerdict classify_frames(const Model<float>& model, const RawVideo& video, int n_segments, std::uint64_t seed,
                             int threads = 1);
VideoVerdict classify_video(const Model<float>& model, const std::filesystem::path& source, int n_segments = 20,
                            std::uint64_t seed = 0, int threads = 1);

struct FrameStatThresholds {
  double black_mean = 8.0 / 255.0;
  double black_stddev = 2.0 / 255.0;
};

// Intensities on [0,1].
struct FrameStats {
  double mean = 0;
  double stddev = 0;
  double line_score = 0;  // mean |vertical difference| / (mean |horizontal difference| + 1e-6)
  bool black = false;
};

FrameStats frame_stats(const Frame& frame, const FrameStatThresholds& t = {});

struct ErrorEntry {
  ManifestRecord record;
  int predicted = 0;
  std::array<float, kClasses> probs{};
  FrameStats stats;
  std::string raster;  // file name inside the report directory
};

struct ErrorReport {
  std::vector<ErrorEntry> entries;
};

inline constexpr const char* kErrorColumns =
    "raster\tclip_id\tframe_index\tlabel\tpredicted\tp_regular\tp_deep\tp_msu\tmean\tstddev\tline_score\tblack";

/// Writes every misclassified frame of the split as a PGM plus errors.tsv.
ErrorReport inspect_errors(const Model<float>& model, const DatasetManifest& manifest, Split split,
                           const std::filesystem::path& out, int threads = 1, const FrameStatThresholds& t = {});

}  // namespace nrsteg
