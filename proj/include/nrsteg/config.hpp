#pragma once

// Flat key=value run configuration ('#' starts a comment) covering the
// dataset and training settings. Unknown keys are rejected.

#include <filesystem>
#include <string>
#include <vector>

#include "nrsteg/dataset.hpp"
#include "nrsteg/trainer.hpp"

namespace nrsteg {

struct RunConfig {
  DatasetConfig dataset;
  TrainConfig train;

  // Applies one setting; `seed` sets both the dataset and training seed.
  void set(const std::string& key, const std::string& value);
  void validate() const;

  static RunConfig parse(const std::string& text, const std::string& origin = "<config>");
  static RunConfig load(const std::filesystem::path& path);
  static const std::vector<std::string>& keys();
};

}  // namespace nrsteg
