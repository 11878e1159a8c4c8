#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "cqcim/shaping.hpp"
#include "cqcim/training.hpp"

namespace cqcim {

/// Everything `train` reads from its JSON config. Relative paths are
/// resolved against the config file's directory.
struct TrainSettings {
  std::filesystem::path embeddings;
  std::optional<std::filesystem::path> paired_views;
  std::filesystem::path out = "model.cqck";
  std::optional<std::filesystem::path> loss_curve;  ///< defaults to <out>.losses.csv

  std::size_t dim = 128;
  Precision precision = Precision::uniform_2bit;
  bool learned_quantizer = true;
  InitMode init = InitMode::pca;
  std::string device = "D-2";  ///< preset name or profile JSON path
  TrainConfig train;
};

/// Parses a config document. Unknown keys, wrong types and malformed JSON
/// raise UsageError (JSON syntax errors carry the line and column).
TrainSettings parse_train_settings(std::string_view json_text,
                                   const std::filesystem::path& base_dir = {});
TrainSettings load_train_settings(const std::filesystem::path& path);

/// Canonical JSON of the hyperparameters (no file paths).
std::string hyperparameter_json(const TrainSettings& s);

}  // namespace cqcim
