#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cqcim/device.hpp"

namespace cqcim::cli {

struct TrainArgs {
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> dim;
  std::optional<std::string> precision;
  std::optional<std::string> device;
  std::optional<std::filesystem::path> out;
};

struct ShapeArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path embeddings;
  std::filesystem::path out;
  std::optional<std::filesystem::path> queries;
  std::optional<std::filesystem::path> queries_out;
};

struct EvalArgs {
  std::vector<std::filesystem::path> corpora;
  std::vector<std::filesystem::path> queries;
  std::vector<std::string> methods;
  std::filesystem::path qrels;
  std::vector<std::string> devices{"ideal"};
  std::string flips = "per-run";
  double noise_scale = 1.0;
  double cell_noise = 0.0;
  double adc_noise = 0.0;
  std::size_t rows = 128;
  std::size_t cols = 128;
  std::size_t recall_k = 5;
  std::size_t ndcg_k = 10;
  bool quantize_query = false;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> out;
};

struct BaselineArgs {
  std::string kind;
  std::filesystem::path embeddings;
  std::filesystem::path out;
  std::optional<std::size_t> dim;
  std::optional<std::string> precision;
  std::optional<std::filesystem::path> queries;
  std::optional<std::filesystem::path> queries_out;
  std::size_t pq_m = 8;
  std::size_t pq_k = 256;
  std::uint64_t seed = 0;
};

struct SynthArgs {
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  std::size_t documents = 1024;
  std::size_t queries = 64;
  std::size_t dim = 384;
  std::size_t clusters = 8;
};

void cmd_train(const TrainArgs& args, std::ostream& out);
void cmd_shape(const ShapeArgs& args, std::ostream& out);
void cmd_eval(const EvalArgs& args, std::ostream& out);
void cmd_baseline(const BaselineArgs& args, std::ostream& out);
void cmd_profile_list(std::ostream& out);
void cmd_profile_show(const std::string& name, std::ostream& out);
void cmd_synth(const SynthArgs& args, std::ostream& out);

/// "ideal" yields no profile; otherwise a preset name or a profile JSON path.
std::optional<DeviceProfile> resolve_device(const std::string& name);

/// Parses the command line and dispatches. Returns the process exit code:
/// 0 success, 1 numeric/internal failure, 2 usage, 3 I/O, 4 bad input data.
int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace cqcim::cli
