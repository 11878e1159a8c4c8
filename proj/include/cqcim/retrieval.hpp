#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cqcim/baselines.hpp"
#include "cqcim/cimsim.hpp"
#include "cqcim/device.hpp"
#include "cqcim/numkit.hpp"

namespace cqcim {

/// Relevance judgments by row index: query -> (doc -> grade >= 1).
struct Qrels {
  std::map<std::size_t, std::map<std::size_t, int>> judgments;

  void add(std::size_t query, std::size_t doc, int grade);
  std::size_t queries() const noexcept { return judgments.size(); }
  /// Throws InputError if any doc index is >= `documents`.
  void validate(std::size_t documents) const;
};

struct Hit {
  std::size_t doc = 0;
  double score = 0.0;

  friend bool operator==(const Hit&, const Hit&) = default;
};

struct RunResult {
  std::string method;
  std::string precision;
  std::size_t dim = 0;
  std::string device;
  /// One ranked list per query, ordered by (score desc, doc asc).
  std::vector<std::vector<Hit>> ranked;
};

/// Top-k of each row of a Q x N score matrix. k > N is clamped with a warning.
RunResult rank_scores(const Matrix& scores, std::size_t k);

/// Brute-force maximum-inner-product search.
RunResult exact_mips(const Matrix& queries, const Matrix& corpus, std::size_t k);

struct MetricSummary {
  double mean = 0.0;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;  ///< queries without judgments
};

/// Mean of |relevant in top-k| / |relevant|.
MetricSummary recall_at_k(const RunResult& run, const Qrels& qrels, std::size_t k);
/// Graded nDCG with gain = grade and discount log2(rank + 1).
MetricSummary ndcg_at_k(const RunResult& run, const Qrels& qrels, std::size_t k);

/// Tab-separated `query_id doc_id grade` lines. Ids are resolved through the
/// given id tables; an empty table means ids are row numbers.
Qrels load_qrels(const std::filesystem::path& path, const std::vector<std::string>& query_ids,
                 const std::vector<std::string>& doc_ids);

// ---------------------------------------------------------------------------
// Evaluation grid

/// PQ-coded documents scored asymmetrically against float queries.
struct PqCorpus {
  PqCodebook codebook;
  PqCodes codes;
};

/// One method/precision/dimension cell. `corpus` holds std::monostate when
/// the artifact was not produced, which marks the cell skipped.
struct GridArm {
  std::string method;
  std::string precision;
  std::size_t dim = 0;
  std::variant<std::monostate, Matrix, QuantizedCorpus, PqCorpus> corpus;
  Matrix queries;
};

/// A device column. No profile means ideal (noise-free, exact) scoring.
struct DeviceSetting {
  std::string label = "ideal";
  std::optional<DeviceProfile> profile;
};

enum class FlipMode { per_run, per_query };

struct GridOptions {
  std::size_t recall_k = 5;
  std::size_t ndcg_k = 10;
  double noise_scale = 1.0;       ///< scales sigma_v for the read-out flips
  double cell_noise_scale = 0.0;  ///< extra programming variation on the crossbar
  ArraySpec array;
  FlipMode flips = FlipMode::per_run;
  /// Snap each query onto the corpus level set (after scaling to its max |level|).
  bool quantize_query = false;
  std::uint64_t seed = 0;
};

struct GridRow {
  std::string method;
  std::string precision;
  std::size_t dim = 0;
  std::string device;
  bool skipped = false;
  std::string reason;
  MetricSummary recall;
  MetricSummary ndcg;
};

/// Evaluates every (arm, device) pair. Quantized arms on a non-ideal device
/// are flipped through the device transition matrix and scored on a
/// simulated crossbar; float and PQ arms only run on the ideal device.
std::vector<GridRow> run_grid(const std::vector<GridArm>& arms,
                              const std::vector<DeviceSetting>& devices, const Qrels& qrels,
                              const GridOptions& opts);

/// Scores of one arm on one device (Q x N).
Matrix score_arm(const GridArm& arm, const DeviceSetting& device, const GridOptions& opts,
                 Rng& rng);

/// One JSON object per row.
std::string grid_to_jsonl(const std::vector<GridRow>& rows, const GridOptions& opts);
/// Aligned text table.
std::string grid_report(const std::vector<GridRow>& rows, const GridOptions& opts);

}  // namespace cqcim
