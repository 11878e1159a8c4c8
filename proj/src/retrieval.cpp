#include "cqcim/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include "cqcim/errors.hpp"
#include "json.hpp"

namespace cqcim {

void Qrels::add(std::size_t query, std::size_t doc, int grade) {
  if (grade < 1) throw InputError("qrels: grade must be >= 1");
  judgments[query][doc] = grade;
}

void Qrels::validate(std::size_t documents) const {
  for (const auto& [q, docs] : judgments)
    for (const auto& [d, grade] : docs)
      if (d >= documents) {
        std::ostringstream msg;
        msg << "qrels: query " << q << " judges doc " << d << " but the corpus has " << documents
            << " documents";
        throw InputError(msg.str());
      }
}

RunResult rank_scores(const Matrix& scores, std::size_t k) {
  const std::size_t n = scores.cols();
  if (k > n) {
    std::ostringstream msg;
    msg << "k = " << k << " exceeds corpus size " << n << "; clamped";
    warn(msg.str());
    k = n;
  }
  RunResult run;
  run.ranked.resize(scores.rows());
  const auto q_count = static_cast<std::ptrdiff_t>(scores.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t qq = 0; qq < q_count; ++qq) {
    const auto q = static_cast<std::size_t>(qq);
    const auto row = scores.row(q);
    std::vector<Hit> hits(n);
    for (std::size_t d = 0; d < n; ++d) hits[d] = {d, row[d]};
    auto better = [](const Hit& a, const Hit& b) {
      return a.score > b.score || (a.score == b.score && a.doc < b.doc);
    };
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(),
                      better);
    hits.resize(k);
    run.ranked[q] = std::move(hits);
  }
  return run;
}

RunResult exact_mips(const Matrix& queries, const Matrix& corpus, std::size_t k) {
  if (queries.cols() != corpus.cols()) {
    std::ostringstream msg;
    msg << "exact_mips: queries have " << queries.cols() << " dims, corpus has " << corpus.cols();
    throw ShapeError(msg.str());
  }
  return rank_scores(matmul_nt(queries, corpus), k);
}

MetricSummary recall_at_k(const RunResult& run, const Qrels& qrels, std::size_t k) {
  if (k == 0) throw ParameterError("recall_at_k: k must be >= 1");
  MetricSummary out;
  double total = 0.0;
  for (std::size_t q = 0; q < run.ranked.size(); ++q) {
    const auto it = qrels.judgments.find(q);
    if (it == qrels.judgments.end() || it->second.empty()) {
      ++out.skipped;
      continue;
    }
    const auto& rel = it->second;
    const auto& hits = run.ranked[q];
    std::size_t found = 0;
    for (std::size_t r = 0; r < std::min(k, hits.size()); ++r) found += rel.count(hits[r].doc);
    total += static_cast<double>(found) / static_cast<double>(rel.size());
    ++out.evaluated;
  }
  if (out.evaluated > 0) out.mean = total / static_cast<double>(out.evaluated);
  return out;
}

MetricSummary ndcg_at_k(const RunResult& run, const Qrels& qrels, std::size_t k) {
  if (k == 0) throw ParameterError("ndcg_at_k: k must be >= 1");
  MetricSummary out;
  double total = 0.0;
  for (std::size_t q = 0; q < run.ranked.size(); ++q) {
    const auto it = qrels.judgments.find(q);
    if (it == qrels.judgments.end() || it->second.empty()) {
      ++out.skipped;
      continue;
    }
    const auto& rel = it->second;
    const auto& hits = run.ranked[q];
    double dcg = 0.0;
    for (std::size_t r = 0; r < std::min(k, hits.size()); ++r) {
      const auto g = rel.find(hits[r].doc);
      if (g != rel.end()) dcg += g->second / std::log2(static_cast<double>(r) + 2.0);
    }
    std::vector<int> grades;
    for (const auto& [doc, grade] : rel) grades.push_back(grade);
    std::sort(grades.begin(), grades.end(), std::greater<>());
    double ideal = 0.0;
    for (std::size_t r = 0; r < std::min(k, grades.size()); ++r)
      ideal += grades[r] / std::log2(static_cast<double>(r) + 2.0);
    total += dcg / ideal;
    ++out.evaluated;
  }
  if (out.evaluated > 0) out.mean = total / static_cast<double>(out.evaluated);
  return out;
}

Qrels load_qrels(const std::filesystem::path& path, const std::vector<std::string>& query_ids,
                 const std::vector<std::string>& doc_ids) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open qrels file " + path.string());

  auto index_of = [](const std::vector<std::string>& ids) {
    std::unordered_map<std::string, std::size_t> m;
    for (std::size_t i = 0; i < ids.size(); ++i) m.emplace(ids[i], i);
    return m;
  };
  const auto qmap = index_of(query_ids);
  const auto dmap = index_of(doc_ids);
  auto resolve = [&](const std::string& id, const std::vector<std::string>& table,
                     const std::unordered_map<std::string, std::size_t>& map, std::size_t line,
                     const char* what) -> std::optional<std::size_t> {
    if (!table.empty()) {
      const auto it = map.find(id);
      if (it == map.end()) return std::nullopt;
      return it->second;
    }
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(id, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != id.size() || id.empty())
      throw InputError(path.string() + ":" + std::to_string(line) + ": " + what + " id '" + id +
                       "' is not a row number and the file has no id table");
    return static_cast<std::size_t>(v);
  };

  Qrels qrels;
  std::string text;
  std::size_t line = 0, unknown = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.empty() || text[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(text);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 3)
      throw InputError(path.string() + ":" + std::to_string(line) +
                       ": expected query_id<TAB>doc_id<TAB>grade");
    int grade = 0;
    try {
      grade = std::stoi(fields[2]);
    } catch (const std::exception&) {
      throw InputError(path.string() + ":" + std::to_string(line) + ": bad grade '" + fields[2] +
                       "'");
    }
    if (grade < 1) continue;
    const auto q = resolve(fields[0], query_ids, qmap, line, "query");
    const auto d = resolve(fields[1], doc_ids, dmap, line, "doc");
    if (!q || !d) {
      ++unknown;
      continue;
    }
    qrels.add(*q, *d, grade);
  }
  if (unknown > 0) warn(std::to_string(unknown) + " qrels lines reference unknown ids; ignored");
  return qrels;
}

// ---------------------------------------------------------------------------
// Grid

namespace {

Matrix snap_queries(const Matrix& queries, const std::vector<double>& levels) {
  double level_max = 0.0;
  for (double v : levels) level_max = std::max(level_max, std::abs(v));
  Matrix out(queries.rows(), queries.cols());
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    double qmax = 0.0;
    for (double v : queries.row(q)) qmax = std::max(qmax, std::abs(v));
    const double s = qmax > 0.0 ? level_max / qmax : 0.0;
    for (std::size_t j = 0; j < queries.cols(); ++j) {
      const double x = queries(q, j) * s;
      double best = levels[0];
      for (double v : levels)
        if (std::abs(v - x) < std::abs(best - x)) best = v;
      out(q, j) = best;
    }
  }
  return out;
}

}  // namespace

Matrix score_arm(const GridArm& arm, const DeviceSetting& device, const GridOptions& opts,
                 Rng& rng) {
  if (const auto* m = std::get_if<Matrix>(&arm.corpus)) {
    if (arm.queries.cols() != m->cols()) throw ShapeError("grid: query/corpus dimension mismatch");
    return matmul_nt(arm.queries, *m);
  }
  if (const auto* pq = std::get_if<PqCorpus>(&arm.corpus))
    return pq_score(pq->codebook, pq->codes, arm.queries);

  const auto& qc = std::get<QuantizedCorpus>(arm.corpus);
  if (arm.queries.cols() != qc.dim()) throw ShapeError("grid: query/corpus dimension mismatch");
  const Matrix queries = opts.quantize_query ? snap_queries(arm.queries, qc.dequant) : arm.queries;
  if (!device.profile) return matmul_nt(queries, qc.dequantize());

  const TransitionMatrix tm = derive_transition_matrix(*device.profile, opts.noise_scale);
  if (opts.flips == FlipMode::per_run) {
    const QuantizedCorpus flipped = apply_flips(qc, tm, rng);
    const Crossbar xbar(flipped, *device.profile, opts.array, opts.cell_noise_scale, rng);
    return xbar.scores(queries, rng);
  }
  Matrix out(queries.rows(), qc.count());
  const std::uint64_t base = rng.next_u64();
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    Rng qrng(base, q);
    const QuantizedCorpus flipped = apply_flips(qc, tm, qrng);
    const Crossbar xbar(flipped, *device.profile, opts.array, opts.cell_noise_scale, qrng);
    const auto s = xbar.scores(queries.row(q), qrng);
    std::copy(s.begin(), s.end(), out.row(q).begin());
  }
  return out;
}

std::vector<GridRow> run_grid(const std::vector<GridArm>& arms,
                              const std::vector<DeviceSetting>& devices, const Qrels& qrels,
                              const GridOptions& opts) {
  if (opts.recall_k == 0 || opts.ndcg_k == 0) throw ParameterError("grid: k must be >= 1");
  const std::size_t depth = std::max(opts.recall_k, opts.ndcg_k);
  const Rng root(opts.seed, 0x6121D);
  std::vector<GridRow> rows;
  for (std::size_t a = 0; a < arms.size(); ++a) {
    const auto& arm = arms[a];
    for (std::size_t dv = 0; dv < devices.size(); ++dv) {
      const auto& device = devices[dv];
      GridRow row{arm.method, arm.precision, arm.dim, device.label, false, {}, {}, {}};
      if (std::holds_alternative<std::monostate>(arm.corpus)) {
        row.skipped = true;
        row.reason = "no artifact";
      } else if (device.profile && !std::holds_alternative<QuantizedCorpus>(arm.corpus)) {
        row.skipped = true;
        row.reason = "device simulation needs a quantized corpus";
      }
      if (row.skipped) {
        rows.push_back(std::move(row));
        continue;
      }
      Rng rng = root.derive(mix64(a) ^ dv);
      const Matrix scores = score_arm(arm, device, opts, rng);
      qrels.validate(scores.cols());
      const RunResult run = rank_scores(scores, std::min(depth, scores.cols()));
      row.recall = recall_at_k(run, qrels, opts.recall_k);
      row.ndcg = ndcg_at_k(run, qrels, opts.ndcg_k);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string grid_to_jsonl(const std::vector<GridRow>& rows, const GridOptions& opts) {
  std::string out;
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["method"] = r.method;
    j["precision"] = r.precision;
    j["dim"] = r.dim;
    j["device"] = r.device;
    if (r.skipped) {
      j["status"] = "skipped";
      j["reason"] = r.reason;
    } else {
      j["status"] = "ok";
      j["recall@" + std::to_string(opts.recall_k)] = r.recall.mean;
      j["ndcg@" + std::to_string(opts.ndcg_k)] = r.ndcg.mean;
      j["queries"] = r.ndcg.evaluated;
      j["skipped_queries"] = r.ndcg.skipped;
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string grid_report(const std::vector<GridRow>& rows, const GridOptions& opts) {
  const std::vector<std::string> head = {"method", "precision", "dim", "device",
                                         "recall@" + std::to_string(opts.recall_k),
                                         "ndcg@" + std::to_string(opts.ndcg_k)};
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    auto fmt = [](double v) {
      std::ostringstream s;
      s << std::fixed << std::setprecision(4) << v;
      return s.str();
    };
    cells.push_back({r.method, r.precision, std::to_string(r.dim), r.device,
                     r.skipped ? "skipped" : fmt(r.recall.mean),
                     r.skipped ? "skipped" : fmt(r.ndcg.mean)});
  }
  std::vector<std::size_t> width(head.size());
  for (std::size_t c = 0; c < head.size(); ++c) {
    width[c] = head[c].size();
    for (const auto& row : cells) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out << "  ";
      if (c >= 2)
        out << std::setw(static_cast<int>(width[c])) << std::right << row[c];
      else
        out << std::setw(static_cast<int>(width[c])) << std::left << row[c];
    }
    out << '\n';
  };
  emit(head);
  std::size_t total = 0;
  for (auto w : width) total += w;
  out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
  for (const auto& row : cells) emit(row);
  return out.str();
}

}  // namespace cqcim
