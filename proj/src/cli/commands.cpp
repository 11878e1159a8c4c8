#include "cqcim/commands.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "cqcim/baselines.hpp"
#include "cqcim/config.hpp"
#include "cqcim/errors.hpp"
#include "cqcim/formats.hpp"
#include "cqcim/kernels.hpp"
#include "cqcim/retrieval.hpp"
#include "cqcim/synthetic.hpp"
#include "cqcim/training.hpp"

namespace cqcim::cli {

namespace {

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

Precision precision_arg(const std::string& text) {
  try {
    return parse_precision(text);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

std::string precision_label(std::size_t levels) {
  switch (levels) {
    case 2: return "1bit";
    case 3: return "1.58bit";
    case 4: return "2bit";
    case 16: return "int4";
    default: return std::to_string(levels) + "-level";
  }
}

QuantizedCorpus quantize_fixed(const Matrix& x, Precision p) {
  const auto fq = FixedQuantizer::calibrate(p, x);
  auto r = fq.forward(x);
  return {std::move(r.codes), fq.codebook()};
}

}  // namespace

std::optional<DeviceProfile> resolve_device(const std::string& name) {
  if (name == "ideal") return std::nullopt;
  const std::filesystem::path p(name);
  if (p.extension() == ".json" || std::filesystem::exists(p)) return load_profile(p);
  return builtin_profile(name);
}

// ---------------------------------------------------------------------------

void cmd_train(const TrainArgs& args, std::ostream& out) {
  TrainSettings s = load_train_settings(args.config);
  if (args.seed) s.train.seed = *args.seed;
  if (args.dim) s.dim = *args.dim;
  if (args.precision) s.precision = precision_arg(*args.precision);
  if (args.device) s.device = *args.device;
  if (args.out) s.out = *args.out;
  if (s.dim == 0) throw UsageError("--dim must be > 0");

  const auto profile = resolve_device(s.device);
  if (!profile) throw UsageError("train needs a device profile for noise injection, not 'ideal'");
  const EmbeddingFile emb = read_embeddings(s.embeddings);
  if (s.dim > emb.data.cols())
    throw UsageError("dim " + std::to_string(s.dim) + " exceeds the embedding dimension " +
                     std::to_string(emb.data.cols()));
  std::optional<PairedViews> paired;
  if (s.paired_views) paired = read_paired_views(*s.paired_views);
  if (s.train.pair_mode == PairMode::synthetic_dropout) paired.reset();

  InitOptions io;
  io.dim = s.dim;
  io.precision = s.precision;
  io.learned_quantizer = s.learned_quantizer;
  io.init = s.init;
  io.seed = s.train.seed;
  ShapingModelState state =
      init_state(emb.data, NoiseSpec::for_profile(*profile, s.train.sigma_g), io);
  const TrainResult result = train(emb.data, state, s.train, paired ? &*paired : nullptr);

  Checkpoint ck{state.model, s.train.seed, fnv1a(hyperparameter_json(s)),
                static_cast<std::uint32_t>(s.train.epochs)};
  write_checkpoint(s.out, ck);

  std::string csv = "epoch,total,contrastive,reconstruction\n";
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
    csv += std::to_string(e + 1) + "," + fmt_g(result.epoch_loss[e]) + "," +
           fmt_g(result.epoch_contrastive[e]) + "," + fmt_g(result.epoch_reconstruction[e]) + "\n";
  const auto curve = s.loss_curve ? *s.loss_curve : std::filesystem::path(s.out.string() + ".losses.csv");
  write_text(curve, csv);

  out << "trained " << s.train.epochs << " epochs on " << emb.data.rows() << " x "
      << emb.data.cols() << " -> " << s.dim << "-D " << to_string(s.precision) << '\n';
  if (!result.epoch_loss.empty())
    out << "final loss " << result.epoch_loss.back() << " (contrastive "
        << result.epoch_contrastive.back() << ", reconstruction "
        << result.epoch_reconstruction.back() << ")\n";
  out << "checkpoint: " << s.out.string() << "\nloss curve: " << curve.string() << '\n';
}

void cmd_shape(const ShapeArgs& args, std::ostream& out) {
  if (args.queries.has_value() != args.queries_out.has_value())
    throw UsageError("--queries and --queries-out go together");
  const Checkpoint ck = read_checkpoint(args.checkpoint);
  const EmbeddingFile emb = read_embeddings(args.embeddings);
  if (emb.data.cols() != ck.model.head.input_dim())
    throw ShapeError("embeddings have " + std::to_string(emb.data.cols()) +
                     " dims, checkpoint expects " + std::to_string(ck.model.head.input_dim()));
  const PipelineOutput shaped = ck.model.shape(emb.data);
  write_quantized(args.out, QuantizedCorpus{shaped.codes, logical_levels(ck.model.quantizer)},
                  emb.ids);
  out << "shaped " << emb.data.rows() << " vectors -> " << ck.model.head.output_dim() << "-D "
      << precision_label(level_count(ck.model.quantizer)) << ": " << args.out.string() << '\n';
  if (args.queries) {
    const EmbeddingFile q = read_embeddings(*args.queries);
    if (q.data.cols() != ck.model.head.input_dim())
      throw ShapeError("queries have " + std::to_string(q.data.cols()) +
                       " dims, checkpoint expects " + std::to_string(ck.model.head.input_dim()));
    write_embeddings(*args.queries_out, ck.model.project(q.data), q.ids);
    out << "projected " << q.data.rows() << " queries: " << args.queries_out->string() << '\n';
  }
}

void cmd_eval(const EvalArgs& args, std::ostream& out) {
  if (args.corpora.empty()) throw UsageError("eval needs at least one --corpus");
  if (args.queries.size() != 1 && args.queries.size() != args.corpora.size())
    throw UsageError("give one --queries file, or one per --corpus");
  if (!args.methods.empty() && args.methods.size() != args.corpora.size())
    throw UsageError("give one --method label per --corpus");
  if (args.flips != "per-run" && args.flips != "per-query")
    throw UsageError("--flips must be per-run or per-query");

  std::vector<DeviceSetting> devices;
  for (const auto& d : args.devices) devices.push_back({d, resolve_device(d)});

  std::vector<GridArm> arms;
  std::vector<std::string> first_doc_ids, first_query_ids;
  std::size_t doc_count = 0;
  for (std::size_t i = 0; i < args.corpora.size(); ++i) {
    const auto& path = args.corpora[i];
    const EmbeddingFile q = read_embeddings(args.queries.size() == 1 ? args.queries[0] : args.queries[i]);
    GridArm arm;
    arm.method = args.methods.empty() ? path.stem().string() : args.methods[i];
    arm.queries = q.data;
    std::vector<std::string> ids;
    switch (sniff_file(path)) {
      case FileKind::embeddings: {
        EmbeddingFile f = read_embeddings(path);
        arm.precision = "fp32";
        arm.dim = f.data.cols();
        ids = std::move(f.ids);
        arm.corpus = std::move(f.data);
        break;
      }
      case FileKind::quantized: {
        QuantizedFile f = read_quantized(path);
        arm.precision = precision_label(f.corpus.levels());
        arm.dim = f.corpus.dim();
        ids = std::move(f.ids);
        arm.corpus = std::move(f.corpus);
        break;
      }
      case FileKind::pq: {
        PqFile f = read_pq(path);
        arm.precision = "pq" + std::to_string(f.codebook.m) + "x" + std::to_string(f.codebook.k);
        arm.dim = f.codebook.dim();
        ids = std::move(f.ids);
        arm.corpus = PqCorpus{std::move(f.codebook), std::move(f.codes)};
        break;
      }
      default: throw UsageError(path.string() + " is not a corpus file");
    }
    const std::size_t n = std::visit(
        [](const auto& c) -> std::size_t {
          using T = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<T, Matrix>) return c.rows();
          else if constexpr (std::is_same_v<T, QuantizedCorpus>) return c.count();
          else if constexpr (std::is_same_v<T, PqCorpus>) return c.codes.rows;
          else return 0;
        },
        arm.corpus);
    if (i == 0) {
      doc_count = n;
      first_doc_ids = ids;
      first_query_ids = q.ids;
    } else if (n != doc_count) {
      throw InputError("all corpora must index the same documents (" + path.string() + " has " +
                       std::to_string(n) + ", expected " + std::to_string(doc_count) + ")");
    }
    if (arm.queries.cols() != arm.dim)
      throw ShapeError("queries have " + std::to_string(arm.queries.cols()) + " dims, corpus " +
                       path.string() + " has " + std::to_string(arm.dim));
    arms.push_back(std::move(arm));
  }

  const Qrels qrels = load_qrels(args.qrels, first_query_ids, first_doc_ids);
  GridOptions opts;
  opts.recall_k = args.recall_k;
  opts.ndcg_k = args.ndcg_k;
  opts.noise_scale = args.noise_scale;
  opts.cell_noise_scale = args.cell_noise;
  opts.array = ArraySpec{args.rows, args.cols, args.adc_noise};
  opts.flips = args.flips == "per-query" ? FlipMode::per_query : FlipMode::per_run;
  opts.quantize_query = args.quantize_query;
  opts.seed = args.seed;
  const auto rows = run_grid(arms, devices, qrels, opts);
  out << grid_report(rows, opts);
  if (args.out) {
    write_text(*args.out, grid_to_jsonl(rows, opts));
    out << "results: " << args.out->string() << '\n';
  }
}

void cmd_baseline(const BaselineArgs& args, std::ostream& out) {
  if (args.queries.has_value() != args.queries_out.has_value())
    throw UsageError("--queries and --queries-out go together");
  const EmbeddingFile emb = read_embeddings(args.embeddings);
  const std::size_t in_dim = emb.data.cols();
  std::optional<EmbeddingFile> queries;
  if (args.queries) {
    queries = read_embeddings(*args.queries);
    if (queries->data.cols() != in_dim)
      throw ShapeError("queries have " + std::to_string(queries->data.cols()) +
                       " dims, embeddings have " + std::to_string(in_dim));
  }

  if (args.kind == "pq") {
    if (args.precision) throw UsageError("pq takes --m/--k, not --precision");
    if (args.dim && *args.dim != in_dim)
      throw UsageError("pq keeps the input dimension; drop --dim or pass " + std::to_string(in_dim));
    if (args.pq_m == 0 || in_dim % args.pq_m != 0)
      throw UsageError("--m must divide the dimension " + std::to_string(in_dim));
    if (args.pq_k == 0 || args.pq_k > 256 || args.pq_k > emb.data.rows())
      throw UsageError("--k must be in [1, min(256, corpus size)]");
    PqOptions po;
    po.m = args.pq_m;
    po.k = args.pq_k;
    po.seed = args.seed;
    const PqCodebook cb = pq_fit(emb.data, po);
    write_pq(args.out, cb, pq_encode(cb, emb.data), emb.ids);
    out << "pq m=" << po.m << " k=" << po.k << ": " << args.out.string() << '\n';
    if (queries) write_embeddings(*args.queries_out, queries->data, queries->ids);
    return;
  }

  if (args.kind != "pca" && args.kind != "vanilla")
    throw UsageError("baseline kind must be pca, vanilla or pq");
  if (!args.dim) throw UsageError(args.kind + " needs --dim");
  const std::size_t d = *args.dim;
  if (d == 0 || d > in_dim)
    throw UsageError("--dim must be in [1, " + std::to_string(in_dim) + "]");
  std::optional<Precision> precision;
  if (args.precision && *args.precision != "float") precision = precision_arg(*args.precision);

  Matrix docs, qs;
  if (args.kind == "pca") {
    if (d > emb.data.rows()) throw UsageError("pca needs at least --dim documents");
    const PcaModel model = pca_fit(emb.data, d);
    docs = pca_project(model, emb.data);
    if (queries) qs = pca_project(model, queries->data);
  } else {
    docs = normalize_rows(vanilla_truncate(emb.data, d));
    if (queries) qs = normalize_rows(vanilla_truncate(queries->data, d));
  }
  if (precision)
    write_quantized(args.out, quantize_fixed(docs, *precision), emb.ids);
  else
    write_embeddings(args.out, docs, emb.ids);
  out << args.kind << " d=" << d << " " << (precision ? to_string(*precision) : "float") << ": "
      << args.out.string() << '\n';
  if (queries) {
    write_embeddings(*args.queries_out, qs, queries->ids);
    out << "queries: " << args.queries_out->string() << '\n';
  }
}

void cmd_profile_list(std::ostream& out) {
  out << "ideal  (noise-free)\n";
  for (const auto& p : builtin_profiles()) {
    out << p.name << "  K=" << p.levels << "  sigma_v=[";
    for (std::size_t i = 0; i < p.sigma_v.size(); ++i) out << (i ? ", " : "") << p.sigma_v[i];
    out << "]\n";
  }
}

void cmd_profile_show(const std::string& name, std::ostream& out) {
  const auto p = resolve_device(name);
  if (!p) {
    out << "ideal: noise-free scoring on dequantized values\n";
    return;
  }
  out << profile_to_json(*p) << '\n';
}

void cmd_synth(const SynthArgs& args, std::ostream& out) {
  SyntheticOptions o;
  o.seed = args.seed;
  o.documents = args.documents;
  o.queries = args.queries;
  o.dim = args.dim;
  o.clusters = args.clusters;
  o.latent_dim = std::min(o.latent_dim, o.dim);
  const SyntheticCorpus c = make_clustered_corpus(o);
  std::filesystem::create_directories(args.out_dir);
  std::vector<std::string> doc_ids, query_ids;
  for (std::size_t i = 0; i < c.documents.rows(); ++i) doc_ids.push_back("d" + std::to_string(i));
  for (std::size_t i = 0; i < c.queries.rows(); ++i) query_ids.push_back("q" + std::to_string(i));
  write_embeddings(args.out_dir / "docs.cqem", c.documents, doc_ids);
  write_embeddings(args.out_dir / "queries.cqem", c.queries, query_ids);
  std::string qrels;
  for (const auto& [q, docs] : c.qrels.judgments)
    for (const auto& [d, grade] : docs)
      qrels += query_ids[q] + "\t" + doc_ids[d] + "\t" + std::to_string(grade) + "\n";
  write_text(args.out_dir / "qrels.tsv", qrels);
  out << "wrote " << c.documents.rows() << " documents, " << c.queries.rows()
      << " queries and qrels to " << args.out_dir.string() << '\n';
}

// ---------------------------------------------------------------------------

int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hardware-aware embedding shaping and compute-in-memory retrieval simulation",
               "cqcim"};
  app.require_subcommand(1);
  app.fallthrough();
  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "Seed for every random draw");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a shaping model from a JSON config");
  train_cmd->add_option("--config", ta.config, "Config file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--dim", ta.dim, "Output dimension");
  train_cmd->add_option("--precision", ta.precision, "1bit, 1.58bit, 2bit or int4");
  train_cmd->add_option("--device", ta.device, "Preset (D-1..D-5) or profile JSON");
  train_cmd->add_option("--out", ta.out, "Checkpoint path");

  ShapeArgs sa;
  auto* shape_cmd = app.add_subcommand("shape", "Compress and quantize a corpus");
  shape_cmd->add_option("--checkpoint", sa.checkpoint)->required();
  shape_cmd->add_option("--embeddings", sa.embeddings)->required();
  shape_cmd->add_option("--out", sa.out)->required();
  shape_cmd->add_option("--queries", sa.queries, "Queries to project (kept float)");
  shape_cmd->add_option("--queries-out", sa.queries_out);

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Retrieval metrics over corpora x devices");
  eval_cmd->add_option("--corpus", ea.corpora, "Corpus file (repeatable)")->required();
  eval_cmd->add_option("--queries", ea.queries, "Query file (one, or one per corpus)")->required();
  eval_cmd->add_option("--method", ea.methods, "Label per corpus");
  eval_cmd->add_option("--qrels", ea.qrels, "query_id<TAB>doc_id<TAB>grade")->required();
  eval_cmd->add_option("--device", ea.devices, "ideal, D-1..D-5 or profile JSON (repeatable)");
  eval_cmd->add_option("--flips", ea.flips, "per-run or per-query");
  eval_cmd->add_option("--noise-scale", ea.noise_scale, "Multiplier on sigma_v for read flips");
  eval_cmd->add_option("--cell-noise", ea.cell_noise, "Programming variation on the crossbar");
  eval_cmd->add_option("--adc-noise", ea.adc_noise, "ADC noise stdev per tile output");
  eval_cmd->add_option("--rows", ea.rows, "Wordlines per array tile");
  eval_cmd->add_option("--cols", ea.cols, "Bitlines per array tile");
  eval_cmd->add_option("--recall-k", ea.recall_k);
  eval_cmd->add_option("--ndcg-k", ea.ndcg_k);
  eval_cmd->add_flag("--quantize-query", ea.quantize_query, "Snap queries onto the corpus levels");
  eval_cmd->add_option("--out", ea.out, "JSONL results path");

  BaselineArgs ba;
  auto* base_cmd = app.add_subcommand("baseline", "Fit and apply a comparison method");
  base_cmd->add_option("kind", ba.kind, "pca, vanilla or pq")->required();
  base_cmd->add_option("--embeddings", ba.embeddings)->required();
  base_cmd->add_option("--out", ba.out)->required();
  base_cmd->add_option("--dim", ba.dim);
  base_cmd->add_option("--precision", ba.precision, "1bit, 1.58bit, 2bit, int4 or float");
  base_cmd->add_option("--queries", ba.queries);
  base_cmd->add_option("--queries-out", ba.queries_out);
  base_cmd->add_option("--m", ba.pq_m, "PQ subspaces");
  base_cmd->add_option("--k", ba.pq_k, "PQ centroids per subspace");

  auto* profile_cmd = app.add_subcommand("profile", "Device profiles");
  profile_cmd->require_subcommand(1);
  auto* list_cmd = profile_cmd->add_subcommand("list", "List built-in presets");
  std::string show_name;
  auto* show_cmd = profile_cmd->add_subcommand("show", "Print a profile as JSON");
  show_cmd->add_option("name", show_name)->required();

  SynthArgs ya;
  auto* synth_cmd = app.add_subcommand("synth", "Write a clustered synthetic corpus");
  synth_cmd->add_option("--out-dir", ya.out_dir)->required();
  synth_cmd->add_option("--docs", ya.documents);
  synth_cmd->add_option("--queries", ya.queries);
  synth_cmd->add_option("--dim", ya.dim);
  synth_cmd->add_option("--clusters", ya.clusters);

  std::vector<const char*> cargv;
  for (const auto& a : argv) cargv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    kernels::apply_thread_limit_from_env();
    if (*train_cmd) {
      ta.seed = seed;
      cmd_train(ta, out);
    } else if (*shape_cmd) {
      cmd_shape(sa, out);
    } else if (*eval_cmd) {
      ea.seed = seed.value_or(0);
      cmd_eval(ea, out);
    } else if (*base_cmd) {
      ba.seed = seed.value_or(0);
      cmd_baseline(ba, out);
    } else if (*list_cmd) {
      cmd_profile_list(out);
    } else if (*show_cmd) {
      cmd_profile_show(show_name, out);
    } else if (*synth_cmd) {
      ya.seed = seed.value_or(0);
      cmd_synth(ya, out);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return 4;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace cqcim::cli
