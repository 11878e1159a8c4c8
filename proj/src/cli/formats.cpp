#include "cqcim/formats.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cqcim/errors.hpp"

namespace cqcim {

namespace {

class Writer {
 public:
  explicit Writer(std::string_view magic) : buf_(magic) { u32(kFormatVersion); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void str(std::string_view s) {
    u32(checked_u32(s.size(), "string length"));
    buf_.append(s);
  }
  void f64s(std::span<const double> v) {
    for (double x : v) f64(x);
  }
  void ids(const std::vector<std::string>& ids) {
    if (ids.empty()) return;
    u32(checked_u32(ids.size(), "id count"));
    for (const auto& s : ids) str(s);
  }

  static std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > 0xFFFFFFFFu) throw ParameterError(std::string(what) + " does not fit in 32 bits");
    return static_cast<std::uint32_t>(v);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw IoError("write failed for " + path.string());
  }

 private:
  std::string buf_;
};

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Reader {
 public:
  Reader(const std::filesystem::path& path, std::string_view magic)
      : name_(path.string()), buf_(slurp(path)) {
    if (buf_.size() < 4 || std::string_view(buf_).substr(0, 4) != magic)
      fail("bad magic, expected " + std::string(magic));
    pos_ = 4;
    const auto version = u32();
    if (version != kFormatVersion) fail("unsupported format version " + std::to_string(version));
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::string str() {
    const std::size_t n = u32();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> f64s(std::size_t n) {
    need_items(n, 8);
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  /// Reads the optional trailing id table, which must have `count` entries.
  std::vector<std::string> ids(std::size_t count) {
    std::vector<std::string> out;
    if (pos_ == buf_.size()) return out;
    const std::size_t n = u32();
    if (n != count) fail("id table has " + std::to_string(n) + " entries, expected " +
                         std::to_string(count));
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(str());
    return out;
  }
  void finish() const {
    if (pos_ != buf_.size())
      fail(std::to_string(buf_.size() - pos_) + " unexpected trailing bytes");
  }
  void need_items(std::size_t n, std::size_t width) const {
    if (n != 0 && (buf_.size() - pos_) / width < n) fail("truncated payload");
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw InputError(name_ + ": " + what);
  }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) fail("truncated file");
  }

  std::string name_;
  std::string buf_;
  std::size_t pos_ = 0;
};

std::uint32_t precision_code(Precision p) {
  switch (p) {
    case Precision::binary_1bit: return 0;
    case Precision::ternary_1p58bit: return 1;
    case Precision::uniform_2bit: return 2;
    case Precision::uniform_int4: return 3;
  }
  return 0;
}

Precision precision_from_code(std::uint32_t c, const Reader& r) {
  switch (c) {
    case 0: return Precision::binary_1bit;
    case 1: return Precision::ternary_1p58bit;
    case 2: return Precision::uniform_2bit;
    case 3: return Precision::uniform_int4;
    default: r.fail("unknown precision code " + std::to_string(c));
  }
}

void write_matrix_f32(Writer& w, const Matrix& m) {
  for (double v : m.values()) w.f32(static_cast<float>(v));
}

Matrix read_matrix_f32(Reader& r, std::size_t rows, std::size_t cols) {
  r.need_items(rows * cols, 4);
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = r.f32();
  return m;
}

}  // namespace

std::uint64_t fnv1a(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------

EmbeddingFile read_embeddings(const std::filesystem::path& path) {
  Reader r(path, "CQEM");
  const std::size_t count = r.u32();
  const std::size_t dim = r.u32();
  if (const auto dtype = r.u32(); dtype != 0)
    r.fail("unsupported dtype " + std::to_string(dtype));
  EmbeddingFile f;
  f.data = read_matrix_f32(r, count, dim);
  f.ids = r.ids(count);
  r.finish();
  return f;
}

void write_embeddings(const std::filesystem::path& path, const Matrix& data,
                      const std::vector<std::string>& ids) {
  if (!ids.empty() && ids.size() != data.rows())
    throw ShapeError("write_embeddings: id count does not match row count");
  Writer w("CQEM");
  w.u32(Writer::checked_u32(data.rows(), "count"));
  w.u32(Writer::checked_u32(data.cols(), "dim"));
  w.u32(0);
  write_matrix_f32(w, data);
  w.ids(ids);
  w.save(path);
}

PairedViews read_paired_views(const std::filesystem::path& path) {
  Reader r(path, "CQPV");
  const std::size_t count = r.u32();
  const std::size_t dim = r.u32();
  if (const auto dtype = r.u32(); dtype != 0)
    r.fail("unsupported dtype " + std::to_string(dtype));
  const auto views = r.u32();
  if (views != 2 && views != 3) r.fail("view_count must be 2 or 3");
  PairedViews pv;
  pv.anchor = read_matrix_f32(r, count, dim);
  pv.positive = read_matrix_f32(r, count, dim);
  if (views == 3) pv.negative = read_matrix_f32(r, count, dim);
  r.finish();
  return pv;
}

void write_paired_views(const std::filesystem::path& path, const PairedViews& views) {
  const auto rows = views.anchor.rows(), cols = views.anchor.cols();
  auto same = [&](const Matrix& m) { return m.rows() == rows && m.cols() == cols; };
  if (!same(views.positive) || (views.negative && !same(*views.negative)))
    throw ShapeError("write_paired_views: all views must share (count, dim)");
  Writer w("CQPV");
  w.u32(Writer::checked_u32(rows, "count"));
  w.u32(Writer::checked_u32(cols, "dim"));
  w.u32(0);
  w.u32(views.negative ? 3 : 2);
  write_matrix_f32(w, views.anchor);
  write_matrix_f32(w, views.positive);
  if (views.negative) write_matrix_f32(w, *views.negative);
  w.save(path);
}

QuantizedFile read_quantized(const std::filesystem::path& path) {
  Reader r(path, "CQQC");
  const std::size_t count = r.u32();
  const std::size_t dim = r.u32();
  const std::size_t levels = r.u32();
  if (levels < 2 || levels > 256) r.fail("level count must be in [2, 256]");
  QuantizedFile f;
  f.corpus.dequant = r.f64s(levels);
  r.need_items(count * dim, 1);
  f.corpus.codes = CodeMatrix(count, dim);
  for (auto& c : f.corpus.codes.values()) {
    c = r.u8();
    if (c >= levels) r.fail("code out of range");
  }
  f.ids = r.ids(count);
  r.finish();
  return f;
}

void write_quantized(const std::filesystem::path& path, const QuantizedCorpus& corpus,
                     const std::vector<std::string>& ids) {
  corpus.validate();
  if (!ids.empty() && ids.size() != corpus.count())
    throw ShapeError("write_quantized: id count does not match row count");
  Writer w("CQQC");
  w.u32(Writer::checked_u32(corpus.count(), "count"));
  w.u32(Writer::checked_u32(corpus.dim(), "dim"));
  w.u32(Writer::checked_u32(corpus.levels(), "levels"));
  w.f64s(corpus.dequant);
  for (auto c : corpus.codes.values()) w.u8(c);
  w.ids(ids);
  w.save(path);
}

PqFile read_pq(const std::filesystem::path& path) {
  Reader r(path, "CQPQ");
  PqFile f;
  f.codebook.m = r.u32();
  f.codebook.k = r.u32();
  f.codebook.sub_dim = r.u32();
  const std::size_t count = r.u32();
  if (f.codebook.m == 0 || f.codebook.k == 0 || f.codebook.k > 256 || f.codebook.sub_dim == 0)
    r.fail("invalid codebook shape");
  f.codebook.centroids = r.f64s(f.codebook.m * f.codebook.k * f.codebook.sub_dim);
  f.codes.rows = count;
  f.codes.m = f.codebook.m;
  r.need_items(count * f.codebook.m, 1);
  f.codes.data.resize(count * f.codebook.m);
  for (auto& c : f.codes.data) {
    c = r.u8();
    if (c >= f.codebook.k) r.fail("code out of range");
  }
  f.ids = r.ids(count);
  r.finish();
  return f;
}

void write_pq(const std::filesystem::path& path, const PqCodebook& codebook, const PqCodes& codes,
              const std::vector<std::string>& ids) {
  if (codes.m != codebook.m || codes.data.size() != codes.rows * codes.m)
    throw ShapeError("write_pq: codes do not match codebook");
  if (!ids.empty() && ids.size() != codes.rows)
    throw ShapeError("write_pq: id count does not match row count");
  Writer w("CQPQ");
  w.u32(Writer::checked_u32(codebook.m, "m"));
  w.u32(Writer::checked_u32(codebook.k, "k"));
  w.u32(Writer::checked_u32(codebook.sub_dim, "sub_dim"));
  w.u32(Writer::checked_u32(codes.rows, "count"));
  w.f64s(codebook.centroids);
  for (auto c : codes.data) w.u8(c);
  w.ids(ids);
  w.save(path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  Reader r(path, "CQCK");
  const std::size_t in_dim = r.u32();
  const std::size_t dim = r.u32();
  r.need_items(in_dim * dim, 8);
  Matrix w(in_dim, dim, r.f64s(in_dim * dim));
  std::vector<double> b = r.f64s(dim);

  std::optional<Quantizer> quantizer;
  const auto kind = r.u32();
  if (kind == 0) {
    const std::size_t levels = r.u32();
    const double lo = r.f64();
    const double hi = r.f64();
    if (levels < 2 || levels > 256) r.fail("bad N2UQ level count");
    quantizer.emplace(N2uqQuantizer(levels, lo, hi, r.f64s(levels - 1)));
  } else if (kind == 1) {
    const Precision p = precision_from_code(r.u32(), r);
    quantizer.emplace(FixedQuantizer(p, r.f64()));
  } else {
    r.fail("unknown quantizer kind " + std::to_string(kind));
  }

  NoiseSpec noise;
  noise.profile.name = r.str();
  noise.profile.levels = r.u32();
  if (noise.profile.levels > 256) r.fail("bad profile level count");
  noise.profile.sigma_v = r.f64s(noise.profile.levels);
  noise.profile.nominal = r.f64s(noise.profile.levels);
  noise.sigma_g = r.f64();
  const std::size_t nthr = r.u32();
  noise.lookup_thresholds = r.f64s(nthr);
  noise.validate();

  Checkpoint ck{ShapingModel{CompressionHead(std::move(w), std::move(b)), std::move(*quantizer),
                             std::move(noise)},
                0, 0, 0};
  ck.seed = r.u64();
  ck.config_hash = r.u64();
  ck.epochs = r.u32();
  r.finish();
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto& head = ck.model.head;
  Writer w("CQCK");
  w.u32(Writer::checked_u32(head.input_dim(), "input dim"));
  w.u32(Writer::checked_u32(head.output_dim(), "output dim"));
  w.f64s(head.weight().values());
  w.f64s(head.bias());
  if (const auto* n = std::get_if<N2uqQuantizer>(&ck.model.quantizer)) {
    w.u32(0);
    w.u32(Writer::checked_u32(n->levels(), "levels"));
    w.f64(n->range_lo());
    w.f64(n->range_hi());
    w.f64s(n->thresholds());
  } else {
    const auto& f = std::get<FixedQuantizer>(ck.model.quantizer);
    w.u32(1);
    w.u32(precision_code(f.mode()));
    w.f64(f.scale());
  }
  const auto& noise = ck.model.noise;
  w.str(noise.profile.name);
  w.u32(Writer::checked_u32(noise.profile.levels, "profile levels"));
  w.f64s(noise.profile.sigma_v);
  w.f64s(noise.profile.nominal);
  w.f64(noise.sigma_g);
  w.u32(Writer::checked_u32(noise.lookup_thresholds.size(), "threshold count"));
  w.f64s(noise.lookup_thresholds);
  w.u64(ck.seed);
  w.u64(ck.config_hash);
  w.u32(ck.epochs);
  w.save(path);
}

FileKind sniff_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  const std::string_view m(magic, static_cast<std::size_t>(in.gcount()));
  if (m == "CQEM") return FileKind::embeddings;
  if (m == "CQPV") return FileKind::paired_views;
  if (m == "CQQC") return FileKind::quantized;
  if (m == "CQPQ") return FileKind::pq;
  if (m == "CQCK") return FileKind::checkpoint;
  throw InputError(path.string() + ": unrecognized file type");
}

}  // namespace cqcim
