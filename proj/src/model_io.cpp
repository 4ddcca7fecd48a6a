#include "soh/error.hpp"
#include "soh/regressor.hpp"

#include "detail/text.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

// Model file layout, every integer and float little-endian:
//   8  bytes  magic "SOHLSTM\0"
//   u32       format version
//   u32 x5    layers, hidden, input_dim, variables, grids
//   i32 x2    important interval start, end (zero-based, inclusive)
//   u64       grid-spec hash
//   f64 x2    label_min, label_max
//   per layer: block(w_input), block(w_recurrent), block(bias)
//   block(head_weights), f64 head_bias
//   u64       FNV-1a checksum of every preceding byte
// block = u32 rows, u32 cols, rows*cols f64 in column-major order.

namespace soh {

namespace {

constexpr char kMagic[8] = {'S', 'O', 'H', 'L', 'S', 'T', 'M', '\0'};

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ull;
  }
  return h;
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  template <typename M>
  void block(const M& m) {
    u32(static_cast<std::uint32_t>(m.rows()));
    u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) f64(m.data()[i]);
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& buf, std::size_t end) : buf_(buf), end_(end) {}

  void need(std::size_t n) {
    if (pos_ + n > end_) throw Error(Errc::load, "model file truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  template <typename M>
  void block(M& m, Eigen::Index rows, Eigen::Index cols, const char* what) {
    const auto r = u32();
    const auto c = u32();
    if (r != rows || c != cols)
      throw Error(Errc::load, std::string("model file: unexpected shape for ") + what);
    m.resize(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = f64();
  }
  std::size_t position() const { return pos_; }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_model(const ModelParameters& params, const std::filesystem::path& path) {
  params.validate();
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kModelFormatVersion);
  w.u32(static_cast<std::uint32_t>(params.layers.size()));
  w.u32(static_cast<std::uint32_t>(params.hidden));
  w.u32(static_cast<std::uint32_t>(params.input_dim));
  w.u32(static_cast<std::uint32_t>(params.variables));
  w.u32(static_cast<std::uint32_t>(params.grids));
  w.u32(static_cast<std::uint32_t>(params.interval.start));
  w.u32(static_cast<std::uint32_t>(params.interval.end));
  w.u64(params.grid_hash);
  w.f64(params.label_min);
  w.f64(params.label_max);
  for (const auto& layer : params.layers) {
    w.block(layer.w_input);
    w.block(layer.w_recurrent);
    w.block(layer.bias);
  }
  w.block(params.head_weights);
  w.f64(params.head_bias);
  auto& buf = w.buffer();
  w.u64(fnv1a(buf.data(), buf.size()));

  detail::write_atomic(path, [&](std::ostream& out) {
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  });
}

LoadedModel load_model(const std::filesystem::path& path, std::uint64_t expected_grid_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::load, "cannot open model file " + path.string());
  const std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                      std::istreambuf_iterator<char>());
  if (buf.size() < sizeof kMagic + 4 + 8 || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0)
    throw Error(Errc::load, path.string() + ": not a model file");

  const std::size_t body = buf.size() - 8;
  Reader r(buf, body);
  r.skip(sizeof kMagic);
  const auto version = r.u32();
  if (version != kModelFormatVersion)
    throw Error(Errc::load, path.string() + ": unsupported model format version " +
                                std::to_string(version) + " (expected " +
                                std::to_string(kModelFormatVersion) + ")");
  Reader tail(buf, buf.size());
  tail.skip(body);
  if (tail.u64() != fnv1a(buf.data(), body))
    throw Error(Errc::load, path.string() + ": checksum mismatch, file is corrupt");

  LoadedModel out;
  auto& p = out.params;
  const auto layers = r.u32();
  p.hidden = static_cast<int>(r.u32());
  p.input_dim = static_cast<int>(r.u32());
  p.variables = static_cast<int>(r.u32());
  p.grids = static_cast<int>(r.u32());
  p.interval.start = static_cast<int>(r.u32());
  p.interval.end = static_cast<int>(r.u32());
  p.grid_hash = r.u64();
  p.label_min = r.f64();
  p.label_max = r.f64();
  if (layers < 1 || layers > 64 || p.hidden < 1 || p.input_dim < 1)
    throw Error(Errc::load, path.string() + ": implausible architecture block");
  const Eigen::Index gates = 4 * static_cast<Eigen::Index>(p.hidden);
  for (std::uint32_t l = 0; l < layers; ++l) {
    LstmLayer layer;
    r.block(layer.w_input, gates, l == 0 ? p.input_dim : p.hidden, "w_input");
    r.block(layer.w_recurrent, gates, p.hidden, "w_recurrent");
    r.block(layer.bias, gates, 1, "bias");
    p.layers.push_back(std::move(layer));
  }
  r.block(p.head_weights, p.hidden, 1, "head_weights");
  p.head_bias = r.f64();
  if (r.position() != body) throw Error(Errc::load, path.string() + ": trailing bytes");
  try {
    p.validate();
  } catch (const Error& e) {
    throw Error(Errc::load, path.string() + ": " + e.what());
  }
  if (expected_grid_hash != 0 && expected_grid_hash != p.grid_hash)
    out.warnings.push_back("model was trained against a different grid spec (hash mismatch)");
  return out;
}

}  // namespace soh
