#include "npc/codec.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "npc/binio.hpp"

namespace npc::codec {

namespace {

constexpr std::uint8_t kStatsVersion = 1;
constexpr std::uint8_t kRecordVersion = 1;
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::uint64_t kCdfOne = 1ULL << kCdfBits;

double logit(double q) { return std::log(q) - std::log1p(-q); }

std::vector<double> masses_from_edges(double mu, double log_s, std::span<const double> edges) {
  std::vector<double> out(edges.size() - 1);
  std::uint64_t prev = fixed_cdf(edges[0], mu, log_s);
  for (std::size_t j = 0; j + 1 < edges.size(); ++j) {
    const std::uint64_t next = fixed_cdf(edges[j + 1], mu, log_s);
    out[j] = static_cast<double>(next - prev);
    prev = next;
  }
  return out;
}

const std::vector<double>& pixel_edges() {
  static const std::vector<double> edges = [] {
    std::vector<double> e(257);
    e[0] = -kInf;
    e[256] = kInf;
    for (int v = 1; v < 256; ++v) e[static_cast<std::size_t>(v)] = (2.0 * v - 1.0) / 255.0 - 1.0;
    return e;
  }();
  return edges;
}

void check_precisions(std::uint32_t precision_z, std::uint32_t precision_r) {
  if (precision_z < kMinPrecisionZ || precision_z > kMaxPrecisionZ)
    throw Error(ErrorCode::InvalidArgument, "precision_z must be in [4, 14]");
  if (precision_r < 8 || precision_r > rans::kMaxPrecision)
    throw Error(ErrorCode::InvalidArgument, "precision_r must be in [8, 16]");
  if (precision_z > precision_r) throw Error(ErrorCode::TooManySymbols, "precision_z exceeds precision_r");
}

Eigen::VectorXd values_of(const LayerBins& layer, const std::vector<std::size_t>& idx) {
  Eigen::VectorXd z(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t d = 0; d < idx.size(); ++d) z(static_cast<Eigen::Index>(d)) = layer.centers[d][idx[d]];
  return z;
}

}  // namespace

std::string_view to_string(CodecKind c) { return c == CodecKind::bbans ? "bbans" : "bitswap"; }

CodecKind parse_codec(std::string_view name) {
  if (name == "bbans") return CodecKind::bbans;
  if (name == "bitswap") return CodecKind::bitswap;
  throw Error(ErrorCode::UnsupportedCodec, "unknown codec '" + std::string(name) + "'");
}

// --- latent statistics ----------------------------------------------------------

std::vector<std::uint8_t> LatentStats::serialize() const {
  binio::Writer w;
  w.magic("NPCS");
  w.u8(kStatsVersion);
  w.raw(model_hash);
  w.u32(static_cast<std::uint32_t>(lo.size()));
  for (std::size_t i = 0; i < lo.size(); ++i) {
    w.u32(static_cast<std::uint32_t>(lo[i].size()));
    for (std::size_t d = 0; d < lo[i].size(); ++d) {
      w.f64(lo[i][d]);
      w.f64(hi[i][d]);
    }
  }
  w.u32(binio::crc32(w.bytes()));
  return w.take();
}

LatentStats LatentStats::deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw Error(ErrorCode::MalformedFile, "stats file too short");
  const auto body = bytes.first(bytes.size() - 4);
  if (binio::Reader(bytes.last(4)).u32() != binio::crc32(body))
    throw Error(ErrorCode::MalformedFile, "stats CRC mismatch");
  binio::Reader r(body);
  r.expect_magic("NPCS");
  if (r.u8() != kStatsVersion) throw Error(ErrorCode::MalformedFile, "unsupported stats version");
  LatentStats s;
  auto h = r.raw(8);
  std::copy(h.begin(), h.end(), s.model_hash.begin());
  const auto layers = r.u32();
  if (layers > 64) throw Error(ErrorCode::MalformedFile, "implausible layer count");
  s.lo.resize(layers);
  s.hi.resize(layers);
  for (std::uint32_t i = 0; i < layers; ++i) {
    const auto dims = r.u32();
    if (std::size_t{dims} * 16 > r.remaining()) throw Error(ErrorCode::MalformedFile, "truncated stats");
    for (std::uint32_t d = 0; d < dims; ++d) {
      s.lo[i].push_back(r.f64());
      s.hi[i].push_back(r.f64());
    }
  }
  if (r.remaining() != 0) throw Error(ErrorCode::MalformedFile, "trailing bytes in stats file");
  return s;
}

void LatentStats::save(const std::filesystem::path& path) const { binio::write_file(path, serialize()); }
LatentStats LatentStats::load(const std::filesystem::path& path) { return deserialize(binio::read_file(path)); }

LatentStats estimate_latent_stats(const lvm::LatentModel& model, const Dataset& sample, std::uint32_t n_draws,
                                  std::uint64_t seed) {
  if (sample.empty()) throw Error(ErrorCode::InvalidArgument, "stats sample is empty");
  if (n_draws == 0) throw Error(ErrorCode::InvalidArgument, "n_draws must be positive");
  const std::size_t L = model.layers();
  LatentStats stats;
  stats.model_hash = model.hash();
  stats.lo.resize(L - 1);
  stats.hi.resize(L - 1);
  for (std::size_t i = 0; i + 1 < L; ++i) {
    stats.lo[i].assign(model.latent_dim(i + 1), kInf);
    stats.hi[i].assign(model.latent_dim(i + 1), -kInf);
  }
  if (L == 1) return stats;

  SplitMix64 rng(seed);
  std::vector<std::vector<double>> mean_sum(L - 1);
  for (std::size_t i = 0; i + 1 < L; ++i) mean_sum[i].assign(model.latent_dim(i + 1), 0.0);
  std::size_t count = 0;
  for (const Grid& item : sample.items) {
    const Eigen::VectorXd x = lvm::normalize(item);
    for (std::uint32_t draw = 0; draw < n_draws; ++draw, ++count) {
      Eigen::VectorXd input = x;
      for (std::size_t i = 0; i + 1 < L; ++i) {
        const auto q = model.infer_layer(i + 1, input);
        Eigen::VectorXd z(q.size());
        for (Eigen::Index d = 0; d < q.size(); ++d) {
          z(d) = lvm::logistic_sample(q.mu(d), q.log_s(d), rng.open_unit());
          auto k = static_cast<std::size_t>(d);
          stats.lo[i][k] = std::min(stats.lo[i][k], z(d));
          stats.hi[i][k] = std::max(stats.hi[i][k], z(d));
          mean_sum[i][k] += z(d);
        }
        input = std::move(z);
      }
    }
  }
  for (std::size_t i = 0; i + 1 < L; ++i) {
    for (std::size_t d = 0; d < stats.lo[i].size(); ++d) {
      const double width = stats.hi[i][d] - stats.lo[i][d];
      if (width > 1e-9) {
        stats.lo[i][d] -= 0.1 * width;
        stats.hi[i][d] += 0.1 * width;
      } else {
        const double mu = mean_sum[i][d] / static_cast<double>(count);
        const double band = std::max(0.1 * std::abs(mu), 1e-6);
        stats.lo[i][d] = mu - band;
        stats.hi[i][d] = mu + band;
      }
    }
  }
  return stats;
}

// --- bins -------------------------------------------------------------------------

Hash Bins::hash() const {
  binio::Writer w;
  w.magic("NPCB");
  w.u32(precision_z);
  w.u32(precision_r);
  w.raw(model_hash);
  for (const auto& layer : layers) {
    w.u8(static_cast<std::uint8_t>(layer.scheme));
    w.u32(static_cast<std::uint32_t>(layer.dims()));
    for (const auto& e : layer.edges)
      for (double v : e) w.f64(v);
  }
  return binio::digest64(w.bytes());
}

Bins build_bins(const lvm::LatentModel& model, const LatentStats& stats, std::uint32_t precision_z,
                std::uint32_t precision_r) {
  check_precisions(precision_z, precision_r);
  const std::size_t L = model.layers();
  Bins bins;
  bins.precision_z = precision_z;
  bins.precision_r = precision_r;
  bins.model_hash = model.hash();
  if (stats.model_hash != bins.model_hash) throw Error(ErrorCode::BinsMismatch, "latent stats belong to another model");
  if (stats.lo.size() != L - 1) throw Error(ErrorCode::BinsMismatch, "latent stats have the wrong layer count");
  const std::uint32_t n = bins.n_bins();

  for (std::size_t i = 0; i + 1 < L; ++i) {
    if (stats.lo[i].size() != model.latent_dim(i + 1))
      throw Error(ErrorCode::BinsMismatch, "latent stats have the wrong dimension");
    LayerBins layer;
    layer.scheme = Scheme::equal_width;
    for (std::size_t d = 0; d < stats.lo[i].size(); ++d) {
      const double lo = stats.lo[i][d];
      const double hi = stats.hi[i][d];
      if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi))
        throw Error(ErrorCode::InvalidArgument, "latent range must be finite and non-empty");
      const double width = (hi - lo) / n;
      std::vector<double> edges(n + 1), centers(n);
      edges[0] = -kInf;
      edges[n] = kInf;
      for (std::uint32_t j = 1; j < n; ++j) edges[j] = lo + (hi - lo) * j / n;
      for (std::uint32_t j = 0; j < n; ++j) centers[j] = lo + width * (j + 0.5);
      layer.edges.push_back(std::move(edges));
      layer.centers.push_back(std::move(centers));
    }
    bins.layers.push_back(std::move(layer));
  }

  LayerBins prior;
  prior.scheme = Scheme::equal_mass;
  std::vector<double> edges(n + 1), centers(n);
  edges[0] = -kInf;
  edges[n] = kInf;
  for (std::uint32_t j = 1; j < n; ++j) edges[j] = logit(static_cast<double>(j) / n);
  for (std::uint32_t j = 0; j < n; ++j) centers[j] = logit((j + 0.5) / n);
  prior.edges.assign(model.latent_dim(L), edges);
  prior.centers.assign(model.latent_dim(L), centers);
  bins.layers.push_back(std::move(prior));
  return bins;
}

std::uint64_t fixed_cdf(double x, double mu, double log_s) noexcept {
  if (x == -kInf) return 0;
  if (x == kInf) return kCdfOne;
  const double c = lvm::logistic_cdf((x - mu) * std::exp(-log_s));
  return static_cast<std::uint64_t>(std::llround(std::ldexp(c, kCdfBits)));
}

rans::FrequencyTable bin_table(double mu, double log_s, std::span<const double> edges, std::uint32_t precision_r) {
  if (edges.size() < 2) throw Error(ErrorCode::InvalidArgument, "need at least one bin");
  if (!std::isfinite(mu) || !std::isfinite(log_s)) throw Error(ErrorCode::NonFinite, "non-finite logistic parameters");
  const auto masses = masses_from_edges(mu, log_s, edges);
  return rans::quantize(masses, precision_r);
}

WindowedTable posterior_table(double mu, double log_s, std::span<const double> edges, std::uint32_t precision_r) {
  if (edges.size() < 2) throw Error(ErrorCode::InvalidArgument, "need at least one bin");
  if (!std::isfinite(mu) || !std::isfinite(log_s)) throw Error(ErrorCode::NonFinite, "non-finite logistic parameters");
  const auto masses = masses_from_edges(mu, log_s, edges);
  // 1/(2M) expressed on the 2^-30 CDF grid.
  const double threshold = std::ldexp(1.0, kCdfBits - 1 - static_cast<int>(precision_r));
  std::size_t first = masses.size(), last = 0;
  for (std::size_t j = 0; j < masses.size(); ++j) {
    if (masses[j] >= threshold) {
      first = std::min(first, j);
      last = j;
    }
  }
  if (first == masses.size()) {
    // Only reachable when n_bins > M; fall back to the heaviest bin.
    first = last = static_cast<std::size_t>(std::max_element(masses.begin(), masses.end()) - masses.begin());
  }
  std::span<const double> window(masses.data() + first, last - first + 1);
  return {first, rans::quantize(window, precision_r)};
}

rans::FrequencyTable pixel_table(double mu, double log_s, std::uint32_t precision_r) {
  return bin_table(mu, log_s, pixel_edges(), precision_r);
}

// --- reservoir -------------------------------------------------------------------

std::uint16_t BitReservoir::next_word() {
  if (budget_bits_ && 16 * (served_ + 1) > *budget_bits_)
    throw Error(ErrorCode::InsufficientInitialBits,
                "reservoir budget of " + std::to_string(*budget_bits_) + " bits exhausted");
  ++served_;
  return static_cast<std::uint16_t>(rng_.next() >> 48);
}

std::vector<std::uint16_t> BitReservoir::words(std::uint64_t seed, std::size_t count) {
  BitReservoir r(seed);
  std::vector<std::uint16_t> out(count);
  for (auto& w : out) w = r.next_word();
  return out;
}

// --- record file -------------------------------------------------------------------

std::vector<std::uint8_t> CompressionRecord::serialize() const {
  if (n_extra > 0xFFFFFFFFULL) throw Error(ErrorCode::InvalidArgument, "n_extra does not fit the header");
  binio::Writer w;
  w.magic("NPCZ");
  w.u8(kRecordVersion);
  w.u8(static_cast<std::uint8_t>(codec));
  w.raw(model_hash);
  w.raw(bins_hash);
  w.u64(reservoir_seed);
  w.u32(static_cast<std::uint32_t>(n_extra));
  w.u16(static_cast<std::uint16_t>(shape.width));
  w.u16(static_cast<std::uint16_t>(shape.height));
  w.u8(static_cast<std::uint8_t>(shape.channels));
  w.u8(pair ? 1 : 0);
  w.raw(stream.serialize());
  return w.take();
}

CompressionRecord CompressionRecord::deserialize(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes);
  r.expect_magic("NPCZ");
  if (r.u8() != kRecordVersion) throw Error(ErrorCode::MalformedFile, "unsupported record version");
  CompressionRecord rec;
  const auto codec = r.u8();
  if (codec > 1) throw Error(ErrorCode::UnsupportedCodec, "unknown codec id " + std::to_string(codec));
  rec.codec = static_cast<CodecKind>(codec);
  auto mh = r.raw(8);
  std::copy(mh.begin(), mh.end(), rec.model_hash.begin());
  auto bh = r.raw(8);
  std::copy(bh.begin(), bh.end(), rec.bins_hash.begin());
  rec.reservoir_seed = r.u64();
  rec.n_extra = r.u32();
  rec.shape.width = r.u16();
  rec.shape.height = r.u16();
  rec.shape.channels = r.u8();
  const auto pair = r.u8();
  if (pair > 1) throw Error(ErrorCode::MalformedFile, "bad pair flag");
  rec.pair = pair == 1;
  if (rec.shape.size() == 0 || (rec.shape.channels != 1 && rec.shape.channels != 3))
    throw Error(ErrorCode::MalformedFile, "bad shape in record header");
  rec.stream = rans::Bitstream::deserialize(r.raw(r.remaining()));
  return rec;
}

// --- bits-back coding ---------------------------------------------------------------

BitsBackCodec::BitsBackCodec(const lvm::LatentModel& model, const Bins& bins)
    : model_(&model), bins_(&bins), model_hash_(model.hash()), bins_hash_(bins.hash()) {
  if (bins.model_hash != model_hash_) throw Error(ErrorCode::BinsMismatch, "bins were built for another model");
  if (bins.layers.size() != model.layers()) throw Error(ErrorCode::BinsMismatch, "bins have the wrong layer count");
  for (std::size_t i = 0; i < bins.layers.size(); ++i)
    if (bins.layers[i].dims() != model.latent_dim(i + 1))
      throw Error(ErrorCode::BinsMismatch, "bins have the wrong dimension");
  check_precisions(bins.precision_z, bins.precision_r);
  prior_table_ = bin_table(0.0, 0.0, bins.layers.back().edges.front(), bins.precision_r);
}

namespace {

// Primitive steps shared by the sender and the receiver. Encoders walk
// dimensions forward, so the matching decoders walk them backward.
struct Steps {
  const lvm::LatentModel& model;
  const Bins& bins;
  const rans::FrequencyTable& prior;

  std::uint32_t r() const { return bins.precision_r; }

  static void check(const rans::Coder& c) {
    if (c.underflowed()) throw Error(ErrorCode::CorruptStream, "stream exhausted mid-decode");
  }

  // Draw z_i from q(z_i | input) by decoding.
  std::vector<std::size_t> draw_q(rans::Coder& c, std::size_t i, const Eigen::VectorXd& input) const {
    const auto q = model.infer_layer(i, input);
    const auto& layer = bins.layers[i - 1];
    std::vector<std::size_t> idx(static_cast<std::size_t>(q.size()));
    for (std::size_t d = 0; d < idx.size(); ++d) {
      const auto e = static_cast<Eigen::Index>(d);
      const auto t = posterior_table(q.mu(e), q.log_s(e), layer.edges[d], r());
      idx[d] = t.offset + c.decode(t.table);
    }
    return idx;
  }

  // Give back the bits of a q draw by encoding it.
  void return_q(rans::Coder& c, std::size_t i, const Eigen::VectorXd& input, const std::vector<std::size_t>& idx) const {
    const auto q = model.infer_layer(i, input);
    const auto& layer = bins.layers[i - 1];
    for (std::size_t d = idx.size(); d-- > 0;) {
      const auto e = static_cast<Eigen::Index>(d);
      const auto t = posterior_table(q.mu(e), q.log_s(e), layer.edges[d], r());
      if (idx[d] < t.offset || idx[d] - t.offset >= t.table.size())
        throw Error(ErrorCode::CorruptStream, "latent outside its posterior window");
      c.encode(idx[d] - t.offset, t.table);
    }
  }

  // z_i under p(z_i | z_{i+1}), or under the prior when i == L.
  void put_p(rans::Coder& c, std::size_t i, const Eigen::VectorXd* z_next, const std::vector<std::size_t>& idx) const {
    if (i == model.layers()) {
      for (auto v : idx) c.encode(v, prior);
      return;
    }
    const auto p = model.generate_layer(i, *z_next);
    const auto& layer = bins.layers[i - 1];
    for (std::size_t d = 0; d < idx.size(); ++d) {
      const auto e = static_cast<Eigen::Index>(d);
      c.encode(idx[d], bin_table(p.mu(e), p.log_s(e), layer.edges[d], r()));
    }
  }

  std::vector<std::size_t> take_p(rans::Coder& c, std::size_t i, const Eigen::VectorXd* z_next) const {
    std::vector<std::size_t> idx(model.latent_dim(i));
    if (i == model.layers()) {
      for (std::size_t d = idx.size(); d-- > 0;) {
        check(c);
        idx[d] = c.decode(prior);
      }
      return idx;
    }
    const auto p = model.generate_layer(i, *z_next);
    const auto& layer = bins.layers[i - 1];
    for (std::size_t d = idx.size(); d-- > 0;) {
      const auto e = static_cast<Eigen::Index>(d);
      check(c);
      idx[d] = c.decode(bin_table(p.mu(e), p.log_s(e), layer.edges[d], r()));
    }
    return idx;
  }

  void put_x(rans::Coder& c, const Grid& x, const Eigen::VectorXd& z1) const {
    const auto p = model.observe_params(z1);
    for (std::size_t j = 0; j < x.size(); ++j) {
      const auto e = static_cast<Eigen::Index>(j);
      c.encode(x[j], pixel_table(p.mu(e), p.log_s(e), r()));
    }
  }

  Grid take_x(rans::Coder& c, const Shape& shape, const Eigen::VectorXd& z1) const {
    const auto p = model.observe_params(z1);
    Grid x(shape);
    for (std::size_t j = x.size(); j-- > 0;) {
      const auto e = static_cast<Eigen::Index>(j);
      check(c);
      x[j] = static_cast<std::uint8_t>(c.decode(pixel_table(p.mu(e), p.log_s(e), r())));
    }
    return x;
  }

  Eigen::VectorXd values(std::size_t i, const std::vector<std::size_t>& idx) const {
    return values_of(bins.layers[i - 1], idx);
  }
};

}  // namespace

void BitsBackCodec::encode_grid(rans::Coder& coder, const Grid& x, CodecKind codec) const {
  const Steps s{*model_, *bins_, prior_table_};
  const std::size_t L = model_->layers();
  const Eigen::VectorXd xn = lvm::normalize(x);
  std::vector<std::vector<std::size_t>> idx(L + 1);
  std::vector<Eigen::VectorXd> z(L + 1);

  if (codec == CodecKind::bbans) {
    const Eigen::VectorXd* input = &xn;
    for (std::size_t i = 1; i <= L; ++i) {
      idx[i] = s.draw_q(coder, i, *input);
      z[i] = s.values(i, idx[i]);
      input = &z[i];
    }
    s.put_x(coder, x, z[1]);
    for (std::size_t i = 1; i <= L; ++i) s.put_p(coder, i, i < L ? &z[i + 1] : nullptr, idx[i]);
  } else {
    idx[1] = s.draw_q(coder, 1, xn);
    z[1] = s.values(1, idx[1]);
    s.put_x(coder, x, z[1]);
    for (std::size_t i = 1; i < L; ++i) {
      idx[i + 1] = s.draw_q(coder, i + 1, z[i]);
      z[i + 1] = s.values(i + 1, idx[i + 1]);
      s.put_p(coder, i, &z[i + 1], idx[i]);
    }
    s.put_p(coder, L, nullptr, idx[L]);
  }
}

Grid BitsBackCodec::decode_grid(rans::Coder& coder, const Shape& shape, CodecKind codec) const {
  const Steps s{*model_, *bins_, prior_table_};
  const std::size_t L = model_->layers();
  std::vector<std::vector<std::size_t>> idx(L + 1);
  std::vector<Eigen::VectorXd> z(L + 1);
  Grid x;

  if (codec == CodecKind::bbans) {
    for (std::size_t i = L; i >= 1; --i) {
      idx[i] = s.take_p(coder, i, i < L ? &z[i + 1] : nullptr);
      z[i] = s.values(i, idx[i]);
    }
    x = s.take_x(coder, shape, z[1]);
    for (std::size_t i = L; i >= 2; --i) s.return_q(coder, i, z[i - 1], idx[i]);
    s.return_q(coder, 1, lvm::normalize(x), idx[1]);
  } else {
    idx[L] = s.take_p(coder, L, nullptr);
    z[L] = s.values(L, idx[L]);
    for (std::size_t i = L - 1; i >= 1; --i) {
      idx[i] = s.take_p(coder, i, &z[i + 1]);
      z[i] = s.values(i, idx[i]);
      s.return_q(coder, i + 1, z[i], idx[i + 1]);
    }
    x = s.take_x(coder, shape, z[1]);
    s.return_q(coder, 1, lvm::normalize(x), idx[1]);
  }
  return x;
}

CompressionRecord BitsBackCodec::encode(const AggregateInput& input, CodecKind codec, std::uint64_t reservoir_seed,
                                        std::optional<std::uint64_t> reservoir_budget_bits) const {
  const Shape shape = input.first.shape();
  if (shape.size() != model_->arch().input_dim) throw Error(ErrorCode::DimMismatch, "input does not match the model");
  if (input.is_pair() && (!input.second || input.second->shape() != shape))
    throw Error(ErrorCode::ShapeMismatch, "ordered pair members differ in shape");

  BitReservoir reservoir(reservoir_seed, reservoir_budget_bits);
  rans::Coder coder;
  // Seeding the state with one reservoir word keeps the first decode from
  // always landing on slot 0 and wasting the state's low half.
  coder.set_state(rans::kStateLower + reservoir.next_word());
  coder.set_underflow_source(&reservoir);
  encode_grid(coder, input.first, codec);
  if (input.is_pair()) encode_grid(coder, *input.second, codec);

  CompressionRecord rec;
  rec.stream = coder.bitstream();
  rec.n_extra = reservoir.bits_served();
  rec.model_hash = model_hash_;
  rec.bins_hash = bins_hash_;
  rec.codec = codec;
  rec.reservoir_seed = reservoir_seed;
  rec.shape = shape;
  rec.pair = input.is_pair();
  return rec;
}

AggregateInput BitsBackCodec::decode(const CompressionRecord& record) const {
  if (record.model_hash != model_hash_) throw Error(ErrorCode::HashMismatch, "record was made with another model");
  if (record.bins_hash != bins_hash_) throw Error(ErrorCode::BinsMismatch, "record was made with other bins");
  if (record.shape.size() != model_->arch().input_dim) throw Error(ErrorCode::DimMismatch, "record shape does not match the model");
  if (record.n_extra < 16 || record.n_extra % 16 != 0) throw Error(ErrorCode::CorruptStream, "bad reservoir bit count");

  rans::Coder coder(record.stream);
  Grid second;
  if (record.pair) second = decode_grid(coder, record.shape, record.codec);
  Grid first = decode_grid(coder, record.shape, record.codec);

  // Everything borrowed from the reservoir must come back out, in order.
  const auto expected = BitReservoir::words(record.reservoir_seed, record.n_extra / 16);
  std::vector<std::uint16_t> pulled(expected.begin() + 1, expected.end());
  std::reverse(pulled.begin(), pulled.end());
  if (coder.state() != rans::kStateLower + expected.front() || coder.words() != pulled)
    throw Error(ErrorCode::CorruptStream, "recovered bits do not match the reservoir");

  return record.pair ? AggregateInput::pair(std::move(first), std::move(second)) : AggregateInput::single(std::move(first));
}

CompressionRecord bb_encode(const lvm::LatentModel& model, const Bins& bins, const AggregateInput& input,
                            std::uint64_t reservoir_seed, std::optional<std::uint64_t> reservoir_budget_bits) {
  return BitsBackCodec(model, bins).encode(input, CodecKind::bbans, reservoir_seed, reservoir_budget_bits);
}

AggregateInput bb_decode(const lvm::LatentModel& model, const Bins& bins, const CompressionRecord& record) {
  if (record.codec != CodecKind::bbans) throw Error(ErrorCode::UnsupportedCodec, "record is not a BB-ANS stream");
  return BitsBackCodec(model, bins).decode(record);
}

CompressionRecord bitswap_encode(const lvm::LatentModel& model, const Bins& bins, const AggregateInput& input,
                                 std::uint64_t reservoir_seed, std::optional<std::uint64_t> reservoir_budget_bits) {
  return BitsBackCodec(model, bins).encode(input, CodecKind::bitswap, reservoir_seed, reservoir_budget_bits);
}

AggregateInput bitswap_decode(const lvm::LatentModel& model, const Bins& bins, const CompressionRecord& record) {
  if (record.codec != CodecKind::bitswap) throw Error(ErrorCode::UnsupportedCodec, "record is not a Bit-Swap stream");
  return BitsBackCodec(model, bins).decode(record);
}

double nelbo_length(const lvm::LatentModel& model, const AggregateInput& input, std::uint32_t n_samples,
                    std::uint64_t seed) {
  double nats = model.nelbo(input.first, n_samples, seed);
  if (input.is_pair()) {
    if (!input.second) throw Error(ErrorCode::InvalidArgument, "ordered pair without second item");
    nats += model.nelbo(*input.second, n_samples, seed);
  }
  return nats / std::log(2.0);
}

double net_bitrate(double net_bits, std::uint64_t dims) {
  if (dims == 0) throw Error(ErrorCode::InvalidArgument, "dimension count must be positive");
  return net_bits / static_cast<double>(dims);
}

double net_bitrate(const CompressionRecord& record) {
  return net_bitrate(static_cast<double>(record.net_bits()), record.input_dims());
}

}  // namespace npc::codec
