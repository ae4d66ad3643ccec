#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "npc/codec.hpp"

using namespace npc;
using namespace npc::codec;

namespace {

template <class Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidArgument;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = a.size();
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_SUITE("codec") {
  TEST_CASE("prior layer edges are logistic quantiles") {
    const auto& toy = fixtures::toy1();
    const auto stats = estimate_latent_stats(*toy.model, toy.data.subset(std::vector<std::size_t>{0, 1}), 1, 1);
    const auto bins = build_bins(*toy.model, stats, 4);
    REQUIRE(bins.layers.size() == 1);
    const auto& prior = bins.layers[0];
    CHECK(prior.scheme == Scheme::equal_mass);
    const auto& e = prior.edges[0];
    REQUIRE(e.size() == 17);
    CHECK(std::isinf(e.front()));
    CHECK(e.front() < 0);
    CHECK(std::isinf(e.back()));
    CHECK(e[4] == doctest::Approx(-std::log(3.0)).epsilon(1e-12));
    CHECK(e[8] == doctest::Approx(0.0));
    CHECK(e[12] == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    for (std::size_t j = 1; j < e.size(); ++j) CHECK(e[j] > e[j - 1]);

    // Each bin carries prior mass 1/16 on the 2^-30 grid.
    for (std::size_t j = 0; j < 16; ++j) {
      const auto lo = j == 0 ? 0 : fixed_cdf(e[j], 0.0, 0.0);
      const auto hi = j == 15 ? (1ull << kCdfBits) : fixed_cdf(e[j + 1], 0.0, 0.0);
      CHECK(std::llabs(static_cast<long long>(hi - lo) - (1ll << (kCdfBits - 4))) <= 1);
    }
  }

  TEST_CASE("equal-width layer over [-4, 4]") {
    const auto& toy = fixtures::toy2();
    LatentStats stats;
    stats.model_hash = toy.model->hash();
    stats.lo.assign(1, std::vector<double>(16, -4.0));
    stats.hi.assign(1, std::vector<double>(16, 4.0));
    const auto bins = build_bins(*toy.model, stats, 4);
    const auto& layer = bins.layers[0];
    CHECK(layer.scheme == Scheme::equal_width);
    CHECK(bins.layers[1].scheme == Scheme::equal_mass);
    const auto& e = layer.edges[3];
    REQUIRE(e.size() == 17);
    for (std::size_t j = 2; j + 1 < e.size(); ++j) CHECK(e[j] - e[j - 1] == doctest::Approx(0.5));
    CHECK(e[8] == doctest::Approx(0.0));
    CHECK(std::isinf(e[0]));
    CHECK(std::isinf(e[16]));
    CHECK(layer.centers[3][0] == doctest::Approx(-3.75));
  }

  TEST_CASE("precision limits") {
    const auto& toy = fixtures::toy1();
    const auto stats = estimate_latent_stats(*toy.model, toy.data.subset(std::vector<std::size_t>{0}), 1, 1);
    CHECK(code_of([&] { build_bins(*toy.model, stats, 3); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([&] { build_bins(*toy.model, stats, 15); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([&] { build_bins(*toy.model, stats, 12, 10); }) == ErrorCode::TooManySymbols);
  }

  TEST_CASE("bin tables") {
    std::vector<double> edges(17);
    edges[0] = -INFINITY;
    edges[16] = INFINITY;
    for (int j = 1; j < 16; ++j) edges[j] = std::log(j / 16.0) - std::log1p(-j / 16.0);

    const auto uniform = bin_table(0.0, 0.0, edges, 14);
    const auto [mn, mx] = std::minmax_element(uniform.freqs().begin(), uniform.freqs().end());
    CHECK(double(*mx) / double(*mn) <= 1.05);

    // A tight logistic centred in bin 9 puts all spare mass there.
    const double centre = std::log(9.5 / 16) - std::log1p(-9.5 / 16);
    const auto sharp = bin_table(centre, -7.0, edges, 14);
    CHECK(sharp.freq(9) == (1u << 14) - 15);
    for (std::size_t j = 0; j < 16; ++j)
      if (j != 9) CHECK(sharp.freq(j) == 1);

    for (double mu : {-3.0, 0.1, 2.0}) {
      const auto t = bin_table(mu, -1.0, edges, 12);
      CHECK(std::accumulate(t.freqs().begin(), t.freqs().end(), 0u) == 4096u);
    }
  }

  TEST_CASE("posterior window covers the bins with real mass") {
    std::vector<double> edges{-INFINITY};
    for (int j = 1; j < 64; ++j) edges.push_back(-4.0 + j * 0.125);
    edges.push_back(INFINITY);
    const auto w = posterior_table(0.3, -3.0, edges, 14);
    CHECK(w.offset > 0);
    CHECK(w.offset + w.table.size() < 64);
    const double inside = 0.3;
    std::size_t bin = 0;
    while (edges[bin + 1] <= inside) ++bin;
    CHECK(bin >= w.offset);
    CHECK(bin < w.offset + w.table.size());
  }

  TEST_CASE("pixel table") {
    const auto t = pixel_table(lvm::normalize_pixel(200), -4.0, 14);
    CHECK(t.size() == 256);
    const auto peak = std::max_element(t.freqs().begin(), t.freqs().end()) - t.freqs().begin();
    CHECK(peak == 200);
  }

  TEST_CASE("latent statistics are repeatable and cover fresh draws") {
    const auto& toy = fixtures::toy2();
    const auto sample = toy.data.subset(std::vector<std::size_t>{0, 50, 100, 150, 200, 250, 300, 350});
    const auto a = estimate_latent_stats(*toy.model, sample, 8, 9);
    CHECK(a == estimate_latent_stats(*toy.model, sample, 8, 9));
    CHECK(LatentStats::deserialize(a.serialize()) == a);

    SplitMix64 rng(1234);
    std::size_t inside = 0, total = 0;
    for (std::size_t i = 1; i < toy.data.size(); i += 7) {
      const auto q = toy.model->infer_layer(1, lvm::normalize(toy.data.items[i]));
      for (Eigen::Index d = 0; d < q.size(); ++d, ++total) {
        const double z = lvm::logistic_sample(q.mu(d), q.log_s(d), rng.open_unit());
        inside += z >= a.lo[0][d] && z <= a.hi[0][d];
      }
    }
    CHECK(double(inside) >= 0.99 * double(total));
  }

  TEST_CASE("reservoir words are seeded and budgeted") {
    CHECK(BitReservoir::words(5, 10) == BitReservoir::words(5, 10));
    CHECK(BitReservoir::words(5, 10) != BitReservoir::words(6, 10));
    BitReservoir r(5, 32);
    r.next_word();
    r.next_word();
    CHECK(r.bits_served() == 32);
    CHECK(code_of([&] { r.next_word(); }) == ErrorCode::InsufficientInitialBits);
  }

  TEST_CASE("round trips: single items, pairs, both codecs, one and two layers") {
    for (const auto* toy : {&fixtures::toy1(), &fixtures::toy2()}) {
      const BitsBackCodec coder(*toy->model, *toy->bins);
      for (auto kind : {CodecKind::bbans, CodecKind::bitswap}) {
        for (std::size_t i = 0; i < 400; i += 40) {
          const auto in = AggregateInput::single(toy->data.items[i]);
          const auto rec = coder.encode(in, kind, 100 + i);
          const auto back = coder.decode(CompressionRecord::deserialize(rec.serialize()));
          CHECK(back.first == in.first);
          CHECK_FALSE(back.is_pair());
          CHECK(rec.n_extra % 16 == 0);
          CHECK(rec.n_extra > 0);
        }
        const auto pair = aggregate(toy->data.items[3], toy->data.items[250], Aggregation::concat);
        const auto rec = coder.encode(pair, kind, 7);
        CHECK(rec.pair);
        const auto back = coder.decode(rec);
        REQUIRE(back.is_pair());
        CHECK(back.first == pair.first);
        CHECK(*back.second == *pair.second);
      }
    }
  }

  TEST_CASE("wrappers check the codec kind") {
    const auto& toy = fixtures::toy2();
    const auto in = AggregateInput::single(toy.data.items[1]);
    const auto bb = bb_encode(*toy.model, *toy.bins, in, 3);
    const auto bs = bitswap_encode(*toy.model, *toy.bins, in, 3);
    CHECK(bb.codec == CodecKind::bbans);
    CHECK(bs.codec == CodecKind::bitswap);
    CHECK(bb_decode(*toy.model, *toy.bins, bb).first == in.first);
    CHECK(bitswap_decode(*toy.model, *toy.bins, bs).first == in.first);
    CHECK(code_of([&] { bb_decode(*toy.model, *toy.bins, bs); }) == ErrorCode::UnsupportedCodec);
    CHECK(parse_codec("bitswap") == CodecKind::bitswap);
    CHECK(code_of([] { parse_codec("lzma"); }) == ErrorCode::UnsupportedCodec);
  }

  TEST_CASE("one latent layer: both codecs write the same stream") {
    const auto& toy = fixtures::toy1();
    for (std::size_t i = 0; i < 400; i += 57) {
      const auto in = AggregateInput::single(toy.data.items[i]);
      const auto a = bb_encode(*toy.model, *toy.bins, in, 11);
      const auto b = bitswap_encode(*toy.model, *toy.bins, in, 11);
      CHECK(a.stream == b.stream);
      CHECK(a.n_extra == b.n_extra);
    }
  }

  TEST_CASE("two latent layers: Bit-Swap borrows no more bits") {
    const auto& toy = fixtures::toy2();
    for (std::size_t i = 0; i < 400; i += 20) {
      const auto in = AggregateInput::single(toy.data.items[i]);
      CHECK(bitswap_encode(*toy.model, *toy.bins, in, 11).n_extra <= bb_encode(*toy.model, *toy.bins, in, 11).n_extra);
    }
  }

  TEST_CASE("mismatched model, bins and corrupted streams") {
    const auto& toy = fixtures::toy1();
    const auto& other = fixtures::toy2();
    const BitsBackCodec coder(*toy.model, *toy.bins);
    const auto rec = coder.encode(AggregateInput::single(toy.data.items[0]), CodecKind::bbans, 5);

    CHECK(code_of([&] { BitsBackCodec(*toy.model, *other.bins); }) == ErrorCode::BinsMismatch);

    const auto stranger = lvm::LatentModel::init(toy.model->arch());
    const auto stranger_bins = build_bins(stranger, estimate_latent_stats(stranger, toy.data, 1, 1), 10);
    CHECK(code_of([&] { BitsBackCodec(stranger, stranger_bins).decode(rec); }) == ErrorCode::HashMismatch);

    const auto coarse = build_bins(*toy.model, estimate_latent_stats(*toy.model, toy.data, 1, 1), 8);
    CHECK(code_of([&] { BitsBackCodec(*toy.model, coarse).decode(rec); }) == ErrorCode::BinsMismatch);

    auto bad = rec;
    bad.stream.words[bad.stream.words.size() / 2] ^= 0x0101;
    CHECK_THROWS_AS(coder.decode(bad), Error);

    auto short_extra = rec;
    short_extra.n_extra = 8;
    CHECK(code_of([&] { coder.decode(short_extra); }) == ErrorCode::CorruptStream);

    CHECK(code_of([&] { coder.encode(AggregateInput::single(toy.data.items[0]), CodecKind::bbans, 5, 16); }) ==
          ErrorCode::InsufficientInitialBits);
    CHECK(code_of([&] { coder.encode(AggregateInput::single(Grid(Shape{4, 4, 1})), CodecKind::bbans, 5); }) ==
          ErrorCode::DimMismatch);
  }

  TEST_CASE("compressed file layout") {
    const auto& toy = fixtures::toy1();
    const auto rec = bb_encode(*toy.model, *toy.bins, AggregateInput::single(toy.data.items[9]), 0xABCD);
    const auto bytes = rec.serialize();
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "NPCZ");
    CHECK(bytes[5] == 0);  // codec id
    CHECK(std::equal(rec.model_hash.begin(), rec.model_hash.end(), bytes.begin() + 6));
    CHECK(bytes[22] == 0xCD);
    CHECK(CompressionRecord::deserialize(bytes) == rec);
    auto bad = bytes;
    bad[0] = 'Q';
    CHECK(code_of([&] { CompressionRecord::deserialize(bad); }) == ErrorCode::MalformedFile);
  }

  TEST_CASE("nelbo length") {
    const auto& toy = fixtures::toy1();
    const Grid& x = toy.data.items[4];
    const Grid& y = toy.data.items[44];
    CHECK(nelbo_length(*toy.model, AggregateInput::single(x), 3, 8) == toy.model->nelbo(x, 3, 8) / std::log(2.0));
    const double pair = nelbo_length(*toy.model, AggregateInput::pair(x, y), 3, 8);
    CHECK(pair == doctest::Approx(nelbo_length(*toy.model, AggregateInput::single(x), 3, 8) +
                                  nelbo_length(*toy.model, AggregateInput::single(y), 3, 8)));
  }

  TEST_CASE("net bits track the nelbo") {
    const auto& toy = fixtures::toy1();
    const BitsBackCodec coder(*toy.model, *toy.bins);
    std::vector<double> net, nelbo;
    for (std::size_t i = 0; i < 400; i += 4) {
      const auto in = AggregateInput::single(toy.data.items[i]);
      net.push_back(double(coder.encode(in, CodecKind::bbans, i).net_bits()));
      nelbo.push_back(nelbo_length(*toy.model, in, 1, i));
    }
    const double mean_net = std::accumulate(net.begin(), net.end(), 0.0) / net.size();
    const double mean_nelbo = std::accumulate(nelbo.begin(), nelbo.end(), 0.0) / nelbo.size();
    CHECK(std::abs(mean_net - mean_nelbo) / mean_nelbo <= 0.05);
    CHECK(pearson(net, nelbo) >= 0.95);
    CHECK(mean_net / 256.0 < 8.0);
  }

  TEST_CASE("net bitrate arithmetic") {
    CHECK(net_bitrate(800.0 - 160.0, 64) == 10.0);
    CompressionRecord r;
    r.stream.words.assign(48, 0);  // 16*48 + 32 = 800 bits
    r.n_extra = 160;
    r.shape = Shape{8, 8, 1};
    CHECK(r.total_bits() == 800);
    CHECK(net_bitrate(r) == 10.0);
    r.n_extra = 800;
    CHECK(net_bitrate(r) == 0.0);
    CHECK_THROWS_AS(net_bitrate(1.0, 0), Error);
  }
}
