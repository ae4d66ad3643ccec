#include <doctest.h>

#include <cmath>
#include <numeric>

#include "npc/random.hpp"
#include "npc/rans.hpp"

using namespace npc;
using namespace npc::rans;

namespace {

std::vector<std::uint32_t> freqs_of(const FrequencyTable& t) { return {t.freqs().begin(), t.freqs().end()}; }

FrequencyTable random_table(SplitMix64& rng, std::uint32_t precision, std::size_t symbols) {
  std::vector<double> p(symbols);
  for (auto& v : p) v = rng.open_unit();
  return quantize(p, precision);
}

}  // namespace

TEST_SUITE("rans") {
  TEST_CASE("quantize examples") {
    const double a[] = {0.75, 0.25};
    CHECK(freqs_of(quantize(a, 2)) == std::vector<std::uint32_t>{3, 1});
    const double b[] = {0.5, 0.5};
    CHECK(freqs_of(quantize(b, 8)) == std::vector<std::uint32_t>{128, 128});
    const double c[] = {1.0, 0.0};
    CHECK(freqs_of(quantize(c, 2)) == std::vector<std::uint32_t>{3, 1});
  }

  TEST_CASE("quantize always yields exact mass and positive counts") {
    SplitMix64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      const auto r = static_cast<std::uint32_t>(4 + rng.below(13));
      const std::size_t n = 1 + rng.below(std::min<std::uint64_t>(300, 1ULL << r));
      std::vector<double> p(n);
      for (auto& v : p) v = rng.below(4) == 0 ? 0.0 : rng.open_unit();
      p[0] += 1e-3;
      const auto t = quantize(p, r);
      CHECK(std::accumulate(t.freqs().begin(), t.freqs().end(), 0ull) == (1ull << r));
      for (auto f : t.freqs()) CHECK(f >= 1);
      CHECK(t.cumfreq(0) == 0);
    }
  }

  TEST_CASE("quantize rejects too many symbols") {
    std::vector<double> p(5, 0.2);
    try {
      quantize(p, 2);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::TooManySymbols);
    }
  }

  TEST_CASE("encode and decode single symbols by hand") {
    const FrequencyTable t(2, {3, 1});
    Coder c;
    c.set_state(1);
    c.encode(1, t);
    CHECK(c.state() == 7);
    c.set_state(1);
    c.encode(0, t);
    CHECK(c.state() == 1);

    c.set_state(7);
    CHECK(c.decode(t) == 1);
    CHECK(c.state() == 1);
    c.set_state(1);
    CHECK(c.decode(t) == 0);
    CHECK(c.state() == 1);

    const FrequencyTable bin(1, {1, 1});
    c.set_state(1);
    c.encode(1, bin);
    CHECK(c.state() == 3);
  }

  TEST_CASE("half-open slot rule") {
    const FrequencyTable t(3, {2, 3, 3});
    CHECK(t.symbol_for_slot(0) == 0);
    CHECK(t.symbol_for_slot(1) == 0);
    CHECK(t.symbol_for_slot(2) == 1);
    CHECK(t.symbol_for_slot(4) == 1);
    CHECK(t.symbol_for_slot(5) == 2);
    CHECK(t.symbol_for_slot(7) == 2);
  }

  TEST_CASE("random symbol round trips keep the state in range") {
    SplitMix64 rng(17);
    for (int i = 0; i < 100000; ++i) {
      const auto t = random_table(rng, 14, 2 + rng.below(40));
      Coder c;
      c.set_state(kStateLower + rng.below(kStateUpper - kStateLower));
      const auto before = c.state();
      const auto v = static_cast<std::size_t>(rng.below(t.size()));
      c.encode(v, t);
      REQUIRE(c.state() >= kStateLower);
      REQUIRE(c.state() < kStateUpper);
      REQUIRE(c.decode(t) == v);
      REQUIRE(c.state() == before);
      REQUIRE(c.words().empty());
    }
  }

  TEST_CASE("sequences are LIFO and round trip") {
    SplitMix64 rng(3);
    for (std::size_t n : {0u, 1u, 10000u}) {
      std::vector<FrequencyTable> tables;
      std::vector<std::size_t> symbols;
      for (std::size_t i = 0; i < n; ++i) {
        tables.push_back(random_table(rng, 12, 2 + rng.below(20)));
        symbols.push_back(rng.below(tables.back().size()));
      }
      const auto bs = encode_sequence(symbols, tables);
      if (n == 0) CHECK(bs.bit_length() == 32);
      std::vector<FrequencyTable> rev(tables.rbegin(), tables.rend());
      auto out = decode_sequence(bs, rev);
      std::reverse(out.begin(), out.end());
      CHECK(out == symbols);
    }
  }

  TEST_CASE("sequence length bound") {
    SplitMix64 rng(8);
    std::vector<FrequencyTable> tables;
    std::vector<std::size_t> symbols;
    double info = 0.0;
    for (int i = 0; i < 3000; ++i) {
      tables.push_back(random_table(rng, 14, 3 + rng.below(10)));
      symbols.push_back(rng.below(tables.back().size()));
      info += std::log2(double(tables.back().total()) / tables.back().freq(symbols.back()));
    }
    const auto bs = encode_sequence(symbols, tables);
    CHECK(double(bs.bit_length()) <= info + 32 + 16);
  }

  TEST_CASE("Bernoulli(0.9) stream costs its cross-entropy") {
    const double p[] = {0.1, 0.9};
    const auto t = quantize(p, 14);
    const double M = t.total();
    const double expected = -(0.9 * std::log2(t.freq(1) / M) + 0.1 * std::log2(t.freq(0) / M));
    SplitMix64 rng(21);
    std::vector<std::size_t> symbols(10000);
    for (auto& s : symbols) s = rng.open_unit() < 0.9 ? 1 : 0;
    std::vector<FrequencyTable> tables(symbols.size(), t);
    const auto bs = encode_sequence(symbols, tables);
    CHECK(std::abs(double(bs.bit_length()) / symbols.size() - expected) < 0.02);
  }

  TEST_CASE("encoding on top of an initial stream") {
    const FrequencyTable t(4, {5, 6, 5});
    const std::vector<std::size_t> first{0, 1, 2, 1};
    const std::vector<std::size_t> second{2, 2, 0};
    std::vector<FrequencyTable> t1(first.size(), t), t2(second.size(), t);
    const auto base = encode_sequence(first, t1);
    const auto bs = encode_sequence(second, t2, base);
    std::vector<FrequencyTable> all(7, t);
    auto out = decode_sequence(bs, all);
    CHECK(std::vector<std::size_t>(out.begin(), out.begin() + 3) == std::vector<std::size_t>{0, 2, 2});
    CHECK(std::vector<std::size_t>(out.begin() + 3, out.end()) == std::vector<std::size_t>{1, 2, 1, 0});
  }

  TEST_CASE("decoding past the stream start is corrupt") {
    const FrequencyTable t(8, std::vector<std::uint32_t>(256, 1));
    std::vector<FrequencyTable> tables(20, t);
    const auto bs = encode_sequence(std::vector<std::size_t>(2, 7), std::vector<FrequencyTable>(2, t));
    try {
      decode_sequence(bs, tables);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::CorruptStream);
    }
  }

  TEST_CASE("bitstream serialization") {
    Bitstream bs{{1, 0xBEEF, 7}, 0x12345678};
    const auto bytes = bs.serialize();
    REQUIRE(bytes.size() == 14);
    CHECK(bytes[0] == 0x78);
    CHECK(bytes[4] == 3);
    CHECK(bytes[10] == 0xEF);
    CHECK(Bitstream::deserialize(bytes) == bs);
    CHECK(bs.bit_length() == 80);
    auto cut = bytes;
    cut.pop_back();
    CHECK_THROWS_AS(Bitstream::deserialize(cut), Error);
  }
}
