#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>

#include "fixtures.hpp"
#include "npc/npc.hpp"

using namespace npc;

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

// Brute-force kNN written independently of knn_vote.
std::uint16_t reference_vote(const std::vector<double>& dist, const std::vector<std::uint16_t>& labels, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t j = 0; j < dist.size(); ++j) order.emplace_back(dist[j], j);
  std::sort(order.begin(), order.end());
  std::map<std::uint16_t, std::pair<int, double>> tally;
  for (std::size_t n = 0; n < k; ++n) {
    tally[labels[order[n].second]].first += 1;
    tally[labels[order[n].second]].second += order[n].first;
  }
  std::uint16_t best = 0;
  int best_count = -1;
  double best_sum = 0.0;
  for (const auto& [label, v] : tally)
    if (v.first > best_count || (v.first == best_count && v.second < best_sum)) {
      best = label;
      best_count = v.first;
      best_sum = v.second;
    }
  return best;
}

}  // namespace

TEST_SUITE("npc") {
  TEST_CASE("metric formulas") {
    CHECK(ncd(100, 120, 150) == doctest::Approx(50.0 / 120.0));
    CHECK(ncd(7, 7, 7) == 0.0);
    CHECK(ncd(100, 120, 220) == doctest::Approx(1.0));
    CHECK(cdm(9, 9, 9) == 0.5);
    CHECK(cdm(100, 120, 220) == 1.0);
    CHECK(cdm(100, 120, 150) == doctest::Approx(150.0 / 220.0));
    CHECK(clm(9, 9, 9) == 0.0);
    CHECK(clm(100, 120, 220) == 1.0);
    CHECK(clm(100, 120, 150) == doctest::Approx(1.0 - 70.0 / 150.0));
    for (auto m : {Metric::ncd, Metric::cdm, Metric::clm}) {
      CHECK(code_of([&] { distance(m, 0, 5, 5); }) == ErrorCode::ZeroLength);
      CHECK(code_of([&] { distance(m, 5, 0, 5); }) == ErrorCode::ZeroLength);
      CHECK(parse_metric(to_string(m)) == m);
    }
    CHECK_THROWS_AS(parse_metric("l2"), Error);
  }

  TEST_CASE("one by one matrix") {
    const auto d = synth_generate(2, 1, 8, 8, 5);
    const auto h = compress::byte_handle("deflate");
    const auto test = d.subset(std::vector<std::size_t>{0});
    const auto support = d.subset(std::vector<std::size_t>{1});
    const auto m = distance_matrix(*h, Metric::cdm, Aggregation::max, test, support);
    REQUIRE(m.values.size() == 1);
    const double expected = cdm(h->measure(d.items[0]), h->measure(d.items[1]),
                                h->measure(aggregate(d.items[0], d.items[1], Aggregation::max)));
    CHECK(m.at(0, 0) == expected);
    CHECK(m.compressor == "deflate");
  }

  TEST_CASE("mock ideal: identical items are at distance zero") {
    const auto d = synth_generate(3, 4, 8, 8, 9);
    const auto m = distance_matrix(*compress::mock_ideal_handle(), Metric::ncd, Aggregation::avg, d, d);
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(m.at(i, i) == 0.0);
  }

  TEST_CASE("worker count, caching and role swap leave the matrix unchanged") {
    const auto& toy = fixtures::toy1();
    compress::NeuralOptions o;
    const auto h = compress::neural_handle(toy.model, toy.bins, o);
    const auto test = toy.data.subset(std::vector<std::size_t>{0, 150, 390});
    const auto support = toy.data.subset(std::vector<std::size_t>{7, 108, 209, 310});
    const auto serial = distance_matrix(*h, Metric::ncd, Aggregation::avg, test, support, {1, true});
    const auto parallel = distance_matrix(*h, Metric::ncd, Aggregation::avg, test, support, {8, true});
    const auto uncached = distance_matrix(*h, Metric::ncd, Aggregation::avg, test, support, {3, false});
    CHECK(serial.values == parallel.values);
    CHECK(serial.values == uncached.values);
    CHECK(serial.test_singles == parallel.test_singles);

    const auto swapped = distance_matrix(*h, Metric::ncd, Aggregation::avg, support, test, {2, true});
    for (std::size_t i = 0; i < test.size(); ++i)
      for (std::size_t j = 0; j < support.size(); ++j) CHECK(serial.at(i, j) == swapped.at(j, i));
  }

  TEST_CASE("cell failures name the cell") {
    const auto good = synth_generate(2, 2, 4, 4, 1);
    const auto h = compress::neural_handle(fixtures::toy1().model, nullptr, [] {
      compress::NeuralOptions o;
      o.mode = compress::NeuralMode::nelbo;
      return o;
    }());
    try {
      distance_matrix(*h, Metric::ncd, Aggregation::avg, good, good, {1, false});
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DimMismatch);
      CHECK(std::string(e.what()).find("at cell (0, 0)") != std::string::npos);
    }
    const auto other = synth_generate(2, 2, 8, 8, 1);
    CHECK(code_of([&] { distance_matrix(*compress::mock_ideal_handle(), Metric::ncd, Aggregation::avg, good, other); }) ==
          ErrorCode::ShapeMismatch);
  }

  TEST_CASE("kNN vote examples") {
    const std::vector<double> dist{0.1, 0.2, 0.3};
    const std::vector<std::uint16_t> labels{0, 1, 0};
    CHECK(knn_vote(dist, labels, {2, TieBreak::min_distance_sum}) == 0);
    CHECK(knn_vote(dist, labels, {1, TieBreak::min_distance_sum}) == 0);
    CHECK(knn_vote(std::vector<double>{0.3, 0.2, 0.1}, labels, {1, TieBreak::min_distance_sum}) == 0);
    CHECK(knn_vote(std::vector<double>{0.2, 0.1, 0.3}, std::vector<std::uint16_t>{3, 1, 0}, {2, TieBreak::lowest_label}) == 1);
    CHECK(knn_vote(std::vector<double>{0.2, 0.1, 0.3}, std::vector<std::uint16_t>{3, 2, 0}, {2, TieBreak::lowest_label}) == 2);
    // Equal distances and equal sums fall back to the lowest label.
    CHECK(knn_vote(std::vector<double>{0.5, 0.5}, std::vector<std::uint16_t>{4, 2}, {2, TieBreak::min_distance_sum}) == 2);
    CHECK(code_of([&] { knn_vote(dist, labels, {4, TieBreak::min_distance_sum}); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([&] { knn_vote(dist, labels, {0, TieBreak::min_distance_sum}); }) == ErrorCode::InvalidArgument);
    CHECK(KnnConfig::for_channels(1).k == 2);
    CHECK(KnnConfig::for_channels(3).k == 3);
  }

  TEST_CASE("kNN agrees with a brute-force reference and is scale invariant") {
    SplitMix64 rng(77);
    for (int trial = 0; trial < 500; ++trial) {
      DistanceMatrix m;
      m.rows = 1 + rng.below(4);
      m.cols = 3 + rng.below(12);
      std::vector<std::uint16_t> labels(m.cols);
      for (auto& l : labels) l = static_cast<std::uint16_t>(rng.below(4));
      for (std::size_t c = 0; c < m.rows * m.cols; ++c) m.values.push_back(double(rng.below(6)) / 5.0);
      const std::size_t k = 1 + rng.below(m.cols);
      const KnnConfig cfg{k, TieBreak::min_distance_sum};
      const auto pred = knn_predict(m, labels, cfg);
      DistanceMatrix scaled = m;
      for (auto& v : scaled.values) v *= 4.0;
      CHECK(knn_predict(scaled, labels, cfg) == pred);
      for (std::size_t i = 0; i < m.rows; ++i) {
        const std::vector<double> row(m.row(i).begin(), m.row(i).end());
        REQUIRE(pred[i] == reference_vote(row, labels, k));
      }
    }
  }

  TEST_CASE("latent kNN") {
    const auto& toy = fixtures::toy1();
    std::vector<std::size_t> sidx, tidx;
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t s = 0; s < 5; ++s) sidx.push_back(c * 100 + s);
    for (std::size_t i = 0; i < 400; i += 7)
      if (i % 100 >= 5) tidx.push_back(i);
    const auto support = toy.data.subset(sidx);
    const auto test = toy.data.subset(tidx);
    const auto a = latent_knn(*toy.model, support, test, {2, TieBreak::min_distance_sum}, 1);
    const auto b = latent_knn(*toy.model, support, test, {2, TieBreak::min_distance_sum}, 8);
    CHECK(a == b);
    CHECK(accuracy(a, *test.labels) > 0.25 + 0.1);

    const auto self = latent_knn(*toy.model, support, support.subset(std::vector<std::size_t>{3, 12}),
                                 {1, TieBreak::min_distance_sum});
    CHECK(self == std::vector<std::uint16_t>{(*support.labels)[3], (*support.labels)[12]});
  }

  TEST_CASE("accuracy") {
    const std::vector<std::uint16_t> truth{1, 2, 3, 4};
    CHECK(accuracy(truth, truth) == 1.0);
    CHECK(accuracy(std::vector<std::uint16_t>{0, 0, 0, 0}, truth) == 0.0);
    CHECK(accuracy(std::vector<std::uint16_t>{1, 2, 0, 0}, truth) == 0.5);
    CHECK_THROWS_AS(accuracy(std::vector<std::uint16_t>{1}, truth), Error);
  }

  TEST_CASE("parallel_for reports the lowest failing index") {
    std::vector<int> hits(100, 0);
    parallel_for(100, 4, [&](std::size_t i) { hits[i] += 1; });
    CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
    for (std::size_t workers : {1u, 8u}) {
      try {
        parallel_for(50, workers, [](std::size_t i) {
          if (i == 17 || i == 31) throw Error(ErrorCode::NonFinite, std::to_string(i));
        });
        FAIL("expected an error");
      } catch (const Error& e) {
        CHECK(std::string(e.what()).find("17") != std::string::npos);
      }
    }
  }

  TEST_CASE("matrix file and column selection") {
    const auto d = synth_generate(2, 3, 4, 4, 2);
    const auto m = distance_matrix(*compress::byte_handle("zlib"), Metric::clm, Aggregation::concat, d, d, {2, true});
    const auto bytes = m.serialize();
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "NPCX");
    const auto back = DistanceMatrix::deserialize(bytes);
    CHECK(back.values == m.values);
    CHECK(back.metric == Metric::clm);
    CHECK(back.aggregation == Aggregation::concat);
    CHECK(back.compressor == "zlib");
    auto cut = bytes;
    cut.pop_back();
    CHECK(code_of([&] { DistanceMatrix::deserialize(cut); }) == ErrorCode::MalformedFile);

    const auto path = std::filesystem::temp_directory_path() / "npc_matrix.npcx";
    m.save(path);
    CHECK(DistanceMatrix::load(path).values == m.values);
    std::filesystem::remove(path);

    const std::vector<std::size_t> cols{4, 1};
    const auto sub = m.select_columns(cols);
    CHECK(sub.cols == 2);
    for (std::size_t i = 0; i < m.rows; ++i) {
      CHECK(sub.at(i, 0) == m.at(i, 4));
      CHECK(sub.at(i, 1) == m.at(i, 1));
    }
    CHECK_THROWS_AS(m.select_columns(std::vector<std::size_t>{6}), Error);
  }
}
