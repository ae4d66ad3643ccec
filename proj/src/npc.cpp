#include "npc/npc.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include "npc/binio.hpp"

namespace npc {

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::ncd: return "ncd";
    case Metric::cdm: return "cdm";
    case Metric::clm: return "clm";
  }
  return "?";
}

Metric parse_metric(std::string_view name) {
  if (name == "ncd") return Metric::ncd;
  if (name == "cdm") return Metric::cdm;
  if (name == "clm") return Metric::clm;
  throw Error(ErrorCode::InvalidArgument, "unknown metric '" + std::string(name) + "'");
}

namespace {

void require_lengths(double cx, double cy) {
  if (!(cx > 0.0) || !(cy > 0.0)) throw Error(ErrorCode::ZeroLength, "compressed lengths must be positive");
}

}  // namespace

double ncd(double cx, double cy, double cxy) {
  require_lengths(cx, cy);
  return (cxy - std::min(cx, cy)) / std::max(cx, cy);
}

double cdm(double cx, double cy, double cxy) {
  require_lengths(cx, cy);
  return cxy / (cx + cy);
}

double clm(double cx, double cy, double cxy) {
  require_lengths(cx, cy);
  if (!(cxy > 0.0)) throw Error(ErrorCode::ZeroLength, "joint length must be positive");
  return 1.0 - (cx + cy - cxy) / cxy;
}

double distance(Metric m, double cx, double cy, double cxy) {
  switch (m) {
    case Metric::ncd: return ncd(cx, cy, cxy);
    case Metric::cdm: return cdm(cx, cy, cxy);
    case Metric::clm: return clm(cx, cy, cxy);
  }
  throw Error(ErrorCode::InvalidArgument, "bad metric");
}

void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(count, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed_at = count;
  std::exception_ptr failure;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      {
        std::lock_guard lock(mu);
        if (i > failed_at) return;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < failed_at) {
          failed_at = i;
          failure = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

DistanceMatrix DistanceMatrix::select_columns(std::span<const std::size_t> columns) const {
  DistanceMatrix out;
  out.rows = rows;
  out.cols = columns.size();
  out.metric = metric;
  out.aggregation = aggregation;
  out.compressor = compressor;
  out.test_singles = test_singles;
  out.values.reserve(rows * columns.size());
  for (std::size_t i = 0; i < rows; ++i)
    for (auto j : columns) {
      if (j >= cols) throw Error(ErrorCode::InvalidArgument, "column index out of range");
      out.values.push_back(at(i, j));
    }
  if (!support_singles.empty())
    for (auto j : columns) out.support_singles.push_back(support_singles[j]);
  return out;
}

std::vector<std::uint8_t> DistanceMatrix::serialize() const {
  binio::Writer w;
  w.magic("NPCX");
  w.u32(static_cast<std::uint32_t>(rows));
  w.u32(static_cast<std::uint32_t>(cols));
  w.str(to_string(metric));
  w.str(to_string(aggregation));
  w.str(compressor);
  for (double v : values) w.f64(v);
  return w.take();
}

DistanceMatrix DistanceMatrix::deserialize(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes);
  r.expect_magic("NPCX");
  DistanceMatrix m;
  m.rows = r.u32();
  m.cols = r.u32();
  try {
    m.metric = parse_metric(r.str());
    m.aggregation = parse_aggregation(r.str());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::MalformedFile) throw;
    throw Error(ErrorCode::MalformedFile, e.what());
  }
  m.compressor = r.str();
  if (r.remaining() != m.rows * m.cols * 8) throw Error(ErrorCode::MalformedFile, "distance payload has wrong length");
  m.values.resize(m.rows * m.cols);
  for (auto& v : m.values) v = r.f64();
  return m;
}

void DistanceMatrix::save(const std::filesystem::path& path) const { binio::write_file(path, serialize()); }
DistanceMatrix DistanceMatrix::load(const std::filesystem::path& path) { return deserialize(binio::read_file(path)); }

DistanceMatrix distance_matrix(const compress::CompressorHandle& handle, Metric metric, Aggregation method,
                               const Dataset& test, const Dataset& support, const MatrixOptions& options) {
  if (test.empty() || support.empty()) throw Error(ErrorCode::InvalidArgument, "test and support must be non-empty");
  if (test.shape() != support.shape()) throw Error(ErrorCode::ShapeMismatch, "test and support shapes differ");

  DistanceMatrix m;
  m.rows = test.size();
  m.cols = support.size();
  m.metric = metric;
  m.aggregation = method;
  m.compressor = handle.name();
  m.values.assign(m.rows * m.cols, 0.0);

  auto cell_error = [](const Error& e, std::size_t i, std::size_t j) {
    return Error(e.code(), std::string(e.what()) + " at cell (" + std::to_string(i) + ", " + std::to_string(j) + ")");
  };

  if (options.cache_singles) {
    m.test_singles.assign(m.rows, 0.0);
    m.support_singles.assign(m.cols, 0.0);
    parallel_for(m.rows + m.cols, options.workers, [&](std::size_t k) {
      if (k < m.rows) m.test_singles[k] = handle.measure(test.items[k]);
      else m.support_singles[k - m.rows] = handle.measure(support.items[k - m.rows]);
    });
  }

  parallel_for(m.rows * m.cols, options.workers, [&](std::size_t cell) {
    const std::size_t i = cell / m.cols, j = cell % m.cols;
    try {
      const double cx = options.cache_singles ? m.test_singles[i] : handle.measure(test.items[i]);
      const double cy = options.cache_singles ? m.support_singles[j] : handle.measure(support.items[j]);
      const double cxy = handle.joint(test.items[i], support.items[j], method);
      m.values[cell] = distance(metric, cx, cy, cxy);
    } catch (const Error& e) {
      throw cell_error(e, i, j);
    }
  });
  return m;
}

std::uint16_t knn_vote(std::span<const double> distances, std::span<const std::uint16_t> labels, const KnnConfig& cfg) {
  if (labels.size() != distances.size()) throw Error(ErrorCode::InvalidArgument, "one label per support item required");
  if (cfg.k == 0 || cfg.k > distances.size()) throw Error(ErrorCode::InvalidArgument, "k must be in [1, support size]");
  std::vector<std::size_t> order(distances.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return distances[a] < distances[b]; });

  std::map<std::uint16_t, std::pair<std::size_t, double>> votes;  // label -> (count, distance sum)
  for (std::size_t n = 0; n < cfg.k; ++n) {
    auto& v = votes[labels[order[n]]];
    ++v.first;
    v.second += distances[order[n]];
  }
  auto best = votes.begin();
  for (auto it = std::next(votes.begin()); it != votes.end(); ++it) {
    const auto& [count, sum] = it->second;
    if (count > best->second.first ||
        (count == best->second.first && cfg.tiebreak == TieBreak::min_distance_sum && sum < best->second.second))
      best = it;
  }
  return best->first;
}

std::vector<std::uint16_t> knn_predict(const DistanceMatrix& m, std::span<const std::uint16_t> labels,
                                       const KnnConfig& cfg) {
  std::vector<std::uint16_t> out(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) out[i] = knn_vote(m.row(i), labels, cfg);
  return out;
}

std::vector<std::uint16_t> latent_knn(const lvm::LatentModel& model, const Dataset& support, const Dataset& test,
                                      const KnnConfig& cfg, std::size_t workers) {
  if (!support.labels) throw Error(ErrorCode::InvalidArgument, "support set needs labels");
  if (test.shape() != support.shape()) throw Error(ErrorCode::ShapeMismatch, "test and support shapes differ");
  std::vector<Eigen::VectorXd> s(support.size()), t(test.size());
  parallel_for(s.size() + t.size(), workers, [&](std::size_t k) {
    if (k < s.size()) s[k] = model.latent_mean(support.items[k]);
    else t[k - s.size()] = model.latent_mean(test.items[k - s.size()]);
  });
  std::vector<std::uint16_t> out(t.size());
  parallel_for(t.size(), workers, [&](std::size_t i) {
    std::vector<double> row(s.size());
    for (std::size_t j = 0; j < s.size(); ++j) row[j] = (t[i] - s[j]).norm();
    out[i] = knn_vote(row, *support.labels, cfg);
  });
  return out;
}

double accuracy(std::span<const std::uint16_t> predictions, std::span<const std::uint16_t> truth) {
  if (predictions.size() != truth.size()) throw Error(ErrorCode::InvalidArgument, "prediction and truth lengths differ");
  if (predictions.empty()) throw Error(ErrorCode::InvalidArgument, "nothing to score");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predictions[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

}  // namespace npc
