#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "npc/compressors.hpp"
#include "npc/data.hpp"
#include "npc/latent_model.hpp"

namespace npc {

enum class Metric { ncd, cdm, clm };

std::string_view to_string(Metric m);
Metric parse_metric(std::string_view name);

/// (C(xy) - min(C(x), C(y))) / max(C(x), C(y)).
double ncd(double cx, double cy, double cxy);
/// C(xy) / (C(x) + C(y)).
double cdm(double cx, double cy, double cxy);
/// 1 - (C(x) + C(y) - C(xy)) / C(xy).
double clm(double cx, double cy, double cxy);
double distance(Metric m, double cx, double cy, double cxy);

struct DistanceMatrix {
  std::size_t rows = 0;  // test items
  std::size_t cols = 0;  // support items
  std::vector<double> values;  // row-major
  Metric metric = Metric::ncd;
  Aggregation aggregation = Aggregation::avg;
  std::string compressor;
  std::vector<double> test_singles;
  std::vector<double> support_singles;

  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  std::span<const double> row(std::size_t i) const { return std::span(values).subspan(i * cols, cols); }
  /// Keeps the listed support columns, in the given order.
  DistanceMatrix select_columns(std::span<const std::size_t> columns) const;

  /// NPCX file; the cached singles are not part of the file.
  std::vector<std::uint8_t> serialize() const;
  static DistanceMatrix deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static DistanceMatrix load(const std::filesystem::path& path);
};

struct MatrixOptions {
  std::size_t workers = 1;
  /// When false, C(x) and C(y) are recomputed for every cell.
  bool cache_singles = true;
};

/// Every cell is metric(C(x_i), C(y_j), C(psi(x_i, y_j))). Cells are spread over
/// `workers` threads; the result does not depend on the worker count.
DistanceMatrix distance_matrix(const compress::CompressorHandle& handle, Metric metric, Aggregation method,
                               const Dataset& test, const Dataset& support, const MatrixOptions& options = {});

enum class TieBreak { min_distance_sum, lowest_label };

struct KnnConfig {
  std::size_t k = 2;
  /// Vote ties go to the class with the smallest summed distance, then the lowest label.
  /// With lowest_label the distance sum is skipped.
  TieBreak tiebreak = TieBreak::min_distance_sum;

  static KnnConfig for_channels(std::uint32_t channels) { return {channels == 3 ? 3u : 2u, TieBreak::min_distance_sum}; }
};

/// One prediction from one row of distances.
std::uint16_t knn_vote(std::span<const double> distances, std::span<const std::uint16_t> labels, const KnnConfig& cfg);
std::vector<std::uint16_t> knn_predict(const DistanceMatrix& m, std::span<const std::uint16_t> labels,
                                       const KnnConfig& cfg);

/// kNN on Euclidean distances between posterior means.
std::vector<std::uint16_t> latent_knn(const lvm::LatentModel& model, const Dataset& support, const Dataset& test,
                                      const KnnConfig& cfg, std::size_t workers = 1);

double accuracy(std::span<const std::uint16_t> predictions, std::span<const std::uint16_t> truth);

/// Runs fn(0..count-1) on up to `workers` threads; rethrows the failure with the lowest index.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace npc
