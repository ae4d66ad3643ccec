#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "npc/codec.hpp"
#include "npc/compressors.hpp"
#include "npc/data.hpp"
#include "npc/latent_model.hpp"
#include "npc/npc.hpp"

namespace npc::pipeline {

struct ExperimentConfig {
  // Data: a dataset file, or the synthetic generator when the path is empty.
  std::string dataset_path;
  std::uint32_t synth_classes = 4;
  std::uint32_t synth_per_class = 400;
  std::uint32_t synth_width = 16;
  std::uint32_t synth_height = 16;
  std::uint32_t synth_channels = 1;
  std::uint64_t synth_seed = 7;

  // Split: every trial draws its own support and test items from one base split.
  std::vector<std::uint32_t> shots{5};
  std::uint32_t test_size = 100;
  std::uint32_t trials = 5;
  std::uint64_t split_seed = 11;

  // Model.
  std::vector<std::uint32_t> latent_dims{16};
  std::vector<std::uint32_t> hidden_dims{64};
  std::uint64_t model_seed = 3;
  lvm::TrainConfig train{0.002, 32, 20, 1, 0.9, 0.999, 1e-8};

  // Compression and classification.
  std::string codec = "bbans";  // bbans, bitswap or nelbo
  Aggregation aggregation = Aggregation::avg;
  Metric metric = Metric::ncd;
  std::uint32_t k = 0;  // 0 picks 2 for grey and 3 for colour
  std::uint32_t precision_z = codec::kDefaultPrecisionZ;
  std::uint32_t precision_r = rans::kDefaultPrecision;
  std::uint32_t stats_draws = 4;
  std::uint32_t stats_items = 256;
  std::uint64_t stats_seed = 9;
  std::uint64_t reservoir_seed = 0x5EED;
  std::uint32_t nelbo_samples = 1;
  std::uint64_t nelbo_seed = 5;

  // Bitrate-vs-accuracy section.
  bool bitrate_report = true;
  std::string byte_codec = "deflate";

  std::size_t workers = 1;
  std::string output_dir;

  /// Throws InvalidArgument when a field is out of range.
  void validate() const;
  /// Flat key = value echo of every field.
  std::string to_text() const;
};

struct ShotResult {
  std::uint32_t shots = 0;
  std::vector<double> accuracies;  // one per trial
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  std::vector<double> latent_accuracies;
  double latent_mean = 0.0;
  double latent_stddev = 0.0;
};

struct HandlePoint {
  std::string name;
  double bitrate = 0.0;   // mean code length of single test items, bits per dimension
  double accuracy = 0.0;  // mean over trials at the smallest shot count
};

struct RunReport {
  std::string config_echo;
  std::uint64_t training_runs = 0;
  std::uint64_t training_steps = 0;
  bool bins_built = false;
  std::vector<double> loss_curve;
  std::vector<ShotResult> shots;
  std::vector<HandlePoint> points;
  std::optional<double> spearman;
  std::map<std::string, double> timings;  // seconds; kept out of to_text()

  std::string to_text() const;
  /// One "name,bitrate,accuracy" row per handle after a header line.
  std::string points_csv() const;
  std::string timings_text() const;
};

/// Support and test items of one trial.
struct Trial {
  Dataset support;  // class-major, shots_per_class items per class
  Dataset test;
};

/// Support/test sets of every trial at `max_shots`, carved from one base split.
std::vector<Trial> make_trials(const Dataset& data, const ExperimentConfig& cfg, Dataset* unlabeled = nullptr);

/// Column indices selecting the first `shots` items of every class from a
/// class-major support set holding `max_shots` per class.
std::vector<std::size_t> shot_columns(std::uint32_t shots, std::uint32_t max_shots, std::uint16_t classes);

struct BitrateSection {
  std::vector<HandlePoint> points;
  double spearman = 0.0;
};

/// Net bitrate and kNN accuracy per handle (at least three), plus their rank
/// correlation. Handles whose name is already in `known` are not re-measured.
BitrateSection bitrate_accuracy_report(std::span<const compress::HandlePtr> handles, const std::vector<Trial>& trials,
                                       std::uint32_t shots, const ExperimentConfig& cfg,
                                       const std::map<std::string, HandlePoint>& known = {});

/// Spearman rank correlation with average ranks for ties.
/// Throws DegenerateInput if either sequence is constant.
double spearman(std::span<const double> xs, std::span<const double> ys);

/// Mean and sample standard deviation (0 for fewer than two values).
std::pair<double, double> mean_std(std::span<const double> v);

Dataset load_or_generate(const ExperimentConfig& cfg);

/// Train once, build bins, compute one distance matrix per trial at the largest
/// shot count and score every shot count on column subsets of it.
RunReport run_pipeline(const ExperimentConfig& cfg);

/// Writes report.txt, points.csv and timings.txt into cfg.output_dir.
void write_report(const RunReport& report, const std::string& output_dir);

}  // namespace npc::pipeline
