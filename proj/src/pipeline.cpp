#include "npc/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "npc/binio.hpp"

namespace npc::pipeline {

namespace {

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

template <class T>
std::string join(const std::vector<T>& v, char sep = ',') {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? std::string(1, sep) : "") << v[i];
  return os.str();
}

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - start_).count();
    start_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

KnnConfig knn_config(const ExperimentConfig& cfg, std::uint32_t channels) {
  KnnConfig k = KnnConfig::for_channels(channels);
  if (cfg.k != 0) k.k = cfg.k;
  return k;
}

}  // namespace

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, what); };
  if (shots.empty()) fail("at least one shot count is required");
  for (auto s : shots)
    if (s == 0) fail("shot counts must be positive");
  if (test_size == 0 || trials == 0) fail("test_size and trials must be positive");
  if (codec != "bbans" && codec != "bitswap" && codec != "nelbo")
    throw Error(ErrorCode::UnsupportedCodec, "codec must be bbans, bitswap or nelbo");
  if (!(train.learning_rate > 0.0)) fail("learning rate must be positive");
  if (train.batch_size == 0) fail("batch size must be positive");
  if (workers == 0) fail("workers must be positive");
  if (stats_draws == 0 || stats_items == 0) fail("stats_draws and stats_items must be positive");
  if (nelbo_samples == 0) fail("nelbo_samples must be positive");
  if (precision_z < codec::kMinPrecisionZ || precision_z > codec::kMaxPrecisionZ) fail("precision_z must be in [4, 14]");
  if (precision_r < 8 || precision_r > rans::kMaxPrecision) fail("precision_r must be in [8, 16]");
  if (precision_z > precision_r) fail("precision_z must not exceed precision_r");
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream os;
  os << "dataset_path = " << dataset_path << '\n'
     << "synth_classes = " << synth_classes << '\n'
     << "synth_per_class = " << synth_per_class << '\n'
     << "synth_width = " << synth_width << '\n'
     << "synth_height = " << synth_height << '\n'
     << "synth_channels = " << synth_channels << '\n'
     << "synth_seed = " << synth_seed << '\n'
     << "shots = " << join(shots) << '\n'
     << "test_size = " << test_size << '\n'
     << "trials = " << trials << '\n'
     << "split_seed = " << split_seed << '\n'
     << "latent_dims = " << join(latent_dims) << '\n'
     << "hidden_dims = " << join(hidden_dims) << '\n'
     << "model_seed = " << model_seed << '\n'
     << "learning_rate = " << train.learning_rate << '\n'
     << "batch_size = " << train.batch_size << '\n'
     << "epochs = " << train.epochs << '\n'
     << "train_seed = " << train.seed << '\n'
     << "codec = " << codec << '\n'
     << "aggregation = " << to_string(aggregation) << '\n'
     << "metric = " << to_string(metric) << '\n'
     << "k = " << k << '\n'
     << "precision_z = " << precision_z << '\n'
     << "precision_r = " << precision_r << '\n'
     << "stats_draws = " << stats_draws << '\n'
     << "stats_items = " << stats_items << '\n'
     << "stats_seed = " << stats_seed << '\n'
     << "reservoir_seed = " << reservoir_seed << '\n'
     << "nelbo_samples = " << nelbo_samples << '\n'
     << "nelbo_seed = " << nelbo_seed << '\n'
     << "bitrate_report = " << (bitrate_report ? "true" : "false") << '\n'
     << "byte_codec = " << byte_codec << '\n';
  // workers and output_dir are left out: they must not change any result.
  return os.str();
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw Error(ErrorCode::InvalidArgument, "sequences differ in length");
  if (xs.size() < 2) throw Error(ErrorCode::InvalidArgument, "need at least two points");
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
  };
  if (constant(xs) || constant(ys)) throw Error(ErrorCode::DegenerateInput, "rank correlation of a constant sequence");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  // Pearson correlation of the ranks.
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::pair<double, double> mean_std(std::span<const double> v) {
  if (v.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

Dataset load_or_generate(const ExperimentConfig& cfg) {
  if (!cfg.dataset_path.empty()) return load_dataset(cfg.dataset_path);
  return synth_generate(cfg.synth_classes, cfg.synth_per_class, cfg.synth_width, cfg.synth_height, cfg.synth_seed,
                        cfg.synth_channels);
}

std::vector<std::size_t> shot_columns(std::uint32_t shots, std::uint32_t max_shots, std::uint16_t classes) {
  if (shots > max_shots) throw Error(ErrorCode::InvalidArgument, "shot count exceeds the support set");
  std::vector<std::size_t> cols;
  for (std::uint16_t c = 0; c < classes; ++c)
    for (std::uint32_t s = 0; s < shots; ++s) cols.push_back(std::size_t{c} * max_shots + s);
  return cols;
}

std::vector<Trial> make_trials(const Dataset& data, const ExperimentConfig& cfg, Dataset* unlabeled) {
  const std::uint32_t max_shots = *std::max_element(cfg.shots.begin(), cfg.shots.end());
  const SplitSpec spec{max_shots * cfg.trials, cfg.test_size * cfg.trials, cfg.split_seed};
  const FewShotSplit split = split_few_shot(data, spec);
  const std::uint16_t classes = data.class_count;

  std::vector<Trial> trials;
  for (std::uint32_t t = 0; t < cfg.trials; ++t) {
    std::vector<std::size_t> sidx, tidx;
    for (std::uint16_t c = 0; c < classes; ++c)
      for (std::uint32_t s = 0; s < max_shots; ++s)
        sidx.push_back(std::size_t{c} * spec.shots_per_class + std::size_t{t} * max_shots + s);
    for (std::uint32_t i = 0; i < cfg.test_size; ++i) tidx.push_back(std::size_t{t} * cfg.test_size + i);
    trials.push_back({split.support.subset(sidx), split.test.subset(tidx)});
  }
  if (unlabeled) *unlabeled = split.unlabeled;
  return trials;
}

BitrateSection bitrate_accuracy_report(std::span<const compress::HandlePtr> handles, const std::vector<Trial>& trials,
                                       std::uint32_t shots, const ExperimentConfig& cfg,
                                       const std::map<std::string, HandlePoint>& known) {
  if (handles.size() < 3) throw Error(ErrorCode::InvalidArgument, "the bitrate report needs at least three handles");
  if (trials.empty()) throw Error(ErrorCode::InvalidArgument, "no trials");
  const std::uint32_t max_shots = static_cast<std::uint32_t>(trials.front().support.size() / trials.front().support.class_count);
  const auto cols = shot_columns(shots, max_shots, trials.front().support.class_count);
  const auto knn = knn_config(cfg, trials.front().test.shape().channels);

  BitrateSection section;
  std::vector<double> rates, accs;
  for (const auto& h : handles) {
    HandlePoint point;
    if (auto it = known.find(h->name()); it != known.end()) {
      point = it->second;
    } else {
      point.name = h->name();
      double bits = 0.0, dims = 0.0, acc = 0.0;
      for (const auto& trial : trials) {
        const Dataset support = trial.support.subset(cols);
        const auto m = distance_matrix(*h, cfg.metric, cfg.aggregation, trial.test, support, {cfg.workers, true});
        acc += accuracy(knn_predict(m, *support.labels, knn), *trial.test.labels);
        for (double c : m.test_singles) bits += c;
        dims += static_cast<double>(trial.test.size() * trial.test.shape().size());
      }
      point.bitrate = bits / dims;
      point.accuracy = acc / static_cast<double>(trials.size());
    }
    rates.push_back(point.bitrate);
    accs.push_back(point.accuracy);
    section.points.push_back(point);
  }
  section.spearman = spearman(rates, accs);
  return section;
}

RunReport run_pipeline(const ExperimentConfig& cfg) {
  cfg.validate();
  RunReport report;
  report.config_echo = cfg.to_text();
  Stopwatch clock;

  auto step = [](const char* label, auto&& fn) {
    try {
      return fn();
    } catch (const Error& e) {
      throw Error(e.code(), std::string(label) + ": " + e.what());
    }
  };

  // 1) data and split
  Dataset unlabeled;
  const auto trials = step("split", [&] {
    const Dataset data = load_or_generate(cfg);
    if (!data.has_labels()) throw Error(ErrorCode::InvalidArgument, "the pipeline needs a labelled dataset");
    return make_trials(data, cfg, &unlabeled);
  });
  if (unlabeled.empty()) throw Error(ErrorCode::InsufficientData, "split: no unlabeled items left for training");
  report.timings["split"] = clock.lap();

  // 2) train once
  lvm::Architecture arch{static_cast<std::uint32_t>(unlabeled.shape().size()), cfg.latent_dims, cfg.hidden_dims,
                         cfg.model_seed};
  auto trained = step("train", [&] { return lvm::train(lvm::LatentModel::init(arch), unlabeled, cfg.train); });
  report.training_runs = 1;
  report.training_steps = trained.steps;
  report.loss_curve = trained.loss_curve;
  auto model = std::make_shared<const lvm::LatentModel>(std::move(trained.model));
  report.timings["train"] = clock.lap();

  // 3) compressor
  const bool need_bins = cfg.codec != "nelbo" || cfg.bitrate_report;
  std::vector<std::size_t> stat_idx(std::min<std::size_t>(cfg.stats_items, unlabeled.size()));
  std::iota(stat_idx.begin(), stat_idx.end(), std::size_t{0});
  auto make_bins = [&](const lvm::LatentModel& m) {
    return std::make_shared<const codec::Bins>(step("bins", [&] {
      const auto stats = codec::estimate_latent_stats(m, unlabeled.subset(stat_idx), cfg.stats_draws, cfg.stats_seed);
      return codec::build_bins(m, stats, cfg.precision_z, cfg.precision_r);
    }));
  };
  std::shared_ptr<const codec::Bins> bins = need_bins ? make_bins(*model) : nullptr;
  report.bins_built = need_bins;
  auto neural = [&](std::shared_ptr<const lvm::LatentModel> m, std::shared_ptr<const codec::Bins> b,
                    const std::string& which, const std::string& label) {
    compress::NeuralOptions o;
    o.mode = which == "nelbo" ? compress::NeuralMode::nelbo : compress::NeuralMode::actual;
    if (which != "nelbo") o.codec = codec::parse_codec(which);
    o.reservoir_seed = cfg.reservoir_seed;
    o.nelbo_samples = cfg.nelbo_samples;
    o.nelbo_seed = cfg.nelbo_seed;
    o.label = label;
    return compress::neural_handle(std::move(m), std::move(b), o);
  };
  const auto main_handle = neural(model, bins, cfg.codec, "");
  report.timings["bins"] = clock.lap();

  // 4) distances and kNN; one matrix per trial at the largest shot count
  const std::uint32_t max_shots = *std::max_element(cfg.shots.begin(), cfg.shots.end());
  const std::uint16_t classes = trials.front().support.class_count;
  const auto knn = knn_config(cfg, trials.front().test.shape().channels);
  std::vector<std::uint32_t> shot_list = cfg.shots;
  std::sort(shot_list.begin(), shot_list.end());
  shot_list.erase(std::unique(shot_list.begin(), shot_list.end()), shot_list.end());
  for (auto s : shot_list) report.shots.push_back(ShotResult{s, {}, 0, 0, {}, 0, 0});

  double main_bits = 0.0, main_dims = 0.0;
  for (const auto& trial : trials) {
    const auto m = step("distance", [&] {
      return distance_matrix(*main_handle, cfg.metric, cfg.aggregation, trial.test, trial.support, {cfg.workers, true});
    });
    for (double c : m.test_singles) main_bits += c;
    main_dims += static_cast<double>(trial.test.size() * trial.test.shape().size());
    for (auto& r : report.shots) {
      const auto cols = shot_columns(r.shots, max_shots, classes);
      const Dataset support = trial.support.subset(cols);
      const auto sub = m.select_columns(cols);
      const KnnConfig k = step("classify", [&] {
        if (knn.k > support.size()) throw Error(ErrorCode::InvalidArgument, "k exceeds the support size");
        return knn;
      });
      r.accuracies.push_back(accuracy(knn_predict(sub, *support.labels, k), *trial.test.labels));
      r.latent_accuracies.push_back(accuracy(latent_knn(*model, support, trial.test, k, cfg.workers), *trial.test.labels));
    }
  }
  for (auto& r : report.shots) {
    std::tie(r.mean, r.stddev) = mean_std(r.accuracies);
    std::tie(r.latent_mean, r.latent_stddev) = mean_std(r.latent_accuracies);
  }
  report.timings["classify"] = clock.lap();

  // 5) bitrate versus accuracy across compressors
  if (cfg.bitrate_report) {
    const std::uint32_t s0 = shot_list.front();
    auto untrained_model = std::make_shared<const lvm::LatentModel>(lvm::LatentModel::init(arch));
    std::vector<compress::HandlePtr> handles{
        compress::byte_handle(cfg.byte_codec),
        neural(model, bins, "bbans", ""),
        neural(model, bins, "bitswap", ""),
        neural(model, nullptr, "nelbo", ""),
        neural(untrained_model, make_bins(*untrained_model), "bbans", "untrained_bbans"),
    };
    std::map<std::string, HandlePoint> known;
    known[main_handle->name()] = HandlePoint{main_handle->name(), main_bits / main_dims, report.shots.front().mean};
    const auto section = step("report", [&] { return bitrate_accuracy_report(handles, trials, s0, cfg, known); });
    report.points = section.points;
    report.spearman = section.spearman;
    report.timings["bitrate_report"] = clock.lap();
  }
  return report;
}

std::string RunReport::to_text() const {
  std::ostringstream os;
  os << "[config]\n" << config_echo << '\n';
  os << "[training]\n"
     << "training_runs = " << training_runs << '\n'
     << "training_steps = " << training_steps << '\n'
     << "bins_built = " << (bins_built ? "true" : "false") << '\n'
     << "final_bits_per_dim = " << (loss_curve.empty() ? std::string("n/a") : fmt(loss_curve.back())) << '\n';
  os << "loss_curve = ";
  for (std::size_t i = 0; i < loss_curve.size(); ++i) os << (i ? "," : "") << fmt(loss_curve[i]);
  os << "\n\n[accuracy]\n";
  for (const auto& r : shots) {
    os << "shots_" << r.shots << "_mean = " << fmt(r.mean) << '\n'
       << "shots_" << r.shots << "_std = " << fmt(r.stddev) << '\n'
       << "shots_" << r.shots << "_trials = ";
    for (std::size_t i = 0; i < r.accuracies.size(); ++i) os << (i ? "," : "") << fmt(r.accuracies[i]);
    os << '\n'
       << "shots_" << r.shots << "_latent_knn_mean = " << fmt(r.latent_mean) << '\n'
       << "shots_" << r.shots << "_latent_knn_std = " << fmt(r.latent_stddev) << '\n';
  }
  if (!points.empty()) {
    os << "\n[bitrate_accuracy]\n";
    os << std::left << std::setw(18) << "handle" << std::setw(14) << "bits_per_dim" << "accuracy\n";
    for (const auto& p : points) os << std::left << std::setw(18) << p.name << std::setw(14) << fmt(p.bitrate) << fmt(p.accuracy) << '\n';
    if (spearman) os << "spearman = " << fmt(*spearman) << '\n';
  }
  return os.str();
}

std::string RunReport::points_csv() const {
  std::ostringstream os;
  os << "handle,bits_per_dim,accuracy\n";
  for (const auto& p : points) os << p.name << ',' << fmt(p.bitrate, 9) << ',' << fmt(p.accuracy, 9) << '\n';
  return os.str();
}

std::string RunReport::timings_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : timings) os << k << " = " << fmt(v, 3) << '\n';
  return os.str();
}

void write_report(const RunReport& report, const std::string& output_dir) {
  if (output_dir.empty()) throw Error(ErrorCode::InvalidArgument, "no output directory");
  std::error_code ec;
  std::filesystem::create_directories(output_dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + output_dir + ": " + ec.message());
  auto put = [&](const char* name, const std::string& text) {
    binio::write_file(std::filesystem::path(output_dir) / name,
                      std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  };
  put("report.txt", report.to_text());
  put("points.csv", report.points_csv());
  put("timings.txt", report.timings_text());
}

}  // namespace npc::pipeline
