// npclv: command-line front end for the toolkit.
#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "npc/binio.hpp"
#include "npc/codec.hpp"
#include "npc/compressors.hpp"
#include "npc/data.hpp"
#include "npc/latent_model.hpp"
#include "npc/npc.hpp"
#include "npc/pipeline.hpp"

using namespace npc;
namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidArchitecture:
    case ErrorCode::UnsupportedCodec:
      return kExitConfig;
    case ErrorCode::MalformedFile:
    case ErrorCode::IoFailure:
    case ErrorCode::InsufficientData:
    case ErrorCode::NotColor:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::DimMismatch:
    case ErrorCode::BinsMismatch:
    case ErrorCode::HashMismatch:
    case ErrorCode::CorruptStream:
      return kExitData;
    case ErrorCode::TooManySymbols:
    case ErrorCode::NonFinite:
    case ErrorCode::InsufficientInitialBits:
    case ErrorCode::ZeroLength:
    case ErrorCode::DegenerateInput:
      return kExitNumeric;
  }
  return kExitData;
}

std::string hex(const codec::Hash& h) {
  std::ostringstream os;
  for (auto b : h) os << std::hex << std::setw(2) << std::setfill('0') << int(b);
  return os.str();
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

// Every seed option registers here so that NPC_SEED can replace them all.
std::vector<std::uint64_t*> g_seeds;

CLI::Option* seed_option(CLI::App* app, const std::string& name, std::uint64_t& target, const std::string& help) {
  g_seeds.push_back(&target);
  return app->add_option(name, target, help)->capture_default_str();
}

void apply_seed_override() {
  const char* env = std::getenv("NPC_SEED");
  if (!env || !*env) return;
  std::uint64_t value = 0;
  try {
    std::size_t used = 0;
    value = std::stoull(env, &used, 0);
    if (env[used] != '\0') throw std::invalid_argument(env);
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, std::string("NPC_SEED is not an integer: ") + env);
  }
  for (auto* s : g_seeds) *s = value;
}

// ---- shared option groups ----

struct NeuralArgs {
  std::string model;
  std::string stats;
  std::uint32_t precision_z = codec::kDefaultPrecisionZ;
  std::uint32_t precision_r = rans::kDefaultPrecision;
  std::uint64_t reservoir_seed = 0x5EED;
  std::uint32_t nelbo_samples = 1;
  std::uint64_t nelbo_seed = 5;

  void add(CLI::App* app, bool required) {
    auto* m = app->add_option("--model", model, "Model file (NPCM)");
    if (required) m->required();
    app->add_option("--stats", stats, "Latent statistics file (default: model path with .npcs)");
    app->add_option("--precision-z", precision_z, "Latent bin precision, 2^p bins")->capture_default_str();
    app->add_option("--precision-r", precision_r, "rANS precision bits")->capture_default_str();
    seed_option(app, "--reservoir-seed", reservoir_seed, "Seed of the initial-bits reservoir");
    app->add_option("--nelbo-samples", nelbo_samples, "Monte-Carlo draws for the nelbo handle")->capture_default_str();
    seed_option(app, "--nelbo-seed", nelbo_seed, "Seed of the nelbo handle");
  }

  std::shared_ptr<const lvm::LatentModel> load_model() const {
    return std::make_shared<const lvm::LatentModel>(lvm::LatentModel::load(model));
  }

  std::shared_ptr<const codec::Bins> load_bins(const lvm::LatentModel& m) const {
    const fs::path path = stats.empty() ? fs::path(model).replace_extension(".npcs") : fs::path(stats);
    const auto st = codec::LatentStats::load(path);
    if (st.model_hash != m.hash())
      throw Error(ErrorCode::HashMismatch, "statistics in " + path.string() + " belong to another model");
    return std::make_shared<const codec::Bins>(codec::build_bins(m, st, precision_z, precision_r));
  }
};

compress::HandlePtr make_handle(const std::string& name, const NeuralArgs& args) {
  if (name == "zlib" || name == "deflate" || name == "gzip") return compress::byte_handle(name);
  if (name == "mock_ideal") return compress::mock_ideal_handle();
  if (name != "bbans" && name != "bitswap" && name != "nelbo")
    throw Error(ErrorCode::UnsupportedCodec, "unknown compressor '" + name + "'");
  if (args.model.empty()) throw Error(ErrorCode::InvalidArgument, "--model is required for " + name);
  auto model = args.load_model();
  compress::NeuralOptions o;
  o.reservoir_seed = args.reservoir_seed;
  o.nelbo_samples = args.nelbo_samples;
  o.nelbo_seed = args.nelbo_seed;
  if (name == "nelbo") {
    o.mode = compress::NeuralMode::nelbo;
    return compress::neural_handle(model, nullptr, o);
  }
  o.codec = codec::parse_codec(name);
  auto bins = args.load_bins(*model);
  return compress::neural_handle(model, bins, o);
}

const Grid& item_at(const Dataset& d, std::size_t i) {
  if (i >= d.size())
    throw Error(ErrorCode::InvalidArgument, "index " + std::to_string(i) + " out of range for " +
                                                std::to_string(d.size()) + " items");
  return d.items[i];
}

// ---- subcommands ----

struct SynthCmd {
  CLI::App* cmd = nullptr;
  std::uint32_t classes = 4, per_class = 400, width = 16, height = 16, channels = 1;
  std::uint64_t seed = 7;
  std::string out;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("synth", "Generate the synthetic benchmark");
    c->add_option("--classes", classes)->capture_default_str();
    c->add_option("--per-class", per_class)->capture_default_str();
    c->add_option("--width", width)->capture_default_str();
    c->add_option("--height", height)->capture_default_str();
    c->add_option("--channels", channels)->capture_default_str();
    seed_option(c, "--seed", seed, "Generator seed");
    c->add_option("-o,--out", out, "Output dataset (NPCD)")->required();
    cmd = c;
  }

  void run() const {
    const auto d = synth_generate(classes, per_class, width, height, seed, channels);
    save_dataset(d, out);
    std::cout << "items = " << d.size() << "\nclasses = " << d.class_count << "\nshape = " << width << 'x' << height
              << 'x' << channels << '\n';
  }
};

struct SplitCmd {
  CLI::App* cmd = nullptr;
  std::string data, out_dir;
  std::uint32_t shots = 5, test_size = 100;
  std::uint64_t seed = 11;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("split", "Split a labelled dataset into unlabeled, support and test parts");
    c->add_option("--data", data, "Labelled dataset")->required();
    c->add_option("--shots", shots, "Support items per class")->capture_default_str();
    c->add_option("--test-size", test_size)->capture_default_str();
    seed_option(c, "--seed", seed, "Split seed");
    c->add_option("--out-dir", out_dir, "Directory for unlabeled.npcd, support.npcd and test.npcd")->required();
    cmd = c;
  }

  void run() const {
    const auto s = split_few_shot(load_dataset(data), {shots, test_size, seed});
    fs::create_directories(out_dir);
    save_dataset(s.unlabeled, fs::path(out_dir) / "unlabeled.npcd");
    save_dataset(s.support, fs::path(out_dir) / "support.npcd");
    save_dataset(s.test, fs::path(out_dir) / "test.npcd");
    std::cout << "unlabeled = " << s.unlabeled.size() << "\nsupport = " << s.support.size()
              << "\ntest = " << s.test.size() << '\n';
  }
};

struct ArchArgs {
  std::vector<std::uint32_t> latent_dims{16};
  std::vector<std::uint32_t> hidden_dims{64};
  std::uint64_t model_seed = 3;

  void add(CLI::App* c) {
    c->add_option("--latent-dims", latent_dims, "Latent widths m_1..m_L")->delimiter(',')->capture_default_str();
    c->add_option("--hidden-dims", hidden_dims, "Hidden widths of every network")->delimiter(',')->capture_default_str();
    seed_option(c, "--model-seed", model_seed, "Initialization seed");
  }

  lvm::Architecture arch(const Dataset& d) const {
    return {static_cast<std::uint32_t>(d.shape().size()), latent_dims, hidden_dims, model_seed};
  }
};

struct TrainCmd {
  CLI::App* cmd = nullptr;
  std::string data, out, stats_out;
  ArchArgs arch;
  lvm::TrainConfig cfg{0.002, 32, 20, 1, 0.9, 0.999, 1e-8};
  std::uint32_t stats_draws = 4, stats_items = 256;
  std::uint64_t stats_seed = 9;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("train", "Train the latent model and record latent statistics");
    c->add_option("--data", data, "Unlabeled dataset")->required();
    arch.add(c);
    c->add_option("--lr", cfg.learning_rate, "Adam learning rate")->capture_default_str();
    c->add_option("--batch-size", cfg.batch_size)->capture_default_str();
    c->add_option("--epochs", cfg.epochs)->capture_default_str();
    seed_option(c, "--seed", cfg.seed, "Shuffle and noise seed");
    c->add_option("--stats-draws", stats_draws, "Posterior draws per item for the bin ranges")->capture_default_str();
    c->add_option("--stats-items", stats_items, "Items used for the bin ranges")->capture_default_str();
    seed_option(c, "--stats-seed", stats_seed, "Seed of the statistics pass");
    c->add_option("-o,--out", out, "Model file (NPCM)")->required();
    c->add_option("--stats-out", stats_out, "Statistics file (default: model path with .npcs)");
    cmd = c;
  }

  void run() const {
    const auto d = load_dataset(data);
    if (d.empty()) throw Error(ErrorCode::InsufficientData, "training set is empty");
    auto result = lvm::train(lvm::LatentModel::init(arch.arch(d)), d, cfg);
    result.model.save(out);
    std::vector<std::size_t> idx(std::min<std::size_t>(stats_items, d.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto st = codec::estimate_latent_stats(result.model, d.subset(idx), stats_draws, stats_seed);
    st.save(stats_out.empty() ? fs::path(out).replace_extension(".npcs") : fs::path(stats_out));
    for (std::size_t e = 0; e < result.loss_curve.size(); ++e)
      std::cout << "epoch " << e + 1 << " bits_per_dim = " << num(result.loss_curve[e]) << '\n';
    std::cout << "steps = " << result.steps << "\nmodel_hash = " << hex(result.model.hash()) << '\n';
  }
};

struct CompressCmd {
  CLI::App* cmd = nullptr;
  std::string data, out, codec_name = "bbans", aggregation;
  std::size_t index = 0;
  std::optional<std::size_t> with;
  NeuralArgs neural;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("compress", "Bits-back encode one item or an aggregated pair");
    c->add_option("--data", data, "Dataset holding the item")->required();
    c->add_option("--index", index, "Item index")->capture_default_str();
    c->add_option("--with", with, "Second item index; combined with --aggregation");
    c->add_option("--aggregation", aggregation, "avg, min, max, concat or gs_avg (default avg)");
    c->add_option("--codec", codec_name, "bbans or bitswap")->capture_default_str();
    neural.add(c, true);
    c->add_option("-o,--out", out, "Compressed file (NPCZ)")->required();
    cmd = c;
  }

  void run() const {
    const auto kind = codec::parse_codec(codec_name);
    const auto d = load_dataset(data);
    AggregateInput input = AggregateInput::single(item_at(d, index));
    if (with) input = aggregate(item_at(d, index), item_at(d, *with), parse_aggregation(aggregation.empty() ? "avg" : aggregation));
    else if (!aggregation.empty()) throw Error(ErrorCode::InvalidArgument, "--aggregation needs --with");
    const auto model = neural.load_model();
    const auto bins = neural.load_bins(*model);
    const codec::BitsBackCodec coder(*model, *bins);
    const auto rec = coder.encode(input, kind, neural.reservoir_seed);
    const auto bytes = rec.serialize();
    binio::write_file(out, bytes);
    std::cout << "codec = " << codec::to_string(kind) << "\ntotal_bits = " << rec.total_bits()
              << "\nn_extra = " << rec.n_extra << "\nnet_bits = " << rec.net_bits()
              << "\nnet_bits_per_dim = " << num(codec::net_bitrate(rec)) << "\nfile_bytes = " << bytes.size() << '\n';
  }
};

struct DecompressCmd {
  CLI::App* cmd = nullptr;
  std::string in, out;
  NeuralArgs neural;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("decompress", "Decode a compressed file back to its item(s)");
    c->add_option("--in", in, "Compressed file (NPCZ)")->required();
    neural.add(c, true);
    c->add_option("-o,--out", out, "Dataset (NPCD) receiving the decoded item(s)")->required();
    cmd = c;
  }

  void run() const {
    const auto rec = codec::CompressionRecord::deserialize(binio::read_file(in));
    const auto model = neural.load_model();
    const auto bins = neural.load_bins(*model);
    const codec::BitsBackCodec coder(*model, *bins);
    const auto decoded = coder.decode(rec);
    Dataset d;
    d.items.push_back(decoded.first);
    if (decoded.second) d.items.push_back(*decoded.second);
    save_dataset(d, out);
    std::cout << "codec = " << codec::to_string(rec.codec) << "\nitems = " << d.size()
              << "\nreservoir_bits_recovered = " << rec.n_extra << '\n';
  }
};

struct DistanceCmd {
  CLI::App* cmd = nullptr;
  std::string test, support, out, compressor = "bbans", aggregation = "avg", metric = "ncd";
  std::size_t workers = 1;
  bool no_cache = false;
  NeuralArgs neural;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("distance", "Compute the test x support distance matrix");
    c->add_option("--test", test, "Test dataset")->required();
    c->add_option("--support", support, "Support dataset")->required();
    c->add_option("--codec", compressor, "bbans, bitswap, nelbo, zlib, deflate, gzip or mock_ideal")->capture_default_str();
    c->add_option("--aggregation", aggregation)->capture_default_str();
    c->add_option("--metric", metric, "ncd, cdm or clm")->capture_default_str();
    c->add_option("--workers", workers)->capture_default_str();
    c->add_flag("--no-cache", no_cache, "Recompute single-item lengths for every cell");
    neural.add(c, false);
    c->add_option("-o,--out", out, "Distance matrix (NPCX)")->required();
    cmd = c;
  }

  void run() const {
    if (workers == 0) throw Error(ErrorCode::InvalidArgument, "--workers must be positive");
    const auto handle = make_handle(compressor, neural);
    const auto m = distance_matrix(*handle, parse_metric(metric), parse_aggregation(aggregation), load_dataset(test),
                                   load_dataset(support), {workers, !no_cache});
    m.save(out);
    double sum = 0.0;
    for (double v : m.values) sum += v;
    std::cout << "rows = " << m.rows << "\ncols = " << m.cols << "\ncompressor = " << m.compressor
              << "\nmetric = " << to_string(m.metric) << "\naggregation = " << to_string(m.aggregation)
              << "\nmean_distance = " << num(sum / static_cast<double>(m.values.size())) << '\n';
  }
};

struct ClassifyCmd {
  CLI::App* cmd = nullptr;
  std::string matrix, support, test, out, tiebreak = "min_distance_sum";
  std::size_t k = 0;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("classify", "k-nearest-neighbour prediction from a distance matrix");
    c->add_option("--matrix", matrix, "Distance matrix (NPCX)")->required();
    c->add_option("--support", support, "Support dataset supplying the labels")->required();
    c->add_option("--test", test, "Test dataset; when labelled, accuracy is reported");
    c->add_option("--k", k, "Neighbours (0: 2 for grey, 3 for colour)")->capture_default_str();
    c->add_option("--tiebreak", tiebreak, "min_distance_sum or lowest_label")->capture_default_str();
    c->add_option("-o,--out", out, "File receiving one predicted label per line");
    cmd = c;
  }

  void run() const {
    const auto m = DistanceMatrix::load(matrix);
    const auto s = load_dataset(support);
    if (!s.labels) throw Error(ErrorCode::InvalidArgument, "support set has no labels");
    if (s.size() != m.cols) throw Error(ErrorCode::ShapeMismatch, "support size does not match the matrix columns");
    KnnConfig cfg = KnnConfig::for_channels(s.shape().channels);
    if (k != 0) cfg.k = k;
    if (tiebreak == "lowest_label") cfg.tiebreak = TieBreak::lowest_label;
    else if (tiebreak != "min_distance_sum") throw Error(ErrorCode::InvalidArgument, "unknown tiebreak '" + tiebreak + "'");
    const auto pred = knn_predict(m, *s.labels, cfg);

    std::ostringstream lines;
    for (auto p : pred) lines << p << '\n';
    if (!out.empty()) {
      const auto text = lines.str();
      binio::write_file(out, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    }
    std::cout << "k = " << cfg.k << "\npredictions = " << pred.size() << '\n';
    if (!test.empty()) {
      const auto t = load_dataset(test);
      if (t.size() != m.rows) throw Error(ErrorCode::ShapeMismatch, "test size does not match the matrix rows");
      if (t.labels) std::cout << "accuracy = " << num(accuracy(pred, *t.labels)) << '\n';
    }
  }
};

struct AxiomsCmd {
  CLI::App* cmd = nullptr;
  std::string data, compressor = "bbans", aggregation = "avg";
  compress::AxiomOptions opts;
  NeuralArgs neural;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("axioms", "Check the normal-compressor axioms on seeded pairs and triples");
    c->add_option("--data", data, "Samples (at least 20 items)")->required();
    c->add_option("--codec", compressor, "bbans, bitswap, nelbo, zlib, deflate, gzip or mock_ideal")->capture_default_str();
    c->add_option("--aggregation", aggregation)->capture_default_str();
    c->add_option("--pairs", opts.pairs)->capture_default_str();
    c->add_option("--slack-bits", opts.slack_bits)->capture_default_str();
    c->add_option("--slack-frac", opts.slack_frac)->capture_default_str();
    seed_option(c, "--seed", opts.seed, "Pair selection seed");
    neural.add(c, false);
    cmd = c;
  }

  void run() const {
    const auto handle = make_handle(compressor, neural);
    std::cout << compress::axiom_report(*handle, load_dataset(data), parse_aggregation(aggregation), opts).to_text();
  }
};

struct ReportCmd {
  CLI::App* cmd = nullptr;
  pipeline::ExperimentConfig cfg;
  std::string aggregation = "avg", metric = "ncd";

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("report", "Run the full pipeline and write report.txt, points.csv, timings.txt");
    c->add_option("--dataset", cfg.dataset_path, "Labelled dataset (empty: synthetic benchmark)");
    c->add_option("--synth-classes", cfg.synth_classes)->capture_default_str();
    c->add_option("--synth-per-class", cfg.synth_per_class)->capture_default_str();
    c->add_option("--synth-width", cfg.synth_width)->capture_default_str();
    c->add_option("--synth-height", cfg.synth_height)->capture_default_str();
    c->add_option("--synth-channels", cfg.synth_channels)->capture_default_str();
    seed_option(c, "--synth-seed", cfg.synth_seed, "Generator seed");
    c->add_option("--shots", cfg.shots, "Shot counts")->delimiter(',')->capture_default_str();
    c->add_option("--test-size", cfg.test_size, "Test items per trial")->capture_default_str();
    c->add_option("--trials", cfg.trials)->capture_default_str();
    seed_option(c, "--split-seed", cfg.split_seed, "Split seed");
    c->add_option("--latent-dims", cfg.latent_dims)->delimiter(',')->capture_default_str();
    c->add_option("--hidden-dims", cfg.hidden_dims)->delimiter(',')->capture_default_str();
    seed_option(c, "--model-seed", cfg.model_seed, "Initialization seed");
    c->add_option("--lr", cfg.train.learning_rate)->capture_default_str();
    c->add_option("--batch-size", cfg.train.batch_size)->capture_default_str();
    c->add_option("--epochs", cfg.train.epochs)->capture_default_str();
    seed_option(c, "--train-seed", cfg.train.seed, "Shuffle and noise seed");
    c->add_option("--codec", cfg.codec, "bbans, bitswap or nelbo")->capture_default_str();
    c->add_option("--aggregation", aggregation)->capture_default_str();
    c->add_option("--metric", metric)->capture_default_str();
    c->add_option("--k", cfg.k, "Neighbours (0: 2 for grey, 3 for colour)")->capture_default_str();
    c->add_option("--precision-z", cfg.precision_z)->capture_default_str();
    c->add_option("--precision-r", cfg.precision_r)->capture_default_str();
    c->add_option("--stats-draws", cfg.stats_draws)->capture_default_str();
    c->add_option("--stats-items", cfg.stats_items)->capture_default_str();
    seed_option(c, "--stats-seed", cfg.stats_seed, "Seed of the statistics pass");
    seed_option(c, "--reservoir-seed", cfg.reservoir_seed, "Seed of the initial-bits reservoir");
    c->add_option("--nelbo-samples", cfg.nelbo_samples)->capture_default_str();
    seed_option(c, "--nelbo-seed", cfg.nelbo_seed, "Seed of the nelbo handle");
    c->add_option("--bitrate-report", cfg.bitrate_report, "Add the bitrate-vs-accuracy section")->capture_default_str();
    c->add_option("--byte-codec", cfg.byte_codec, "Baseline for the bitrate section")->capture_default_str();
    c->add_option("--workers", cfg.workers)->capture_default_str();
    c->add_option("--output-dir", cfg.output_dir)->required();
    cmd = c;
  }

  void run() {
    cfg.aggregation = parse_aggregation(aggregation);
    cfg.metric = parse_metric(metric);
    const auto report = pipeline::run_pipeline(cfg);
    pipeline::write_report(report, cfg.output_dir);
    std::cout << report.to_text();
  }
};

struct GradCheckCmd {
  CLI::App* cmd = nullptr;
  std::string data, model;
  ArchArgs arch;
  std::size_t index = 0, count = 1000;
  double epsilon = 1e-4;
  std::uint64_t seed = 0;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
    c->add_option("--data", data, "Dataset holding the probe item")->required();
    c->add_option("--model", model, "Model file; a fresh model is initialized when absent");
    arch.add(c);
    c->add_option("--index", index)->capture_default_str();
    c->add_option("--epsilon", epsilon)->capture_default_str();
    c->add_option("--count", count, "Parameters checked")->capture_default_str();
    seed_option(c, "--seed", seed, "Parameter selection seed");
    cmd = c;
  }

  void run() const {
    const auto d = load_dataset(data);
    const auto m = model.empty() ? lvm::LatentModel::init(arch.arch(d)) : lvm::LatentModel::load(model);
    const auto r = lvm::grad_check(m, item_at(d, index), epsilon, count, seed);
    std::cout << "checked = " << r.checked << "\nmax_rel_err = " << num(r.max_rel_err) << '\n';
    if (r.warning) std::cout << "warning = " << *r.warning << '\n';
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Non-parametric classification with latent-variable compressors"};
  app.set_config("--config", "", "INI file; [section] names match subcommands");
  app.require_subcommand(1);

  SynthCmd synth;
  SplitCmd split;
  TrainCmd train;
  CompressCmd comp;
  DecompressCmd decomp;
  DistanceCmd dist;
  ClassifyCmd classify;
  AxiomsCmd axioms;
  ReportCmd report;
  GradCheckCmd grad;
  synth.add(app);
  split.add(app);
  train.add(app);
  comp.add(app);
  decomp.add(app);
  dist.add(app);
  classify.add(app);
  axioms.add(app);
  report.add(app);
  grad.add(app);

  try {
    app.parse(argc, argv);
    apply_seed_override();
    if (synth.cmd->parsed()) synth.run();
    else if (split.cmd->parsed()) split.run();
    else if (train.cmd->parsed()) train.run();
    else if (comp.cmd->parsed()) comp.run();
    else if (decomp.cmd->parsed()) decomp.run();
    else if (dist.cmd->parsed()) dist.run();
    else if (classify.cmd->parsed()) classify.run();
    else if (axioms.cmd->parsed()) axioms.run();
    else if (report.cmd->parsed()) report.run();
    else if (grad.cmd->parsed()) grad.run();
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
