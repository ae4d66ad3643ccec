#include "npc/compressors.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <sstream>
#include <unordered_set>

namespace npc::compress {

double CompressorHandle::joint(const Grid& x, const Grid& y, Aggregation method) const {
  return measure(aggregate(x, y, method));
}

namespace {

// ---- neural ----

class NeuralHandle final : public CompressorHandle {
 public:
  NeuralHandle(std::shared_ptr<const lvm::LatentModel> model, std::shared_ptr<const codec::Bins> bins,
               NeuralOptions options)
      : model_(std::move(model)), bins_(std::move(bins)), options_(std::move(options)) {
    if (!model_) throw Error(ErrorCode::InvalidArgument, "neural handle needs a model");
    if (options_.mode == NeuralMode::actual) {
      if (!bins_) throw Error(ErrorCode::InvalidArgument, "actual mode needs bins");
      codec_.emplace(*model_, *bins_);
    }
    if (options_.nelbo_samples == 0) throw Error(ErrorCode::InvalidArgument, "nelbo_samples must be positive");
  }

  std::string name() const override {
    if (!options_.label.empty()) return options_.label;
    return options_.mode == NeuralMode::nelbo ? "nelbo" : std::string(codec::to_string(options_.codec));
  }

  double measure(const AggregateInput& input) const override {
    AggregateInput in = adapt(input);
    if (options_.mode == NeuralMode::nelbo)
      return codec::nelbo_length(*model_, in, options_.nelbo_samples, options_.nelbo_seed);
    return static_cast<double>(codec_->encode(in, options_.codec, options_.reservoir_seed).net_bits());
  }

 private:
  Grid lift(const Grid& g) const {
    const std::uint32_t d = model_->arch().input_dim;
    if (g.size() == d) return g;
    if (g.channels() == 1 && g.size() * 3 == d) {
      std::vector<std::uint8_t> data(d);
      for (std::size_t i = 0; i < g.size(); ++i) data[3 * i] = data[3 * i + 1] = data[3 * i + 2] = g[i];
      return Grid(Shape{g.width(), g.height(), 3}, std::move(data));
    }
    throw Error(ErrorCode::DimMismatch, "input does not match the model");
  }

  AggregateInput adapt(const AggregateInput& in) const {
    if (in.is_pair()) return AggregateInput::pair(lift(in.first), lift(*in.second));
    return AggregateInput::single(lift(in.first));
  }

  std::shared_ptr<const lvm::LatentModel> model_;
  std::shared_ptr<const codec::Bins> bins_;
  NeuralOptions options_;
  std::optional<codec::BitsBackCodec> codec_;
};

// ---- DEFLATE family ----

class ByteHandle final : public CompressorHandle {
 public:
  ByteHandle(std::string name, int window_bits) : name_(std::move(name)), window_bits_(window_bits) {}

  std::string name() const override { return name_; }

  double measure(const AggregateInput& input) const override {
    std::vector<std::uint8_t> bytes(input.first.data().begin(), input.first.data().end());
    if (input.is_pair()) bytes.insert(bytes.end(), input.second->data().begin(), input.second->data().end());
    return 8.0 * static_cast<double>(compressed_size(bytes));
  }

 private:
  std::size_t compressed_size(const std::vector<std::uint8_t>& bytes) const {
    z_stream zs{};
    if (deflateInit2(&zs, Z_BEST_COMPRESSION, Z_DEFLATED, window_bits_, 9, Z_DEFAULT_STRATEGY) != Z_OK)
      throw Error(ErrorCode::UnsupportedCodec, "deflateInit2 failed");
    std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(bytes.size())) + 16);
    zs.next_in = const_cast<Bytef*>(bytes.data());
    zs.avail_in = static_cast<uInt>(bytes.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = deflate(&zs, Z_FINISH);
    const std::size_t n = zs.total_out;
    deflateEnd(&zs);
    if (rc != Z_STREAM_END) throw Error(ErrorCode::UnsupportedCodec, "deflate did not finish");
    return n;
  }

  std::string name_;
  int window_bits_;
};

// ---- mock ideal ----

class MockIdealHandle final : public CompressorHandle {
 public:
  std::string name() const override { return "mock_ideal"; }

  double measure(const AggregateInput& input) const override {
    std::unordered_set<std::uint64_t> blocks;
    add(blocks, input.first);
    if (input.is_pair()) add(blocks, *input.second);
    return length(blocks);
  }

  double joint(const Grid& x, const Grid& y, Aggregation) const override {
    std::unordered_set<std::uint64_t> blocks;
    add(blocks, x);
    add(blocks, y);
    return length(blocks);
  }

 private:
  static void add(std::unordered_set<std::uint64_t>& blocks, const Grid& g) {
    const auto data = g.data();
    for (std::size_t i = 0; i < data.size(); i += 8) {
      std::uint64_t b = 0;
      const std::size_t n = std::min<std::size_t>(8, data.size() - i);
      std::memcpy(&b, data.data() + i, n);
      // Tag partial blocks with their length so they never alias full ones.
      if (n < 8) b ^= static_cast<std::uint64_t>(n) << 60 | 1ULL << 63;
      blocks.insert(b);
    }
  }

  static double length(const std::unordered_set<std::uint64_t>& blocks) {
    return 64.0 * static_cast<double>(blocks.size()) + 64.0;
  }
};

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

HandlePtr neural_handle(std::shared_ptr<const lvm::LatentModel> model, std::shared_ptr<const codec::Bins> bins,
                        const NeuralOptions& options) {
  return std::make_shared<NeuralHandle>(std::move(model), std::move(bins), options);
}

HandlePtr byte_handle(std::string_view codec_name) {
  if (codec_name == "zlib") return std::make_shared<ByteHandle>("zlib", 15);
  if (codec_name == "deflate") return std::make_shared<ByteHandle>("deflate", -15);
  if (codec_name == "gzip") return std::make_shared<ByteHandle>("gzip", 31);
  throw Error(ErrorCode::UnsupportedCodec, "unknown byte codec '" + std::string(codec_name) + "'");
}

HandlePtr mock_ideal_handle() { return std::make_shared<MockIdealHandle>(); }

// ---- axioms ----

AxiomReport axiom_report(const CompressorHandle& handle, const Dataset& samples, Aggregation method,
                         const AxiomOptions& options) {
  if (samples.size() < 20) throw Error(ErrorCode::InsufficientData, "axiom checks need at least 20 samples");
  if (options.pairs == 0) throw Error(ErrorCode::InvalidArgument, "pairs must be positive");

  AxiomReport rep;
  rep.handle = handle.name();
  rep.aggregation = method;
  rep.slack_bits = options.slack_bits;
  rep.slack_frac = options.slack_frac;
  rep.sample_count = options.pairs;

  const auto n = samples.size();
  std::vector<double> single(n, -1.0);
  auto C = [&](std::size_t i) {
    if (single[i] < 0) single[i] = handle.measure(samples.items[i]);
    return single[i];
  };
  auto slack = [&](double rhs) { return options.slack_bits + options.slack_frac * std::abs(rhs); };

  SplitMix64 rng(options.seed);
  double ratio_sum = 0.0;
  for (std::size_t t = 0; t < options.pairs; ++t) {
    const auto x = static_cast<std::size_t>(rng.below(n));
    auto y = static_cast<std::size_t>(rng.below(n - 1));
    if (y >= x) ++y;
    auto z = static_cast<std::size_t>(rng.below(n - 2));
    for (auto taken : {std::min(x, y), std::max(x, y)})
      if (z >= taken) ++z;
    const Grid& gx = samples.items[x];
    const Grid& gy = samples.items[y];
    const Grid& gz = samples.items[z];

    const double cx = C(x);
    ratio_sum += handle.joint(gx, gx, method) / cx;

    const double cxy = handle.joint(gx, gy, method);
    const double cyx = handle.joint(gy, gx, method);
    if (cxy > 0) rep.symmetry_max_dev = std::max(rep.symmetry_max_dev, std::abs(cxy - cyx) / cxy);

    if (cxy < cx - slack(cx)) ++rep.monotonicity_violations;

    const double rhs = handle.joint(gx, gz, method) + handle.joint(gy, gz, method);
    if (cxy + C(z) > rhs + slack(rhs)) ++rep.distributivity_violations;
  }
  rep.idempotency_ratio = ratio_sum / static_cast<double>(options.pairs);
  return rep;
}

std::string AxiomReport::to_text() const {
  std::ostringstream os;
  os << "handle = " << handle << '\n'
     << "aggregation = " << to_string(aggregation) << '\n'
     << "idempotency_ratio = " << format_double(idempotency_ratio) << '\n'
     << "symmetry_max_dev = " << format_double(symmetry_max_dev) << '\n'
     << "monotonicity_violations = " << monotonicity_violations << '\n'
     << "distributivity_violations = " << distributivity_violations << '\n'
     << "sample_count = " << sample_count << '\n'
     << "slack_bits = " << format_double(slack_bits) << '\n'
     << "slack_frac = " << format_double(slack_frac) << '\n';
  return os.str();
}

AxiomReport AxiomReport::from_text(std::string_view text) {
  AxiomReport rep;
  std::istringstream in{std::string(text)};
  std::string line;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  auto number = [](const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw Error(ErrorCode::MalformedFile, "bad value for " + key);
    }
  };
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::MalformedFile, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "handle") rep.handle = value;
    else if (key == "aggregation") rep.aggregation = parse_aggregation(value);
    else if (key == "idempotency_ratio") rep.idempotency_ratio = number(key, value);
    else if (key == "symmetry_max_dev") rep.symmetry_max_dev = number(key, value);
    else if (key == "monotonicity_violations") rep.monotonicity_violations = static_cast<std::size_t>(number(key, value));
    else if (key == "distributivity_violations") rep.distributivity_violations = static_cast<std::size_t>(number(key, value));
    else if (key == "sample_count") rep.sample_count = static_cast<std::size_t>(number(key, value));
    else if (key == "slack_bits") rep.slack_bits = number(key, value);
    else if (key == "slack_frac") rep.slack_frac = number(key, value);
    else throw Error(ErrorCode::MalformedFile, "unknown key " + key);
  }
  return rep;
}

}  // namespace npc::compress
