#include "npc/latent_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <type_traits>

#include "npc/binio.hpp"

namespace npc::lvm {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstWeights = Eigen::Map<const RowMatrix>;
using Weights = Eigen::Map<RowMatrix>;

constexpr std::uint8_t kModelVersion = 1;
constexpr double kPixelHalfBin = 1.0 / 255.0;

template <class T>
T softplus(T x) noexcept { return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x))); }
template <class T>
T log_sigmoid(T x) noexcept { return -softplus(-x); }
template <class T>
T sigmoid(T x) noexcept {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
struct PixelTerm {
  T value;    // log mass
  T d_mu;     // d value / d mu
  T d_log_s;  // d value / d log_s
};

template <class T>
PixelTerm<T> pixel_term(T mu, T log_s, int v) noexcept {
  const T inv_s = std::exp(-log_s);
  const T centre = T(2) * v / T(255) - T(1);
  const T a = (centre + T(kPixelHalfBin) - mu) * inv_s;
  const T b = (centre - T(kPixelHalfBin) - mu) * inv_s;
  T value, da = 0, db = 0;
  if (v <= 0) {
    value = log_sigmoid(a);
    da = sigmoid(-a);
  } else if (v >= 255) {
    value = log_sigmoid(-b);
    db = -sigmoid(b);
  } else {
    // sigma(a) - sigma(b) = e^{-b} (1 - e^{b-a}) sigma(a) sigma(b)
    value = log_sigmoid(a) + log_sigmoid(b) - b + std::log(-std::expm1(b - a));
    da = std::exp(log_sigmoid(a) + log_sigmoid(-a) - value);
    db = -std::exp(log_sigmoid(b) + log_sigmoid(-b) - value);
  }
  return {value, -(da + db) * inv_s, -(da * a + db * b)};
}

int pixel_from_normalized(double x) noexcept {
  return static_cast<int>(std::lround((x + 1.0) * 127.5));
}

template <class T>
T bounded_log_scale(T raw) noexcept { return T(kLogScaleBound) * std::tanh(raw / T(kLogScaleBound)); }

}  // namespace

// The networks are plain MLPs with tanh hidden units whose last layer emits
// [mu ; raw log-scale]. This struct has access to the model's private layout.
struct Internals {
  using Network = LatentModel::Network;

  template <class T>
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  template <class T>
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  static std::vector<std::uint32_t> widths(const Architecture& arch, const Network& net) {
    std::vector<std::uint32_t> w{net.in};
    w.insert(w.end(), arch.hidden_dims.begin(), arch.hidden_dims.end());
    w.push_back(2 * net.out);
    return w;
  }

  static std::size_t size(const Architecture& arch, const Network& net) {
    const auto w = widths(arch, net);
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) n += std::size_t{w[l + 1]} * w[l] + w[l + 1];
    return n;
  }

  struct Cache {
    std::vector<Eigen::MatrixXd> acts;  // input and post-tanh hidden activations
    Eigen::MatrixXd raw_scale;          // pre-bound log-scale rows
  };

  template <class T>
  struct Output {
    Mat<T> mu;
    Mat<T> log_s;
  };

  template <class T>
  static Output<T> forward(const LatentModel& m, const Network& net, const Mat<T>& input, Cache* cache) {
    const auto w = widths(m.arch_, net);
    const double* p = m.params_.data() + net.offset;
    Mat<T> h = input;
    if (cache) cache->acts.clear();
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
      ConstWeights W(p, w[l + 1], w[l]);
      p += std::size_t{w[l + 1]} * w[l];
      Eigen::Map<const Eigen::VectorXd> bias(p, w[l + 1]);
      p += w[l + 1];
      if constexpr (std::is_same_v<T, double>) {
        if (cache) cache->acts.push_back(h);
      }
      Mat<T> z = W.template cast<T>() * h;
      z.colwise() += bias.template cast<T>();
      if (l + 2 < w.size()) z = z.array().tanh().matrix();
      h = std::move(z);
    }
    Output<T> out;
    out.mu = h.topRows(net.out);
    Mat<T> raw = h.bottomRows(net.out);
    out.log_s = raw.unaryExpr([](T r) { return bounded_log_scale(r); });
    if constexpr (std::is_same_v<T, double>) {
      if (cache) cache->raw_scale = std::move(raw);
    }
    return out;
  }

  /// Accumulates parameter gradients; returns the gradient w.r.t. the input.
  static Eigen::MatrixXd backward(const LatentModel& m, const Network& net, const Cache& cache,
                                  const Eigen::MatrixXd& d_mu, const Eigen::MatrixXd& d_log_s, double* grad) {
    const auto w = widths(m.arch_, net);
    const std::size_t depth = w.size() - 1;
    Eigen::MatrixXd d_out(2 * net.out, d_mu.cols());
    d_out.topRows(net.out) = d_mu;
    d_out.bottomRows(net.out) = d_log_s.array() *
                                cache.raw_scale.unaryExpr([](double r) {
                                  const double t = std::tanh(r / kLogScaleBound);
                                  return 1.0 - t * t;
                                }).array();

    std::vector<std::size_t> offsets(depth);
    std::size_t off = net.offset;
    for (std::size_t l = 0; l < depth; ++l) {
      offsets[l] = off;
      off += std::size_t{w[l + 1]} * w[l] + w[l + 1];
    }

    Eigen::MatrixXd delta = std::move(d_out);
    for (std::size_t l = depth; l-- > 0;) {
      const Eigen::MatrixXd& a = cache.acts[l];
      Weights gW(grad + offsets[l], w[l + 1], w[l]);
      Eigen::Map<Eigen::VectorXd> gb(grad + offsets[l] + std::size_t{w[l + 1]} * w[l], w[l + 1]);
      gW.noalias() += delta * a.transpose();
      gb += delta.rowwise().sum();
      ConstWeights W(m.params_.data() + offsets[l], w[l + 1], w[l]);
      Eigen::MatrixXd d_in = W.transpose() * delta;
      if (l > 0) d_in.array() *= (1.0 - a.array().square());
      delta = std::move(d_in);
    }
    return delta;
  }

  /// Per-column nELBO; fills the gradient of the column mean when grad != nullptr.
  /// Only the double instantiation supports gradients.
  template <class T>
  static Vec<T> run(const LatentModel& m, const Mat<T>& x, const std::vector<Eigen::MatrixXd>& noise, double* grad) {
    constexpr bool kDiff = std::is_same_v<T, double>;
    const std::size_t L = m.layers();
    const Eigen::Index B = x.cols();
    if (x.rows() != static_cast<Eigen::Index>(m.arch_.input_dim))
      throw Error(ErrorCode::DimMismatch, "observation has wrong dimension");
    if (noise.size() != L) throw Error(ErrorCode::DimMismatch, "noise must have one matrix per latent layer");
    if (!kDiff) grad = nullptr;

    std::vector<Cache> inf_cache(L);
    std::vector<Output<T>> q(L);
    std::vector<Mat<T>> eps(L), z(L);
    Vec<T> total = Vec<T>::Zero(B);

    const Mat<T>* input = &x;
    for (std::size_t i = 0; i < L; ++i) {
      q[i] = forward<T>(m, m.inference_[i], *input, grad ? &inf_cache[i] : nullptr);
      eps[i] = noise[i].template cast<T>().unaryExpr([](T u) { return std::log(u) - std::log1p(-u); });
      z[i] = q[i].mu.array() + q[i].log_s.array().exp() * eps[i].array();
      // log q at the reparameterized sample depends on the scale only.
      const Mat<T> log_q = -eps[i].array() - q[i].log_s.array() -
                           T(2) * eps[i].unaryExpr([](T e) { return softplus(-e); }).array();
      total += log_q.colwise().sum().transpose();
      input = &z[i];
    }

    const double weight = 1.0 / static_cast<double>(B);
    std::vector<Eigen::MatrixXd> dz(L);
    if (grad)
      for (std::size_t i = 0; i < L; ++i) dz[i] = Eigen::MatrixXd::Zero(z[i].rows(), B);

    // Observation term.
    Cache obs_cache;
    const Output<T> obs = forward<T>(m, m.generative_[0], z[0], grad ? &obs_cache : nullptr);
    Eigen::MatrixXd d_obs_mu, d_obs_ls;
    if (grad) {
      d_obs_mu.resize(obs.mu.rows(), B);
      d_obs_ls.resize(obs.mu.rows(), B);
    }
    for (Eigen::Index b = 0; b < B; ++b) {
      T col = 0;
      for (Eigen::Index j = 0; j < obs.mu.rows(); ++j) {
        const auto t = pixel_term<T>(obs.mu(j, b), obs.log_s(j, b), pixel_from_normalized(static_cast<double>(x(j, b))));
        col += t.value;
        if (grad) {
          d_obs_mu(j, b) = -weight * static_cast<double>(t.d_mu);
          d_obs_ls(j, b) = -weight * static_cast<double>(t.d_log_s);
        }
      }
      total(b) -= col;
    }
    if constexpr (kDiff) {
      if (grad) dz[0] += backward(m, m.generative_[0], obs_cache, d_obs_mu, d_obs_ls, grad);
    }

    // Conditional priors p(z_i | z_{i+1}).
    for (std::size_t i = 0; i + 1 < L; ++i) {
      Cache gen_cache;
      const Output<T> p = forward<T>(m, m.generative_[i + 1], z[i + 1], grad ? &gen_cache : nullptr);
      Eigen::MatrixXd d_mu, d_ls;
      if (grad) {
        d_mu.resize(p.mu.rows(), B);
        d_ls.resize(p.mu.rows(), B);
      }
      for (Eigen::Index b = 0; b < B; ++b) {
        for (Eigen::Index j = 0; j < p.mu.rows(); ++j) {
          const T s_inv = std::exp(-p.log_s(j, b));
          const T t = (z[i](j, b) - p.mu(j, b)) * s_inv;
          total(b) -= -t - p.log_s(j, b) - T(2) * softplus(-t);
          if (grad) {
            const double g = static_cast<double>(T(1) - T(2) * sigmoid(t));  // d log p / d t
            const double si = static_cast<double>(s_inv);
            d_mu(j, b) = weight * g * si;
            d_ls(j, b) = -weight * (-g * static_cast<double>(t) - 1.0);
            dz[i](j, b) -= weight * g * si;
          }
        }
      }
      if constexpr (kDiff) {
        if (grad) dz[i + 1] += backward(m, m.generative_[i + 1], gen_cache, d_mu, d_ls, grad);
      }
    }

    // Top prior: standard logistic.
    for (Eigen::Index b = 0; b < B; ++b) {
      for (Eigen::Index j = 0; j < z[L - 1].rows(); ++j) {
        const T t = z[L - 1](j, b);
        total(b) -= -t - T(2) * softplus(-t);
        if (grad) dz[L - 1](j, b) -= weight * static_cast<double>(T(1) - T(2) * sigmoid(t));
      }
    }

    if constexpr (kDiff) {
      if (grad) {
        for (std::size_t i = L; i-- > 0;) {
          const Eigen::MatrixXd scale = q[i].log_s.array().exp();
          const Eigen::MatrixXd d_ls = (dz[i].array() * scale.array() * eps[i].array()).matrix() -
                                       Eigen::MatrixXd::Constant(dz[i].rows(), B, weight);
          Eigen::MatrixXd d_in = backward(m, m.inference_[i], inf_cache[i], dz[i], d_ls, grad);
          if (i > 0) dz[i - 1] += d_in;
        }
      }
    }
    return total;
  }
};

double normalize_pixel(std::uint8_t v) noexcept { return 2.0 * v / 255.0 - 1.0; }

Eigen::VectorXd normalize(const Grid& g) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(g.size()));
  for (std::size_t i = 0; i < g.size(); ++i) out(static_cast<Eigen::Index>(i)) = normalize_pixel(g[i]);
  return out;
}

double pixel_log_mass(double mu, double log_s, int v) noexcept { return pixel_term(mu, log_s, v).value; }

double logistic_cdf(double x) noexcept { return sigmoid(x); }

double logistic_sample(double mu, double log_s, double u) noexcept {
  return mu + std::exp(log_s) * (std::log(u) - std::log1p(-u));
}

double logistic_log_pdf(double z, double mu, double log_s) noexcept {
  const double t = (z - mu) * std::exp(-log_s);
  return -t - log_s - 2.0 * softplus(-t);
}

void Architecture::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidArchitecture, what); };
  if (input_dim == 0) fail("input_dim must be positive");
  if (latent_dims.empty()) fail("at least one latent layer is required");
  if (hidden_dims.empty()) fail("networks need at least one hidden layer");
  for (auto m : latent_dims)
    if (m == 0) fail("latent dimensions must be positive");
  for (auto h : hidden_dims)
    if (h == 0) fail("hidden widths must be positive");
}

LatentModel::LatentModel(Architecture arch, std::vector<double> params)
    : arch_(std::move(arch)), params_(std::move(params)) {
  layout();
  if (params_.size() != parameter_count(arch_)) throw Error(ErrorCode::InvalidArchitecture, "parameter count mismatch");
}

void LatentModel::layout() {
  arch_.validate();
  inference_.clear();
  generative_.clear();
  const std::size_t L = arch_.layers();
  std::size_t offset = 0;
  auto add = [&](std::vector<Network>& list, std::uint32_t in, std::uint32_t out) {
    Network n{in, out, offset};
    offset += Internals::size(arch_, n);
    list.push_back(n);
  };
  add(inference_, arch_.input_dim, arch_.latent_dims[0]);
  for (std::size_t i = 1; i < L; ++i) add(inference_, arch_.latent_dims[i - 1], arch_.latent_dims[i]);
  add(generative_, arch_.latent_dims[0], arch_.input_dim);
  for (std::size_t i = 1; i < L; ++i) add(generative_, arch_.latent_dims[i], arch_.latent_dims[i - 1]);
}

std::size_t LatentModel::parameter_count(const Architecture& arch) {
  arch.validate();
  auto mlp = [&](std::uint32_t in, std::uint32_t out) { return Internals::size(arch, Network{in, out, 0}); };
  std::size_t n = mlp(arch.input_dim, arch.latent_dims[0]) + mlp(arch.latent_dims[0], arch.input_dim);
  for (std::size_t i = 1; i < arch.layers(); ++i)
    n += mlp(arch.latent_dims[i - 1], arch.latent_dims[i]) + mlp(arch.latent_dims[i], arch.latent_dims[i - 1]);
  return n;
}

LatentModel LatentModel::init(const Architecture& arch) {
  std::vector<double> params(parameter_count(arch), 0.0);
  LatentModel model(arch, std::move(params));
  SplitMix64 rng(arch.seed);
  auto fill = [&](const Network& net) {
    const auto w = Internals::widths(model.arch_, net);
    double* p = model.params_.data() + net.offset;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(w[l]));
      const std::size_t n = std::size_t{w[l + 1]} * w[l];
      for (std::size_t k = 0; k < n; ++k) p[k] = rng.uniform(-bound, bound);
      p += n + w[l + 1];  // biases start at zero
    }
  };
  for (const auto& n : model.inference_) fill(n);
  for (const auto& n : model.generative_) fill(n);
  return model;
}

LogisticParams LatentModel::infer_layer(std::size_t i, const Eigen::VectorXd& input) const {
  if (i < 1 || i > layers()) throw Error(ErrorCode::InvalidArgument, "inference layer out of range");
  if (input.size() != static_cast<Eigen::Index>(inference_[i - 1].in))
    throw Error(ErrorCode::DimMismatch, "inference input has wrong dimension");
  auto out = Internals::forward<double>(*this, inference_[i - 1], input, nullptr);
  return {out.mu.col(0), out.log_s.col(0)};
}

LogisticParams LatentModel::generate_layer(std::size_t i, const Eigen::VectorXd& z_next) const {
  if (i < 1 || i >= layers()) throw Error(ErrorCode::InvalidArgument, "generative layer out of range");
  if (z_next.size() != static_cast<Eigen::Index>(generative_[i].in))
    throw Error(ErrorCode::DimMismatch, "generative input has wrong dimension");
  auto out = Internals::forward<double>(*this, generative_[i], z_next, nullptr);
  return {out.mu.col(0), out.log_s.col(0)};
}

LogisticParams LatentModel::observe_params(const Eigen::VectorXd& z1) const {
  if (z1.size() != static_cast<Eigen::Index>(generative_[0].in))
    throw Error(ErrorCode::DimMismatch, "z1 has wrong dimension");
  auto out = Internals::forward<double>(*this, generative_[0], z1, nullptr);
  return {out.mu.col(0), out.log_s.col(0)};
}

Eigen::VectorXd LatentModel::latent_mean(const Grid& x) const {
  if (x.size() != arch_.input_dim) throw Error(ErrorCode::DimMismatch, "grid does not match model input");
  return infer_layer(1, normalize(x)).mu;
}

std::vector<Eigen::MatrixXd> LatentModel::draw_noise(Eigen::Index columns, SplitMix64& rng) const {
  std::vector<Eigen::MatrixXd> noise;
  for (auto m : arch_.latent_dims) {
    Eigen::MatrixXd u(m, columns);
    for (Eigen::Index c = 0; c < columns; ++c)
      for (Eigen::Index r = 0; r < u.rows(); ++r) u(r, c) = rng.open_unit();
    noise.push_back(std::move(u));
  }
  return noise;
}

Eigen::VectorXd LatentModel::nelbo_columns(const Eigen::MatrixXd& x_norm,
                                           const std::vector<Eigen::MatrixXd>& noise) const {
  return Internals::run<double>(*this, x_norm, noise, nullptr);
}

double LatentModel::nelbo_and_gradient(const Eigen::MatrixXd& x_norm, const std::vector<Eigen::MatrixXd>& noise,
                                       std::span<double> grad, Eigen::VectorXd* per_column) const {
  if (grad.size() != params_.size()) throw Error(ErrorCode::DimMismatch, "gradient buffer has wrong size");
  Eigen::VectorXd cols = Internals::run<double>(*this, x_norm, noise, grad.data());
  const double mean = cols.mean();
  if (per_column) *per_column = std::move(cols);
  return mean;
}

double LatentModel::nelbo(const Grid& x, std::uint32_t n_samples, std::uint64_t seed) const {
  if (n_samples < 1) throw Error(ErrorCode::InvalidArgument, "n_samples must be at least 1");
  if (x.size() != arch_.input_dim) throw Error(ErrorCode::DimMismatch, "grid does not match model input");
  const Eigen::VectorXd v = normalize(x);
  Eigen::MatrixXd xs = v.replicate(1, n_samples);
  SplitMix64 rng(seed);
  const double value = nelbo_columns(xs, draw_noise(n_samples, rng)).mean();
  if (!std::isfinite(value)) throw Error(ErrorCode::NonFinite, "nELBO is not finite");
  return value;
}

std::vector<std::uint8_t> LatentModel::serialize() const {
  binio::Writer w;
  w.magic("NPCM");
  w.u8(kModelVersion);
  w.u32(arch_.input_dim);
  w.u32(static_cast<std::uint32_t>(arch_.latent_dims.size()));
  for (auto m : arch_.latent_dims) w.u32(m);
  w.u32(static_cast<std::uint32_t>(arch_.hidden_dims.size()));
  for (auto h : arch_.hidden_dims) w.u32(h);
  w.u64(arch_.seed);
  for (double p : params_) w.f64(p);
  w.u32(binio::crc32(w.bytes()));
  return w.take();
}

LatentModel LatentModel::deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw Error(ErrorCode::MalformedFile, "model file too short");
  const auto body = bytes.first(bytes.size() - 4);
  binio::Reader tail(bytes.last(4));
  if (tail.u32() != binio::crc32(body)) throw Error(ErrorCode::MalformedFile, "model CRC mismatch");
  binio::Reader r(body);
  r.expect_magic("NPCM");
  if (r.u8() != kModelVersion) throw Error(ErrorCode::MalformedFile, "unsupported model version");
  Architecture arch;
  arch.input_dim = r.u32();
  const auto L = r.u32();
  if (L > 64) throw Error(ErrorCode::MalformedFile, "implausible layer count");
  for (std::uint32_t i = 0; i < L; ++i) arch.latent_dims.push_back(r.u32());
  const auto H = r.u32();
  if (H > 64) throw Error(ErrorCode::MalformedFile, "implausible hidden layer count");
  for (std::uint32_t i = 0; i < H; ++i) arch.hidden_dims.push_back(r.u32());
  arch.seed = r.u64();
  const std::size_t n = parameter_count(arch);
  if (r.remaining() != n * 8) throw Error(ErrorCode::MalformedFile, "parameter block has wrong length");
  std::vector<double> params(n);
  for (auto& p : params) {
    p = r.f64();
    if (!std::isfinite(p)) throw Error(ErrorCode::MalformedFile, "non-finite parameter");
  }
  return LatentModel(std::move(arch), std::move(params));
}

void LatentModel::save(const std::filesystem::path& path) const { binio::write_file(path, serialize()); }

LatentModel LatentModel::load(const std::filesystem::path& path) { return deserialize(binio::read_file(path)); }

std::array<std::uint8_t, 8> LatentModel::hash() const {
  auto bytes = serialize();
  bytes.resize(bytes.size() - 4);
  return binio::digest64(bytes);
}

// --- training -------------------------------------------------------------------

TrainResult train(LatentModel model, const Dataset& unlabeled, const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning rate must be positive");
  if (cfg.batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch size must be positive");
  TrainResult result{std::move(model), {}, 0};
  if (cfg.epochs == 0) return result;
  if (unlabeled.empty()) throw Error(ErrorCode::InvalidArgument, "training set is empty");
  LatentModel& m = result.model;
  const std::uint32_t d = m.arch().input_dim;
  if (unlabeled.shape().size() != d) throw Error(ErrorCode::DimMismatch, "dataset does not match model input");

  const auto N = static_cast<Eigen::Index>(unlabeled.size());
  Eigen::MatrixXd all(d, N);
  for (Eigen::Index i = 0; i < N; ++i) all.col(i) = normalize(unlabeled.items[static_cast<std::size_t>(i)]);

  const std::size_t P = m.params().size();
  std::vector<double> grad(P), first(P, 0.0), second(P, 0.0);
  std::vector<std::size_t> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), std::size_t{0});
  SplitMix64 noise_rng(derive_seed(cfg.seed, 0xA015E));
  std::uint64_t t = 0;

  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    SplitMix64 order_rng(derive_seed(cfg.seed, epoch));
    shuffle(std::span(order), order_rng);
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      Eigen::MatrixXd batch(d, static_cast<Eigen::Index>(stop - start));
      for (std::size_t k = start; k < stop; ++k) batch.col(static_cast<Eigen::Index>(k - start)) = all.col(static_cast<Eigen::Index>(order[k]));
      const auto noise = m.draw_noise(batch.cols(), noise_rng);
      std::fill(grad.begin(), grad.end(), 0.0);
      const double loss = m.nelbo_and_gradient(batch, noise, grad);
      if (!std::isfinite(loss))
        throw Error(ErrorCode::NonFinite, "training diverged at epoch " + std::to_string(epoch));
      epoch_sum += loss * static_cast<double>(batch.cols());

      ++t;
      const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
      auto params = m.params();
      for (std::size_t k = 0; k < P; ++k) {
        first[k] = cfg.adam_beta1 * first[k] + (1.0 - cfg.adam_beta1) * grad[k];
        second[k] = cfg.adam_beta2 * second[k] + (1.0 - cfg.adam_beta2) * grad[k] * grad[k];
        params[k] -= cfg.learning_rate * (first[k] / c1) / (std::sqrt(second[k] / c2) + cfg.adam_eps);
      }
    }
    result.loss_curve.push_back(epoch_sum / static_cast<double>(N) / (d * std::log(2.0)));
  }
  result.steps = t;
  return result;
}

double mean_bits_per_dim(const LatentModel& model, const Dataset& data, std::uint32_t n_samples, std::uint64_t seed) {
  if (data.empty()) throw Error(ErrorCode::InvalidArgument, "empty dataset");
  double sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) sum += model.nelbo(data.items[i], n_samples, derive_seed(seed, i));
  return sum / static_cast<double>(data.size()) / (model.arch().input_dim * std::log(2.0));
}

// --- gradient check -------------------------------------------------------------

double relative_error(double analytic, double numeric, double floor) noexcept {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check(const LatentModel& model, const Grid& x, double epsilon, std::size_t count,
                           std::uint64_t seed) {
  GradCheckResult result;
  if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) result.warning = "IllConditionedEpsilon";
  if (x.size() != model.arch().input_dim) throw Error(ErrorCode::DimMismatch, "grid does not match model input");

  const Eigen::MatrixXd xs = normalize(x);
  SplitMix64 rng(seed);
  const auto noise = model.draw_noise(1, rng);
  std::vector<double> grad(model.params().size(), 0.0);
  model.nelbo_and_gradient(xs, noise, grad);

  std::vector<std::size_t> idx(grad.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  SplitMix64 pick(derive_seed(seed, 0x6C));
  shuffle(std::span(idx), pick);
  idx.resize(std::min(count, idx.size()));

  // Differences are taken in extended precision: the objective is a few hundred
  // nats, so double roundoff alone would swamp small derivatives.
  const Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic> xl = xs.cast<long double>();
  LatentModel probe = model;
  for (auto k : idx) {
    const double original = probe.params()[k];
    const double hi = original + epsilon;
    const double lo = original - epsilon;
    probe.params()[k] = hi;
    const long double up = Internals::run<long double>(probe, xl, noise, nullptr)(0);
    probe.params()[k] = lo;
    const long double down = Internals::run<long double>(probe, xl, noise, nullptr)(0);
    probe.params()[k] = original;
    const auto numeric = static_cast<double>((up - down) / static_cast<long double>(hi - lo));
    result.max_rel_err = std::max(result.max_rel_err, relative_error(grad[k], numeric));
    ++result.checked;
  }
  return result;
}

}  // namespace npc::lvm
