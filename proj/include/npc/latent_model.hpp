#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "npc/data.hpp"
#include "npc/random.hpp"

namespace npc::lvm {

/// Bound on |log s| for every logistic the networks emit.
inline constexpr double kLogScaleBound = 7.0;

/// Elementwise logistic distribution (location, log-scale).
struct LogisticParams {
  Eigen::VectorXd mu;
  Eigen::VectorXd log_s;

  Eigen::Index size() const noexcept { return mu.size(); }
};

struct Architecture {
  std::uint32_t input_dim = 0;
  std::vector<std::uint32_t> latent_dims;  // m_1 .. m_L
  std::vector<std::uint32_t> hidden_dims;  // hidden widths shared by every network
  std::uint64_t seed = 0;

  std::size_t layers() const noexcept { return latent_dims.size(); }
  /// Throws InvalidArchitecture.
  void validate() const;
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct TrainConfig {
  double learning_rate = 0.002;
  std::uint32_t batch_size = 32;
  std::uint32_t epochs = 30;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

/// Maps pixel bytes onto [-1, 1].
double normalize_pixel(std::uint8_t v) noexcept;
Eigen::VectorXd normalize(const Grid& g);

/// log of the discretized logistic mass of pixel value v (nats, <= 0).
double pixel_log_mass(double mu, double log_s, int v) noexcept;
double logistic_cdf(double x) noexcept;
double logistic_log_pdf(double z, double mu, double log_s) noexcept;
/// Reparameterized draw mu + s * ln(u / (1 - u)) for u in (0, 1).
double logistic_sample(double mu, double log_s, double u) noexcept;

class LatentModel {
 public:
  /// Scaled-uniform fan-in initialization, deterministic in arch.seed.
  static LatentModel init(const Architecture& arch);

  static std::size_t parameter_count(const Architecture& arch);

  const Architecture& arch() const noexcept { return arch_; }
  std::size_t layers() const noexcept { return arch_.layers(); }
  std::uint32_t latent_dim(std::size_t layer) const { return arch_.latent_dims.at(layer - 1); }
  std::span<const double> params() const noexcept { return params_; }
  std::span<double> params() noexcept { return params_; }

  /// q(z_i | z_{i-1}) for i in [1, L]; z_0 is the normalized observation.
  LogisticParams infer_layer(std::size_t i, const Eigen::VectorXd& input) const;
  /// p(z_i | z_{i+1}) for i in [1, L-1].
  LogisticParams generate_layer(std::size_t i, const Eigen::VectorXd& z_next) const;
  /// p(x | z_1), one logistic per pixel sample.
  LogisticParams observe_params(const Eigen::VectorXd& z1) const;

  /// Location of q(z_1 | x).
  Eigen::VectorXd latent_mean(const Grid& x) const;

  /// Monte-Carlo nELBO in nats, averaged over n_samples reparameterized draws.
  double nelbo(const Grid& x, std::uint32_t n_samples, std::uint64_t seed) const;

  /// Per-column nELBO (nats) and the gradient of their weighted sum.
  /// `noise` holds one uniform (0,1) matrix per latent layer (m_i x batch).
  double nelbo_and_gradient(const Eigen::MatrixXd& x_norm, const std::vector<Eigen::MatrixXd>& noise,
                            std::span<double> grad, Eigen::VectorXd* per_column = nullptr) const;
  /// Same objective without the backward pass.
  Eigen::VectorXd nelbo_columns(const Eigen::MatrixXd& x_norm, const std::vector<Eigen::MatrixXd>& noise) const;

  /// Uniform noise for `columns` samples, drawn in a fixed order from `rng`.
  std::vector<Eigen::MatrixXd> draw_noise(Eigen::Index columns, SplitMix64& rng) const;

  std::vector<std::uint8_t> serialize() const;
  static LatentModel deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static LatentModel load(const std::filesystem::path& path);
  /// First 8 bytes of the CRC-extended digest of the serialized model.
  std::array<std::uint8_t, 8> hash() const;

  friend bool operator==(const LatentModel& a, const LatentModel& b) {
    return a.arch_ == b.arch_ && a.params_ == b.params_;
  }

 private:
  struct Network {
    std::uint32_t in = 0;
    std::uint32_t out = 0;  // dimension of the modelled variable; the net emits 2*out values
    std::size_t offset = 0;
  };

  LatentModel(Architecture arch, std::vector<double> params);
  void layout();

  Architecture arch_;
  std::vector<double> params_;
  std::vector<Network> inference_;   // [0] : x -> z1, [i] : z_i -> z_{i+1}
  std::vector<Network> generative_;  // [0] : z1 -> x, [i] : z_{i+1} -> z_i

  friend struct Internals;
};

struct TrainResult {
  LatentModel model;
  std::vector<double> loss_curve;  // per-epoch mean nELBO, bits per dimension
  std::uint64_t steps = 0;
};

TrainResult train(LatentModel model, const Dataset& unlabeled, const TrainConfig& cfg);

/// Mean nELBO over a dataset in bits per dimension.
double mean_bits_per_dim(const LatentModel& model, const Dataset& data, std::uint32_t n_samples, std::uint64_t seed);

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::optional<std::string> warning;  // "IllConditionedEpsilon" outside [1e-6, 1e-3]
};

/// Analytic gradient vs central differences on `count` random parameters,
/// with the reparameterization noise held fixed across perturbations.
GradCheckResult grad_check(const LatentModel& model, const Grid& x, double epsilon, std::size_t count = 1000,
                           std::uint64_t seed = 0);

/// |a - n| / max(|a|, |n|, floor); the floor keeps roundoff on near-zero
/// gradients from dominating.
double relative_error(double analytic, double numeric, double floor = 1e-7) noexcept;

}  // namespace npc::lvm
