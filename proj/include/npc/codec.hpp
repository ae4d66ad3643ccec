#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "npc/data.hpp"
#include "npc/latent_model.hpp"
#include "npc/rans.hpp"

namespace npc::codec {

using Hash = std::array<std::uint8_t, 8>;

inline constexpr std::uint32_t kDefaultPrecisionZ = 10;
inline constexpr std::uint32_t kMinPrecisionZ = 4;
inline constexpr std::uint32_t kMaxPrecisionZ = 14;
/// CDF values feeding a table are rounded to multiples of 2^-kCdfBits.
inline constexpr int kCdfBits = 30;

enum class Scheme : std::uint8_t { equal_mass = 0, equal_width = 1 };
enum class CodecKind : std::uint8_t { bbans = 0, bitswap = 1 };

std::string_view to_string(CodecKind c);
CodecKind parse_codec(std::string_view name);

/// Per-dimension [lo, hi] ranges of posterior samples, for latent layers 1..L-1.
struct LatentStats {
  Hash model_hash{};
  std::vector<std::vector<double>> lo;
  std::vector<std::vector<double>> hi;

  std::vector<std::uint8_t> serialize() const;
  static LatentStats deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static LatentStats load(const std::filesystem::path& path);
  friend bool operator==(const LatentStats&, const LatentStats&) = default;
};

/// Samples n_draws reparameterized posterior chains per item and records the
/// per-dimension spread, widened by 10% of the range on each side.
LatentStats estimate_latent_stats(const lvm::LatentModel& model, const Dataset& sample, std::uint32_t n_draws,
                                  std::uint64_t seed);

/// Discretization of one latent layer: n_bins intervals per dimension, the
/// outermost of which extend to -inf / +inf.
struct LayerBins {
  Scheme scheme = Scheme::equal_mass;
  std::vector<std::vector<double>> edges;    // per dimension, n_bins + 1 entries
  std::vector<std::vector<double>> centers;  // per dimension, n_bins representative points

  std::size_t dims() const noexcept { return edges.size(); }
};

struct Bins {
  std::uint32_t precision_z = kDefaultPrecisionZ;
  std::uint32_t precision_r = rans::kDefaultPrecision;
  Hash model_hash{};
  std::vector<LayerBins> layers;  // layers[i] discretizes z_{i+1}; the last one is the prior layer

  std::uint32_t n_bins() const noexcept { return 1u << precision_z; }
  Hash hash() const;
};

/// Equal-mass bins on the top layer, equal-width bins over `stats` elsewhere.
Bins build_bins(const lvm::LatentModel& model, const LatentStats& stats, std::uint32_t precision_z,
                std::uint32_t precision_r = rans::kDefaultPrecision);

/// CDF of a logistic rounded to the 2^-30 grid, as an integer in [0, 2^30].
std::uint64_t fixed_cdf(double x, double mu, double log_s) noexcept;

/// Table over every bin of `edges`.
rans::FrequencyTable bin_table(double mu, double log_s, std::span<const double> edges, std::uint32_t precision_r);

/// Table over the contiguous run of bins from the first to the last bin whose
/// mass reaches 1/(2M); symbol s stands for bin offset + s.
struct WindowedTable {
  std::size_t offset = 0;
  rans::FrequencyTable table;
};
WindowedTable posterior_table(double mu, double log_s, std::span<const double> edges, std::uint32_t precision_r);

/// Discretized logistic over the 256 pixel values.
rans::FrequencyTable pixel_table(double mu, double log_s, std::uint32_t precision_r);

/// Deterministic stream of 16-bit words standing in for the sender's spare bits.
class BitReservoir : public rans::WordSource {
 public:
  explicit BitReservoir(std::uint64_t seed, std::optional<std::uint64_t> budget_bits = std::nullopt)
      : seed_(seed), rng_(seed), budget_bits_(budget_bits) {}

  /// Throws InsufficientInitialBits once the budget is exhausted.
  std::uint16_t next_word() override;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t bits_served() const noexcept { return 16 * served_; }

  /// The first `count` words of the reservoir with this seed.
  static std::vector<std::uint16_t> words(std::uint64_t seed, std::size_t count);

 private:
  std::uint64_t seed_;
  SplitMix64 rng_;
  std::optional<std::uint64_t> budget_bits_;
  std::uint64_t served_ = 0;
};

struct CompressionRecord {
  rans::Bitstream stream;
  std::uint64_t n_extra = 0;  // reservoir bits consumed
  Hash model_hash{};
  Hash bins_hash{};
  CodecKind codec = CodecKind::bbans;
  std::uint64_t reservoir_seed = 0;
  Shape shape;
  bool pair = false;

  std::uint64_t total_bits() const noexcept { return stream.bit_length(); }
  std::uint64_t input_dims() const noexcept { return shape.size() * (pair ? 2 : 1); }
  /// N - n_extra, floored at zero.
  std::uint64_t net_bits() const noexcept {
    return total_bits() > n_extra ? total_bits() - n_extra : 0;
  }

  std::vector<std::uint8_t> serialize() const;
  static CompressionRecord deserialize(std::span<const std::uint8_t> bytes);
  friend bool operator==(const CompressionRecord&, const CompressionRecord&) = default;
};

/// Bits-back coder bound to one model and one set of bins. Caches the hashes
/// and prior tables, so it is cheap to call repeatedly; safe to share across threads.
class BitsBackCodec {
 public:
  /// Throws BinsMismatch if the bins were built for a different model.
  BitsBackCodec(const lvm::LatentModel& model, const Bins& bins);

  const lvm::LatentModel& model() const noexcept { return *model_; }
  const Bins& bins() const noexcept { return *bins_; }
  const Hash& model_hash() const noexcept { return model_hash_; }
  const Hash& bins_hash() const noexcept { return bins_hash_; }

  CompressionRecord encode(const AggregateInput& input, CodecKind codec, std::uint64_t reservoir_seed,
                           std::optional<std::uint64_t> reservoir_budget_bits = std::nullopt) const;
  /// Inverts encode and checks that the recovered spare bits match the reservoir.
  AggregateInput decode(const CompressionRecord& record) const;

 private:
  void encode_grid(rans::Coder& coder, const Grid& x, CodecKind codec) const;
  Grid decode_grid(rans::Coder& coder, const Shape& shape, CodecKind codec) const;

  const lvm::LatentModel* model_;
  const Bins* bins_;
  Hash model_hash_;
  Hash bins_hash_;
  rans::FrequencyTable prior_table_;
};

CompressionRecord bb_encode(const lvm::LatentModel& model, const Bins& bins, const AggregateInput& input,
                            std::uint64_t reservoir_seed, std::optional<std::uint64_t> reservoir_budget_bits = std::nullopt);
AggregateInput bb_decode(const lvm::LatentModel& model, const Bins& bins, const CompressionRecord& record);
CompressionRecord bitswap_encode(const lvm::LatentModel& model, const Bins& bins, const AggregateInput& input,
                                 std::uint64_t reservoir_seed,
                                 std::optional<std::uint64_t> reservoir_budget_bits = std::nullopt);
AggregateInput bitswap_decode(const lvm::LatentModel& model, const Bins& bins, const CompressionRecord& record);

/// nELBO in bits; an ordered pair costs the sum of its parts.
double nelbo_length(const lvm::LatentModel& model, const AggregateInput& input, std::uint32_t n_samples,
                    std::uint64_t seed);

/// (N - n_extra) / d.
double net_bitrate(double net_bits, std::uint64_t dims);
double net_bitrate(const CompressionRecord& record);

}  // namespace npc::codec
