#pragma once

#include <memory>
#include <string>
#include <string_view>

#include "npc/codec.hpp"
#include "npc/data.hpp"
#include "npc/latent_model.hpp"

namespace npc::compress {

/// C(.): a code length in bits for a single Grid or an ordered pair.
class CompressorHandle {
 public:
  virtual ~CompressorHandle() = default;

  virtual std::string name() const = 0;
  virtual double measure(const AggregateInput& input) const = 0;
  virtual bool deterministic() const { return true; }

  double measure(const Grid& x) const { return measure(AggregateInput::single(x)); }
  /// C(psi(x, y)). The default aggregates and measures the result.
  virtual double joint(const Grid& x, const Grid& y, Aggregation method) const;
};

using HandlePtr = std::shared_ptr<const CompressorHandle>;

enum class NeuralMode { actual, nelbo };

struct NeuralOptions {
  codec::CodecKind codec = codec::CodecKind::bbans;
  NeuralMode mode = NeuralMode::actual;
  std::uint64_t reservoir_seed = 0x5EED;
  std::uint32_t nelbo_samples = 1;
  std::uint64_t nelbo_seed = 0;
  std::string label;  // overrides the generated name when non-empty
};

/// Bits-back compressor over a trained model. Actual mode reports N - n_extra;
/// nelbo mode reports the nELBO in bits without running the coder (bins may be null).
/// Single-channel inputs are replicated across channels when the model expects three.
HandlePtr neural_handle(std::shared_ptr<const lvm::LatentModel> model, std::shared_ptr<const codec::Bins> bins,
                        const NeuralOptions& options);

/// DEFLATE-family byte compressors: "zlib", "deflate" (raw) or "gzip".
/// Throws UnsupportedCodec for anything else.
HandlePtr byte_handle(std::string_view codec_name);

/// 64 bits per distinct 8-byte block plus 64; joint lengths use the union of blocks.
HandlePtr mock_ideal_handle();

struct AxiomReport {
  std::string handle;
  Aggregation aggregation = Aggregation::avg;
  double idempotency_ratio = 0.0;
  double symmetry_max_dev = 0.0;
  std::size_t monotonicity_violations = 0;
  std::size_t distributivity_violations = 0;
  std::size_t sample_count = 0;  // pairs (and triples) examined
  double slack_bits = 0.0;
  double slack_frac = 0.0;

  /// Flat "key = value" lines.
  std::string to_text() const;
  static AxiomReport from_text(std::string_view text);
};

struct AxiomOptions {
  std::size_t pairs = 100;
  double slack_bits = 64.0;
  double slack_frac = 0.01;  // fraction of the right-hand side added to slack_bits
  std::uint64_t seed = 0;
};

/// Idempotency, symmetry, monotonicity and distributivity on seeded pairs and
/// triples drawn from `samples` (at least 20 items).
AxiomReport axiom_report(const CompressorHandle& handle, const Dataset& samples, Aggregation method,
                         const AxiomOptions& options = {});

}  // namespace npc::compress
