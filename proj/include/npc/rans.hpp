#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "npc/error.hpp"

namespace npc::rans {

/// Lower bound of the normalized state interval [2^16, 2^32).
inline constexpr std::uint64_t kStateLower = 1ULL << 16;
inline constexpr std::uint64_t kStateUpper = 1ULL << 32;
/// State of a freshly initialized coder.
inline constexpr std::uint64_t kInitialState = kStateLower;
inline constexpr std::uint32_t kMaxPrecision = 16;
inline constexpr std::uint32_t kDefaultPrecision = 14;

/// Quantized symbol frequencies summing to M = 2^precision.
class FrequencyTable {
 public:
  FrequencyTable() = default;
  /// Validates: every frequency >= 1 and the sum equals 2^precision.
  FrequencyTable(std::uint32_t precision, std::vector<std::uint32_t> freqs);

  std::uint32_t precision() const noexcept { return precision_; }
  std::uint32_t total() const noexcept { return 1u << precision_; }
  std::size_t size() const noexcept { return freqs_.size(); }
  std::uint32_t freq(std::size_t v) const noexcept { return freqs_[v]; }
  std::uint32_t cumfreq(std::size_t v) const noexcept { return cum_[v]; }
  std::span<const std::uint32_t> freqs() const noexcept { return freqs_; }
  std::span<const std::uint32_t> cumfreqs() const noexcept { return std::span(cum_).first(freqs_.size()); }

  /// The unique symbol v with cumfreq(v) <= slot < cumfreq(v) + freq(v).
  std::size_t symbol_for_slot(std::uint32_t slot) const noexcept;

  friend bool operator==(const FrequencyTable&, const FrequencyTable&) = default;

 private:
  std::uint32_t precision_ = 0;
  std::vector<std::uint32_t> freqs_;
  std::vector<std::uint32_t> cum_;  // size() + 1 entries, cum_.back() == total()
};

/// Round p*M, lift zeros to 1, then fix the sum with a deterministic
/// largest-remainder correction. Probabilities are renormalized first.
FrequencyTable quantize(std::span<const double> probabilities, std::uint32_t precision);

/// A finished stream: the renormalization words (LIFO) plus the final state.
struct Bitstream {
  std::vector<std::uint16_t> words;
  std::uint32_t final_state = static_cast<std::uint32_t>(kInitialState);

  std::uint64_t bit_length() const noexcept { return 16 * words.size() + 32; }

  /// u32 final_state, u32 word_count, words little-endian (most recently pushed last).
  std::vector<std::uint8_t> serialize() const;
  static Bitstream deserialize(std::span<const std::uint8_t> bytes);

  friend bool operator==(const Bitstream&, const Bitstream&) = default;
};

/// Supplies words when a decode needs more state than the stream holds.
class WordSource {
 public:
  virtual ~WordSource() = default;
  virtual std::uint16_t next_word() = 0;
};

/// Streaming rANS state with 16-bit renormalization words.
class Coder {
 public:
  Coder() = default;
  explicit Coder(const Bitstream& bs) : state_(bs.final_state), words_(bs.words) {}

  std::uint64_t state() const noexcept { return state_; }
  void set_state(std::uint64_t s) noexcept { state_ = s; }
  const std::vector<std::uint16_t>& words() const noexcept { return words_; }
  std::vector<std::uint16_t>& words() noexcept { return words_; }

  /// When set, decodes that exhaust the word stack pull from this source instead.
  void set_underflow_source(WordSource* source) noexcept { underflow_ = source; }

  void encode(std::size_t symbol, const FrequencyTable& table);
  std::size_t decode(const FrequencyTable& table);

  /// True when the last decode left the state below range with no words to refill it.
  bool underflowed() const noexcept { return state_ < kStateLower; }

  Bitstream bitstream() const { return Bitstream{words_, static_cast<std::uint32_t>(state_)}; }
  std::uint64_t bit_length() const noexcept { return 16 * words_.size() + 32; }

 private:
  std::uint64_t state_ = kInitialState;
  std::vector<std::uint16_t> words_;
  WordSource* underflow_ = nullptr;
};

/// Encodes symbols in forward order on top of `initial` (or a fresh coder).
Bitstream encode_sequence(std::span<const std::size_t> symbols, std::span<const FrequencyTable> tables,
                          const std::optional<Bitstream>& initial = std::nullopt);

/// Decodes tables.size() symbols; tables are given in decode order, and the
/// result is in decode order (the reverse of the encode order).
std::vector<std::size_t> decode_sequence(const Bitstream& bs, std::span<const FrequencyTable> tables);

}  // namespace npc::rans
