#include "npc/rans.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "npc/binio.hpp"

namespace npc::rans {

FrequencyTable::FrequencyTable(std::uint32_t precision, std::vector<std::uint32_t> freqs)
    : precision_(precision), freqs_(std::move(freqs)) {
  if (precision_ < 1 || precision_ > kMaxPrecision)
    throw Error(ErrorCode::InvalidArgument, "precision must be in [1, 16]");
  if (freqs_.empty()) throw Error(ErrorCode::InvalidArgument, "empty frequency table");
  if (freqs_.size() > total()) throw Error(ErrorCode::TooManySymbols, "more symbols than 2^precision");
  cum_.resize(freqs_.size() + 1);
  cum_[0] = 0;
  for (std::size_t v = 0; v < freqs_.size(); ++v) {
    if (freqs_[v] == 0) throw Error(ErrorCode::InvalidArgument, "zero frequency");
    cum_[v + 1] = cum_[v] + freqs_[v];
  }
  if (cum_.back() != total()) throw Error(ErrorCode::InvalidArgument, "frequencies do not sum to 2^precision");
}

std::size_t FrequencyTable::symbol_for_slot(std::uint32_t slot) const noexcept {
  // First cumulative entry strictly greater than slot, minus one.
  auto it = std::upper_bound(cum_.begin() + 1, cum_.end(), slot);
  return static_cast<std::size_t>(it - cum_.begin()) - 1;
}

FrequencyTable quantize(std::span<const double> probabilities, std::uint32_t precision) {
  if (precision < 2 || precision > kMaxPrecision)
    throw Error(ErrorCode::InvalidArgument, "quantize precision must be in [2, 16]");
  const std::size_t n = probabilities.size();
  const std::uint64_t total = 1ULL << precision;
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "no symbols");
  if (n > total) throw Error(ErrorCode::TooManySymbols, std::to_string(n) + " symbols exceed 2^" + std::to_string(precision));

  double mass = 0.0;
  for (double p : probabilities) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw Error(ErrorCode::InvalidArgument, "probabilities must be finite and non-negative");
    mass += p;
  }
  if (!(mass > 0.0)) throw Error(ErrorCode::InvalidArgument, "at least one probability must be positive");

  std::vector<double> scaled(n);
  std::vector<std::uint32_t> freqs(n);
  std::int64_t sum = 0;
  for (std::size_t v = 0; v < n; ++v) {
    scaled[v] = probabilities[v] / mass * static_cast<double>(total);
    freqs[v] = static_cast<std::uint32_t>(std::max<long long>(1, std::llround(scaled[v])));
    sum += freqs[v];
  }

  std::int64_t diff = static_cast<std::int64_t>(total) - sum;
  if (diff != 0) {
    // Remainder = how far the rounded count sits from its exact share.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (diff > 0) {
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scaled[a] - freqs[a] > scaled[b] - freqs[b];
      });
      while (diff > 0)
        for (std::size_t k = 0; k < n && diff > 0; ++k, --diff) ++freqs[order[k]];
    } else {
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scaled[a] - freqs[a] < scaled[b] - freqs[b];
      });
      while (diff < 0) {
        std::erase_if(order, [&](std::size_t v) { return freqs[v] <= 1; });
        for (std::size_t k = 0; k < order.size() && diff < 0; ++k) {
          if (freqs[order[k]] > 1) {
            --freqs[order[k]];
            ++diff;
          }
        }
      }
    }
  }
  return FrequencyTable(precision, std::move(freqs));
}

void Coder::encode(std::size_t symbol, const FrequencyTable& table) {
  const std::uint64_t f = table.freq(symbol);
  const std::uint64_t b = table.cumfreq(symbol);
  const std::uint32_t r = table.precision();
  const std::uint64_t limit = f << (32 - r);
  while (state_ >= limit) {
    words_.push_back(static_cast<std::uint16_t>(state_ & 0xFFFF));
    state_ >>= 16;
  }
  state_ = ((state_ / f) << r) + b + (state_ % f);
}

std::size_t Coder::decode(const FrequencyTable& table) {
  const std::uint32_t r = table.precision();
  const auto slot = static_cast<std::uint32_t>(state_ & (table.total() - 1));
  const std::size_t v = table.symbol_for_slot(slot);
  state_ = table.freq(v) * (state_ >> r) + slot - table.cumfreq(v);
  while (state_ < kStateLower) {
    if (!words_.empty()) {
      state_ = (state_ << 16) | words_.back();
      words_.pop_back();
    } else if (underflow_ != nullptr) {
      state_ = (state_ << 16) | underflow_->next_word();
    } else {
      break;
    }
  }
  return v;
}

std::vector<std::uint8_t> Bitstream::serialize() const {
  binio::Writer w;
  w.u32(final_state);
  w.u32(static_cast<std::uint32_t>(words.size()));
  for (auto word : words) w.u16(word);
  return w.take();
}

Bitstream Bitstream::deserialize(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes);
  Bitstream bs;
  bs.final_state = r.u32();
  const auto count = r.u32();
  if (r.remaining() != std::size_t{count} * 2) throw Error(ErrorCode::MalformedFile, "bitstream word count mismatch");
  bs.words.resize(count);
  for (auto& word : bs.words) word = r.u16();
  return bs;
}

Bitstream encode_sequence(std::span<const std::size_t> symbols, std::span<const FrequencyTable> tables,
                          const std::optional<Bitstream>& initial) {
  if (symbols.size() != tables.size())
    throw Error(ErrorCode::InvalidArgument, "symbol and table counts differ");
  Coder coder = initial ? Coder(*initial) : Coder();
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (symbols[i] >= tables[i].size()) throw Error(ErrorCode::InvalidArgument, "symbol outside table");
    coder.encode(symbols[i], tables[i]);
  }
  return coder.bitstream();
}

std::vector<std::size_t> decode_sequence(const Bitstream& bs, std::span<const FrequencyTable> tables) {
  Coder coder(bs);
  std::vector<std::size_t> out;
  out.reserve(tables.size());
  for (std::size_t i = 0; i < tables.size(); ++i) {
    if (coder.underflowed()) throw Error(ErrorCode::CorruptStream, "stream exhausted at symbol " + std::to_string(i));
    out.push_back(coder.decode(tables[i]));
  }
  return out;
}

}  // namespace npc::rans
